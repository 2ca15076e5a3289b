// fvar: command-line front end for data generation, training, evaluation and
// the gradient / clustering diagnostics.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <random>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "fvar/binary_io.h"
#include "fvar/checkpoint.h"
#include "fvar/dataset.h"
#include "fvar/flops.h"
#include "fvar/gradcheck.h"
#include "fvar/gradlab.h"
#include "fvar/signature.h"
#include "fvar/stats.h"
#include "fvar/trainer.h"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace fvar;

namespace {

constexpr int kOk = 0;
constexpr int kInvalid = 1;
constexpr int kFailed = 2;

// Relative output paths are placed under $FVAR_OUT when it is set.
fs::path resolve_out(const std::string& path) {
  const fs::path p(path);
  if (const char* root = std::getenv("FVAR_OUT"); root && *root && p.is_relative()) return fs::path(root) / p;
  return p;
}

void write_text(const fs::path& path, const std::string& text) {
  write_file_bytes(path.string(), std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::size_t default_jobs() { return std::max(1u, std::thread::hardware_concurrency()); }

// Pipeline settings shared by train, eval, scatter, cluster and flops.
struct PipelineFlags {
  std::string config_path;
  std::string method;
  int g = -1;
  int sampled = -1;
  int eval_sampled = -1;
  int frames = -1;
  int classes = -1;
  std::string precision;
  std::optional<bool> temporal_shift;

  void add(CLI::App* app) {
    app->add_option("--config", config_path, "JSON file with a 'pipeline' object (and optionally 'train')");
    app->add_option("--method", method, "Clustering method: none, cumulative, slope, uniform");
    app->add_option("--g", g, "Cluster count");
    app->add_option("--sampled-frames", sampled, "Method 'none': frames sampled per video (0 = all)");
    app->add_option("--eval-sampled-frames", eval_sampled, "Evaluate on this many uniformly sampled frames");
    app->add_option("--frames", frames, "Frames per video");
    app->add_option("--classes", classes, "Class count");
    app->add_option("--precision", precision, "float32 or float64");
    app->add_flag("--temporal-shift,!--no-temporal-shift", temporal_shift, "Temporal channel shift after block 1");
  }

  json file() const {
    if (config_path.empty()) return json::object();
    const auto bytes = read_file_bytes(config_path);
    try {
      return json::parse(bytes.begin(), bytes.end());
    } catch (const json::exception& e) {
      throw std::invalid_argument("config " + config_path + ": " + e.what());
    }
  }

  PipelineConfig build() const {
    const json doc = file();
    json j = doc.contains("pipeline") ? doc.at("pipeline") : json::object();
    const bool explicit_layers = j.contains("block1");
    if (!method.empty()) j["method"] = method;
    if (g >= 0) j["g"] = g;
    if (sampled >= 0) j["sampled_frames"] = sampled;
    if (eval_sampled >= 0) j["eval_sampled_frames"] = eval_sampled;
    if (frames >= 0) j["frames_per_video"] = frames;
    if (classes >= 0) j["num_classes"] = classes;
    if (!precision.empty()) j["precision"] = precision;
    if (temporal_shift) j["temporal_shift"] = *temporal_shift;
    if (explicit_layers && (classes >= 0 || temporal_shift)) {
      throw std::invalid_argument("--classes/--temporal-shift cannot override an explicit layer list");
    }
    return pipeline_config_from_json(j);
  }

  // Frame count and frame shape follow the dataset unless set explicitly,
  // in which case they have to agree with it.
  PipelineConfig build(const VideoDims& dims) const {
    PipelineConfig p = build();
    const json doc = file();
    const json j = doc.contains("pipeline") ? doc.at("pipeline") : json::object();
    const Shape shape{dims.channels, dims.height, dims.width};
    if (frames < 0 && !j.contains("frames_per_video")) {
      p.frames_per_video = dims.frames;
    } else if (p.frames_per_video != dims.frames) {
      throw std::invalid_argument("pipeline expects " + std::to_string(p.frames_per_video) +
                                  " frames per video, dataset has " + std::to_string(dims.frames));
    }
    if (!j.contains("frame_shape")) {
      p.frame_shape = shape;
    } else if (p.frame_shape != shape) {
      throw std::invalid_argument("pipeline frame shape " + shape_string(p.frame_shape) + " does not match dataset " +
                                  shape_string(shape));
    }
    p.validate();
    return p;
  }
};

Dataset load_data(const std::string& dir) {
  Dataset d;
  d.train = read_collection((fs::path(dir) / "train.fvds").string());
  d.test = read_collection((fs::path(dir) / "test.fvds").string());
  return d;
}

const VideoCollection& pick_split(const Dataset& d, const std::string& split) {
  if (split == "train") return d.train;
  if (split == "test") return d.test;
  throw std::invalid_argument("--split must be 'train' or 'test', got '" + split + "'");
}

Backbone<double> network(const PipelineConfig& pipeline, const std::string& checkpoint, std::uint64_t seed) {
  if (!checkpoint.empty()) return load_backbone(checkpoint, pipeline).cast<double>();
  auto net = Backbone<double>::from_config(pipeline);
  net.initialize(seed);
  return net;
}

// ---------------------------------------------------------------------------

struct GenData {
  std::uint64_t seed = 0;
  std::string out = "data";
  std::size_t train = 1800, test = 600, frames = 32, size = 32, velocity = 1, glyph = 14;
  double p_background = 1.0 / 3.0, p_black = 1.0 / 3.0, p_foreign = 1.0 / 3.0;
  std::size_t min_len = 4, max_len = 12;
  std::string mnist_images, mnist_labels;

  void add(CLI::App* app) {
    app->add_option("--seed", seed, "Generator seed");
    app->add_option("--out", out, "Output directory");
    app->add_option("--train", train, "Training videos");
    app->add_option("--test", test, "Test videos");
    app->add_option("--frames", frames, "Frames per video");
    app->add_option("--size", size, "Frame height and width in pixels");
    app->add_option("--velocity", velocity, "Digit displacement per relevant frame, pixels");
    app->add_option("--glyph-size", glyph, "Rendered digit size, pixels");
    app->add_option("--p-background", p_background, "Probability of a background-only chunk");
    app->add_option("--p-black", p_black, "Probability of a black chunk");
    app->add_option("--p-foreign", p_foreign, "Probability of a foreign-digit chunk");
    app->add_option("--min-chunk", min_len, "Shortest distractor chunk");
    app->add_option("--max-chunk", max_len, "Longest distractor chunk");
    app->add_option("--mnist-images", mnist_images, "IDX image file (procedural digits when absent)");
    app->add_option("--mnist-labels", mnist_labels, "IDX label file");
  }

  int run() const {
    DatasetSpec spec;
    spec.seed = seed;
    spec.train_count = train;
    spec.test_count = test;
    spec.dims.frames = frames;
    spec.dims.height = spec.dims.width = size;
    spec.velocity = velocity;
    spec.glyph_size = glyph;
    const double probs[3] = {p_background, p_black, p_foreign};
    for (int k = 0; k < 3; ++k) spec.distractors[k] = {probs[k], min_len, max_len};
    spec.validate();
    const GlyphBank glyphs = mnist_images.empty() ? procedural_glyphs() : load_idx_digits(mnist_images, mnist_labels);
    const Dataset ds = generate(spec, glyphs);
    const fs::path dir = resolve_out(out);
    fs::create_directories(dir);
    write_collection((dir / "train.fvds").string(), ds.train);
    write_collection((dir / "test.fvds").string(), ds.test);
    json cfg{{"train", train},        {"test", test},         {"frames", frames},          {"size", size},
             {"velocity", velocity},  {"glyph_size", glyph},  {"p_background", p_background},
             {"p_black", p_black},    {"p_foreign", p_foreign}, {"min_chunk", min_len},
             {"max_chunk", max_len},  {"glyphs", glyphs.procedural ? "procedural" : mnist_images}};
    write_manifest(dir.string(), "gen-data", cfg, seed);
    std::cout << "wrote " << ds.train.videos.size() << " train and " << ds.test.videos.size() << " test videos to "
              << dir.string() << "\n";
    return kOk;
  }
};

struct Train {
  PipelineFlags pipe;
  std::string data = "data", out = "runs/train";
  std::optional<std::size_t> epochs, batch, eval_every, train_limit, test_limit;
  std::optional<double> lr, momentum;
  std::uint64_t seed = 0;
  std::size_t jobs = default_jobs();
  bool every_epoch = false;
  std::vector<std::string> configs;
  std::vector<std::uint64_t> seeds;

  void add(CLI::App* app) {
    pipe.add(app);
    app->add_option("--data", data, "Directory holding train.fvds and test.fvds");
    app->add_option("--out", out, "Output directory");
    app->add_option("--epochs", epochs, "Epochs");
    app->add_option("--batch", batch, "Videos per batch");
    app->add_option("--lr", lr, "Learning rate");
    app->add_option("--momentum", momentum, "SGD momentum");
    app->add_option("--eval-every", eval_every, "Evaluate the test split every n epochs");
    app->add_option("--train-limit", train_limit, "Use only the first n training videos");
    app->add_option("--test-limit", test_limit, "Use only the first n test videos");
    app->add_option("--seed", seed, "Seed for initialisation, shuffling and frame sampling");
    app->add_option("--jobs", jobs, "Worker threads");
    app->add_flag("--checkpoint-every-epoch", every_epoch, "Keep epoch_NNN.fvck checkpoints");
    app->add_option("--ablate", configs,
                    "Ablation entries: none, none:<frames>, <method>:<g>. Trains each for every --seeds value");
    app->add_option("--seeds", seeds, "Seeds for --ablate (default: --seed)");
  }

  TrainConfig train_config() const {
    const json doc = pipe.file();
    json j = doc.contains("train") ? doc.at("train") : json::object();
    if (epochs) j["epochs"] = *epochs;
    if (batch) j["batch_size"] = *batch;
    if (lr) j["learning_rate"] = *lr;
    if (momentum) j["momentum"] = *momentum;
    if (eval_every) j["eval_every"] = *eval_every;
    if (train_limit) j["train_limit"] = *train_limit;
    if (test_limit) j["test_limit"] = *test_limit;
    j["seed"] = seed;
    j["jobs"] = jobs;
    j["checkpoint_every_epoch"] = every_epoch || (j.contains("checkpoint_every_epoch") && j["checkpoint_every_epoch"].get<bool>());
    j["output_dir"] = resolve_out(out).string();
    return train_config_from_json(j);
  }

  int run() const {
    const Dataset ds = load_data(data);
    const PipelineConfig base = pipe.build(ds.train.dims);
    const TrainConfig tc = train_config();
    if (configs.empty()) {
      const auto result = fvar::train(base, tc, ds.train, ds.test);
      for (const auto& r : result.records) std::cout << metrics_line(r) << "\n";
      if (result.aborted) {
        std::cerr << "training aborted: " << result.message << "\n";
        return kFailed;
      }
      std::cout << "best test accuracy " << result.best_accuracy << " at epoch " << result.best_epoch << "\n";
      return kOk;
    }
    std::vector<AblationEntry> entries;
    for (const auto& token : configs) {
      PipelineConfig p = base;
      const auto colon = token.find(':');
      const std::string method = token.substr(0, colon);
      p.method = clustering_method_from_string(method);
      p.sampled_frames = 0;
      if (colon != std::string::npos) {
        const std::size_t value = std::stoul(token.substr(colon + 1));
        if (p.method == ClusteringMethod::kNone) {
          p.sampled_frames = value;
        } else {
          p.g = static_cast<std::uint32_t>(value);
        }
      } else if (p.method != ClusteringMethod::kNone) {
        throw std::invalid_argument("ablation entry '" + token + "' needs a cluster count, e.g. " + method + ":16");
      }
      p.validate();
      entries.push_back({token, p});
    }
    const std::vector<std::uint64_t> run_seeds = seeds.empty() ? std::vector<std::uint64_t>{seed} : seeds;
    TrainConfig ac = tc;
    const AblationReport report = ablation_matrix(entries, run_seeds, ac, ds.train, ds.test);
    json blocks = json::array();
    for (const auto& b : report.blocks) {
      blocks.push_back({{"name", b.name},
                        {"pipeline", to_json(b.pipeline)},
                        {"seeds", b.seeds},
                        {"accuracies", b.accuracies},
                        {"mean", b.mean},
                        {"std", b.stddev}});
    }
    const fs::path dir = resolve_out(out);
    fs::create_directories(dir);
    write_text(dir / "ablation.json", json{{"blocks", blocks}, {"ranking", report.ranking}}.dump(2) + "\n");
    write_text(dir / "ablation.txt", report.summary());
    write_manifest(dir.string(), "train --ablate", json{{"train", to_json(tc)}, {"entries", configs}}, seed);
    std::cout << report.summary();
    return kOk;
  }
};

struct Eval {
  PipelineFlags pipe;
  std::string data = "data", checkpoint, split = "test", out = "runs/eval";
  std::size_t limit = 0;
  std::size_t jobs = default_jobs();

  void add(CLI::App* app) {
    pipe.add(app);
    app->add_option("--data", data, "Dataset directory");
    app->add_option("--checkpoint", checkpoint, "FVCK checkpoint")->required();
    app->add_option("--split", split, "train or test");
    app->add_option("--limit", limit, "Evaluate only the first n videos");
    app->add_option("--jobs", jobs, "Worker threads");
    app->add_option("--out", out, "Output directory");
  }

  int run() const {
    const Dataset ds = load_data(data);
    const PipelineConfig p = pipe.build(ds.train.dims);
    const auto net = load_backbone(checkpoint, p);
    MetricsRecord r = evaluate(net, p, pick_split(ds, split), limit, jobs);
    r.split = split;
    const fs::path dir = resolve_out(out);
    fs::create_directories(dir);
    write_text(dir / "metrics.json", metrics_line(r, false) + "\n");
    write_manifest(dir.string(), "eval", json{{"pipeline", to_json(p)}, {"checkpoint", checkpoint}, {"split", split}},
                   0);
    std::cout << metrics_line(r) << "\n";
    return kOk;
  }
};

struct VerifyGrad {
  std::size_t pairs = 10000, features = 16, classes = 4;
  std::uint64_t seed = 0;
  double eps = 1e-9;
  bool network = false;
  double rtol = 1e-4;
  std::string out = "runs/verify-grad";

  void add(CLI::App* app) {
    app->add_option("--pairs", pairs, "Sign-agreeing pairs to test");
    app->add_option("--features", features, "Testbed feature dimension");
    app->add_option("--classes", classes, "Testbed class count");
    app->add_option("--seed", seed, "Sampling seed");
    app->add_option("--eps", eps, "Slack added to the right-hand side");
    app->add_flag("--network", network, "Also finite-difference check the desk-scale pipeline");
    app->add_option("--rtol", rtol, "Relative tolerance for --network");
    app->add_option("--out", out, "Output directory");
  }

  int run() const {
    if (pairs == 0) throw std::invalid_argument("--pairs must be positive");
    const BoundSummary s = run_bound_checks(pairs, features, classes, seed, eps);
    json report{{"pairs", s.sampled},
                {"holds", s.holds},
                {"pass_rate", s.pass_rate()},
                {"rejected_draws", s.rejected},
                {"worst_excess", s.worst_excess}};
    std::cout << "bound check: " << s.holds << "/" << s.sampled << " sign-agreeing pairs hold (pass rate "
              << s.pass_rate() << ", worst lhs-rhs " << s.worst_excess << ", " << s.rejected
              << " draws rejected)\n";
    bool ok = s.holds == s.sampled;

    if (network) {
      PipelineConfig p = PipelineConfig::desk_scale(2, ClusteringMethod::kCumulative, 4);
      p.frames_per_video = 4;
      p.frame_shape = {3, 8, 8};
      p.rebuild_default_blocks();
      auto net = Backbone<double>::from_config(p);
      net.initialize(seed);
      std::mt19937_64 rng(seed);
      std::normal_distribution<double> unit(0.0, 1.0);
      Tensor<double> frames({4, 3, 8, 8});
      for (auto& v : frames.data()) v = unit(rng);
      auto pass = forward_clustered(net, frames, 1, p.method, p.g);
      const auto grads = backward(net, pass);
      auto params = net.parameters();
      const auto fd = check_gradients(params, grads.params, [&] {
        return forward_clustered(net, frames, 1, p.method, p.g).loss;
      }, rtol);
      double worst = 0.0;
      for (const auto& c : fd.params) worst = std::max(worst, c.max_rel_error);
      std::cout << "pipeline finite differences: " << (fd.pass ? "pass" : "FAIL") << " (max relative error " << worst
                << ")\n";
      report["pipeline_fd"] = {{"pass", fd.pass}, {"max_rel_error", worst}};
      ok = ok && fd.pass;
    }
    const fs::path dir = resolve_out(out);
    fs::create_directories(dir);
    write_text(dir / "report.json", report.dump(2) + "\n");
    write_manifest(dir.string(), "verify-grad",
                   json{{"pairs", pairs}, {"features", features}, {"classes", classes}, {"eps", eps}}, seed);
    return ok ? kOk : kFailed;
  }
};

struct Scatter {
  PipelineFlags pipe;
  std::string data = "data", checkpoint, split = "test", mode = "pairs", out = "runs/scatter";
  std::size_t videos = 10;
  std::uint64_t seed = 0;

  void add(CLI::App* app) {
    pipe.add(app);
    app->add_option("--data", data, "Dataset directory");
    app->add_option("--checkpoint", checkpoint, "FVCK checkpoint (untrained network from --seed when absent)");
    app->add_option("--split", split, "train or test");
    app->add_option("--videos", videos, "Number of videos, taken from the start of the split");
    app->add_option("--mode", mode, "pairs: activation/gradient distances; clusters: per-cluster gradient error")
        ->check(CLI::IsMember({"pairs", "clusters"}));
    app->add_option("--seed", seed, "Initialisation seed when no checkpoint is given");
    app->add_option("--out", out, "Output directory");
  }

  int run() const {
    const Dataset ds = load_data(data);
    const PipelineConfig p = pipe.build(ds.train.dims);
    const VideoCollection& c = pick_split(ds, split);
    const auto net = network(p, checkpoint, seed);
    const fs::path dir = resolve_out(out);
    fs::create_directories(dir);
    const std::size_t n = std::min(videos, c.videos.size());
    json summary = json::array();
    if (mode == "pairs") {
      for (std::size_t v = 0; v < n; ++v) {
        const auto table = activation_gradient_scatter(net, video_tensor<double>(c, v), c.videos[v].label);
        std::ostringstream name;
        name << "scatter_" << std::setw(4) << std::setfill('0') << v << ".csv";
        write_text(dir / name.str(), scatter_csv(table));
        summary.push_back({{"video", v},
                           {"rows", table.rows.size()},
                           {"pearson_euclid", table.pearson_euclid ? json(*table.pearson_euclid) : json(nullptr)},
                           {"pearson_hamming", table.pearson_hamming ? json(*table.pearson_hamming) : json(nullptr)}});
        std::cout << "video " << v << ": " << table.rows.size() << " pairs, pearson(euclid act, grad) = "
                  << (table.pearson_euclid ? std::to_string(*table.pearson_euclid) : "undefined") << "\n";
      }
    } else {
      if (p.method == ClusteringMethod::kNone) throw std::invalid_argument("--mode clusters needs a clustering method");
      std::vector<GradientReport> all;
      for (std::size_t v = 0; v < n; ++v) {
        const auto frames = video_tensor<double>(c, v);
        json row{{"video", v}};
        for (auto m : {ClusteringMethod::kCumulative, ClusteringMethod::kSlope, ClusteringMethod::kUniform}) {
          auto r = cluster_gradient_report(net, frames, c.videos[v].label, m, p.g);
          row[std::string(to_string(m))] = r.mean;
          all.push_back(std::move(r));
        }
        std::cout << row.dump() << "\n";
        summary.push_back(row);
      }
      write_text(dir / "cluster_gradients.csv", gradient_report_csv(all));
    }
    write_text(dir / "summary.json", summary.dump(2) + "\n");
    write_manifest(dir.string(), "scatter",
                   json{{"pipeline", to_json(p)}, {"checkpoint", checkpoint}, {"mode", mode}, {"videos", n}}, seed);
    return kOk;
  }
};

struct Cluster {
  PipelineFlags pipe;
  std::string data = "data", split = "test", out = "runs/cluster", checkpoint_dir;
  std::vector<std::string> checkpoints;
  std::size_t videos = 6;
  bool dump_signatures = false;

  void add(CLI::App* app) {
    pipe.add(app);
    app->add_option("--data", data, "Dataset directory");
    app->add_option("--split", split, "train or test");
    app->add_option("--checkpoints", checkpoints, "Checkpoints in epoch order");
    app->add_option("--checkpoint-dir", checkpoint_dir, "Use every epoch_NNN.fvck in this directory");
    app->add_option("--videos", videos, "Number of videos");
    app->add_flag("--dump-signatures", dump_signatures, "Also write block-1 signatures (FVSG) per epoch and video");
    app->add_option("--out", out, "Output directory");
  }

  int run() const {
    const Dataset ds = load_data(data);
    const PipelineConfig p = pipe.build(ds.train.dims);
    if (p.method == ClusteringMethod::kNone) throw std::invalid_argument("cluster needs a clustering method");
    std::vector<std::string> list = checkpoints;
    if (!checkpoint_dir.empty()) {
      std::vector<std::string> found;
      for (const auto& e : fs::directory_iterator(checkpoint_dir)) {
        const auto name = e.path().filename().string();
        if (name.rfind("epoch_", 0) == 0 && e.path().extension() == ".fvck") found.push_back(e.path().string());
      }
      std::sort(found.begin(), found.end());
      list.insert(list.end(), found.begin(), found.end());
    }
    if (list.empty()) throw std::invalid_argument("no checkpoints given");
    const VideoCollection& c = pick_split(ds, split);
    const std::size_t n = std::min(videos, c.videos.size());
    const fs::path dir = resolve_out(out);
    fs::create_directories(dir);

    std::vector<AssignmentRecord> records;
    std::vector<std::string> missing;
    for (std::size_t e = 0; e < list.size(); ++e) {
      if (!fs::exists(list[e])) {
        missing.push_back(list[e]);
        continue;
      }
      const auto net = load_backbone(list[e], p);
      for (std::size_t v = 0; v < n; ++v) {
        const Tensor<float> pre = net.block1.forward(video_tensor<float>(c, v));
        const auto sigs = binarize_frames(pre);
        AssignmentRecord rec;
        rec.epoch = e;
        rec.video_id = v;
        rec.assignment = p.method == ClusteringMethod::kUniform ? uniform_cluster(pre.dim(0), p.g)
                                                                 : assign_clusters(p.method, sigs, p.g);
        records.push_back(std::move(rec));
        if (dump_signatures) {
          std::ostringstream name;
          name << "signatures_e" << std::setw(3) << std::setfill('0') << e << "_v" << std::setw(4) << v << ".fvsg";
          write_signatures((dir / name.str()).string(), sigs);
        }
      }
    }
    write_text(dir / "assignments.csv", assignments_csv(records));
    for (const auto& m : missing) std::cerr << "missing checkpoint: " << m << "\n";
    write_manifest(dir.string(), "cluster",
                   json{{"pipeline", to_json(p)}, {"checkpoints", list}, {"missing", missing}, {"videos", n}}, 0);
    std::cout << records.size() << " assignment blocks (" << (list.size() - missing.size()) << " checkpoints x " << n
              << " videos) written to " << (dir / "assignments.csv").string() << "\n";
    return kOk;
  }
};

struct BenchHamming {
  std::size_t bits = 1000000, iters = 1000;
  std::uint64_t seed = 0;
  std::string out = "runs/bench-hamming";

  void add(CLI::App* app) {
    app->add_option("--bits", bits, "Signature length in bits");
    app->add_option("--iters", iters, "Timed popcount distance evaluations");
    app->add_option("--seed", seed, "Seed for the random signatures");
    app->add_option("--out", out, "Output directory");
  }

  int run() const {
    if (bits == 0 || iters == 0) throw std::invalid_argument("--bits and --iters must be positive");
    std::mt19937_64 rng(seed);
    std::bernoulli_distribution coin(0.5);
    Signature a(bits), b(bits);
    for (std::size_t i = 0; i < bits; ++i) {
      a.set(i, coin(rng));
      b.set(i, coin(rng));
    }
    using clock = std::chrono::steady_clock;
    const auto t0 = clock::now();
    std::size_t d = 0;
    for (std::size_t i = 0; i < iters; ++i) {
      d = hamming(a, b);
      // Keep the optimiser from hoisting the call out of the loop.
      asm volatile("" : : "r"(d) : "memory");
    }
    const double fast = std::chrono::duration<double>(clock::now() - t0).count();
    const auto t1 = clock::now();
    const std::size_t naive = hamming_bitwise(a, b);
    const double slow = std::chrono::duration<double>(clock::now() - t1).count();
    const bool exact = d == naive;
    const double gbits = static_cast<double>(bits) * static_cast<double>(iters) / std::max(fast, 1e-12) / 1e9;
    std::cout << "distance " << d << " (naive " << naive << ", " << (exact ? "exact" : "MISMATCH") << ")\n"
              << "popcount: " << gbits << " Gbit/s over " << iters << " x " << bits << " bits\n"
              << "naive loop: " << slow << " s for one distance\n";
    const fs::path dir = resolve_out(out);
    fs::create_directories(dir);
    write_text(dir / "report.json", json{{"bits", bits},
                                         {"iters", iters},
                                         {"distance", d},
                                         {"naive_distance", naive},
                                         {"exact", exact},
                                         {"popcount_seconds", fast},
                                         {"naive_seconds", slow},
                                         {"gbit_per_s", gbits}}
                                            .dump(2) + "\n");
    write_manifest(dir.string(), "bench-hamming", json{{"bits", bits}, {"iters", iters}}, seed);
    return exact ? kOk : kFailed;
  }
};

struct Flops {
  PipelineFlags pipe;
  std::string out = "runs/flops";

  void add(CLI::App* app) {
    pipe.add(app);
    app->add_option("--out", out, "Output directory");
  }

  int run() const {
    const PipelineConfig p = pipe.build();
    const PipelineFlops f = pipeline_flops(p);
    const Shape frame = p.frame_shape;
    const auto b1 = count_flops(p.block1, frame, p.block1_frames());
    json layers = json::array();
    for (const auto& l : b1.layers) layers.push_back({{"block", 1}, {"kind", std::string(to_string(l.kind))}, {"macs", l.macs}});
    Shape mid{1, frame[0], frame[1], frame[2]};
    for (const auto& s : p.block1) mid = s.output_shape(mid);
    const auto rest = count_flops(p.rest, Shape(mid.begin() + 1, mid.end()), p.positions());
    for (const auto& l : rest.layers) layers.push_back({{"block", 2}, {"kind", std::string(to_string(l.kind))}, {"macs", l.macs}});
    json report{{"method", std::string(to_string(p.method))},
                {"g", p.g},
                {"block1_frames", p.block1_frames()},
                {"positions", p.positions()},
                {"block1_macs", f.block1},
                {"rest_macs", f.rest},
                {"total_macs", f.total},
                {"layers", layers}};
    std::cout << report.dump(2) << "\n";
    const fs::path dir = resolve_out(out);
    fs::create_directories(dir);
    write_text(dir / "flops.json", report.dump(2) + "\n");
    write_manifest(dir.string(), "flops", json{{"pipeline", to_json(p)}}, 0);
    return kOk;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fvar: full-video training through temporal clustering of frame activations"};
  app.require_subcommand(1, 1);
  GenData gen;
  Train train;
  Eval eval;
  VerifyGrad verify;
  Scatter scatter;
  Cluster cluster;
  BenchHamming bench;
  Flops flops;
  gen.add(app.add_subcommand("gen-data", "Generate a moving-digit video dataset"));
  train.add(app.add_subcommand("train", "Train a pipeline, or an ablation matrix with --ablate"));
  eval.add(app.add_subcommand("eval", "Evaluate a checkpoint on a split"));
  verify.add(app.add_subcommand("verify-grad", "Check the pairwise gradient-approximation bound"));
  scatter.add(app.add_subcommand("scatter", "Activation vs gradient distance tables"));
  cluster.add(app.add_subcommand("cluster", "Per-epoch cluster assignments of a few videos"));
  bench.add(app.add_subcommand("bench-hamming", "Time the popcount Hamming kernel against the bit loop"));
  flops.add(app.add_subcommand("flops", "Multiply-accumulate counts per video"));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    std::cerr << app.help();
    return kInvalid;
  }

  try {
    const std::string name = app.get_subcommands().front()->get_name();
    if (name == "gen-data") return gen.run();
    if (name == "train") return train.run();
    if (name == "eval") return eval.run();
    if (name == "verify-grad") return verify.run();
    if (name == "scatter") return scatter.run();
    if (name == "cluster") return cluster.run();
    if (name == "bench-hamming") return bench.run();
    if (name == "flops") return flops.run();
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kInvalid;
  } catch (const std::out_of_range& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kInvalid;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailed;
  }
  return kInvalid;
}
