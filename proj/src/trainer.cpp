#include "fvar/trainer.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "fvar/binary_io.h"
#include "fvar/checkpoint.h"
#include "fvar/loss.h"
#include "fvar/stats.h"

#ifndef FVAR_BUILD_TAG
#define FVAR_BUILD_TAG "unknown"
#endif

namespace fvar {

using nlohmann::json;

std::string_view build_tag() { return FVAR_BUILD_TAG; }

void TrainConfig::validate() const {
  auto fail = [](const std::string& why) { throw std::invalid_argument("train config: " + why); };
  if (epochs == 0) fail("epochs must be positive");
  if (batch_size == 0) fail("batch_size must be positive");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) fail("learning_rate must be finite and >= 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) fail("momentum must lie in [0, 1)");
  if (eval_every == 0) fail("eval_every must be positive");
}

std::string metrics_line(const MetricsRecord& r, bool include_seconds) {
  json j = to_json(r);
  if (!include_seconds) j.erase("seconds");
  return j.dump();
}

namespace {

std::size_t resolve_jobs(std::size_t jobs) {
  if (jobs == 0) jobs = std::max(1u, std::thread::hardware_concurrency());
  return jobs;
}

// Runs fn(i) for i in [0, n) on up to `jobs` threads. Each index is handled
// by exactly one worker; callers write results into per-index slots.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t jobs, Fn&& fn) {
  jobs = std::min(resolve_jobs(jobs), n);
  if (jobs <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> workers;
  std::vector<std::exception_ptr> errors(jobs);
  for (std::size_t t = 0; t < jobs; ++t) {
    workers.emplace_back([&, t] {
      try {
        for (std::size_t i = t; i < n; i += jobs) fn(i);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto& w : workers) w.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

std::size_t split_size(const VideoCollection& c, std::size_t limit) {
  return limit == 0 ? c.videos.size() : std::min(limit, c.videos.size());
}

template <typename T>
std::size_t predicted_class(const VideoPass<T>& pass) {
  return argmax(std::vector<double>(pass.scores.begin(), pass.scores.end()));
}

template <typename T>
Backbone<float> to_float(const Backbone<T>& net) {
  if constexpr (std::is_same_v<T, float>) {
    return net;
  } else {
    return net.template cast<float>();
  }
}

struct VideoOutcome {
  double loss = 0.0;
  bool correct = false;
  std::size_t stored = 0;
};

template <typename T>
MetricsRecord evaluate_impl(const Backbone<T>& net, const PipelineConfig& pipeline, const VideoCollection& split,
                            std::size_t limit, std::size_t jobs) {
  const auto start = std::chrono::steady_clock::now();
  const std::size_t n = split_size(split, limit);
  if (n == 0) throw std::invalid_argument("evaluate: empty split");
  std::vector<VideoOutcome> out(n);
  parallel_for(n, jobs, [&](std::size_t i) {
    const auto frames = video_tensor<T>(split, i);
    const std::size_t label = split.videos[i].label;
    auto pass = forward_video(net, pipeline, frames, label, false, nullptr);
    out[i] = {static_cast<double>(pass.loss), predicted_class(pass) == label, pass.rest_tape.stored_frames()};
  });
  MetricsRecord r;
  r.split = "test";
  double loss = 0.0;
  std::size_t correct = 0;
  for (const auto& o : out) {
    loss += o.loss;
    correct += o.correct;
    r.peak_stored = std::max(r.peak_stored, o.stored);
  }
  r.loss = loss / static_cast<double>(n);
  r.accuracy = static_cast<double>(correct) / static_cast<double>(n);
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

void write_text(const std::string& path, const std::string& text) {
  write_file_bytes(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

template <typename T>
TrainResult train_impl(const PipelineConfig& pipeline, const TrainConfig& config, const VideoCollection& train_split,
                       const VideoCollection& test_split) {
  pipeline.validate();
  config.validate();
  if (train_split.dims.frames != pipeline.frames_per_video) {
    throw std::invalid_argument("train: dataset has " + std::to_string(train_split.dims.frames) +
                                " frames per video, pipeline expects " + std::to_string(pipeline.frames_per_video));
  }
  const std::size_t n_train = split_size(train_split, config.train_limit);
  if (n_train == 0) throw std::invalid_argument("train: empty training split");
  const bool has_test = !test_split.videos.empty();

  const std::filesystem::path dir = config.output_dir;
  const bool writing = !config.output_dir.empty();
  if (writing) {
    std::filesystem::create_directories(dir);
    write_manifest(config.output_dir, "train", json{{"pipeline", to_json(pipeline)}, {"train", to_json(config)}},
                   config.seed);
  }

  auto net = Backbone<T>::from_config(pipeline);
  net.initialize(config.seed);
  auto params = net.parameters();
  std::vector<Tensor<T>> velocity;
  for (const auto* p : params) velocity.emplace_back(p->shape());

  TrainResult result;
  // Wall-clock goes to its own file so metrics.jsonl is reproducible.
  std::string metrics, timing;
  auto emit = [&](const MetricsRecord& r) {
    result.records.push_back(r);
    metrics += metrics_line(r, false) + '\n';
    timing += json{{"epoch", r.epoch}, {"split", r.split}, {"seconds", r.seconds}}.dump() + '\n';
    if (writing) {
      write_text((dir / "metrics.jsonl").string(), metrics);
      write_text((dir / "timing.jsonl").string(), timing);
    }
  };
  auto save = [&](const std::string& name) {
    if (writing) save_backbone((dir / name).string(), to_float(net));
  };
  save("last.fvck");
  if (config.checkpoint_every_epoch) save("epoch_000.fvck");

  std::vector<std::size_t> order(n_train);
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 1; epoch <= config.epochs && !result.aborted; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    std::seed_seq shuffle_seq{static_cast<std::uint32_t>(config.seed), static_cast<std::uint32_t>(config.seed >> 32),
                              static_cast<std::uint32_t>(epoch), 0u};
    std::mt19937_64 shuffle_rng(shuffle_seq);
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double loss_sum = 0.0;
    std::size_t correct = 0, seen = 0, peak = 0;
    for (std::size_t b = 0; b < n_train && !result.aborted; b += config.batch_size) {
      const std::size_t count = std::min(config.batch_size, n_train - b);
      std::vector<PipelineGradients<T>> grads(count);
      std::vector<VideoOutcome> outcomes(count);
      parallel_for(count, config.jobs, [&](std::size_t k) {
        const std::size_t v = order[b + k];
        std::seed_seq seq{static_cast<std::uint32_t>(config.seed), static_cast<std::uint32_t>(config.seed >> 32),
                          static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(v), 1u};
        std::mt19937_64 rng(seq);
        const auto frames = video_tensor<T>(train_split, v);
        const std::size_t label = train_split.videos[v].label;
        auto pass = forward_video(net, pipeline, frames, label, true, &rng);
        outcomes[k] = {static_cast<double>(pass.loss), predicted_class(pass) == label,
                       pass.rest_tape.stored_frames()};
        grads[k] = backward(net, pass);
      });
      for (const auto& o : outcomes) {
        if (!std::isfinite(o.loss)) {
          result.aborted = true;
          result.message = "non-finite loss at epoch " + std::to_string(epoch) + ", batch starting at " +
                           std::to_string(b) + "; last.fvck keeps the last finite parameters";
        }
      }
      if (result.aborted) break;
      // Reduce in batch order so the sum does not depend on scheduling.
      const T scale = T{1} / static_cast<T>(count);
      for (std::size_t p = 0; p < params.size(); ++p) {
        auto vel = velocity[p].data();
        auto w = params[p]->data();
        std::vector<T> sum(w.size(), T{0});
        for (std::size_t k = 0; k < count; ++k) {
          const auto gk = grads[k].params[p].data();
          for (std::size_t j = 0; j < sum.size(); ++j) sum[j] += gk[j];
        }
        for (std::size_t j = 0; j < w.size(); ++j) {
          vel[j] = static_cast<T>(config.momentum) * vel[j] + sum[j] * scale;
          w[j] -= static_cast<T>(config.learning_rate) * vel[j];
        }
      }
      for (const auto& o : outcomes) {
        loss_sum += o.loss;
        correct += o.correct;
        peak = std::max(peak, o.stored);
        ++seen;
      }
    }
    if (result.aborted) break;

    MetricsRecord tr;
    tr.epoch = epoch;
    tr.split = "train";
    tr.loss = loss_sum / static_cast<double>(seen);
    tr.accuracy = static_cast<double>(correct) / static_cast<double>(seen);
    tr.peak_stored = peak;
    tr.seed = config.seed;
    tr.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    emit(tr);
    save("last.fvck");
    if (config.checkpoint_every_epoch) {
      std::ostringstream name;
      name << "epoch_" << std::setw(3) << std::setfill('0') << epoch << ".fvck";
      save(name.str());
    }

    if (has_test && (epoch % config.eval_every == 0 || epoch == config.epochs)) {
      MetricsRecord te = evaluate_impl(net, pipeline, test_split, config.test_limit, config.jobs);
      te.epoch = epoch;
      te.seed = config.seed;
      emit(te);
      if (te.accuracy > result.best_accuracy) {
        result.best_accuracy = te.accuracy;
        result.best_epoch = epoch;
        save("best.fvck");
      }
    }
  }
  result.net = to_float(net);
  return result;
}

}  // namespace

TrainResult train(const PipelineConfig& pipeline, const TrainConfig& config, const VideoCollection& train_split,
                  const VideoCollection& test_split) {
  if (pipeline.precision == Precision::kFloat64) return train_impl<double>(pipeline, config, train_split, test_split);
  return train_impl<float>(pipeline, config, train_split, test_split);
}

MetricsRecord evaluate(const Backbone<float>& net, const PipelineConfig& pipeline, const VideoCollection& split,
                       std::size_t limit, std::size_t jobs) {
  pipeline.validate();
  if (pipeline.precision == Precision::kFloat64) {
    return evaluate_impl(net.cast<double>(), pipeline, split, limit, jobs);
  }
  return evaluate_impl(net, pipeline, split, limit, jobs);
}

Backbone<float> load_backbone(const std::string& checkpoint, const PipelineConfig& pipeline) {
  auto net = Backbone<float>::from_config(pipeline);
  load_checkpoint(checkpoint, {&net.block1, &net.rest});
  return net;
}

void save_backbone(const std::string& path, const Backbone<float>& net) {
  save_checkpoint(path, {&net.block1, &net.rest});
}

// ---------------------------------------------------------------------------

const AblationBlock* AblationReport::find(std::string_view name) const {
  for (const auto& b : blocks) {
    if (b.name == name) return &b;
  }
  return nullptr;
}

std::string AblationReport::summary() const {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4);
  os << "rank  config                    mean     std      per-seed\n";
  for (std::size_t r = 0; r < ranking.size(); ++r) {
    const auto& b = blocks[ranking[r]];
    os << std::left << std::setw(6) << r + 1 << std::setw(26) << b.name << std::setw(9) << b.mean << std::setw(9)
       << b.stddev;
    for (std::size_t s = 0; s < b.accuracies.size(); ++s) {
      os << (s ? " " : "") << b.seeds[s] << ':' << b.accuracies[s];
    }
    os << '\n';
  }
  return os.str();
}

AblationReport ablation_matrix(const std::vector<AblationEntry>& entries, const std::vector<std::uint64_t>& seeds,
                               const TrainConfig& config, const VideoCollection& train_split,
                               const VideoCollection& test_split) {
  if (entries.empty()) throw std::invalid_argument("ablation_matrix: no configurations");
  if (seeds.empty()) throw std::invalid_argument("ablation_matrix: no seeds");
  AblationReport report;
  for (const auto& e : entries) {
    AblationBlock block;
    block.name = e.name;
    block.pipeline = e.pipeline;
    block.seeds = seeds;
    for (const auto seed : seeds) {
      TrainConfig run = config;
      run.seed = seed;
      // Only the final epoch's test accuracy is compared.
      run.eval_every = config.epochs;
      if (!config.output_dir.empty()) {
        run.output_dir = (std::filesystem::path(config.output_dir) / e.name / ("seed_" + std::to_string(seed))).string();
      }
      auto result = train(e.pipeline, run, train_split, test_split);
      if (result.aborted) throw std::runtime_error("ablation '" + e.name + "': " + result.message);
      double acc = 0.0;
      for (const auto& r : result.records) {
        if (r.split == "test") acc = r.accuracy;
      }
      block.accuracies.push_back(acc);
      block.runs.push_back(std::move(result));
    }
    block.mean = mean(block.accuracies);
    block.stddev = stddev(block.accuracies);
    report.blocks.push_back(std::move(block));
  }
  report.ranking.resize(report.blocks.size());
  std::iota(report.ranking.begin(), report.ranking.end(), 0);
  std::stable_sort(report.ranking.begin(), report.ranking.end(),
                   [&](std::size_t a, std::size_t b) { return report.blocks[a].mean > report.blocks[b].mean; });
  return report;
}

bool ordered_within_std(const AblationBlock& a, const AblationBlock& b) {
  return a.mean + a.stddev >= b.mean - b.stddev;
}

// ---------------------------------------------------------------------------

namespace {

json layer_json(const LayerSpec& s) {
  json j{{"kind", std::string(to_string(s.kind))}};
  switch (s.kind) {
    case LayerKind::kConv2d:
      j["in_channels"] = s.in_channels;
      j["out_channels"] = s.out_channels;
      j["kernel"] = s.kernel;
      j["stride"] = s.stride;
      j["padding"] = s.padding;
      break;
    case LayerKind::kMaxPool2d:
      j["kernel"] = s.kernel;
      j["stride"] = s.stride;
      break;
    case LayerKind::kLinear:
      j["in_channels"] = s.in_channels;
      j["out_channels"] = s.out_channels;
      break;
    case LayerKind::kTemporalShift:
      j["shift_fraction"] = s.shift_fraction;
      break;
    default:
      break;
  }
  return j;
}

template <typename V>
V get_or(const json& j, const char* key, V fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<V>();
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("config key '") + key + "': " + e.what());
  }
}

void reject_unknown(const json& j, std::initializer_list<std::string_view> known, std::string_view what) {
  if (!j.is_object()) throw std::invalid_argument(std::string(what) + ": expected a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      throw std::invalid_argument(std::string(what) + ": unknown key '" + key + "'");
    }
  }
}

LayerSpec layer_from_json(const json& j) {
  reject_unknown(j, {"kind", "in_channels", "out_channels", "kernel", "stride", "padding", "shift_fraction"}, "layer");
  LayerSpec s;
  s.kind = layer_kind_from_string(get_or<std::string>(j, "kind", ""));
  s.in_channels = get_or<std::size_t>(j, "in_channels", 0);
  s.out_channels = get_or<std::size_t>(j, "out_channels", 0);
  s.kernel = get_or<std::size_t>(j, "kernel", 0);
  s.stride = get_or<std::size_t>(j, "stride", 1);
  s.padding = get_or<std::size_t>(j, "padding", 0);
  s.shift_fraction = get_or<double>(j, "shift_fraction", 0.0);
  s.validate();
  return s;
}

}  // namespace

json to_json(const PipelineConfig& c) {
  json b1 = json::array(), rest = json::array();
  for (const auto& s : c.block1) b1.push_back(layer_json(s));
  for (const auto& s : c.rest) rest.push_back(layer_json(s));
  return json{{"g", c.g},
              {"method", std::string(to_string(c.method))},
              {"frames_per_video", c.frames_per_video},
              {"num_classes", c.num_classes},
              {"sampled_frames", c.sampled_frames},
              {"eval_sampled_frames", c.eval_sampled_frames},
              {"temporal_shift", c.temporal_shift},
              {"precision", std::string(to_string(c.precision))},
              {"frame_shape", c.frame_shape},
              {"block1", b1},
              {"rest", rest}};
}

json to_json(const TrainConfig& c) {
  return json{{"epochs", c.epochs},
              {"batch_size", c.batch_size},
              {"learning_rate", c.learning_rate},
              {"momentum", c.momentum},
              {"seed", c.seed},
              {"eval_every", c.eval_every},
              {"jobs", c.jobs},
              {"output_dir", c.output_dir},
              {"checkpoint_every_epoch", c.checkpoint_every_epoch},
              {"train_limit", c.train_limit},
              {"test_limit", c.test_limit}};
}

json to_json(const MetricsRecord& r) {
  return json{{"epoch", r.epoch},     {"split", r.split},     {"accuracy", r.accuracy},
              {"loss", r.loss},       {"seconds", r.seconds}, {"peak_stored", r.peak_stored},
              {"seed", r.seed}};
}

PipelineConfig pipeline_config_from_json(const json& j) {
  reject_unknown(j,
                 {"g", "method", "frames_per_video", "num_classes", "sampled_frames", "eval_sampled_frames",
                  "temporal_shift", "precision", "frame_shape", "block1", "rest"},
                 "pipeline config");
  PipelineConfig c;
  c.g = get_or<std::uint32_t>(j, "g", c.g);
  c.method = clustering_method_from_string(get_or<std::string>(j, "method", std::string(to_string(c.method))));
  c.frames_per_video = get_or<std::size_t>(j, "frames_per_video", c.frames_per_video);
  c.num_classes = get_or<std::size_t>(j, "num_classes", c.num_classes);
  c.sampled_frames = get_or<std::size_t>(j, "sampled_frames", c.sampled_frames);
  c.eval_sampled_frames = get_or<std::size_t>(j, "eval_sampled_frames", c.eval_sampled_frames);
  c.temporal_shift = get_or<bool>(j, "temporal_shift", c.temporal_shift);
  c.precision = precision_from_string(get_or<std::string>(j, "precision", std::string(to_string(c.precision))));
  c.frame_shape = get_or<Shape>(j, "frame_shape", c.frame_shape);
  if (j.contains("block1") != j.contains("rest")) {
    throw std::invalid_argument("pipeline config: 'block1' and 'rest' must be given together");
  }
  if (j.contains("block1")) {
    for (const auto& s : j.at("block1")) c.block1.push_back(layer_from_json(s));
    for (const auto& s : j.at("rest")) c.rest.push_back(layer_from_json(s));
  } else {
    c.rebuild_default_blocks();
  }
  c.validate();
  return c;
}

TrainConfig train_config_from_json(const json& j) {
  reject_unknown(j,
                 {"epochs", "batch_size", "learning_rate", "momentum", "seed", "eval_every", "jobs", "output_dir",
                  "checkpoint_every_epoch", "train_limit", "test_limit"},
                 "train config");
  TrainConfig c;
  c.epochs = get_or<std::size_t>(j, "epochs", c.epochs);
  c.batch_size = get_or<std::size_t>(j, "batch_size", c.batch_size);
  c.learning_rate = get_or<double>(j, "learning_rate", c.learning_rate);
  c.momentum = get_or<double>(j, "momentum", c.momentum);
  c.seed = get_or<std::uint64_t>(j, "seed", c.seed);
  c.eval_every = get_or<std::size_t>(j, "eval_every", c.eval_every);
  c.jobs = get_or<std::size_t>(j, "jobs", c.jobs);
  c.output_dir = get_or<std::string>(j, "output_dir", c.output_dir);
  c.checkpoint_every_epoch = get_or<bool>(j, "checkpoint_every_epoch", c.checkpoint_every_epoch);
  c.train_limit = get_or<std::size_t>(j, "train_limit", c.train_limit);
  c.test_limit = get_or<std::size_t>(j, "test_limit", c.test_limit);
  c.validate();
  return c;
}

void write_manifest(const std::string& dir, const std::string& command, const json& config, std::uint64_t seed) {
  const json m{{"command", command},
               {"config", config},
               {"seed", seed},
               {"build_tag", std::string(build_tag())},
               {"formats", {{"checkpoint", kCheckpointVersion}, {"dataset", kDatasetVersion}}}};
  write_text((std::filesystem::path(dir) / "manifest.json").string(), m.dump(2) + '\n');
}

}  // namespace fvar
