#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <utility>

#include "fvar/stats.h"
#include "fvar/trainer.h"
#include "test_util.h"

using namespace fvar;
namespace fs = std::filesystem;

namespace {

// 8 frames of 16x16 keep every run well under a second.
DatasetSpec small_spec(std::size_t train, std::size_t test) {
  auto spec = fvar::testing::tiny_spec(train, test, 1);
  spec.dims = {8, 3, 16, 16};
  spec.glyph_size = 8;
  for (auto& d : spec.distractors) {
    d.probability = 0.0;
    d.min_length = 1;
    d.max_length = 3;
  }
  return spec;
}

PipelineConfig small_pipeline(ClusteringMethod m, std::uint32_t g) {
  auto p = PipelineConfig::desk_scale(g, m, 4, true);
  p.frames_per_video = 8;
  p.frame_shape = {3, 16, 16};
  return p;
}

TrainConfig quick(std::size_t epochs, double lr = 0.05) {
  TrainConfig c;
  c.epochs = epochs;
  c.batch_size = 4;
  c.learning_rate = lr;
  c.seed = 3;
  return c;
}

const Dataset& data() {
  static const Dataset ds = generate(small_spec(16, 8), procedural_glyphs());
  return ds;
}

std::vector<const MetricsRecord*> split(const TrainResult& r, const std::string& which) {
  std::vector<const MetricsRecord*> out;
  for (const auto& rec : r.records)
    if (rec.split == which) out.push_back(&rec);
  return out;
}

std::size_t count_lines(const fs::path& p) {
  std::ifstream in(p);
  std::size_t n = 0;
  for (std::string line; std::getline(in, line);) n += !line.empty();
  return n;
}

}  // namespace

TEST(Train, ZeroLearningRateLeavesParameters) {
  const auto pipe = small_pipeline(ClusteringMethod::kCumulative, 4);
  const auto r = train(pipe, quick(2, 0.0), data().train, data().test);
  auto init = Backbone<float>::from_config(pipe);
  init.initialize(3);
  const auto a = r.net.parameters();
  const auto b = std::as_const(init).parameters();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(*a[i], *b[i]);
}

TEST(Train, DeterministicAcrossRunsAndWorkers) {
  const auto pipe = small_pipeline(ClusteringMethod::kSlope, 4);
  auto cfg = quick(2);
  const auto a = train(pipe, cfg, data().train, data().test);
  cfg.jobs = 3;
  const auto b = train(pipe, cfg, data().train, data().test);
  ASSERT_EQ(a.records.size(), b.records.size());
  for (std::size_t i = 0; i < a.records.size(); ++i)
    EXPECT_EQ(metrics_line(a.records[i], false), metrics_line(b.records[i], false));
  const auto pa = a.net.parameters(), pb = b.net.parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_EQ(*pa[i], *pb[i]);
}

TEST(Train, OverfitsEightVideos) {
  const auto ds = generate(small_spec(8, 4), procedural_glyphs());
  auto cfg = quick(60, 0.1);
  cfg.batch_size = 2;
  cfg.eval_every = 60;
  const auto r = train(small_pipeline(ClusteringMethod::kCumulative, 4), cfg, ds.train, ds.test);
  ASSERT_FALSE(r.aborted) << r.message;
  const auto train_recs = split(r, "train");
  EXPECT_EQ(train_recs.back()->accuracy, 1.0);
  EXPECT_LT(train_recs.back()->loss, 0.25 * train_recs.front()->loss);
}

TEST(Train, TrainingLossMostlyDecreases) {
  const auto r = train(small_pipeline(ClusteringMethod::kCumulative, 4), quick(12, 0.02), data().train, data().test);
  const auto recs = split(r, "train");
  std::size_t ok = 0;
  for (std::size_t i = 1; i < recs.size(); ++i) ok += recs[i]->loss <= recs[i - 1]->loss;
  EXPECT_GE(static_cast<double>(ok), 0.9 * static_cast<double>(recs.size() - 1));
}

TEST(Train, HugeLearningRateAborts) {
  const auto dir = fvar::testing::scratch_dir("abort");
  auto cfg = quick(3, 1e30);
  cfg.output_dir = dir.string();
  const auto pipe = small_pipeline(ClusteringMethod::kCumulative, 4);
  const auto r = train(pipe, cfg, data().train, data().test);
  EXPECT_TRUE(r.aborted);
  EXPECT_NE(r.message.find("non-finite"), std::string::npos);
  const auto last = load_backbone((dir / "last.fvck").string(), pipe);
  for (const auto* p : last.parameters()) EXPECT_TRUE(p->all_finite());
}

TEST(Train, PeakStoredIsTheClusterCount) {
  for (std::uint32_t g : {2u, 4u}) {
    const auto r = train(small_pipeline(ClusteringMethod::kCumulative, g), quick(1), data().train, data().test);
    for (const auto& rec : r.records) EXPECT_EQ(rec.peak_stored, g);
  }
  const auto full = train(small_pipeline(ClusteringMethod::kNone, 8), quick(1), data().train, data().test);
  for (const auto& rec : full.records) EXPECT_EQ(rec.peak_stored, 8u);
}

TEST(Train, OutputFiles) {
  const auto dir = fvar::testing::scratch_dir("outputs");
  auto cfg = quick(2);
  cfg.output_dir = dir.string();
  cfg.checkpoint_every_epoch = true;
  const auto pipe = small_pipeline(ClusteringMethod::kUniform, 4);
  const auto r = train(pipe, cfg, data().train, data().test);
  for (const char* f : {"manifest.json", "metrics.jsonl", "timing.jsonl", "last.fvck", "best.fvck", "epoch_000.fvck",
                        "epoch_001.fvck", "epoch_002.fvck"})
    EXPECT_TRUE(fs::exists(dir / f)) << f;
  EXPECT_EQ(count_lines(dir / "metrics.jsonl"), r.records.size());
  std::ifstream m(dir / "manifest.json");
  const auto manifest = nlohmann::json::parse(m);
  EXPECT_EQ(manifest.at("seed"), 3);
  EXPECT_EQ(manifest.at("build_tag"), std::string(build_tag()));
  std::ifstream metrics(dir / "metrics.jsonl");
  std::string line;
  std::getline(metrics, line);
  EXPECT_EQ(line.find("seconds"), std::string::npos);

  const auto reloaded = load_backbone((dir / "last.fvck").string(), pipe);
  const auto a = reloaded.parameters();
  const auto b = r.net.parameters();
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(*a[i], *b[i]);
}

TEST(Evaluate, ZeroNetworkIsAtChance) {
  const auto pipe = small_pipeline(ClusteringMethod::kCumulative, 4);
  const auto net = Backbone<float>::from_config(pipe);
  const auto rec = evaluate(net, pipe, data().test);
  EXPECT_EQ(rec.accuracy, 0.25);
  EXPECT_NEAR(rec.loss, std::log(4.0), 1e-6);
}

TEST(Evaluate, Idempotent) {
  const auto pipe = small_pipeline(ClusteringMethod::kCumulative, 4);
  auto net = Backbone<float>::from_config(pipe);
  net.initialize(9);
  const auto before = net.parameters();
  std::vector<Tensor<float>> copy;
  for (const auto* p : before) copy.push_back(*p);
  const auto a = evaluate(net, pipe, data().test), b = evaluate(net, pipe, data().test, 0, 2);
  EXPECT_EQ(metrics_line(a, false), metrics_line(b, false));
  for (std::size_t i = 0; i < copy.size(); ++i) EXPECT_EQ(*before[i], copy[i]);
  EXPECT_GE(a.accuracy, 0.0);
  EXPECT_LE(a.accuracy, 1.0);
}

TEST(Ablation, MeanAndStdByHand) {
  std::vector<AblationEntry> entries{{"cum4", small_pipeline(ClusteringMethod::kCumulative, 4)},
                                     {"uni4", small_pipeline(ClusteringMethod::kUniform, 4)}};
  const auto report = ablation_matrix(entries, {0, 1, 2}, quick(2), data().train, data().test);
  ASSERT_EQ(report.blocks.size(), 2u);
  for (const auto& b : report.blocks) {
    ASSERT_EQ(b.accuracies.size(), 3u);
    for (std::size_t s = 0; s < 3; ++s) EXPECT_EQ(b.accuracies[s], split(b.runs[s], "test").back()->accuracy);
    const double m = (b.accuracies[0] + b.accuracies[1] + b.accuracies[2]) / 3.0;
    double ss = 0;
    for (double a : b.accuracies) ss += (a - m) * (a - m);
    EXPECT_NEAR(b.mean, m, 1e-12);
    EXPECT_NEAR(b.stddev, std::sqrt(ss / 2.0), 1e-12);
  }
  EXPECT_EQ(report.ranking.size(), 2u);
  EXPECT_GE(report.blocks[report.ranking[0]].mean, report.blocks[report.ranking[1]].mean);
  ASSERT_NE(report.find("uni4"), nullptr);
  EXPECT_EQ(report.find("missing"), nullptr);
}

TEST(Ablation, SingleConfiguration) {
  const auto report = ablation_matrix({{"only", small_pipeline(ClusteringMethod::kSlope, 2)}}, {5}, quick(1),
                                      data().train, data().test);
  ASSERT_EQ(report.blocks.size(), 1u);
  EXPECT_EQ(report.blocks[0].stddev, 0.0);
  EXPECT_NE(report.summary().find("only"), std::string::npos);
}

TEST(Ablation, OrderingWithinOneStd) {
  AblationBlock a, b;
  a.mean = 0.60, a.stddev = 0.02;
  b.mean = 0.65, b.stddev = 0.03;
  EXPECT_TRUE(ordered_within_std(a, b));
  b.stddev = 0.01;
  EXPECT_FALSE(ordered_within_std(a, b));
  EXPECT_TRUE(ordered_within_std(b, a));
}

TEST(Json, ConfigsRoundTrip) {
  auto p = small_pipeline(ClusteringMethod::kSlope, 4);
  p.precision = Precision::kFloat64;
  const auto pj = to_json(p);
  EXPECT_EQ(to_json(pipeline_config_from_json(pj)), pj);
  auto t = quick(7, 0.3);
  t.train_limit = 11;
  const auto tj = to_json(t);
  EXPECT_EQ(to_json(train_config_from_json(tj)), tj);

  auto bad = pj;
  bad["colour"] = 1;
  EXPECT_THROW(pipeline_config_from_json(bad), std::invalid_argument);
  EXPECT_THROW(train_config_from_json(nlohmann::json{{"epochs", 0}}), std::invalid_argument);
  EXPECT_THROW(train_config_from_json(nlohmann::json{{"learning_rate", "fast"}}), std::invalid_argument);
  const auto partial = pipeline_config_from_json(nlohmann::json{{"g", 4}, {"method", "uniform"}});
  EXPECT_EQ(partial.method, ClusteringMethod::kUniform);
  EXPECT_FALSE(partial.block1.empty());
}

TEST(Config, TrainValidation) {
  auto c = quick(1);
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = quick(1, -1.0);
  EXPECT_THROW(c.validate(), std::invalid_argument);
  EXPECT_NO_THROW(quick(1, 0.0).validate());
}
