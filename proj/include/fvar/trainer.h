#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "fvar/dataset.h"
#include "fvar/pipeline.h"
#include "json.hpp"

namespace fvar {

std::string_view build_tag();

struct TrainConfig {
  std::size_t epochs = 20;
  std::size_t batch_size = 16;
  double learning_rate = 0.01;
  double momentum = 0.9;
  std::uint64_t seed = 0;
  // Evaluate the test split every `eval_every` epochs (and after the last).
  std::size_t eval_every = 1;
  // Worker threads for per-video passes; 0 = hardware concurrency.
  std::size_t jobs = 1;
  // Empty: nothing is written.
  std::string output_dir;
  // Also keep epoch_NNN.fvck after every epoch (epoch_000 = initial weights).
  bool checkpoint_every_epoch = false;
  // Use only the first n videos of each split (0 = all).
  std::size_t train_limit = 0;
  std::size_t test_limit = 0;

  void validate() const;
};

struct MetricsRecord {
  std::size_t epoch = 0;
  std::string split;
  double accuracy = 0.0;
  double loss = 0.0;
  double seconds = 0.0;
  // Largest frame count kept for backward by blocks 2+ for one video.
  std::size_t peak_stored = 0;
  std::uint64_t seed = 0;

  bool operator==(const MetricsRecord&) const = default;
};

// One JSON object; with include_seconds false the line is reproducible.
std::string metrics_line(const MetricsRecord& r, bool include_seconds = true);

struct TrainResult {
  std::vector<MetricsRecord> records;
  std::size_t best_epoch = 0;
  double best_accuracy = -1.0;
  bool aborted = false;
  std::string message;
  // Final parameters, float32.
  Backbone<float> net;
};

// Deterministic in (pipeline, train, seed, data). Writes metrics.jsonl
// (records without wall-clock), timing.jsonl, manifest.json, best.fvck and
// last.fvck under output_dir when it is set.
// A non-finite loss stops the run; last.fvck then holds the last finite
// parameters.
TrainResult train(const PipelineConfig& pipeline, const TrainConfig& config, const VideoCollection& train_split,
                  const VideoCollection& test_split);

// Full pass over `split` with the configured forward path; parameters are
// not touched.
MetricsRecord evaluate(const Backbone<float>& net, const PipelineConfig& pipeline, const VideoCollection& split,
                       std::size_t limit = 0, std::size_t jobs = 1);

Backbone<float> load_backbone(const std::string& checkpoint, const PipelineConfig& pipeline);
void save_backbone(const std::string& path, const Backbone<float>& net);

struct AblationEntry {
  std::string name;
  PipelineConfig pipeline;
};

struct AblationBlock {
  std::string name;
  PipelineConfig pipeline;
  std::vector<std::uint64_t> seeds;
  // Final-epoch test accuracy per seed.
  std::vector<double> accuracies;
  std::vector<TrainResult> runs;
  double mean = 0.0;
  double stddev = 0.0;
};

struct AblationReport {
  std::vector<AblationBlock> blocks;
  // Block indices sorted by mean accuracy, best first (stable on ties).
  std::vector<std::size_t> ranking;

  const AblationBlock* find(std::string_view name) const;
  std::string summary() const;
};

// Every entry is trained once per seed with otherwise identical settings.
// Per-run outputs land in output_dir/<name>/seed_<s> when output_dir is set.
AblationReport ablation_matrix(const std::vector<AblationEntry>& entries, const std::vector<std::uint64_t>& seeds,
                               const TrainConfig& config, const VideoCollection& train_split,
                               const VideoCollection& test_split);

// a >= b up to one standard deviation each: mean_a + std_a >= mean_b - std_b.
bool ordered_within_std(const AblationBlock& a, const AblationBlock& b);

nlohmann::json to_json(const PipelineConfig& c);
nlohmann::json to_json(const TrainConfig& c);
nlohmann::json to_json(const MetricsRecord& r);
// Missing keys keep their defaults; unknown keys and bad values throw
// std::invalid_argument.
PipelineConfig pipeline_config_from_json(const nlohmann::json& j);
TrainConfig train_config_from_json(const nlohmann::json& j);

// Writes <dir>/manifest.json: command, config, seed and build tag.
void write_manifest(const std::string& dir, const std::string& command, const nlohmann::json& config,
                    std::uint64_t seed);

}  // namespace fvar
