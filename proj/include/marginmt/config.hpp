#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "marginmt/corpus.hpp"
#include "marginmt/margin.hpp"
#include "marginmt/model.hpp"
#include "marginmt/optim.hpp"

namespace marginmt {

/// A configuration document that does not match the expected schema.
class SchemaError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct TrainConfig {
  ModelConfig model;
  ObjectiveConfig objective;
  std::uint64_t steps_pretrain = 2000;
  std::uint64_t steps_finetune = 2000;
  double lr_peak = 1e-3;
  std::uint64_t warmup_steps = 400;
  AdamConfig adam;
  double clip_norm = 1.0;
  std::size_t batch_tokens = 1024;
  std::uint64_t seed = 1;
  /// 0 disables periodic checkpoints.
  std::uint64_t checkpoint_every = 0;
  std::uint64_t eval_every = 100;
  /// Training pairs used for the indicator-zero proportion at each evaluation.
  std::size_t eval_sample = 500;
  /// Finetuning continues the pretraining schedule instead of restarting warmup.
  bool continue_schedule = false;
  /// Finetuning also updates the LM (the default keeps it fixed).
  bool finetune_lm = false;

  void validate() const;
};

struct DataConfig {
  CorpusOptions corpus;
  std::size_t n_valid = 200;
  std::size_t n_test = 200;
};

struct AnalysisConfig {
  std::size_t sample_size = 1000;
  std::size_t beam_size = 5;
  double length_penalty = 0.6;
  /// 0 means model max_len - 1.
  std::size_t decode_max_len = 0;
  std::size_t histogram_bins = 40;
};

/// Axes of a finetuning sweep. An empty axis takes the base configuration's value.
struct SweepGrid {
  std::vector<Objective> objective;
  std::vector<double> lambda_margin;
  std::vector<double> threshold_k;
  std::vector<MarginVariant> margin_fn;
  std::vector<double> alpha;
  std::vector<bool> weight_on;
};

struct ExperimentConfig {
  std::uint64_t seed = 1;
  DataConfig data;
  TrainConfig train;
  AnalysisConfig analysis;
  SweepGrid sweep;

  /// Pushes the top-level seed into the data and training sections.
  void apply_seed(std::uint64_t s);
};

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

nlohmann::json to_json(const ExperimentConfig& c);
/// Strict: unknown keys and mistyped values raise SchemaError. Missing keys
/// keep their defaults.
ExperimentConfig experiment_from_json(const nlohmann::json& j);
ExperimentConfig load_experiment(const std::string& path);

}  // namespace marginmt
