#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "marginmt/checkpoint.hpp"
#include "marginmt/config.hpp"
#include "marginmt/corpus.hpp"
#include "marginmt/margin.hpp"

namespace marginmt {

/// Training-window averages, one row per evaluation point.
struct MetricRow {
  std::uint64_t step = 0;
  Stage stage = Stage::Pretrain;
  double nmt_ce = 0.0;
  double lm_ce = 0.0;
  double margin_loss = 0.0;
  /// Indicator-zero proportion on the fixed evaluation sample.
  double gated_fraction = 0.0;
  double lr = 0.0;
};

/// Dropout-free measurements at an evaluation point.
struct EvalRow {
  std::uint64_t step = 0;
  Stage stage = Stage::Pretrain;
  double valid_nmt_ce = 0.0;
  double valid_lm_ce = 0.0;
  double gated_fraction = 0.0;
  double average_delta = 0.0;
  double percent_negative = 0.0;
};

struct TrainLog {
  std::vector<MetricRow> metrics;
  std::vector<EvalRow> evals;
};

void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricRow>& rows);
void write_eval_csv(const std::filesystem::path& path, const std::vector<EvalRow>& rows);

/// What one optimizer step saw, for probes and tests.
struct StepInfo {
  Stage stage;
  std::uint64_t step;  // 1-based, after the update
  double loss;
  double lr;
  double grad_norm;
  const Batch& batch;
  const ObjectiveTerms* terms;  // finetuning only
  const ModelBundle& bundle;
};

struct RunHooks {
  /// Periodic and failure snapshots go here; empty disables them.
  std::filesystem::path checkpoint_dir;
  /// Return early once the stage reaches this step.
  std::optional<std::uint64_t> stop_at;
  std::function<void(const StepInfo&)> on_step;
  std::function<void(const std::string&)> warn;
};

class NonFiniteLoss : public std::runtime_error {
 public:
  NonFiniteLoss(std::uint64_t step, const std::string& what) : std::runtime_error(what), step_(step) {}
  std::uint64_t step() const noexcept { return step_; }

 private:
  std::uint64_t step_;
};

/// Fresh pretraining state. Vocabulary sizes must be filled in `config.model`.
Checkpoint start_pretraining(const TrainConfig& config);

/// Switches a pretrained state to finetuning under `config` (the model shape
/// stays the pretrained one). Adam moments are reset.
Checkpoint begin_finetuning(const Checkpoint& pretrained, const TrainConfig& config);

/// Trains until the stage's step budget (or hooks.stop_at) is reached.
/// Resuming from any saved checkpoint reproduces the uninterrupted run.
void run_stage(Checkpoint& ckpt, const Corpus& train, const Corpus& valid, TrainLog& log, const RunHooks& hooks = {});

/// Fixed training-pair sample used for the gated-fraction and margin readings.
std::vector<std::size_t> eval_sample(const Corpus& train, std::size_t n, std::uint64_t seed);

}  // namespace marginmt
