#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "json.hpp"
#include "marginmt/checkpoint.hpp"
#include "marginmt/config.hpp"
#include "marginmt/corpus.hpp"
#include "marginmt/margin.hpp"

namespace marginmt {

struct MarginStats {
  std::size_t token_count = 0;
  std::size_t sentence_count = 0;
  /// Fraction of tokens with delta strictly below zero.
  double percent_negative = 0.0;
  double average_delta = 0.0;
  /// Uniform bins over [-1, 1]; delta = 1 falls in the last bin.
  std::vector<std::size_t> histogram;
};

MarginStats margin_stats(const std::vector<MarginRecord>& records, std::size_t bins = 40);

/// Stats over a seeded sample of `sample_size` pairs (0 = whole corpus),
/// dropout off.
MarginStats compute_margin_stats(const ModelBundle& bundle, const Corpus& corpus, std::size_t sample_size,
                                 std::uint64_t seed, std::size_t bins = 40, std::size_t batch_tokens = 1024);

nlohmann::json to_json(const MarginStats& s);
void write_histogram_csv(const std::filesystem::path& path, const MarginStats& s);

struct FilterReport {
  double threshold_k = 0.0;
  std::vector<std::int64_t> kept;
  std::vector<std::int64_t> flagged;
  /// Per-pair ratio R, in corpus order.
  std::vector<std::pair<std::int64_t, double>> ratio;
  bool has_labels = false;
  std::size_t planted = 0;
  std::size_t true_positive = 0;
  /// NaN when undefined (nothing flagged / nothing planted).
  double precision = 0.0;
  double recall = 0.0;
};

/// Flags exactly the pairs the MSO gate would drop at `threshold_k`.
FilterReport filter_corpus(const ModelBundle& bundle, const Corpus& corpus, double threshold_k,
                           std::size_t batch_tokens = 1024);

nlohmann::json to_json(const FilterReport& r);

struct BleuOptions {
  int max_n = 4;
  bool smooth = true;
};

struct BleuResult {
  double score = 0.0;  // 0..100
  std::vector<double> precisions;
  double brevity_penalty = 0.0;
  std::size_t hyp_length = 0;
  std::size_t ref_length = 0;
};

using TokenSeq = std::vector<std::string>;

/// Corpus BLEU against one reference per hypothesis. With smoothing, an
/// order n > 1 with zero matches uses (0 + 1) / (total + 1).
BleuResult corpus_bleu(const std::vector<TokenSeq>& hypotheses, const std::vector<TokenSeq>& references,
                       const BleuOptions& options = {});

/// BLEU of a bundle's translations of `corpus` against its targets.
double evaluate_bleu(const ModelBundle& bundle, const Corpus& corpus, const Vocab& tgt_vocab, std::size_t beam_size,
                     double alpha, std::size_t max_len = 0);

struct SweepCell {
  std::string name;
  ObjectiveConfig objective;
};

struct SweepResult {
  SweepCell cell;
  bool ok = false;
  std::string error;
  double bleu = 0.0;
  MarginStats stats;
  double gated_fraction = 0.0;
};

/// Cartesian product of the grid over `base`; empty axes keep the base value.
std::vector<SweepCell> expand_grid(const ObjectiveConfig& base, const SweepGrid& grid);

struct SweepInputs {
  const Checkpoint* pretrained = nullptr;
  const Corpus* train = nullptr;
  const Corpus* valid = nullptr;
  const Corpus* test = nullptr;
  const Vocab* tgt_vocab = nullptr;
  TrainConfig train_config;
  AnalysisConfig analysis;
};

/// Finetunes every cell from the same pretrained state. A failing cell is
/// recorded and the sweep moves on. `on_cell` (optional) sees each finished cell.
std::vector<SweepResult> run_sweep(const SweepInputs& in, const std::vector<SweepCell>& cells,
                                   const std::function<void(const SweepResult&)>& on_cell = {});

nlohmann::json to_json(const SweepResult& r);

}  // namespace marginmt
