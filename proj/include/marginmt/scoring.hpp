#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "marginmt/corpus.hpp"
#include "marginmt/margin.hpp"
#include "marginmt/model.hpp"

namespace marginmt {

/// Golden-token probabilities under teacher forcing, one vector per scored
/// pair covering y + EOS. Computed without dropout or graph recording.
struct PairScores {
  std::vector<std::vector<double>> p_nmt;
  std::vector<std::vector<double>> p_lm;
  double nmt_nll = 0.0;  // summed over tokens
  double lm_nll = 0.0;
  std::size_t tokens = 0;

  double nmt_ce() const { return tokens ? nmt_nll / static_cast<double>(tokens) : 0.0; }
  double lm_ce() const { return tokens ? lm_nll / static_cast<double>(tokens) : 0.0; }
};

struct ScoreOptions {
  bool nmt = true;
  bool lm = true;
  std::size_t batch_tokens = 1024;
};

/// Scores corpus[indices[i]] into slot i. Pairs are grouped by length
/// internally; results do not depend on the order of `indices`.
PairScores score_pairs(const ModelBundle& bundle, const Corpus& corpus, std::span<const std::size_t> indices,
                       const ScoreOptions& options = {});

std::vector<std::size_t> all_indices(const Corpus& corpus);

std::vector<MarginRecord> margin_records(const PairScores& scores, const Corpus& corpus,
                                         std::span<const std::size_t> indices);

}  // namespace marginmt
