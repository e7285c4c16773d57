#pragma once

#include <cstddef>
#include <vector>

#include "marginmt/corpus.hpp"
#include "marginmt/model.hpp"

namespace marginmt {

/// Next-token log-probabilities for a set of prefixes of one source sentence.
/// Every prefix starts after BOS (BOS itself is implicit).
class StepScorer {
 public:
  virtual ~StepScorer() = default;
  virtual std::size_t vocab_size() const = 0;
  virtual std::vector<std::vector<double>> next_log_probs(const std::vector<std::vector<int>>& prefixes) = 0;
};

/// GNMT length normalizer ((5 + len) / 6)^alpha.
double length_penalty(std::size_t length, double alpha);

/// Argmax at each step (lowest id on ties); stops at EOS, which is not
/// included in the result, or after `max_len` tokens.
std::vector<int> greedy_decode(StepScorer& scorer, std::size_t max_len);

struct Hypothesis {
  std::vector<int> tokens;  // without EOS
  double log_prob = 0.0;
  double score = 0.0;       // log_prob / length_penalty(length), length counts EOS when emitted
  bool finished = false;    // ended with EOS
};

struct BeamOptions {
  std::size_t beam_size = 5;
  double alpha = 0.6;
  std::size_t max_len = 64;
};

/// Finished hypotheses, best score first. Candidates ending in EOS are
/// finalized only when they rank inside the top `beam_size` expansions;
/// search ends once `beam_size` hypotheses are finished, nothing is alive,
/// or `max_len` is reached (survivors are then finalized as they stand).
std::vector<Hypothesis> beam_decode(StepScorer& scorer, const BeamOptions& options);

/// Scores prefixes with a bundle's NMT model for one encoded source sentence.
class BundleScorer : public StepScorer {
 public:
  BundleScorer(const ModelBundle& bundle, std::vector<int> src);
  std::size_t vocab_size() const override;
  std::vector<std::vector<double>> next_log_probs(const std::vector<std::vector<int>>& prefixes) override;

 private:
  const ModelBundle& bundle_;
  std::vector<int> src_;
  std::vector<std::uint8_t> src_pad_;
  Tensor memory_;  // [1, src_len, d_model]
};

/// Translations (without EOS) of every source sentence in the corpus.
/// beam_size 1 uses greedy search. max_len 0 means the model's max_len - 1.
std::vector<std::vector<int>> translate(const ModelBundle& bundle, const Corpus& corpus, std::size_t beam_size,
                                        double alpha, std::size_t max_len = 0);

}  // namespace marginmt
