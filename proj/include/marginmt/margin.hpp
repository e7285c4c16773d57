#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "marginmt/tensor.hpp"

namespace marginmt {

enum class MarginVariant { Linear, Cube, Quintic, Log };

std::string to_string(MarginVariant v);
MarginVariant parse_margin_variant(const std::string& name);

/// Monotonically nonincreasing transform M(delta) minimized by the margin
/// loss. `alpha` and `clamp_epsilon` are read by the Log variant only.
struct MarginFunctionSpec {
  MarginVariant variant = MarginVariant::Quintic;
  double alpha = 10.0;
  double clamp_epsilon = 1e-6;

  void validate() const;
};

enum class Objective { CE, MTO, MSO };

std::string to_string(Objective o);
Objective parse_objective(const std::string& name);

struct ObjectiveConfig {
  Objective objective = Objective::MTO;
  double lambda_margin = 5.0;
  double lambda_lm = 0.01;
  double threshold_k = 0.3;
  MarginFunctionSpec margin_function;
  /// Multiply M(delta) by (1 - p_nmt). Off gives the unweighted ablation.
  bool weight_on = true;
  /// Treat (1 - p_nmt) as a constant when weighted.
  bool detach_weight = false;

  void validate() const;
};

/// p_nmt - p_lm. Both probabilities must lie in [0, 1].
double delta(double p_nmt, double p_lm);

double margin_value(const MarginFunctionSpec& spec, double d);
double margin_derivative(const MarginFunctionSpec& spec, double d);

/// M applied elementwise to a tensor of margins.
Tensor margin_function(const MarginFunctionSpec& spec, const Tensor& d);

/// Fraction of non-pad tokens whose margin is strictly negative.
/// `pad` may be empty (no padding). Throws when no token is left.
double negative_margin_ratio(std::span<const double> deltas, std::span<const std::uint8_t> pad = {});

/// Sentence-level indicator I{R < k}. A threshold of 1 or more disables the
/// gate so that every sentence is kept.
bool gate_keeps(double ratio, double threshold_k);

/// Per-token golden probabilities of one target sentence and its ratio R.
struct MarginRecord {
  std::vector<int> tokens;
  std::vector<double> p_nmt;
  std::vector<double> p_lm;
  std::vector<double> delta;
  double ratio = 0.0;
};

MarginRecord make_margin_record(std::vector<int> tokens, std::vector<double> p_nmt, std::vector<double> p_lm);

// Losses. Token tensors are [batch, len]; `pad` has batch * len entries with
// 1 marking padding. Every sum runs over non-pad positions and is divided by
// the batch's non-pad token count.

/// Cross-entropy from golden-token probabilities.
Tensor cross_entropy(const Tensor& gold_probs, std::span<const std::uint8_t> pad);
/// Cross-entropy from full probability rows [batch, len, vocab].
Tensor cross_entropy(const Tensor& prob_rows, std::span<const int> gold, std::span<const std::uint8_t> pad);

/// Sum of (1 - p_nmt) * M(p_nmt - p_lm); p_lm is a constant.
Tensor margin_loss(const Tensor& p_nmt, std::span<const double> p_lm, std::span<const std::uint8_t> pad,
                   const MarginFunctionSpec& spec, bool weight_on = true, bool detach_weight = false);

Tensor mto_loss(const Tensor& ce_nmt, const Tensor& l_margin, double lambda_margin);
/// Returns `l_token` when the sentence is kept, else an exact zero with zero gradient.
Tensor mso_loss(const Tensor& l_token, double ratio, double threshold_k);
Tensor pretrain_loss(const Tensor& ce_nmt, const Tensor& ce_lm, double lambda_lm);

/// The finetuning objective over a batch, with the pieces the trainer logs.
struct ObjectiveTerms {
  Tensor total;
  double ce = 0.0;
  double margin = 0.0;
  std::vector<double> sentence_ratio;
  std::vector<std::uint8_t> kept;
  double gated_fraction = 0.0;
  std::size_t tokens = 0;
};

/// Builds CE, MTO or MSO over a batch in one per-token expression:
///   sum_t gate(s) * (-log p_nmt(t) + lambda_M * w(t) * M(delta(t))) / N
/// CE is the lambda_M = 0, all-kept special case; MTO keeps every sentence.
/// Sentence ratios come from the same p_nmt values used by the loss.
ObjectiveTerms objective_loss(const ObjectiveConfig& cfg, const Tensor& p_nmt, std::span<const double> p_lm,
                              std::span<const std::uint8_t> pad);

}  // namespace marginmt
