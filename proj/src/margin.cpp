#include "marginmt/margin.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "marginmt/ops.hpp"

namespace marginmt {

std::string to_string(MarginVariant v) {
  switch (v) {
    case MarginVariant::Linear: return "linear";
    case MarginVariant::Cube: return "cube";
    case MarginVariant::Quintic: return "quintic";
    case MarginVariant::Log: return "log";
  }
  return "?";
}

MarginVariant parse_margin_variant(const std::string& name) {
  if (name == "linear") return MarginVariant::Linear;
  if (name == "cube") return MarginVariant::Cube;
  if (name == "quintic") return MarginVariant::Quintic;
  if (name == "log") return MarginVariant::Log;
  throw std::invalid_argument("unknown margin function '" + name + "'");
}

std::string to_string(Objective o) {
  switch (o) {
    case Objective::CE: return "ce";
    case Objective::MTO: return "mto";
    case Objective::MSO: return "mso";
  }
  return "?";
}

Objective parse_objective(const std::string& name) {
  if (name == "ce") return Objective::CE;
  if (name == "mto") return Objective::MTO;
  if (name == "mso") return Objective::MSO;
  throw std::invalid_argument("unknown objective '" + name + "'");
}

void MarginFunctionSpec::validate() const {
  if (!(alpha > 0)) throw std::invalid_argument("margin function: alpha must be > 0");
  if (!(clamp_epsilon > 0 && clamp_epsilon < 0.1))
    throw std::invalid_argument("margin function: clamp_epsilon must lie in (0, 0.1)");
}

void ObjectiveConfig::validate() const {
  if (!(lambda_margin >= 0)) throw std::invalid_argument("objective: lambda_margin must be >= 0");
  if (!(lambda_lm >= 0)) throw std::invalid_argument("objective: lambda_lm must be >= 0");
  if (!(threshold_k > 0 && threshold_k <= 1)) throw std::invalid_argument("objective: threshold_k must lie in (0, 1]");
  margin_function.validate();
}

double delta(double p_nmt, double p_lm) {
  if (!(p_nmt >= 0 && p_nmt <= 1) || !(p_lm >= 0 && p_lm <= 1))
    throw std::domain_error("delta: probabilities must lie in [0, 1]");
  return p_nmt - p_lm;
}

double margin_value(const MarginFunctionSpec& spec, double d) {
  switch (spec.variant) {
    case MarginVariant::Linear: return (1.0 - d) / 2.0;
    case MarginVariant::Cube: return (1.0 - d * d * d) / 2.0;
    case MarginVariant::Quintic: {
      const double d2 = d * d;
      return (1.0 - d2 * d2 * d) / 2.0;
    }
    case MarginVariant::Log: {
      const double c = std::clamp(d, -1.0 + spec.clamp_epsilon, 1.0 - spec.clamp_epsilon);
      return std::log((1.0 - c) / (1.0 + c)) / spec.alpha + 0.5;
    }
  }
  return 0.0;
}

double margin_derivative(const MarginFunctionSpec& spec, double d) {
  switch (spec.variant) {
    case MarginVariant::Linear: return -0.5;
    case MarginVariant::Cube: return -1.5 * d * d;
    case MarginVariant::Quintic: return -2.5 * d * d * d * d;
    case MarginVariant::Log: {
      const double lo = -1.0 + spec.clamp_epsilon, hi = 1.0 - spec.clamp_epsilon;
      if (d < lo || d > hi) return 0.0;
      return -2.0 / (spec.alpha * (1.0 - d * d));
    }
  }
  return 0.0;
}

Tensor margin_function(const MarginFunctionSpec& spec, const Tensor& d) {
  return ops::map(
      d, [spec](double v) { return margin_value(spec, v); }, [spec](double v) { return margin_derivative(spec, v); },
      "margin_function");
}

double negative_margin_ratio(std::span<const double> deltas, std::span<const std::uint8_t> pad) {
  if (!pad.empty() && pad.size() != deltas.size())
    throw std::invalid_argument("negative_margin_ratio: pad mask length differs from margins");
  std::size_t tokens = 0, negative = 0;
  for (std::size_t i = 0; i < deltas.size(); ++i) {
    if (!pad.empty() && pad[i]) continue;
    ++tokens;
    if (deltas[i] < 0) ++negative;
  }
  if (tokens == 0) throw std::invalid_argument("negative_margin_ratio: sentence has no tokens");
  return static_cast<double>(negative) / static_cast<double>(tokens);
}

bool gate_keeps(double ratio, double threshold_k) { return threshold_k >= 1.0 || ratio < threshold_k; }

MarginRecord make_margin_record(std::vector<int> tokens, std::vector<double> p_nmt, std::vector<double> p_lm) {
  if (p_nmt.size() != p_lm.size() || tokens.size() != p_nmt.size())
    throw std::invalid_argument("margin record: misaligned sequences");
  MarginRecord r;
  r.delta.reserve(p_nmt.size());
  for (std::size_t i = 0; i < p_nmt.size(); ++i) r.delta.push_back(delta(p_nmt[i], p_lm[i]));
  r.ratio = negative_margin_ratio(r.delta);
  r.tokens = std::move(tokens);
  r.p_nmt = std::move(p_nmt);
  r.p_lm = std::move(p_lm);
  return r;
}

namespace {

std::size_t count_tokens(std::span<const std::uint8_t> pad) {
  return static_cast<std::size_t>(std::count(pad.begin(), pad.end(), std::uint8_t{0}));
}

// Constant per-token weights: 1/N at non-pad positions.
Tensor token_weights(const Shape& shape, std::span<const std::uint8_t> pad, std::size_t n) {
  std::vector<double> w(pad.size());
  const double inv = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < pad.size(); ++i) w[i] = pad[i] ? 0.0 : inv;
  return Tensor(shape, std::move(w));
}

void check_aligned(const char* what, const Tensor& p, std::size_t other, std::span<const std::uint8_t> pad) {
  if (p.size() != other || p.size() != pad.size())
    throw std::invalid_argument(std::string(what) + ": misaligned lengths (" + std::to_string(p.size()) + ", " +
                                std::to_string(other) + ", " + std::to_string(pad.size()) + ")");
}

Tensor margin_terms(const Tensor& p_nmt, std::span<const double> p_lm, const MarginFunctionSpec& spec,
                    bool weight_on, bool detach_weight) {
  Tensor lm(p_nmt.shape(), std::vector<double>(p_lm.begin(), p_lm.end()));
  Tensor m = margin_function(spec, ops::sub(p_nmt, lm));
  if (!weight_on) return m;
  Tensor w = ops::affine(detach_weight ? p_nmt.detach() : p_nmt, -1.0, 1.0);
  return ops::mul(w, m);
}

}  // namespace

Tensor cross_entropy(const Tensor& gold_probs, std::span<const std::uint8_t> pad) {
  check_aligned("cross_entropy", gold_probs, pad.size(), pad);
  const std::size_t n = count_tokens(pad);
  if (n == 0) throw std::invalid_argument("cross_entropy: batch has no tokens");
  return ops::scale(ops::reduce_sum(ops::mul(ops::log(gold_probs), token_weights(gold_probs.shape(), pad, n))), -1.0);
}

Tensor cross_entropy(const Tensor& prob_rows, std::span<const int> gold, std::span<const std::uint8_t> pad) {
  if (prob_rows.rank() < 2) throw ShapeError("cross_entropy", "probability rows need rank >= 2");
  std::vector<int> idx(gold.begin(), gold.end());
  // Padding positions may carry any id; read column 0 there.
  for (std::size_t i = 0; i < idx.size() && i < pad.size(); ++i)
    if (pad[i]) idx[i] = 0;
  return cross_entropy(ops::gather(prob_rows, idx), pad);
}

Tensor margin_loss(const Tensor& p_nmt, std::span<const double> p_lm, std::span<const std::uint8_t> pad,
                   const MarginFunctionSpec& spec, bool weight_on, bool detach_weight) {
  check_aligned("margin_loss", p_nmt, p_lm.size(), pad);
  const std::size_t n = count_tokens(pad);
  if (n == 0) throw std::invalid_argument("margin_loss: batch has no tokens");
  Tensor terms = margin_terms(p_nmt, p_lm, spec, weight_on, detach_weight);
  return ops::reduce_sum(ops::mul(terms, token_weights(p_nmt.shape(), pad, n)));
}

Tensor mto_loss(const Tensor& ce_nmt, const Tensor& l_margin, double lambda_margin) {
  return ops::add(ce_nmt, ops::scale(l_margin, lambda_margin));
}

Tensor mso_loss(const Tensor& l_token, double ratio, double threshold_k) {
  if (!(ratio >= 0 && ratio <= 1)) throw std::domain_error("mso_loss: ratio must lie in [0, 1]");
  return gate_keeps(ratio, threshold_k) ? l_token : ops::scale(l_token, 0.0);
}

Tensor pretrain_loss(const Tensor& ce_nmt, const Tensor& ce_lm, double lambda_lm) {
  return ops::add(ce_nmt, ops::scale(ce_lm, lambda_lm));
}

ObjectiveTerms objective_loss(const ObjectiveConfig& cfg, const Tensor& p_nmt, std::span<const double> p_lm,
                              std::span<const std::uint8_t> pad) {
  if (p_nmt.rank() != 2) throw ShapeError("objective_loss", "p_nmt must be [batch, len], got " + shape_str(p_nmt.shape()));
  check_aligned("objective_loss", p_nmt, p_lm.size(), pad);
  const std::size_t batch = p_nmt.dim(0), len = p_nmt.dim(1);
  ObjectiveTerms out;
  out.tokens = count_tokens(pad);
  if (out.tokens == 0) throw std::invalid_argument("objective_loss: batch has no tokens");

  auto pn = p_nmt.data();
  std::vector<double> deltas(pn.size());
  for (std::size_t i = 0; i < pn.size(); ++i) deltas[i] = pad[i] ? 0.0 : pn[i] - p_lm[i];

  out.sentence_ratio.assign(batch, 0.0);
  out.kept.assign(batch, 1);
  std::size_t gated = 0, sentences = 0;
  for (std::size_t b = 0; b < batch; ++b) {
    auto pad_row = pad.subspan(b * len, len);
    if (std::all_of(pad_row.begin(), pad_row.end(), [](std::uint8_t v) { return v != 0; })) continue;
    ++sentences;
    out.sentence_ratio[b] = negative_margin_ratio(std::span<const double>(deltas).subspan(b * len, len), pad_row);
    if (cfg.objective == Objective::MSO && !gate_keeps(out.sentence_ratio[b], cfg.threshold_k)) {
      out.kept[b] = 0;
      ++gated;
    }
  }
  out.gated_fraction = sentences ? static_cast<double>(gated) / static_cast<double>(sentences) : 0.0;

  const double inv_n = 1.0 / static_cast<double>(out.tokens);
  std::vector<double> weights(pad.size());
  double ce = 0, margin = 0;
  for (std::size_t i = 0; i < pad.size(); ++i) {
    if (pad[i]) continue;
    weights[i] = out.kept[i / len] ? inv_n : 0.0;
    ce -= std::log(pn[i]);
    const double w = cfg.weight_on ? 1.0 - pn[i] : 1.0;
    margin += w * margin_value(cfg.margin_function, deltas[i]);
  }
  out.ce = ce * inv_n;
  out.margin = margin * inv_n;

  Tensor terms = ops::scale(ops::log(p_nmt), -1.0);
  if (cfg.objective != Objective::CE) {
    Tensor m = margin_terms(p_nmt, p_lm, cfg.margin_function, cfg.weight_on, cfg.detach_weight);
    terms = ops::add(terms, ops::scale(m, cfg.lambda_margin));
  }
  out.total = ops::reduce_sum(ops::mul(terms, Tensor(p_nmt.shape(), std::move(weights))));
  return out;
}

}  // namespace marginmt
