#include "marginmt/optim.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace marginmt {

void adam_step(std::vector<Tensor>& params, AdamState& state, double lr, const AdamConfig& cfg) {
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.size(), 0.0);
      state.v.emplace_back(p.size(), 0.0);
    }
  }
  if (state.m.size() != params.size()) throw std::invalid_argument("adam_step: state does not match parameters");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (state.m[i].size() != params[i].size()) throw std::invalid_argument("adam_step: moment shape mismatch");
    if (!params[i].has_grad()) continue;
    for (double g : params[i].grad())
      if (!std::isfinite(g)) throw std::domain_error("adam_step: non-finite gradient");
  }

  state.t += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto w = params[i].data();
    auto& m = state.m[i];
    auto& v = state.v[i];
    const bool has = params[i].has_grad();
    auto g = params[i].grad();
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double gj = has ? g[j] : 0.0;
      m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * gj;
      v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * gj * gj;
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      w[j] -= lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
}

double clip_grad_norm(std::vector<Tensor>& params, double max_norm) {
  double sq = 0;
  for (const auto& p : params)
    if (p.has_grad())
      for (double g : p.grad()) sq += g * g;
  const double norm = std::sqrt(sq);
  if (max_norm > 0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (auto& p : params)
      if (p.has_grad())
        for (double& g : p.mutable_grad()) g *= s;
  }
  return norm;
}

double lr_at(std::uint64_t step, double peak, std::uint64_t warmup) {
  if (step < 1) throw std::invalid_argument("lr_at: step starts at 1");
  if (warmup < 1) throw std::invalid_argument("lr_at: warmup must be >= 1");
  const double s = static_cast<double>(step), w = static_cast<double>(warmup);
  return peak * std::min(std::sqrt(w / s), s / w);
}

}  // namespace marginmt
