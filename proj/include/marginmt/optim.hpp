#pragma once

#include <cstdint>
#include <vector>

#include "marginmt/tensor.hpp"

namespace marginmt {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-9;
};

/// First and second moments, one array per optimized parameter.
struct AdamState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::uint64_t t = 0;

  bool operator==(const AdamState&) const = default;
};

/// Bias-corrected Adam update of `params` from their accumulated gradients.
/// A parameter without a gradient is treated as having a zero gradient.
/// Throws std::domain_error on a non-finite gradient before touching anything.
void adam_step(std::vector<Tensor>& params, AdamState& state, double lr, const AdamConfig& cfg = {});

/// Rescales gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
double clip_grad_norm(std::vector<Tensor>& params, double max_norm);

/// Inverse-square-root schedule with linear warmup, normalized so that
/// lr_at(warmup) == peak. Steps start at 1.
double lr_at(std::uint64_t step, double peak, std::uint64_t warmup);

}  // namespace marginmt
