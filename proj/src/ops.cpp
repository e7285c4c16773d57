#include "marginmt/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

namespace marginmt::ops {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMat>;
using MapM = Eigen::Map<RowMat>;

Node& in(Node& self, std::size_t i) { return *self.inputs[i]; }

// Left operand extents, right operand extents; returns the number of times
// the right operand repeats (1 when shapes are identical).
std::size_t expansion(const char* op, const Shape& a, const Shape& b) {
  if (a == b) return 1;
  if (b.size() > a.size() || !std::equal(b.rbegin(), b.rend(), a.rbegin()))
    throw ShapeError(op, "cannot expand " + shape_str(b) + " to " + shape_str(a));
  return numel(a) / numel(b);
}

template <typename Fwd, typename Bwd>
Tensor binary(const char* op, const Tensor& a, const Tensor& b, Fwd fwd, Bwd bwd) {
  const std::size_t reps = expansion(op, a.shape(), b.shape());
  const std::size_t inner = b.size();
  std::vector<double> out(a.size());
  auto ad = a.data();
  auto bd = b.data();
  for (std::size_t r = 0; r < reps; ++r)
    for (std::size_t j = 0; j < inner; ++j) out[r * inner + j] = fwd(ad[r * inner + j], bd[j]);
  return make_result(op, a.shape(), std::move(out), {a, b}, [reps, inner, bwd](Node& self) {
    Node& na = in(self, 0);
    Node& nb = in(self, 1);
    const bool ga = na.requires_grad, gb = nb.requires_grad;
    if (ga) na.ensure_grad();
    if (gb) nb.ensure_grad();
    for (std::size_t r = 0; r < reps; ++r)
      for (std::size_t j = 0; j < inner; ++j) {
        const std::size_t i = r * inner + j;
        double da = 0, db = 0;
        bwd(na.data[i], nb.data[j], self.grad[i], da, db);
        if (ga) na.grad[i] += da;
        if (gb) nb.grad[j] += db;
      }
  });
}

template <typename Fwd, typename Deriv>
Tensor unary(const char* op, const Tensor& x, Fwd fwd, Deriv deriv) {
  std::vector<double> out(x.size());
  auto xd = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(xd[i]);
  return make_result(op, x.shape(), std::move(out), {x}, [deriv](Node& self) {
    Node& nx = in(self, 0);
    nx.ensure_grad();
    for (std::size_t i = 0; i < self.data.size(); ++i)
      nx.grad[i] += self.grad[i] * deriv(nx.data[i], self.data[i]);
  });
}

std::size_t last_dim(const char* op, const Tensor& x) {
  if (x.rank() == 0) throw ShapeError(op, "rank-0 input");
  return x.shape().back();
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() < 2 || b.rank() < 2)
    throw ShapeError("matmul", "operands must have rank >= 2, got " + shape_str(a.shape()) + " and " +
                                   shape_str(b.shape()));
  const std::size_t m = a.dim(-2), k = a.dim(-1);
  const std::size_t kb = b.dim(-2), n = b.dim(-1);
  if (k != kb)
    throw ShapeError("matmul", "inner dimensions differ: " + shape_str(a.shape()) + " @ " +
                                   shape_str(b.shape()));
  Shape out_shape = a.shape();
  out_shape.back() = n;

  if (b.rank() == 2) {
    // Fold every leading dimension of `a` into rows: one GEMM.
    const std::size_t rows = a.size() / k;
    std::vector<double> out(rows * n);
    MapM(out.data(), rows, n).noalias() = MapC(a.data().data(), rows, k) * MapC(b.data().data(), k, n);
    return make_result("matmul", std::move(out_shape), std::move(out), {a, b}, [rows, k, n](Node& self) {
      Node& na = in(self, 0);
      Node& nb = in(self, 1);
      MapC g(self.grad.data(), rows, n);
      if (na.requires_grad) {
        na.ensure_grad();
        MapM(na.grad.data(), rows, k).noalias() += g * MapC(nb.data.data(), k, n).transpose();
      }
      if (nb.requires_grad) {
        nb.ensure_grad();
        MapM(nb.grad.data(), k, n).noalias() += MapC(na.data.data(), rows, k).transpose() * g;
      }
    });
  }

  if (a.rank() != b.rank() || !std::equal(a.shape().begin(), a.shape().end() - 2, b.shape().begin()))
    throw ShapeError("matmul", "leading extents differ: " + shape_str(a.shape()) + " @ " +
                                   shape_str(b.shape()));
  const std::size_t batch = a.size() / (m * k);
  std::vector<double> out(batch * m * n);
  for (std::size_t i = 0; i < batch; ++i)
    MapM(out.data() + i * m * n, m, n).noalias() =
        MapC(a.data().data() + i * m * k, m, k).lazyProduct(MapC(b.data().data() + i * k * n, k, n));
  return make_result("matmul", std::move(out_shape), std::move(out), {a, b}, [batch, m, k, n](Node& self) {
    Node& na = in(self, 0);
    Node& nb = in(self, 1);
    if (na.requires_grad) na.ensure_grad();
    if (nb.requires_grad) nb.ensure_grad();
    for (std::size_t i = 0; i < batch; ++i) {
      MapC g(self.grad.data() + i * m * n, m, n);
      if (na.requires_grad)
        MapM(na.grad.data() + i * m * k, m, k).noalias() +=
            g.lazyProduct(MapC(nb.data.data() + i * k * n, k, n).transpose());
      if (nb.requires_grad)
        MapM(nb.grad.data() + i * k * n, k, n).noalias() +=
            MapC(na.data.data() + i * m * k, m, k).transpose().lazyProduct(g);
    }
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  return binary("add", a, b, [](double x, double y) { return x + y; },
                [](double, double, double g, double& da, double& db) { da = g; db = g; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary("sub", a, b, [](double x, double y) { return x - y; },
                [](double, double, double g, double& da, double& db) { da = g; db = -g; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary("mul", a, b, [](double x, double y) { return x * y; },
                [](double x, double y, double g, double& da, double& db) { da = g * y; db = g * x; });
}

Tensor scale(const Tensor& x, double s) {
  return unary("scale", x, [s](double v) { return v * s; }, [s](double, double) { return s; });
}

Tensor affine(const Tensor& x, double s, double c) {
  return unary("affine", x, [s, c](double v) { return v * s + c; }, [s](double, double) { return s; });
}

Tensor exp(const Tensor& x) {
  return unary("exp", x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
  return unary("log", x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor relu(const Tensor& x) {
  return unary("relu", x, [](double v) { return v > 0 ? v : 0.0; },
               [](double v, double) { return v > 0 ? 1.0 : 0.0; });
}

Tensor gelu(const Tensor& x) {
  // Exact erf form.
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  constexpr double inv_sqrt2pi = 0.39894228040143267794;
  return unary(
      "gelu", x, [](double v) { return 0.5 * v * (1.0 + std::erf(v * inv_sqrt2)); },
      [](double v, double) {
        return 0.5 * (1.0 + std::erf(v * inv_sqrt2)) + v * inv_sqrt2pi * std::exp(-0.5 * v * v);
      });
}

Tensor map(const Tensor& x, const std::function<double(double)>& f, const std::function<double(double)>& df,
           const char* name) {
  return unary(name, x, [&f](double v) { return f(v); }, [df](double v, double) { return df(v); });
}

Tensor softmax(const Tensor& x) {
  const std::size_t n = last_dim("softmax", x);
  const std::size_t rows = x.size() / n;
  std::vector<double> out(x.size());
  auto xd = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* src = xd.data() + r * n;
    double* dst = out.data() + r * n;
    const double mx = *std::max_element(src, src + n);
    double z = 0;
    for (std::size_t j = 0; j < n; ++j) z += (dst[j] = std::exp(src[j] - mx));
    const double inv = 1.0 / z;
    for (std::size_t j = 0; j < n; ++j) dst[j] *= inv;
  }
  return make_result("softmax", x.shape(), std::move(out), {x}, [rows, n](Node& self) {
    Node& nx = in(self, 0);
    nx.ensure_grad();
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = self.data.data() + r * n;
      const double* g = self.grad.data() + r * n;
      double dot = 0;
      for (std::size_t j = 0; j < n; ++j) dot += g[j] * y[j];
      double* dx = nx.grad.data() + r * n;
      for (std::size_t j = 0; j < n; ++j) dx[j] += y[j] * (g[j] - dot);
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  const std::size_t n = last_dim("layer_norm", x);
  if (gain.shape() != Shape{n} || bias.shape() != Shape{n})
    throw ShapeError("layer_norm", "gain/bias must be [" + std::to_string(n) + "], got " +
                                       shape_str(gain.shape()) + " and " + shape_str(bias.shape()));
  const std::size_t rows = x.size() / n;
  std::vector<double> out(x.size());
  std::vector<double> xhat(x.size());
  std::vector<double> inv_std(rows);
  auto xd = x.data();
  auto gd = gain.data();
  auto bd = bias.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* src = xd.data() + r * n;
    double mean = 0;
    for (std::size_t j = 0; j < n; ++j) mean += src[j];
    mean /= static_cast<double>(n);
    double var = 0;
    for (std::size_t j = 0; j < n; ++j) var += (src[j] - mean) * (src[j] - mean);
    var /= static_cast<double>(n);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      const double h = (src[j] - mean) * inv_std[r];
      xhat[r * n + j] = h;
      out[r * n + j] = h * gd[j] + bd[j];
    }
  }
  return make_result(
      "layer_norm", x.shape(), std::move(out), {x, gain, bias},
      [rows, n, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
        Node& nx = in(self, 0);
        Node& ng = in(self, 1);
        Node& nb = in(self, 2);
        if (ng.requires_grad) ng.ensure_grad();
        if (nb.requires_grad) nb.ensure_grad();
        if (nx.requires_grad) nx.ensure_grad();
        const double inv_n = 1.0 / static_cast<double>(n);
        for (std::size_t r = 0; r < rows; ++r) {
          const double* g = self.grad.data() + r * n;
          const double* h = xhat.data() + r * n;
          double sum_dh = 0, sum_dh_h = 0;
          for (std::size_t j = 0; j < n; ++j) {
            if (ng.requires_grad) ng.grad[j] += g[j] * h[j];
            if (nb.requires_grad) nb.grad[j] += g[j];
            const double dh = g[j] * ng.data[j];
            sum_dh += dh;
            sum_dh_h += dh * h[j];
          }
          if (!nx.requires_grad) continue;
          double* dx = nx.grad.data() + r * n;
          for (std::size_t j = 0; j < n; ++j) {
            const double dh = g[j] * ng.data[j];
            dx[j] += inv_std[r] * (dh - inv_n * sum_dh - h[j] * inv_n * sum_dh_h);
          }
        }
      });
}

Tensor embedding(const Tensor& table, std::span<const int> ids, const Shape& lead) {
  if (table.rank() != 2) throw ShapeError("embedding_lookup", "table must be rank 2, got " + shape_str(table.shape()));
  if (numel(lead) != ids.size())
    throw ShapeError("embedding_lookup", "lead shape " + shape_str(lead) + " does not hold " +
                                             std::to_string(ids.size()) + " ids");
  const std::size_t vocab = table.dim(0), d = table.dim(1);
  std::vector<double> out(ids.size() * d);
  auto td = table.data();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab)
      throw ShapeError("embedding_lookup", "id " + std::to_string(ids[i]) + " outside vocabulary of " +
                                               std::to_string(vocab));
    std::copy_n(td.data() + static_cast<std::size_t>(ids[i]) * d, d, out.data() + i * d);
  }
  Shape shape = lead;
  shape.push_back(d);
  std::vector<int> idx(ids.begin(), ids.end());
  return make_result("embedding_lookup", std::move(shape), std::move(out), {table},
                     [idx = std::move(idx), d](Node& self) {
                       Node& nt = in(self, 0);
                       nt.ensure_grad();
                       for (std::size_t i = 0; i < idx.size(); ++i) {
                         double* dst = nt.grad.data() + static_cast<std::size_t>(idx[i]) * d;
                         const double* g = self.grad.data() + i * d;
                         for (std::size_t j = 0; j < d; ++j) dst[j] += g[j];
                       }
                     });
}

Tensor masked_fill(const Tensor& x, std::span<const std::uint8_t> mask, double value) {
  if (mask.size() != x.size())
    throw ShapeError("masked_fill", "mask of " + std::to_string(mask.size()) + " entries for tensor " +
                                        shape_str(x.shape()));
  std::vector<double> out(x.data().begin(), x.data().end());
  for (std::size_t i = 0; i < out.size(); ++i)
    if (mask[i]) out[i] = value;
  std::vector<std::uint8_t> m(mask.begin(), mask.end());
  return make_result("masked_fill", x.shape(), std::move(out), {x}, [m = std::move(m)](Node& self) {
    Node& nx = in(self, 0);
    nx.ensure_grad();
    for (std::size_t i = 0; i < m.size(); ++i)
      if (!m[i]) nx.grad[i] += self.grad[i];
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.size())
    throw ShapeError("reshape", "cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  std::vector<double> out(x.data().begin(), x.data().end());
  return make_result("reshape", std::move(shape), std::move(out), {x}, [](Node& self) {
    Node& nx = in(self, 0);
    nx.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) nx.grad[i] += self.grad[i];
  });
}

Tensor transpose(const Tensor& x, int axis_a, int axis_b) {
  const int r = static_cast<int>(x.rank());
  if (axis_a < 0) axis_a += r;
  if (axis_b < 0) axis_b += r;
  if (axis_a < 0 || axis_b < 0 || axis_a >= r || axis_b >= r)
    throw ShapeError("transpose", "axes out of range for " + shape_str(x.shape()));
  if (axis_a > axis_b) std::swap(axis_a, axis_b);
  const Shape& s = x.shape();
  // View as [outer, A, mid, B, inner] and swap A with B.
  std::size_t outer = 1, mid = 1, inner = 1;
  for (int i = 0; i < axis_a; ++i) outer *= s[i];
  for (int i = axis_a + 1; i < axis_b; ++i) mid *= s[i];
  for (int i = axis_b + 1; i < r; ++i) inner *= s[i];
  const std::size_t A = s[axis_a], B = s[axis_b];
  Shape out_shape = s;
  std::swap(out_shape[axis_a], out_shape[axis_b]);

  // Each (o, a, m, b) moves one contiguous run of `inner` values.
  auto for_blocks = [=](auto&& f) {
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t a = 0; a < A; ++a)
        for (std::size_t m = 0; m < mid; ++m) {
          const std::size_t src = ((o * A + a) * mid + m) * B * inner;
          const std::size_t dst = ((o * B) * mid + m) * A * inner + a * inner;
          for (std::size_t b = 0; b < B; ++b) f(src + b * inner, dst + b * mid * A * inner);
        }
  };
  std::vector<double> out(x.size());
  const double* xd = x.data().data();
  for_blocks([&](std::size_t src, std::size_t dst) { std::copy_n(xd + src, inner, out.data() + dst); });
  return make_result("transpose", std::move(out_shape), std::move(out), {x}, [for_blocks, inner](Node& self) {
    Node& nx = in(self, 0);
    nx.ensure_grad();
    for_blocks([&](std::size_t src, std::size_t dst) {
      for (std::size_t i = 0; i < inner; ++i) nx.grad[src + i] += self.grad[dst + i];
    });
  });
}

Tensor reduce_sum(const Tensor& x) {
  double s = 0;
  for (double v : x.data()) s += v;
  return make_result("reduce_sum", Shape{1}, {s}, {x}, [](Node& self) {
    Node& nx = in(self, 0);
    nx.ensure_grad();
    for (double& g : nx.grad) g += self.grad[0];
  });
}

Tensor reduce_sum_last(const Tensor& x) {
  const std::size_t n = last_dim("reduce_sum", x);
  const std::size_t rows = x.size() / n;
  Shape out_shape(x.shape().begin(), x.shape().end() - 1);
  if (out_shape.empty()) out_shape = {1};
  std::vector<double> out(rows, 0.0);
  auto xd = x.data();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < n; ++j) out[r] += xd[r * n + j];
  return make_result("reduce_sum", std::move(out_shape), std::move(out), {x}, [rows, n](Node& self) {
    Node& nx = in(self, 0);
    nx.ensure_grad();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < n; ++j) nx.grad[r * n + j] += self.grad[r];
  });
}

Tensor reduce_mean(const Tensor& x) {
  const double inv = 1.0 / static_cast<double>(x.size());
  double s = 0;
  for (double v : x.data()) s += v;
  return make_result("reduce_mean", Shape{1}, {s * inv}, {x}, [inv](Node& self) {
    Node& nx = in(self, 0);
    nx.ensure_grad();
    for (double& g : nx.grad) g += self.grad[0] * inv;
  });
}

Tensor gather(const Tensor& x, std::span<const int> index) {
  const std::size_t n = last_dim("gather", x);
  const std::size_t rows = x.size() / n;
  if (index.size() != rows)
    throw ShapeError("gather", std::to_string(index.size()) + " indices for " + std::to_string(rows) +
                                   " rows of " + shape_str(x.shape()));
  Shape out_shape(x.shape().begin(), x.shape().end() - 1);
  if (out_shape.empty()) out_shape = {1};
  std::vector<double> out(rows);
  auto xd = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    if (index[r] < 0 || static_cast<std::size_t>(index[r]) >= n)
      throw ShapeError("gather", "index " + std::to_string(index[r]) + " outside extent " + std::to_string(n));
    out[r] = xd[r * n + static_cast<std::size_t>(index[r])];
  }
  std::vector<int> idx(index.begin(), index.end());
  return make_result("gather", std::move(out_shape), std::move(out), {x}, [idx = std::move(idx), n](Node& self) {
    Node& nx = in(self, 0);
    nx.ensure_grad();
    for (std::size_t r = 0; r < idx.size(); ++r) nx.grad[r * n + static_cast<std::size_t>(idx[r])] += self.grad[r];
  });
}

Tensor dropout(const Tensor& x, double rate, std::mt19937_64& rng) {
  if (rate <= 0.0) return x;
  if (rate >= 1.0) throw std::invalid_argument("dropout: rate must be < 1");
  const double keep_scale = 1.0 / (1.0 - rate);
  std::vector<double> mask(x.size());
  for (auto& m : mask) {
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    m = u < rate ? 0.0 : keep_scale;
  }
  return mul(x, Tensor(x.shape(), std::move(mask)));
}

}  // namespace marginmt::ops
