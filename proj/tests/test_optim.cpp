#include <gtest/gtest.h>

#include <cmath>

#include "marginmt/optim.hpp"

using namespace marginmt;

TEST(Schedule, KneePoints) {
  EXPECT_DOUBLE_EQ(lr_at(400, 1e-3, 400), 1e-3);
  EXPECT_DOUBLE_EQ(lr_at(1600, 1e-3, 400), 5e-4);
  EXPECT_DOUBLE_EQ(lr_at(1, 1e-3, 400), 1e-3 / 400);
  EXPECT_THROW(lr_at(0, 1e-3, 400), std::invalid_argument);
}

TEST(Schedule, RisesThenFalls) {
  double prev = 0;
  for (std::uint64_t s = 1; s <= 100; ++s) {
    EXPECT_GT(lr_at(s, 1.0, 100), prev);
    prev = lr_at(s, 1.0, 100);
  }
  for (std::uint64_t s = 101; s <= 300; ++s) {
    EXPECT_LT(lr_at(s, 1.0, 100), prev);
    prev = lr_at(s, 1.0, 100);
  }
}

TEST(Adam, OneStepMovesByLr) {
  Tensor x({1}, {0.5}, true);
  x.mutable_grad()[0] = 1.0;
  std::vector<Tensor> p{x};
  AdamState st;
  adam_step(p, st, 1e-3);
  // m_hat = 1, v_hat = 1
  EXPECT_NEAR(x[0], 0.5 - 1e-3 / (1 + 1e-9), 1e-15);
  EXPECT_EQ(st.t, 1u);
}

TEST(Adam, ZeroGradientKeepsParamsAndDecaysMoments) {
  Tensor x({2}, {1.0, -2.0}, true);
  std::vector<Tensor> p{x};
  AdamState st;
  x.mutable_grad();
  adam_step(p, st, 1e-2);
  EXPECT_EQ(x[0], 1.0);
  EXPECT_EQ(x[1], -2.0);

  x.mutable_grad()[0] = 0.3;
  adam_step(p, st, 1e-2);
  const double m0 = st.m[0][0], v0 = st.v[0][0];
  x.zero_grad();
  adam_step(p, st, 1e-2);
  EXPECT_DOUBLE_EQ(st.m[0][0], 0.9 * m0);
  EXPECT_DOUBLE_EQ(st.v[0][0], 0.98 * v0);
  EXPECT_EQ(x[1], -2.0);
}

TEST(Adam, MissingGradientCountsAsZero) {
  Tensor x({1}, {1.0}, true);
  std::vector<Tensor> p{x};
  AdamState st;
  adam_step(p, st, 1e-2);
  EXPECT_EQ(x[0], 1.0);
}

TEST(Adam, IdenticalRunsIdenticalTrajectories) {
  auto run = [] {
    Tensor x({3}, {0.1, 0.2, 0.3}, true);
    std::vector<Tensor> p{x};
    AdamState st;
    for (int i = 0; i < 50; ++i) {
      x.zero_grad();
      auto g = x.mutable_grad();
      for (std::size_t j = 0; j < 3; ++j) g[j] = std::sin(x[j] * (i + 1));
      adam_step(p, st, 1e-2);
    }
    return std::vector<double>(x.data().begin(), x.data().end());
  };
  EXPECT_EQ(run(), run());
}

TEST(Adam, NonFiniteGradientThrowsWithoutChange) {
  Tensor x({2}, {1.0, 2.0}, true);
  x.mutable_grad()[1] = std::nan("");
  std::vector<Tensor> p{x};
  AdamState st;
  EXPECT_THROW(adam_step(p, st, 1e-2), std::domain_error);
  EXPECT_EQ(x[0], 1.0);
  EXPECT_EQ(st.t, 0u);
}

TEST(Clip, RescalesToMaxNorm) {
  Tensor a({2}, {0, 0}, true), b({1}, {0}, true);
  a.mutable_grad()[0] = 3;
  b.mutable_grad()[0] = 4;
  std::vector<Tensor> p{a, b};
  EXPECT_DOUBLE_EQ(clip_grad_norm(p, 1.0), 5.0);
  EXPECT_DOUBLE_EQ(a.grad()[0], 0.6);
  EXPECT_DOUBLE_EQ(b.grad()[0], 0.8);
  EXPECT_NEAR(clip_grad_norm(p, 10.0), 1.0, 1e-15);
  EXPECT_DOUBLE_EQ(a.grad()[0], 0.6);
}
