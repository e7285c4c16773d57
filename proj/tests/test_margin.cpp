#include <gtest/gtest.h>

#include <cmath>

#include "marginmt/gradcheck.hpp"
#include "marginmt/margin.hpp"
#include "marginmt/ops.hpp"
#include "marginmt/random.hpp"

using namespace marginmt;

namespace {

MarginFunctionSpec spec_of(MarginVariant v) {
  MarginFunctionSpec s;
  s.variant = v;
  return s;
}

const MarginVariant kAll[] = {MarginVariant::Linear, MarginVariant::Cube, MarginVariant::Quintic, MarginVariant::Log};

// hand-rolled objective, one sentence at a time
double reference_objective(const ObjectiveConfig& c, const std::vector<std::vector<double>>& pn,
                           const std::vector<std::vector<double>>& pl) {
  double total = 0;
  std::size_t n = 0;
  for (std::size_t s = 0; s < pn.size(); ++s) {
    std::size_t neg = 0;
    double sent = 0;
    for (std::size_t t = 0; t < pn[s].size(); ++t) {
      const double d = pn[s][t] - pl[s][t];
      neg += d < 0;
      double m = 0;
      switch (c.margin_function.variant) {
        case MarginVariant::Linear: m = (1 - d) / 2; break;
        case MarginVariant::Cube: m = (1 - d * d * d) / 2; break;
        case MarginVariant::Quintic: m = (1 - std::pow(d, 5)) / 2; break;
        case MarginVariant::Log: {
          const double e = c.margin_function.clamp_epsilon;
          const double dc = std::clamp(d, -1 + e, 1 - e);
          m = std::log((1 - dc) / (1 + dc)) / c.margin_function.alpha + 0.5;
        }
      }
      const double w = c.weight_on ? 1 - pn[s][t] : 1.0;
      const double lam = c.objective == Objective::CE ? 0.0 : c.lambda_margin;
      sent += -std::log(pn[s][t]) + lam * w * m;
    }
    n += pn[s].size();
    const double r = static_cast<double>(neg) / static_cast<double>(pn[s].size());
    const bool keep = c.objective != Objective::MSO || c.threshold_k >= 1 || r < c.threshold_k;
    if (keep) total += sent;
  }
  return total / static_cast<double>(n);
}

struct Batch2 {
  Tensor pn;
  std::vector<double> pl;
  std::vector<std::uint8_t> pad;
  std::vector<std::vector<double>> rows_n, rows_l;
};

Batch2 random_batch(rnd::Engine& rng, std::size_t b, std::size_t len) {
  Batch2 x;
  std::vector<double> pn;
  for (std::size_t s = 0; s < b; ++s) {
    const std::size_t used = 1 + rnd::below(rng, len);
    std::vector<double> rn, rl;
    for (std::size_t t = 0; t < len; ++t) {
      const bool pad = t >= used;
      const double a = 0.02 + 0.96 * rnd::unit(rng);
      const double l = 0.02 + 0.96 * rnd::unit(rng);
      pn.push_back(pad ? 0.5 : a);
      x.pl.push_back(pad ? 0.5 : l);
      x.pad.push_back(pad);
      if (!pad) {
        rn.push_back(a);
        rl.push_back(l);
      }
    }
    x.rows_n.push_back(rn);
    x.rows_l.push_back(rl);
  }
  x.pn = Tensor({b, len}, pn, true);
  return x;
}

}  // namespace

TEST(Delta, Examples) {
  EXPECT_NEAR(delta(0.7, 0.2), 0.5, 1e-15);
  EXPECT_EQ(delta(0.3, 0.3), 0.0);
  EXPECT_EQ(delta(0.0, 1.0), -1.0);
  EXPECT_THROW(delta(1.2, 0.0), std::domain_error);
}

TEST(MarginFunction, HalfAtZero) {
  for (auto v : kAll) EXPECT_EQ(margin_value(spec_of(v), 0.0), 0.5) << to_string(v);
}

TEST(MarginFunction, PolynomialEndpoints) {
  for (auto v : {MarginVariant::Linear, MarginVariant::Cube, MarginVariant::Quintic}) {
    EXPECT_EQ(margin_value(spec_of(v), 1.0), 0.0);
    EXPECT_EQ(margin_value(spec_of(v), -1.0), 1.0);
  }
}

TEST(MarginFunction, LogKnownValue) {
  EXPECT_NEAR(margin_value(spec_of(MarginVariant::Log), 0.5), std::log(1.0 / 3.0) / 10 + 0.5, 1e-12);
  EXPECT_NEAR(margin_value(spec_of(MarginVariant::Log), 0.5), 0.39014, 1e-5);
}

TEST(MarginFunction, LogFiniteAtEndpoints) {
  auto s = spec_of(MarginVariant::Log);
  EXPECT_TRUE(std::isfinite(margin_value(s, 1.0)));
  EXPECT_TRUE(std::isfinite(margin_value(s, -1.0)));
}

TEST(MarginFunction, MonotoneOnGrid) {
  for (auto v : kAll) {
    double prev = margin_value(spec_of(v), -1.0);
    for (int i = 1; i <= 200; ++i) {
      const double cur = margin_value(spec_of(v), -1.0 + i * 0.01);
      EXPECT_LE(cur, prev) << to_string(v) << " at " << i;
      prev = cur;
    }
  }
}

TEST(MarginFunction, DerivativeMatchesDifference) {
  for (auto v : kAll)
    for (double d : {-0.8, -0.3, 0.1, 0.6}) {
      const double h = 1e-6;
      const double num = (margin_value(spec_of(v), d + h) - margin_value(spec_of(v), d - h)) / (2 * h);
      EXPECT_NEAR(margin_derivative(spec_of(v), d), num, 1e-6);
    }
}

TEST(MarginFunction, ParseNames) {
  for (auto v : kAll) EXPECT_EQ(parse_margin_variant(to_string(v)), v);
  EXPECT_THROW(parse_margin_variant("square"), std::invalid_argument);
  for (auto o : {Objective::CE, Objective::MTO, Objective::MSO}) EXPECT_EQ(parse_objective(to_string(o)), o);
}

TEST(CrossEntropy, UniformRowsGiveLogV) {
  const std::size_t v = 5, t = 3;
  Tensor rows({1, t, v}, std::vector<double>(t * v, 1.0 / v));
  std::vector<int> gold{0, 3, 4};
  std::vector<std::uint8_t> pad(t, 0);
  EXPECT_NEAR(cross_entropy(rows, gold, pad).item(), std::log(5.0), 1e-12);
}

TEST(CrossEntropy, OneHotGivesZero) {
  Tensor rows({1, 2, 3}, {1, 0, 0, 0, 1, 0});
  std::vector<int> gold{0, 1};
  std::vector<std::uint8_t> pad{0, 0};
  EXPECT_EQ(cross_entropy(rows, gold, pad).item(), 0.0);
}

TEST(CrossEntropy, KnownValue) {
  Tensor rows({1, 2, 3}, {0.5, 0.25, 0.25, 0.5, 0.25, 0.25});
  std::vector<int> gold{0, 1};
  std::vector<std::uint8_t> pad{0, 0};
  EXPECT_NEAR(cross_entropy(rows, gold, pad).item(), (-std::log(0.5) - std::log(0.25)) / 2, 1e-12);
  EXPECT_NEAR(cross_entropy(rows, gold, pad).item(), 1.03972, 1e-5);
}

TEST(MarginLoss, KnownValue) {
  Tensor pn({1, 1}, {0.6});
  std::vector<double> pl{0.1};
  std::vector<std::uint8_t> pad{0};
  const double got = margin_loss(pn, pl, pad, spec_of(MarginVariant::Quintic)).item();
  EXPECT_NEAR(got, 0.4 * (1 - std::pow(0.5, 5)) / 2, 1e-12);
  EXPECT_NEAR(got, 0.19375, 1e-12);
}

TEST(MarginLoss, CertainModelGivesZero) {
  Tensor pn({1, 3}, {1, 1, 1});
  std::vector<double> pl{0.2, 0.9, 0.0};
  std::vector<std::uint8_t> pad{0, 0, 0};
  for (auto v : kAll) EXPECT_EQ(margin_loss(pn, pl, pad, spec_of(v)).item(), 0.0);
}

TEST(MarginLoss, PaddingContributesNothing) {
  Tensor a({1, 3}, {0.4, 0.7, 0.2});
  Tensor b({1, 3}, {0.4, 0.7, 0.9});
  std::vector<double> pl{0.5, 0.1, 0.3};
  std::vector<std::uint8_t> pad{0, 0, 1};
  EXPECT_EQ(margin_loss(a, pl, pad, spec_of(MarginVariant::Cube)).item(),
            margin_loss(b, pl, pad, spec_of(MarginVariant::Cube)).item());
}

TEST(Combine, Arithmetic) {
  EXPECT_NEAR(mto_loss(Tensor::scalar(1.0), Tensor::scalar(0.2), 5.0).item(), 2.0, 1e-12);
  EXPECT_EQ(mto_loss(Tensor::scalar(1.3), Tensor::scalar(0.7), 0.0).item(), 1.3);
  EXPECT_EQ(mto_loss(Tensor::scalar(1.3), Tensor::scalar(0.0), 8.0).item(), 1.3);
  EXPECT_NEAR(pretrain_loss(Tensor::scalar(2.0), Tensor::scalar(3.0), 0.01).item(), 2.03, 1e-12);
  EXPECT_EQ(pretrain_loss(Tensor::scalar(2.0), Tensor::scalar(3.0), 0.0).item(), 2.0);
  EXPECT_EQ(pretrain_loss(Tensor::scalar(0.0), Tensor::scalar(0.0), 0.01).item(), 0.0);
}

TEST(Ratio, Examples) {
  EXPECT_EQ(negative_margin_ratio(std::vector<double>{0.2, -0.1, 0.3, -0.4}), 0.5);
  EXPECT_EQ(negative_margin_ratio(std::vector<double>{0.2, 0.1}), 0.0);
  EXPECT_NEAR(negative_margin_ratio(std::vector<double>{0, 0, -0.1}), 1.0 / 3.0, 1e-15);
  std::vector<std::uint8_t> pad{0, 1};
  EXPECT_EQ(negative_margin_ratio(std::vector<double>{0.1, -0.5}, pad), 0.0);
  EXPECT_THROW(negative_margin_ratio(std::vector<double>{}), std::invalid_argument);
}

TEST(Gate, Examples) {
  Tensor l = Tensor::scalar(1.7, true);
  EXPECT_EQ(mso_loss(l, 0.5, 0.3).item(), 0.0);
  EXPECT_EQ(mso_loss(l, 0.0, 0.3).item(), 1.7);
  EXPECT_EQ(mso_loss(l, 0.3, 0.3).item(), 0.0);
  EXPECT_TRUE(gate_keeps(1.0, 1.0));
  EXPECT_FALSE(gate_keeps(0.3, 0.3));
}

TEST(Gate, DroppedSentenceHasZeroGradient) {
  Tensor l = Tensor::scalar(1.7, true);
  auto out = ops::add(mso_loss(l, 0.6, 0.3), Tensor::scalar(0.0, true));
  out.backward();
  EXPECT_TRUE(!l.has_grad() || l.grad()[0] == 0.0);
}

class ObjectiveProperty : public ::testing::TestWithParam<int> {};

TEST_P(ObjectiveProperty, MatchesReferenceAndOrdering) {
  auto rng = rnd::engine(static_cast<std::uint64_t>(GetParam()), 3);
  auto b = random_batch(rng, 4, 5);
  for (auto v : kAll)
    for (auto o : {Objective::CE, Objective::MTO, Objective::MSO}) {
      ObjectiveConfig c;
      c.objective = o;
      c.margin_function.variant = v;
      c.threshold_k = 0.2 + 0.6 * rnd::unit(rng);
      auto terms = objective_loss(c, b.pn, b.pl, b.pad);
      EXPECT_NEAR(terms.total.item(), reference_objective(c, b.rows_n, b.rows_l), 1e-12);
    }
  ObjectiveConfig mto, mso;
  mto.objective = Objective::MTO;
  mso.objective = Objective::MSO;
  for (double k : {0.1, 0.3, 0.5, 0.9, 1.0}) {
    mso.threshold_k = k;
    const double a = objective_loss(mto, b.pn, b.pl, b.pad).total.item();
    const double s = objective_loss(mso, b.pn, b.pl, b.pad).total.item();
    EXPECT_LE(s, a);
    if (k == 1.0) EXPECT_EQ(s, a);
  }
}

TEST_P(ObjectiveProperty, LambdaZeroIsCrossEntropy) {
  auto rng = rnd::engine(static_cast<std::uint64_t>(GetParam()), 4);
  auto b = random_batch(rng, 3, 6);
  ObjectiveConfig ce, mto;
  ce.objective = Objective::CE;
  mto.objective = Objective::MTO;
  mto.lambda_margin = 0.0;
  EXPECT_EQ(objective_loss(ce, b.pn, b.pl, b.pad).total.item(), objective_loss(mto, b.pn, b.pl, b.pad).total.item());
}

TEST_P(ObjectiveProperty, GatedSentencesGetNoGradient) {
  auto rng = rnd::engine(static_cast<std::uint64_t>(GetParam()), 5);
  auto b = random_batch(rng, 6, 4);
  ObjectiveConfig c;
  c.objective = Objective::MSO;
  c.threshold_k = 0.4;
  auto terms = objective_loss(c, b.pn, b.pl, b.pad);
  terms.total.backward();
  for (std::size_t s = 0; s < 6; ++s) {
    std::size_t neg = 0;
    for (std::size_t t = 0; t < b.rows_n[s].size(); ++t) neg += b.rows_n[s][t] < b.rows_l[s][t];
    const bool keep = static_cast<double>(neg) / static_cast<double>(b.rows_n[s].size()) < 0.4;
    EXPECT_EQ(static_cast<bool>(terms.kept[s]), keep);
    for (std::size_t t = 0; t < 4; ++t) {
      const double g = b.pn.has_grad() ? b.pn.grad()[s * 4 + t] : 0.0;
      if (!keep) EXPECT_EQ(g, 0.0);
    }
  }
}

TEST_P(ObjectiveProperty, GradientMatchesFiniteDifference) {
  auto rng = rnd::engine(static_cast<std::uint64_t>(GetParam()), 6);
  auto b = random_batch(rng, 2, 4);
  for (auto o : {Objective::MTO, Objective::MSO})
    for (auto v : kAll) {
      ObjectiveConfig c;
      c.objective = o;
      c.threshold_k = 0.9;
      c.margin_function.variant = v;
      Tensor x = b.pn.detach();
      x.set_requires_grad(true);
      auto r = finite_diff_check([&](const Tensor& p) { return objective_loss(c, p, b.pl, b.pad).total; }, x, 1e-6,
                                 1e-3, 1e-6);
      EXPECT_TRUE(r.ok) << to_string(o) << "/" << to_string(v) << " " << r.max_discrepancy;
    }
}

INSTANTIATE_TEST_SUITE_P(Seeds, ObjectiveProperty, ::testing::Range(0, 12));

TEST(ObjectiveConfig, Validation) {
  ObjectiveConfig c;
  c.lambda_margin = -1;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = {};
  c.threshold_k = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  MarginFunctionSpec s;
  s.variant = MarginVariant::Log;
  s.alpha = 0;
  EXPECT_THROW(s.validate(), std::invalid_argument);
}
