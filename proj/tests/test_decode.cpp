#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <map>

#include "marginmt/corpus.hpp"
#include "marginmt/decode.hpp"
#include "marginmt/random.hpp"

using namespace marginmt;

namespace {

// next-token distribution is a pure function of (seed, prefix)
class TableScorer : public StepScorer {
 public:
  TableScorer(std::size_t vocab, std::uint64_t seed, double sharpness = 2.0)
      : vocab_(vocab), seed_(seed), sharp_(sharpness) {}
  std::size_t vocab_size() const override { return vocab_; }
  std::vector<std::vector<double>> next_log_probs(const std::vector<std::vector<int>>& prefixes) override {
    std::vector<std::vector<double>> out;
    for (const auto& p : prefixes) out.push_back(row(p));
    return out;
  }
  std::vector<double> row(const std::vector<int>& prefix) const {
    std::uint64_t h = seed_;
    for (int t : prefix) h = rnd::mix(h, static_cast<std::uint64_t>(t) + 1);
    auto rng = rnd::engine(h);
    std::vector<double> z(vocab_);
    double s = 0;
    for (auto& v : z) {
      v = std::exp(sharp_ * rnd::normal(rng));
      s += v;
    }
    for (auto& v : z) v = std::log(v / s);
    return z;
  }

 private:
  std::size_t vocab_;
  std::uint64_t seed_;
  double sharp_;
};

class FixedScorer : public StepScorer {
 public:
  explicit FixedScorer(std::map<std::vector<int>, std::vector<double>> probs, std::size_t vocab)
      : probs_(std::move(probs)), vocab_(vocab) {}
  std::size_t vocab_size() const override { return vocab_; }
  std::vector<std::vector<double>> next_log_probs(const std::vector<std::vector<int>>& prefixes) override {
    std::vector<std::vector<double>> out;
    for (const auto& p : prefixes) {
      std::vector<double> row(vocab_, -1e9);
      auto it = probs_.find(p);
      if (it != probs_.end())
        for (std::size_t i = 0; i < vocab_; ++i) row[i] = it->second[i] > 0 ? std::log(it->second[i]) : -1e9;
      else
        row[kEos] = 0.0;
      out.push_back(row);
    }
    return out;
  }

 private:
  std::map<std::vector<int>, std::vector<double>> probs_;
  std::size_t vocab_;
};

struct Best {
  std::vector<int> tokens;
  double score = -1e300;
};

// every hypothesis the search can produce: content prefix + EOS within
// max_len steps, or max_len content tokens without EOS
Best enumerate(const TableScorer& s, std::size_t max_len, double alpha) {
  Best best;
  std::function<void(std::vector<int>&, double)> rec = [&](std::vector<int>& prefix, double lp) {
    const auto row = s.row(prefix);
    const double eos = lp + row[kEos];
    const double eos_score = eos / std::pow((5.0 + static_cast<double>(prefix.size() + 1)) / 6.0, alpha);
    if (eos_score > best.score) best = {prefix, eos_score};
    for (std::size_t v = 0; v < row.size(); ++v) {
      if (static_cast<int>(v) == kEos) continue;
      prefix.push_back(static_cast<int>(v));
      if (prefix.size() == max_len) {
        const double sc = (lp + row[v]) / std::pow((5.0 + static_cast<double>(max_len)) / 6.0, alpha);
        if (sc > best.score) best = {prefix, sc};
      } else {
        rec(prefix, lp + row[v]);
      }
      prefix.pop_back();
    }
  };
  std::vector<int> p;
  rec(p, 0.0);
  return best;
}

}  // namespace

TEST(LengthPenalty, Values) {
  EXPECT_EQ(length_penalty(1, 0.6), 1.0);
  EXPECT_EQ(length_penalty(7, 0.0), 1.0);
  EXPECT_NEAR(length_penalty(7, 0.6), std::pow(2.0, 0.6), 1e-15);
}

TEST(Greedy, FollowsForcedArgmax) {
  // a=4, b=5
  FixedScorer s({{{}, {0, 0, 0, 0, 1, 0}}, {{4}, {0, 0, 0, 0, 0, 1}}, {{4, 5}, {0, 0, 1, 0, 0, 0}}}, 6);
  EXPECT_EQ(greedy_decode(s, 10), (std::vector<int>{4, 5}));
  EXPECT_EQ(greedy_decode(s, 1), (std::vector<int>{4}));
}

TEST(Greedy, TiesGoToLowestId) {
  FixedScorer s({{{}, {0, 0, 0, 0, 0.5, 0.5}}, {{4}, {0, 0, 1, 0, 0, 0}}}, 6);
  EXPECT_EQ(greedy_decode(s, 5), (std::vector<int>{4}));
}

TEST(Beam, FindsBetterSequenceThanGreedy) {
  // greedy takes a (0.6) then splits 0.3/0.3/0.4; b (0.4) then EOS with 0.9
  FixedScorer s({{{}, {0, 0, 0, 0, 0.6, 0.4}},
                 {{4}, {0, 0, 0.4, 0, 0.3, 0.3}},
                 {{5}, {0, 0, 0.9, 0, 0.05, 0.05}}},
                6);
  EXPECT_EQ(greedy_decode(s, 4), (std::vector<int>{4}));
  auto hyps = beam_decode(s, {.beam_size = 2, .alpha = 0.0, .max_len = 4});
  EXPECT_EQ(hyps.front().tokens, (std::vector<int>{5}));
  EXPECT_NEAR(hyps.front().log_prob, std::log(0.4 * 0.9), 1e-12);
  EXPECT_TRUE(hyps.front().finished);
}

TEST(Beam, ZeroBeamThrows) {
  TableScorer s(5, 1);
  EXPECT_THROW(beam_decode(s, {.beam_size = 0}), std::invalid_argument);
}

class BeamProperty : public ::testing::TestWithParam<int> {};

TEST_P(BeamProperty, WideBeamMatchesEnumeration) {
  const auto seed = static_cast<std::uint64_t>(GetParam());
  TableScorer s(5, seed);
  for (double alpha : {0.0, 0.6}) {
    const auto best = enumerate(s, 3, alpha);
    auto hyps = beam_decode(s, {.beam_size = 200, .alpha = alpha, .max_len = 3});
    EXPECT_EQ(hyps.front().tokens, best.tokens) << "alpha " << alpha;
    EXPECT_NEAR(hyps.front().score, best.score, 1e-12);
  }
}

TEST_P(BeamProperty, BeamOneIsGreedy) {
  TableScorer s(7, static_cast<std::uint64_t>(GetParam()) + 100, 1.0);
  auto hyps = beam_decode(s, {.beam_size = 1, .alpha = 0.6, .max_len = 8});
  EXPECT_EQ(hyps.front().tokens, greedy_decode(s, 8));
}

TEST_P(BeamProperty, ScoresSortedAndWithinLimits) {
  TableScorer s(6, static_cast<std::uint64_t>(GetParam()) + 200);
  auto hyps = beam_decode(s, {.beam_size = 4, .alpha = 0.6, .max_len = 5});
  ASSERT_FALSE(hyps.empty());
  for (std::size_t i = 1; i < hyps.size(); ++i) EXPECT_GE(hyps[i - 1].score, hyps[i].score);
  for (const auto& h : hyps) {
    EXPECT_LE(h.tokens.size(), 5u);
    for (int t : h.tokens) EXPECT_NE(t, kEos);
  }
}

INSTANTIATE_TEST_SUITE_P(Seeds, BeamProperty, ::testing::Range(0, 20));
