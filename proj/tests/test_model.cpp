#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "marginmt/corpus.hpp"
#include "marginmt/margin.hpp"
#include "marginmt/model.hpp"
#include "marginmt/ops.hpp"
#include "marginmt/optim.hpp"

using namespace marginmt;

namespace {

ModelConfig small_config() {
  ModelConfig c;
  c.vocab_size_src = 12;
  c.vocab_size_tgt = 11;
  c.d_model = 16;
  c.n_heads = 2;
  c.d_ff = 24;
  c.n_enc_layers = 1;
  c.n_dec_layers = 1;
  c.n_lm_layers = 1;
  c.dropout_rate = 0.1;
  c.max_len = 16;
  return c;
}

struct Tokens {
  std::vector<int> ids;
  std::vector<std::uint8_t> pad;
  std::size_t rows = 0, cols = 0;
  TokenMatrix view() const { return {rows, cols, ids, pad}; }
};

Tokens tokens(std::vector<int> ids, std::size_t rows) {
  Tokens t;
  t.rows = rows;
  t.cols = ids.size() / rows;
  for (int i : ids) t.pad.push_back(i == kPad);
  t.ids = std::move(ids);
  return t;
}

bool same_row(const Tensor& a, const Tensor& b, std::size_t row, std::size_t width) {
  for (std::size_t i = 0; i < width; ++i)
    if (a[row * width + i] != b[row * width + i]) return false;
  return true;
}

bool any_grad(const Tensor& t) {
  if (!t.has_grad()) return false;
  for (double g : t.grad())
    if (g != 0.0) return true;
  return false;
}

}  // namespace

TEST(Model, RowsAreDistributions) {
  ModelBundle m(small_config(), 3);
  auto src = tokens({4, 5, 6, 7, 8, 9, 0, 0}, 2);
  auto tgt = tokens({kBos, 4, 5, kBos, 6, 0}, 2);
  for (const auto& p : {nmt_forward(m, src.view(), tgt.view()), lm_forward(m, tgt.view())}) {
    ASSERT_EQ(p.shape(), (Shape{2, 3, 11}));
    for (std::size_t r = 0; r < 6; ++r) {
      double s = 0;
      for (std::size_t v = 0; v < 11; ++v) s += p[r * 11 + v];
      EXPECT_NEAR(s, 1.0, 1e-6);
    }
  }
}

TEST(Model, DecoderIsCausal) {
  ModelBundle m(small_config(), 4);
  auto src = tokens({4, 5, 6}, 1);
  auto a = tokens({kBos, 4, 5, 6}, 1);
  auto b = tokens({kBos, 4, 5, 9}, 1);
  auto pa = nmt_forward(m, src.view(), a.view());
  auto pb = nmt_forward(m, src.view(), b.view());
  auto la = lm_forward(m, a.view());
  auto lb = lm_forward(m, b.view());
  for (std::size_t t = 0; t < 3; ++t) {
    EXPECT_TRUE(same_row(pa, pb, t, 11)) << t;
    EXPECT_TRUE(same_row(la, lb, t, 11)) << t;
  }
  EXPECT_FALSE(same_row(pa, pb, 3, 11));
}

TEST(Model, DeterministicAndSeeded) {
  auto src = tokens({4, 5, 6}, 1);
  auto tgt = tokens({kBos, 7}, 1);
  ModelBundle a(small_config(), 7), b(small_config(), 7), c(small_config(), 8);
  EXPECT_EQ(parameter_checksum(a.all_parameters()), parameter_checksum(b.all_parameters()));
  EXPECT_NE(parameter_checksum(a.all_parameters()), parameter_checksum(c.all_parameters()));
  for (double v : a.projection_bias().data()) EXPECT_EQ(v, 0.0);
  auto p1 = nmt_forward(a, src.view(), tgt.view());
  auto p2 = nmt_forward(a, src.view(), tgt.view());
  for (std::size_t i = 0; i < p1.size(); ++i) EXPECT_EQ(p1[i], p2[i]);
}

TEST(Model, LmIgnoresSource) {
  ModelBundle m(small_config(), 5);
  auto tgt = tokens({kBos, 7, 8}, 1);
  auto p = lm_forward(m, tgt.view());
  auto src_a = tokens({4, 5}, 1);
  auto src_b = tokens({9, 9, 9, 9}, 1);
  auto na = nmt_forward(m, src_a.view(), tgt.view());
  auto nb = nmt_forward(m, src_b.view(), tgt.view());
  EXPECT_FALSE(same_row(na, nb, 0, 11));
  for (std::size_t i = 0; i < p.size(); ++i) EXPECT_EQ(p[i], lm_forward(m, tgt.view())[i]);
}

TEST(Model, PaddedSourceColumnsDoNotMatter) {
  ModelBundle m(small_config(), 6);
  auto tgt = tokens({kBos, 7}, 1);
  auto a = tokens({4, 5, 0, 0}, 1);
  auto b = tokens({4, 5}, 1);
  auto pa = nmt_forward(m, a.view(), tgt.view());
  auto pb = nmt_forward(m, b.view(), tgt.view());
  for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_NEAR(pa[i], pb[i], 1e-12);
}

TEST(Model, SharedTablesAreTheSameStorage) {
  ModelBundle m(small_config(), 9);
  auto nmt = m.nmt_parameters();
  auto lm = m.lm_parameters();
  for (const char* name : {"tgt_embed", "out_proj.weight", "out_proj.bias"}) {
    const Node* id = m.param(name).identity();
    EXPECT_TRUE(std::any_of(nmt.begin(), nmt.end(), [&](const Tensor& t) { return t.identity() == id; })) << name;
    EXPECT_TRUE(std::any_of(lm.begin(), lm.end(), [&](const Tensor& t) { return t.identity() == id; })) << name;
  }
  for (const auto& t : m.lm_exclusive_parameters())
    EXPECT_FALSE(std::any_of(nmt.begin(), nmt.end(), [&](const Tensor& n) { return n.identity() == t.identity(); }));
}

TEST(Model, GradientsStayOnTheirSide) {
  ModelBundle m(small_config(), 10);
  auto src = tokens({4, 5, 6}, 1);
  auto tgt = tokens({kBos, 7, 8}, 1);
  std::vector<int> gold{7, 8, kEos};
  std::vector<std::uint8_t> pad{0, 0, 0};

  m.zero_grad();
  cross_entropy(nmt_forward(m, src.view(), tgt.view()), gold, pad).backward();
  for (const auto& p : m.parameters()) {
    if (p.group == ParamGroup::LmOnly) EXPECT_FALSE(any_grad(p.value)) << p.name;
  }
  EXPECT_TRUE(any_grad(m.param("src_embed")));
  EXPECT_TRUE(any_grad(m.target_embedding()));

  m.zero_grad();
  cross_entropy(lm_forward(m, tgt.view()), gold, pad).backward();
  for (const auto& p : m.parameters()) {
    if (p.group == ParamGroup::NmtOnly) EXPECT_FALSE(any_grad(p.value)) << p.name;
  }
  EXPECT_TRUE(any_grad(m.projection_weight()));
}

TEST(Model, SharedStorageSurvivesUpdates) {
  ModelBundle m(small_config(), 11);
  const Node* emb = m.target_embedding().identity();
  auto params = m.all_parameters();
  AdamState st;
  auto src = tokens({4, 5, 6}, 1);
  auto tgt = tokens({kBos, 7}, 1);
  std::vector<int> gold{7, kEos};
  std::vector<std::uint8_t> pad{0, 0};
  for (int i = 0; i < 3; ++i) {
    m.zero_grad();
    auto loss = ops::add(cross_entropy(nmt_forward(m, src.view(), tgt.view()), gold, pad),
                         cross_entropy(lm_forward(m, tgt.view()), gold, pad));
    loss.backward();
    adam_step(params, st, 1e-3);
    EXPECT_EQ(m.target_embedding().identity(), emb);
    auto lm = m.lm_parameters();
    EXPECT_TRUE(std::any_of(lm.begin(), lm.end(), [&](const Tensor& t) { return t.identity() == emb; }));
  }
}

TEST(Model, DropoutOnlyWhenTraining) {
  ModelBundle m(small_config(), 12);
  auto src = tokens({4, 5, 6}, 1);
  auto tgt = tokens({kBos, 7}, 1);
  auto rng = rnd::engine(1);
  auto eval = nmt_forward(m, src.view(), tgt.view(), {.train = false, .rng = &rng});
  auto plain = nmt_forward(m, src.view(), tgt.view());
  for (std::size_t i = 0; i < eval.size(); ++i) EXPECT_EQ(eval[i], plain[i]);
  auto train = nmt_forward(m, src.view(), tgt.view(), {.train = true, .rng = &rng});
  bool differs = false;
  for (std::size_t i = 0; i < train.size(); ++i) differs |= train[i] != plain[i];
  EXPECT_TRUE(differs);
}

TEST(Model, CloneIsIndependent) {
  ModelBundle m(small_config(), 13);
  auto c = m.clone();
  EXPECT_EQ(parameter_checksum(m.all_parameters()), parameter_checksum(c.all_parameters()));
  c.parameters()[0].value.data()[0] += 1.0;
  EXPECT_NE(parameter_checksum(m.all_parameters()), parameter_checksum(c.all_parameters()));
}

TEST(Model, InvalidConfig) {
  auto c = small_config();
  c.n_heads = 3;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = small_config();
  c.vocab_size_tgt = 0;
  EXPECT_THROW(ModelBundle(c, 1), std::invalid_argument);
}
