#include "marginmt/scoring.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "marginmt/ops.hpp"

namespace marginmt {

namespace {

std::size_t target_length(const Batch& b, std::size_t r) {
  std::size_t n = 0;
  for (std::size_t t = 0; t < b.tgt_len; ++t) n += b.tgt_pad[r * b.tgt_len + t] == 0;
  return n;
}

std::vector<double> gold_probs(const Tensor& rows, const Batch& b, std::size_t r) {
  const std::size_t v = rows.dim(-1);
  const std::size_t len = target_length(b, r);
  std::vector<double> out(len);
  auto d = rows.data();
  for (std::size_t t = 0; t < len; ++t) {
    const std::size_t i = r * b.tgt_len + t;
    out[t] = d[i * v + static_cast<std::size_t>(b.tgt_out[i])];
  }
  return out;
}

}  // namespace

std::vector<std::size_t> all_indices(const Corpus& corpus) {
  std::vector<std::size_t> idx(corpus.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return idx;
}

PairScores score_pairs(const ModelBundle& bundle, const Corpus& corpus, std::span<const std::size_t> indices,
                       const ScoreOptions& options) {
  NoGradGuard no_grad;
  PairScores out;
  if (options.nmt) out.p_nmt.resize(indices.size());
  if (options.lm) out.p_lm.resize(indices.size());

  std::vector<std::size_t> order(indices.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return pair_tokens(corpus.at(indices[a])) < pair_tokens(corpus.at(indices[b]));
  });

  std::size_t pos = 0;
  while (pos < order.size()) {
    std::vector<std::size_t> slots, members;
    std::size_t longest = 0;
    while (pos < order.size()) {
      const std::size_t need = std::max(longest, pair_tokens(corpus.at(indices[order[pos]])));
      if (!slots.empty() && need * (slots.size() + 1) > options.batch_tokens) break;
      longest = need;
      slots.push_back(order[pos]);
      members.push_back(indices[order[pos]]);
      ++pos;
    }
    const Batch b = collate(corpus, members);
    const TokenMatrix src{b.size, b.src_len, b.src, b.src_pad};
    const TokenMatrix tgt{b.size, b.tgt_len, b.tgt_in, b.tgt_pad};
    Tensor nmt_rows, lm_rows;
    if (options.nmt) nmt_rows = nmt_forward(bundle, src, tgt);
    if (options.lm) lm_rows = lm_forward(bundle, tgt);
    for (std::size_t r = 0; r < b.size; ++r) {
      if (options.nmt) {
        auto p = gold_probs(nmt_rows, b, r);
        for (double x : p) out.nmt_nll -= std::log(x);
        out.p_nmt[slots[r]] = std::move(p);
      }
      if (options.lm) {
        auto p = gold_probs(lm_rows, b, r);
        for (double x : p) out.lm_nll -= std::log(x);
        out.p_lm[slots[r]] = std::move(p);
      }
      out.tokens += target_length(b, r);
    }
  }
  return out;
}

std::vector<MarginRecord> margin_records(const PairScores& scores, const Corpus& corpus,
                                         std::span<const std::size_t> indices) {
  if (scores.p_nmt.size() != indices.size() || scores.p_lm.size() != indices.size())
    throw std::invalid_argument("margin_records: scores must cover both models for every index");
  std::vector<MarginRecord> out;
  out.reserve(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    std::vector<int> tokens = corpus.at(indices[i]).tgt;
    tokens.push_back(kEos);
    out.push_back(make_margin_record(std::move(tokens), scores.p_nmt[i], scores.p_lm[i]));
  }
  return out;
}

}  // namespace marginmt
