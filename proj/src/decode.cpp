#include "marginmt/decode.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace marginmt {

double length_penalty(std::size_t length, double alpha) {
  return std::pow((5.0 + static_cast<double>(length)) / 6.0, alpha);
}

std::vector<int> greedy_decode(StepScorer& scorer, std::size_t max_len) {
  std::vector<int> out;
  while (out.size() < max_len) {
    const auto lp = scorer.next_log_probs({out}).at(0);
    const auto best = static_cast<int>(std::max_element(lp.begin(), lp.end()) - lp.begin());
    if (best == kEos) break;
    out.push_back(best);
  }
  return out;
}

std::vector<Hypothesis> beam_decode(StepScorer& scorer, const BeamOptions& options) {
  if (options.beam_size == 0) throw std::invalid_argument("beam_size must be >= 1");
  const std::size_t vocab = scorer.vocab_size();
  std::vector<Hypothesis> alive{Hypothesis{}};
  std::vector<Hypothesis> finished;

  struct Candidate {
    double log_prob;
    std::size_t parent;
    int token;
  };

  for (std::size_t t = 0; t < options.max_len && !alive.empty() && finished.size() < options.beam_size; ++t) {
    std::vector<std::vector<int>> prefixes;
    for (const auto& h : alive) prefixes.push_back(h.tokens);
    const auto lp = scorer.next_log_probs(prefixes);

    std::vector<Candidate> cands;
    cands.reserve(alive.size() * vocab);
    for (std::size_t h = 0; h < alive.size(); ++h)
      for (std::size_t v = 0; v < vocab; ++v)
        cands.push_back({alive[h].log_prob + lp[h][v], h, static_cast<int>(v)});
    // Stable on (parent, token), so ties keep the lower id.
    std::stable_sort(cands.begin(), cands.end(),
                     [](const Candidate& a, const Candidate& b) { return a.log_prob > b.log_prob; });

    std::vector<Hypothesis> next;
    for (std::size_t r = 0; r < cands.size(); ++r) {
      const auto& c = cands[r];
      if (c.token == kEos) {
        if (r < options.beam_size) {
          Hypothesis h = alive[c.parent];
          h.log_prob = c.log_prob;
          h.score = c.log_prob / length_penalty(h.tokens.size() + 1, options.alpha);
          h.finished = true;
          finished.push_back(std::move(h));
        }
      } else if (next.size() < options.beam_size) {
        Hypothesis h = alive[c.parent];
        h.tokens.push_back(c.token);
        h.log_prob = c.log_prob;
        next.push_back(std::move(h));
      }
      if (next.size() >= options.beam_size && r + 1 >= options.beam_size) break;
    }
    alive = std::move(next);
  }
  if (finished.size() < options.beam_size)
    for (auto& h : alive) {
      h.score = h.log_prob / length_penalty(h.tokens.size(), options.alpha);
      finished.push_back(std::move(h));
    }
  std::stable_sort(finished.begin(), finished.end(),
                   [](const Hypothesis& a, const Hypothesis& b) { return a.score > b.score; });
  return finished;
}

BundleScorer::BundleScorer(const ModelBundle& bundle, std::vector<int> src)
    : bundle_(bundle), src_(std::move(src)), src_pad_(src_.size(), 0) {
  NoGradGuard no_grad;
  memory_ = encode(bundle_, TokenMatrix{1, src_.size(), src_, src_pad_});
}

std::size_t BundleScorer::vocab_size() const { return static_cast<std::size_t>(bundle_.config().vocab_size_tgt); }

std::vector<std::vector<double>> BundleScorer::next_log_probs(const std::vector<std::vector<int>>& prefixes) {
  NoGradGuard no_grad;
  const std::size_t n = prefixes.size();
  const std::size_t len = prefixes.at(0).size() + 1;
  const std::size_t s = src_.size(), d = memory_.dim(-1);

  std::vector<int> tgt(n * len), src(n * s);
  std::vector<std::uint8_t> tgt_pad(n * len, 0), src_pad(n * s, 0);
  std::vector<double> mem(n * s * d);
  for (std::size_t r = 0; r < n; ++r) {
    if (prefixes[r].size() + 1 != len) throw std::invalid_argument("prefixes must share one length");
    tgt[r * len] = kBos;
    std::copy(prefixes[r].begin(), prefixes[r].end(), tgt.begin() + static_cast<long>(r * len + 1));
    std::copy(src_.begin(), src_.end(), src.begin() + static_cast<long>(r * s));
    std::copy(memory_.data().begin(), memory_.data().end(), mem.begin() + static_cast<long>(r * s * d));
  }
  const Tensor memory({n, s, d}, std::move(mem));
  const Tensor probs = decode(bundle_, memory, TokenMatrix{n, s, src, src_pad}, TokenMatrix{n, len, tgt, tgt_pad});
  const std::size_t v = vocab_size();
  std::vector<std::vector<double>> out(n, std::vector<double>(v));
  auto pd = probs.data();
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t j = 0; j < v; ++j) out[r][j] = std::log(pd[(r * len + len - 1) * v + j]);
  return out;
}

std::vector<std::vector<int>> translate(const ModelBundle& bundle, const Corpus& corpus, std::size_t beam_size,
                                        double alpha, std::size_t max_len) {
  if (beam_size == 0) throw std::invalid_argument("beam_size must be >= 1");
  if (max_len == 0) max_len = static_cast<std::size_t>(bundle.config().max_len) - 1;
  std::vector<std::vector<int>> out;
  out.reserve(corpus.size());
  for (const auto& p : corpus) {
    BundleScorer scorer(bundle, p.src);
    if (beam_size == 1) {
      out.push_back(greedy_decode(scorer, max_len));
    } else {
      out.push_back(beam_decode(scorer, {beam_size, alpha, max_len}).front().tokens);
    }
  }
  return out;
}

}  // namespace marginmt
