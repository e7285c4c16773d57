#include "marginmt/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <stdexcept>

#include "marginmt/decode.hpp"
#include "marginmt/scoring.hpp"
#include "marginmt/trainer.hpp"

namespace marginmt {

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

nlohmann::json number_or_null(double v) { return std::isnan(v) ? nlohmann::json() : nlohmann::json(v); }

}  // namespace

MarginStats margin_stats(const std::vector<MarginRecord>& records, std::size_t bins) {
  if (bins == 0) throw std::invalid_argument("margin_stats: bins must be >= 1");
  MarginStats s;
  s.histogram.assign(bins, 0);
  std::size_t negative = 0;
  double sum = 0;
  for (const auto& r : records) {
    ++s.sentence_count;
    for (double d : r.delta) {
      ++s.token_count;
      sum += d;
      negative += d < 0;
      auto bin = static_cast<std::size_t>(std::floor((d + 1.0) / 2.0 * static_cast<double>(bins)));
      s.histogram[std::min(bin, bins - 1)] += 1;
    }
  }
  if (s.token_count == 0) throw std::invalid_argument("margin_stats: no tokens");
  s.percent_negative = static_cast<double>(negative) / static_cast<double>(s.token_count);
  s.average_delta = sum / static_cast<double>(s.token_count);
  return s;
}

MarginStats compute_margin_stats(const ModelBundle& bundle, const Corpus& corpus, std::size_t sample_size,
                                 std::uint64_t seed, std::size_t bins, std::size_t batch_tokens) {
  const auto idx = eval_sample(corpus, sample_size == 0 ? corpus.size() : sample_size, seed);
  if (idx.empty()) throw std::invalid_argument("compute_margin_stats: empty sample");
  const auto scores = score_pairs(bundle, corpus, idx, {.nmt = true, .lm = true, .batch_tokens = batch_tokens});
  return margin_stats(margin_records(scores, corpus, idx), bins);
}

nlohmann::json to_json(const MarginStats& s) {
  return {{"token_count", s.token_count},       {"sentence_count", s.sentence_count},
          {"percent_negative", s.percent_negative}, {"average_delta", s.average_delta},
          {"histogram_bins", s.histogram.size()}, {"histogram", s.histogram}};
}

void write_histogram_csv(const std::filesystem::path& path, const MarginStats& s) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << "bin_left,bin_right,count\n";
  const double width = 2.0 / static_cast<double>(s.histogram.size());
  for (std::size_t i = 0; i < s.histogram.size(); ++i)
    os << fmt(-1.0 + width * static_cast<double>(i)) << ',' << fmt(-1.0 + width * static_cast<double>(i + 1)) << ','
       << s.histogram[i] << '\n';
}

FilterReport filter_corpus(const ModelBundle& bundle, const Corpus& corpus, double threshold_k,
                           std::size_t batch_tokens) {
  FilterReport r;
  r.threshold_k = threshold_k;
  const auto idx = all_indices(corpus);
  const auto scores = score_pairs(bundle, corpus, idx, {.nmt = true, .lm = true, .batch_tokens = batch_tokens});
  const auto records = margin_records(scores, corpus, idx);
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const auto& p = corpus[i];
    const bool flag = !gate_keeps(records[i].ratio, threshold_k);
    r.ratio.emplace_back(p.id, records[i].ratio);
    (flag ? r.flagged : r.kept).push_back(p.id);
    if (p.label == PairLabel::Hallucinated) {
      r.has_labels = true;
      ++r.planted;
      r.true_positive += flag;
    }
  }
  const double nan = std::numeric_limits<double>::quiet_NaN();
  r.precision = r.flagged.empty() ? nan : static_cast<double>(r.true_positive) / static_cast<double>(r.flagged.size());
  r.recall = r.planted == 0 ? nan : static_cast<double>(r.true_positive) / static_cast<double>(r.planted);
  return r;
}

nlohmann::json to_json(const FilterReport& r) {
  nlohmann::json ratios = nlohmann::json::array();
  for (const auto& [id, ratio] : r.ratio) ratios.push_back({{"id", id}, {"ratio", ratio}});
  return {{"threshold_k", r.threshold_k},
          {"kept", r.kept},
          {"flagged", r.flagged},
          {"ratio", ratios},
          {"planted", r.planted},
          {"true_positive", r.true_positive},
          {"precision", number_or_null(r.precision)},
          {"recall", number_or_null(r.recall)}};
}

BleuResult corpus_bleu(const std::vector<TokenSeq>& hypotheses, const std::vector<TokenSeq>& references,
                       const BleuOptions& options) {
  if (hypotheses.empty()) throw std::invalid_argument("bleu: empty corpus");
  if (hypotheses.size() != references.size()) throw std::invalid_argument("bleu: hypothesis/reference counts differ");
  if (options.max_n < 1) throw std::invalid_argument("bleu: max_n must be >= 1");
  const auto max_n = static_cast<std::size_t>(options.max_n);
  std::vector<std::size_t> matches(max_n, 0), totals(max_n, 0);
  BleuResult out;
  for (std::size_t s = 0; s < hypotheses.size(); ++s) {
    const auto& h = hypotheses[s];
    const auto& r = references[s];
    out.hyp_length += h.size();
    out.ref_length += r.size();
    for (std::size_t n = 1; n <= max_n; ++n) {
      if (h.size() < n) continue;
      std::map<std::vector<std::string>, std::size_t> ref_counts, hyp_counts;
      for (std::size_t i = 0; i + n <= r.size(); ++i) ++ref_counts[{r.begin() + i, r.begin() + i + n}];
      for (std::size_t i = 0; i + n <= h.size(); ++i) ++hyp_counts[{h.begin() + i, h.begin() + i + n}];
      for (const auto& [gram, c] : hyp_counts) {
        auto it = ref_counts.find(gram);
        if (it != ref_counts.end()) matches[n - 1] += std::min(c, it->second);
      }
      totals[n - 1] += h.size() - n + 1;
    }
  }
  double log_sum = 0;
  bool zero = false;
  for (std::size_t n = 1; n <= max_n; ++n) {
    double p;
    if (matches[n - 1] > 0) {
      p = static_cast<double>(matches[n - 1]) / static_cast<double>(totals[n - 1]);
    } else if (options.smooth && n > 1) {
      p = 1.0 / static_cast<double>(totals[n - 1] + 1);
    } else {
      p = 0.0;
      zero = true;
    }
    out.precisions.push_back(p);
    if (p > 0) log_sum += std::log(p);
  }
  if (out.hyp_length == 0) {
    out.brevity_penalty = 0.0;
  } else if (out.hyp_length < out.ref_length) {
    out.brevity_penalty =
        std::exp(1.0 - static_cast<double>(out.ref_length) / static_cast<double>(out.hyp_length));
  } else {
    out.brevity_penalty = 1.0;
  }
  out.score = zero ? 0.0 : 100.0 * out.brevity_penalty * std::exp(log_sum / static_cast<double>(max_n));
  return out;
}

double evaluate_bleu(const ModelBundle& bundle, const Corpus& corpus, const Vocab& tgt_vocab, std::size_t beam_size,
                     double alpha, std::size_t max_len) {
  const auto hyps = translate(bundle, corpus, beam_size, alpha, max_len);
  std::vector<TokenSeq> h, r;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    h.push_back(tgt_vocab.decode(hyps[i]));
    r.push_back(tgt_vocab.decode(corpus[i].tgt));
  }
  return corpus_bleu(h, r).score;
}

std::vector<SweepCell> expand_grid(const ObjectiveConfig& base, const SweepGrid& grid) {
  auto axis = [](const auto& values, const auto& fallback) {
    using T = std::decay_t<decltype(fallback)>;
    return values.empty() ? std::vector<T>{fallback} : std::vector<T>(values.begin(), values.end());
  };
  const auto objectives = axis(grid.objective, base.objective);
  const auto lambdas = axis(grid.lambda_margin, base.lambda_margin);
  const auto ks = axis(grid.threshold_k, base.threshold_k);
  const auto fns = axis(grid.margin_fn, base.margin_function.variant);
  const auto alphas = axis(grid.alpha, base.margin_function.alpha);
  const auto weights = axis(grid.weight_on, base.weight_on);
  std::vector<SweepCell> cells;
  for (auto o : objectives)
    for (double lm : lambdas)
      for (double k : ks)
        for (auto fn : fns)
          for (double a : alphas)
            for (bool w : weights) {
              SweepCell c;
              c.objective = base;
              c.objective.objective = o;
              c.objective.lambda_margin = lm;
              c.objective.threshold_k = k;
              c.objective.margin_function.variant = fn;
              c.objective.margin_function.alpha = a;
              c.objective.weight_on = w;
              c.name = "objective=" + to_string(o) + ",lambda_margin=" + fmt(lm) + ",threshold_k=" + fmt(k) +
                       ",margin_fn=" + to_string(fn) + ",alpha=" + fmt(a) + ",weight=" + (w ? "on" : "off");
              cells.push_back(std::move(c));
            }
  return cells;
}

std::vector<SweepResult> run_sweep(const SweepInputs& in, const std::vector<SweepCell>& cells,
                                   const std::function<void(const SweepResult&)>& on_cell) {
  if (cells.empty()) throw std::invalid_argument("sweep: grid is empty");
  if (!in.pretrained || !in.train || !in.valid || !in.test || !in.tgt_vocab)
    throw std::invalid_argument("sweep: missing inputs");
  std::vector<SweepResult> out;
  for (const auto& cell : cells) {
    SweepResult r;
    r.cell = cell;
    try {
      TrainConfig tc = in.train_config;
      tc.objective = cell.objective;
      Checkpoint ckpt = begin_finetuning(*in.pretrained, tc);
      TrainLog log;
      run_stage(ckpt, *in.train, *in.valid, log);
      r.bleu = evaluate_bleu(ckpt.bundle, *in.test, *in.tgt_vocab, in.analysis.beam_size, in.analysis.length_penalty,
                             in.analysis.decode_max_len);
      r.stats = compute_margin_stats(ckpt.bundle, *in.train, in.analysis.sample_size, tc.seed,
                                     in.analysis.histogram_bins, tc.batch_tokens);
      r.gated_fraction = log.evals.empty() ? 0.0 : log.evals.back().gated_fraction;
      r.ok = true;
    } catch (const std::exception& e) {
      r.error = e.what();
    }
    if (on_cell) on_cell(r);
    out.push_back(std::move(r));
  }
  return out;
}

nlohmann::json to_json(const SweepResult& r) {
  nlohmann::json j = {{"cell", r.cell.name},
                      {"objective", to_string(r.cell.objective.objective)},
                      {"lambda_margin", r.cell.objective.lambda_margin},
                      {"threshold_k", r.cell.objective.threshold_k},
                      {"margin_fn", to_string(r.cell.objective.margin_function.variant)},
                      {"alpha", r.cell.objective.margin_function.alpha},
                      {"weight_on", r.cell.objective.weight_on},
                      {"ok", r.ok}};
  if (r.ok) {
    j["bleu"] = r.bleu;
    j["gated_fraction"] = r.gated_fraction;
    j["stats"] = to_json(r.stats);
  } else {
    j["error"] = r.error;
  }
  return j;
}

}  // namespace marginmt
