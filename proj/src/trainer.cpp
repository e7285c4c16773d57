#include "marginmt/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "marginmt/ops.hpp"
#include "marginmt/scoring.hpp"

namespace marginmt {

namespace {

constexpr std::uint64_t kPretrainDropoutStream = 101;
constexpr std::uint64_t kFinetuneDropoutStream = 202;
constexpr std::uint64_t kSampleStream = 303;

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

std::string save_rng(const rnd::Engine& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

rnd::Engine load_rng(const std::string& state) {
  rnd::Engine rng;
  std::istringstream is(state);
  is >> rng;
  if (!is) throw std::runtime_error("checkpoint: corrupt rng state");
  return rng;
}

std::uint64_t batch_seed(const Checkpoint& c) {
  return c.stage == Stage::Pretrain ? c.config.seed : rnd::mix(c.config.seed, 2);
}

std::vector<std::string> optimized_names(const ModelBundle& bundle, Stage stage, bool finetune_lm) {
  std::vector<std::string> out;
  for (const auto& p : bundle.parameters())
    if (stage == Stage::Pretrain || finetune_lm || p.group != ParamGroup::LmOnly) out.push_back(p.name);
  return out;
}

double margin_sum(const MarginFunctionSpec& spec, bool weight_on, std::span<const double> pn, std::span<const double> pl,
                  std::span<const std::uint8_t> pad) {
  double s = 0;
  for (std::size_t i = 0; i < pad.size(); ++i) {
    if (pad[i]) continue;
    s += (weight_on ? 1.0 - pn[i] : 1.0) * margin_value(spec, pn[i] - pl[i]);
  }
  return s;
}

class StageRun {
 public:
  StageRun(Checkpoint& ckpt, const Corpus& train, const Corpus& valid, TrainLog& log, const RunHooks& hooks)
      : c_(ckpt), cfg_(ckpt.config), train_(train), valid_(valid), log_(log), hooks_(hooks) {
    if (train.empty()) throw std::invalid_argument("training corpus is empty");
    rng_ = load_rng(c_.rng_state);
    sample_ = eval_sample(train, cfg_.eval_sample, cfg_.seed);

    const auto names = optimized_names(c_.bundle, c_.stage, cfg_.finetune_lm);
    if (c_.optimized.empty()) c_.optimized = names;
    if (c_.optimized != names) throw std::runtime_error("checkpoint optimizer state does not match this stage");
    for (const auto& n : names) params_.push_back(c_.bundle.param(n));

    if (c_.stage == Stage::Finetune && !cfg_.finetune_lm) {
      if (c_.lm_reference.empty()) throw std::runtime_error("finetuning checkpoint lacks the fixed LM reference");
      auto lm = c_.bundle.clone();
      for (const auto& [name, values] : c_.lm_reference) {
        auto dst = const_cast<Tensor&>(lm.param(name)).data();
        std::copy(values.begin(), values.end(), dst.begin());
      }
      const auto idx = all_indices(train);
      lm_cache_ = score_pairs(lm, train, idx, {.nmt = false, .lm = true, .batch_tokens = cfg_.batch_tokens}).p_lm;
    }
    if (c_.stage == Stage::Finetune && cfg_.objective.objective == Objective::MSO &&
        cfg_.objective.threshold_k >= 1.0 && hooks_.warn)
      hooks_.warn("threshold_k >= 1 disables the sentence gate; MSO reduces to MTO");
  }

  void run() {
    const std::uint64_t target = c_.stage == Stage::Pretrain ? cfg_.steps_pretrain : cfg_.steps_finetune;
    const std::uint64_t end = hooks_.stop_at ? std::min(*hooks_.stop_at, target) : target;
    if (c_.step == 0) evaluate();
    auto batches = make_batches(train_, cfg_.batch_tokens, batch_seed(c_), c_.epoch);
    while (c_.step < end) {
      if (c_.batch_cursor >= batches.size()) {
        ++c_.epoch;
        c_.batch_cursor = 0;
        batches = make_batches(train_, cfg_.batch_tokens, batch_seed(c_), c_.epoch);
      }
      const Batch b = collate(train_, batches[c_.batch_cursor]);
      ++c_.batch_cursor;
      step(b);
      const bool last = c_.step == target;
      if ((cfg_.eval_every > 0 && c_.step % cfg_.eval_every == 0) || last) {
        const double gated = evaluate();
        flush_window(gated);
      }
      if (cfg_.checkpoint_every > 0 && c_.step % cfg_.checkpoint_every == 0 && !hooks_.checkpoint_dir.empty())
        snapshot(to_string(c_.stage) + "_step" + std::to_string(c_.step) + ".ckpt");
    }
    c_.rng_state = save_rng(rng_);
  }

 private:
  void step(const Batch& b) {
    const TokenMatrix src{b.size, b.src_len, b.src, b.src_pad};
    const TokenMatrix tgt{b.size, b.tgt_len, b.tgt_in, b.tgt_pad};
    const ForwardContext ctx{true, &rng_};
    c_.bundle.zero_grad();

    Tensor pn = ops::gather(nmt_forward(c_.bundle, src, tgt, ctx), b.tgt_out);
    Tensor loss;
    std::vector<double> p_lm(pn.size(), 0.0);
    std::optional<ObjectiveTerms> terms;
    double ce = 0, lm_ce = 0, margin = 0;
    const auto n_tokens = static_cast<double>(std::count(b.tgt_pad.begin(), b.tgt_pad.end(), 0));

    if (c_.stage == Stage::Pretrain || cfg_.finetune_lm) {
      Tensor pl = ops::gather(lm_forward(c_.bundle, tgt, ctx), b.tgt_out);
      std::copy(pl.data().begin(), pl.data().end(), p_lm.begin());
      Tensor ce_lm = cross_entropy(pl, b.tgt_pad);
      lm_ce = ce_lm.item();
      if (c_.stage == Stage::Pretrain) {
        Tensor ce_nmt = cross_entropy(pn, b.tgt_pad);
        ce = ce_nmt.item();
        loss = pretrain_loss(ce_nmt, ce_lm, cfg_.objective.lambda_lm);
        margin = margin_sum(cfg_.objective.margin_function, cfg_.objective.weight_on, pn.data(), p_lm, b.tgt_pad) /
                 n_tokens;
      } else {
        terms = objective_loss(cfg_.objective, pn, p_lm, b.tgt_pad);
        loss = ops::add(terms->total, ops::scale(ce_lm, cfg_.objective.lambda_lm));
      }
    } else {
      for (std::size_t r = 0; r < b.size; ++r) {
        const auto& cached = lm_cache_[b.indices[r]];
        std::copy(cached.begin(), cached.end(), p_lm.begin() + static_cast<long>(r * b.tgt_len));
      }
      for (std::size_t i = 0; i < p_lm.size(); ++i)
        if (!b.tgt_pad[i]) lm_ce -= std::log(p_lm[i]);
      lm_ce /= n_tokens;
      terms = objective_loss(cfg_.objective, pn, p_lm, b.tgt_pad);
      loss = terms->total;
    }
    if (terms) {
      ce = terms->ce;
      margin = terms->margin;
    }

    const double value = loss.item();
    if (!std::isfinite(value)) {
      c_.rng_state = save_rng(rng_);
      const std::string name = "nonfinite_" + to_string(c_.stage) + "_step" + std::to_string(c_.step + 1) + ".ckpt";
      if (!hooks_.checkpoint_dir.empty()) {
        std::filesystem::create_directories(hooks_.checkpoint_dir);
        save_checkpoint(hooks_.checkpoint_dir / name, c_);
      }
      throw NonFiniteLoss(c_.step + 1, "non-finite loss at " + to_string(c_.stage) + " step " +
                                           std::to_string(c_.step + 1));
    }
    loss.backward();
    const double norm = clip_grad_norm(params_, cfg_.clip_norm);
    const std::uint64_t sched =
        (c_.stage == Stage::Finetune && cfg_.continue_schedule ? c_.pretrain_steps : 0) + c_.step + 1;
    const double lr = lr_at(sched, cfg_.lr_peak, cfg_.warmup_steps);
    adam_step(params_, c_.adam, lr, cfg_.adam);
    ++c_.step;

    win_ce_ += ce;
    win_lm_ += lm_ce;
    win_margin_ += margin;
    ++win_n_;
    last_lr_ = lr;
    if (hooks_.on_step)
      hooks_.on_step(StepInfo{c_.stage, c_.step, value, lr, norm, b, terms ? &*terms : nullptr, c_.bundle});
  }

  double evaluate() {
    const ScoreOptions both{.nmt = true, .lm = true, .batch_tokens = cfg_.batch_tokens};
    EvalRow row;
    row.step = c_.step;
    row.stage = c_.stage;
    if (!valid_.empty()) {
      const auto idx = all_indices(valid_);
      const auto s = score_pairs(c_.bundle, valid_, idx, both);
      row.valid_nmt_ce = s.nmt_ce();
      row.valid_lm_ce = s.lm_ce();
    }
    if (!sample_.empty()) {
      PairScores s = score_pairs(c_.bundle, train_, sample_, {.nmt = true, .lm = lm_cache_.empty(), .batch_tokens = cfg_.batch_tokens});
      if (!lm_cache_.empty())
        for (auto i : sample_) s.p_lm.push_back(lm_cache_[i]);
      const auto records = margin_records(s, train_, sample_);
      std::size_t gated = 0, tokens = 0, negative = 0;
      double delta_sum = 0;
      for (const auto& r : records) {
        gated += !gate_keeps(r.ratio, cfg_.objective.threshold_k);
        for (double d : r.delta) {
          delta_sum += d;
          negative += d < 0;
          ++tokens;
        }
      }
      row.gated_fraction = static_cast<double>(gated) / static_cast<double>(records.size());
      row.average_delta = delta_sum / static_cast<double>(tokens);
      row.percent_negative = static_cast<double>(negative) / static_cast<double>(tokens);
    }
    log_.evals.push_back(row);
    return row.gated_fraction;
  }

  void flush_window(double gated) {
    if (win_n_ == 0) return;
    const double n = static_cast<double>(win_n_);
    log_.metrics.push_back(MetricRow{c_.step, c_.stage, win_ce_ / n, win_lm_ / n, win_margin_ / n, gated, last_lr_});
    win_ce_ = win_lm_ = win_margin_ = 0;
    win_n_ = 0;
  }

  void snapshot(const std::string& name) {
    c_.rng_state = save_rng(rng_);
    std::filesystem::create_directories(hooks_.checkpoint_dir);
    save_checkpoint(hooks_.checkpoint_dir / name, c_);
  }

  Checkpoint& c_;
  const TrainConfig& cfg_;
  const Corpus& train_;
  const Corpus& valid_;
  TrainLog& log_;
  const RunHooks& hooks_;
  rnd::Engine rng_;
  std::vector<std::size_t> sample_;
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> lm_cache_;
  double win_ce_ = 0, win_lm_ = 0, win_margin_ = 0, last_lr_ = 0;
  std::uint64_t win_n_ = 0;
};

}  // namespace

std::vector<std::size_t> eval_sample(const Corpus& train, std::size_t n, std::uint64_t seed) {
  auto idx = all_indices(train);
  auto rng = rnd::engine(seed, kSampleStream);
  rnd::shuffle(std::span<std::size_t>(idx), rng);
  idx.resize(std::min(n, idx.size()));
  std::sort(idx.begin(), idx.end());
  return idx;
}

Checkpoint start_pretraining(const TrainConfig& config) {
  config.validate();
  Checkpoint c;
  c.config = config;
  c.bundle = ModelBundle(config.model, config.seed);
  c.stage = Stage::Pretrain;
  c.rng_state = save_rng(rnd::engine(config.seed, kPretrainDropoutStream));
  return c;
}

Checkpoint begin_finetuning(const Checkpoint& pretrained, const TrainConfig& config) {
  config.validate();
  Checkpoint c;
  c.config = config;
  c.config.model = pretrained.config.model;
  c.bundle = pretrained.bundle.clone();
  c.stage = Stage::Finetune;
  c.pretrain_steps = pretrained.stage == Stage::Pretrain ? pretrained.step : pretrained.pretrain_steps;
  c.rng_state = save_rng(rnd::engine(config.seed, kFinetuneDropoutStream));
  if (!config.finetune_lm)
    for (const auto& p : c.bundle.parameters())
      if (p.group == ParamGroup::Shared)
        c.lm_reference.emplace_back(p.name, std::vector<double>(p.value.data().begin(), p.value.data().end()));
  return c;
}

void run_stage(Checkpoint& ckpt, const Corpus& train, const Corpus& valid, TrainLog& log, const RunHooks& hooks) {
  StageRun(ckpt, train, valid, log, hooks).run();
}

void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricRow>& rows) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << "step,stage,nmt_ce,lm_ce,margin_loss,gated_fraction,lr\n";
  for (const auto& r : rows)
    os << r.step << ',' << to_string(r.stage) << ',' << fmt(r.nmt_ce) << ',' << fmt(r.lm_ce) << ','
       << fmt(r.margin_loss) << ',' << fmt(r.gated_fraction) << ',' << fmt(r.lr) << '\n';
}

void write_eval_csv(const std::filesystem::path& path, const std::vector<EvalRow>& rows) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << "step,stage,valid_nmt_ce,valid_lm_ce,gated_fraction,average_delta,percent_negative\n";
  for (const auto& r : rows)
    os << r.step << ',' << to_string(r.stage) << ',' << fmt(r.valid_nmt_ce) << ',' << fmt(r.valid_lm_ce) << ','
       << fmt(r.gated_fraction) << ',' << fmt(r.average_delta) << ',' << fmt(r.percent_negative) << '\n';
}

}  // namespace marginmt
