#include "marginmt/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "marginmt/analysis.hpp"
#include "marginmt/checkpoint.hpp"
#include "marginmt/config.hpp"
#include "marginmt/corpus.hpp"
#include "marginmt/decode.hpp"
#include "marginmt/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace marginmt {

namespace {

class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> objective;
  std::optional<std::string> margin_fn;
  std::optional<double> alpha;
  std::optional<double> lambda_margin;
  std::optional<double> lambda_lm;
  std::optional<double> threshold_k;
  std::string out;
  std::string data;
  std::string checkpoint;
  std::string resume;
  std::string split = "test";
  std::string hyp;
  std::string ref;
};

void require_file(const std::string& path, const char* what) {
  if (path.empty()) throw UsageError(std::string("missing required option ") + what);
  if (!fs::exists(path)) throw UsageError(std::string(what) + " not found: " + path);
}

ExperimentConfig load_config(const Options& o) {
  ExperimentConfig c;
  if (!o.config.empty()) {
    require_file(o.config, "--config");
    c = load_experiment(o.config);
  }
  if (o.seed) c.apply_seed(*o.seed);
  auto& obj = c.train.objective;
  try {
    if (o.objective) obj.objective = parse_objective(*o.objective);
    if (o.margin_fn) obj.margin_function.variant = parse_margin_variant(*o.margin_fn);
  } catch (const std::exception& e) {
    throw UsageError(e.what());
  }
  if (o.alpha) obj.margin_function.alpha = *o.alpha;
  if (o.lambda_margin) obj.lambda_margin = *o.lambda_margin;
  if (o.lambda_lm) obj.lambda_lm = *o.lambda_lm;
  if (o.threshold_k) obj.threshold_k = *o.threshold_k;
  try {
    c.data.corpus.validate();
    c.train.validate();
  } catch (const std::invalid_argument& e) {
    throw SchemaError(e.what());
  }
  return c;
}

fs::path out_dir(const Options& o) {
  if (o.out.empty()) throw UsageError("missing required option --out");
  fs::create_directories(o.out);
  return o.out;
}

struct Dataset {
  Vocab src_vocab;
  Vocab tgt_vocab;
  Corpus train, valid, test;
};

Dataset load_dataset(const std::string& dir) {
  if (dir.empty()) throw UsageError("missing required option --data");
  const fs::path d(dir);
  for (const char* f : {"src.vocab", "tgt.vocab", "train.jsonl", "valid.jsonl", "test.jsonl"})
    require_file((d / f).string(), "--data file");
  Dataset ds;
  try {
    ds.src_vocab = Vocab::load(d / "src.vocab");
    ds.tgt_vocab = Vocab::load(d / "tgt.vocab");
    ds.train = load_corpus(d / "train.jsonl", ds.src_vocab, ds.tgt_vocab);
    ds.valid = load_corpus(d / "valid.jsonl", ds.src_vocab, ds.tgt_vocab);
    ds.test = load_corpus(d / "test.jsonl", ds.src_vocab, ds.tgt_vocab);
  } catch (const std::runtime_error& e) {
    throw SchemaError(e.what());
  }
  return ds;
}

const Corpus& pick_split(const Dataset& ds, const std::string& split) {
  if (split == "train") return ds.train;
  if (split == "valid") return ds.valid;
  if (split == "test") return ds.test;
  throw UsageError("--split must be train, valid or test, got '" + split + "'");
}

Checkpoint load_ckpt(const std::string& path) {
  require_file(path, "--checkpoint");
  return load_checkpoint(path);
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << j.dump(2) << '\n';
}

std::string fixed2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

RunHooks hooks_for(const fs::path& dir, std::ostream& err) {
  RunHooks h;
  h.checkpoint_dir = dir;
  h.warn = [&err](const std::string& msg) { err << json{{"warning", msg}}.dump() << '\n'; };
  return h;
}

void cmd_generate(const Options& o, std::ostream& out) {
  const auto cfg = load_config(o);
  const auto dir = out_dir(o);
  const auto g = generate_corpus(cfg.data.corpus);
  auto next_id = static_cast<std::int64_t>(g.pairs.size());
  const auto valid = generate_clean_pairs(cfg.data.corpus, cfg.data.n_valid, 1, next_id);
  next_id += static_cast<std::int64_t>(valid.size());
  const auto test = generate_clean_pairs(cfg.data.corpus, cfg.data.n_test, 2, next_id);
  g.src_vocab.save(dir / "src.vocab");
  g.tgt_vocab.save(dir / "tgt.vocab");
  save_corpus(dir / "train.jsonl", g.pairs, g.src_vocab, g.tgt_vocab);
  save_corpus(dir / "valid.jsonl", valid, g.src_vocab, g.tgt_vocab);
  save_corpus(dir / "test.jsonl", test, g.src_vocab, g.tgt_vocab);
  const auto planted = std::count_if(g.pairs.begin(), g.pairs.end(),
                                     [](const SentencePair& p) { return p.label == PairLabel::Hallucinated; });
  const json summary = {{"train", g.pairs.size()},     {"valid", valid.size()},
                        {"test", test.size()},         {"hallucinated", planted},
                        {"src_vocab", g.src_vocab.size()}, {"tgt_vocab", g.tgt_vocab.size()},
                        {"config", to_json(cfg)}};
  write_json(dir / "data.json", summary);
  out << summary.dump() << '\n';
}

void cmd_pretrain(const Options& o, std::ostream& out, std::ostream& err) {
  auto cfg = load_config(o);
  const auto ds = load_dataset(o.data);
  const auto dir = out_dir(o);
  Checkpoint ckpt;
  if (!o.resume.empty()) {
    require_file(o.resume, "--resume");
    ckpt = load_checkpoint(o.resume);
    if (ckpt.stage != Stage::Pretrain) throw UsageError("--resume checkpoint is not a pretraining checkpoint");
  } else {
    cfg.train.model.vocab_size_src = static_cast<int>(ds.src_vocab.size());
    cfg.train.model.vocab_size_tgt = static_cast<int>(ds.tgt_vocab.size());
    ckpt = start_pretraining(cfg.train);
  }
  TrainLog log;
  run_stage(ckpt, ds.train, ds.valid, log, hooks_for(dir, err));
  save_checkpoint(dir / "pretrain.ckpt", ckpt);
  write_metrics_csv(dir / "metrics.csv", log.metrics);
  write_eval_csv(dir / "eval.csv", log.evals);
  const json summary = {{"stage", "pretrain"},
                        {"steps", ckpt.step},
                        {"valid_nmt_ce", log.evals.empty() ? 0.0 : log.evals.back().valid_nmt_ce},
                        {"valid_lm_ce", log.evals.empty() ? 0.0 : log.evals.back().valid_lm_ce}};
  write_json(dir / "summary.json", summary);
  out << summary.dump() << '\n';
}

void cmd_finetune(const Options& o, std::ostream& out, std::ostream& err) {
  const auto cfg = load_config(o);
  const auto ds = load_dataset(o.data);
  const auto dir = out_dir(o);
  Checkpoint ckpt;
  if (!o.resume.empty()) {
    require_file(o.resume, "--resume");
    ckpt = load_checkpoint(o.resume);
    if (ckpt.stage != Stage::Finetune) throw UsageError("--resume checkpoint is not a finetuning checkpoint");
  } else {
    const auto pre = load_ckpt(o.checkpoint);
    ckpt = begin_finetuning(pre, cfg.train);
  }
  TrainLog log;
  run_stage(ckpt, ds.train, ds.valid, log, hooks_for(dir, err));
  save_checkpoint(dir / "finetune.ckpt", ckpt);
  write_metrics_csv(dir / "metrics.csv", log.metrics);
  write_eval_csv(dir / "eval.csv", log.evals);
  const json summary = {{"stage", "finetune"},
                        {"objective", to_string(ckpt.config.objective.objective)},
                        {"steps", ckpt.step},
                        {"valid_nmt_ce", log.evals.empty() ? 0.0 : log.evals.back().valid_nmt_ce},
                        {"gated_fraction", log.evals.empty() ? 0.0 : log.evals.back().gated_fraction}};
  write_json(dir / "summary.json", summary);
  out << summary.dump() << '\n';
}

void cmd_analyze(const Options& o, std::ostream& out) {
  const auto cfg = load_config(o);
  const auto ds = load_dataset(o.data);
  const auto ckpt = load_ckpt(o.checkpoint);
  const auto dir = out_dir(o);
  const auto& corpus = pick_split(ds, o.split);
  const auto stats = compute_margin_stats(ckpt.bundle, corpus, cfg.analysis.sample_size, cfg.seed,
                                          cfg.analysis.histogram_bins, cfg.train.batch_tokens);
  json j = to_json(stats);
  j["split"] = o.split;
  j["seed"] = cfg.seed;
  write_json(dir / "stats.json", j);
  write_histogram_csv(dir / "histogram.csv", stats);
  out << json{{"percent_negative", stats.percent_negative}, {"average_delta", stats.average_delta},
              {"token_count", stats.token_count}}.dump()
      << '\n';
}

void cmd_filter(const Options& o, std::ostream& out) {
  const auto cfg = load_config(o);
  const auto ds = load_dataset(o.data);
  const auto ckpt = load_ckpt(o.checkpoint);
  const auto dir = out_dir(o);
  const auto& corpus = pick_split(ds, o.split);
  const auto report = filter_corpus(ckpt.bundle, corpus, cfg.train.objective.threshold_k, cfg.train.batch_tokens);
  Corpus kept, flagged;
  std::size_t f = 0;
  for (const auto& p : corpus) {
    const bool is_flagged = f < report.flagged.size() && report.flagged[f] == p.id;
    if (is_flagged) ++f;
    (is_flagged ? flagged : kept).push_back(p);
  }
  save_corpus(dir / "filtered.jsonl", kept, ds.src_vocab, ds.tgt_vocab);
  save_corpus(dir / "flagged.jsonl", flagged, ds.src_vocab, ds.tgt_vocab);
  write_json(dir / "filter_report.json", to_json(report));
  out << json{{"kept", report.kept.size()},
              {"flagged", report.flagged.size()},
              {"precision", to_json(report)["precision"]},
              {"recall", to_json(report)["recall"]}}.dump()
      << '\n';
}

std::vector<TokenSeq> read_lines(const std::string& path, const char* what) {
  require_file(path, what);
  std::ifstream is(path);
  std::vector<TokenSeq> lines;
  std::string line;
  while (std::getline(is, line)) {
    std::istringstream ss(line);
    TokenSeq toks;
    std::string t;
    while (ss >> t) toks.push_back(t);
    lines.push_back(std::move(toks));
  }
  return lines;
}

void cmd_evaluate(const Options& o, std::ostream& out) {
  if (!o.hyp.empty() || !o.ref.empty()) {
    const auto hyps = read_lines(o.hyp, "--hyp");
    const auto refs = read_lines(o.ref, "--ref");
    if (hyps.size() != refs.size())
      throw UsageError("--hyp has " + std::to_string(hyps.size()) + " lines but --ref has " +
                       std::to_string(refs.size()));
    const auto r = corpus_bleu(hyps, refs);
    if (!o.out.empty())
      write_json(out_dir(o) / "bleu.json", {{"bleu", r.score}, {"precisions", r.precisions},
                                            {"brevity_penalty", r.brevity_penalty}});
    out << fixed2(r.score) << '\n';
    return;
  }
  const auto cfg = load_config(o);
  const auto ds = load_dataset(o.data);
  const auto ckpt = load_ckpt(o.checkpoint);
  const auto& corpus = pick_split(ds, o.split);
  const auto hyps = translate(ckpt.bundle, corpus, cfg.analysis.beam_size, cfg.analysis.length_penalty,
                              cfg.analysis.decode_max_len);
  std::vector<TokenSeq> h, r;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    h.push_back(ds.tgt_vocab.decode(hyps[i]));
    r.push_back(ds.tgt_vocab.decode(corpus[i].tgt));
  }
  const auto result = corpus_bleu(h, r);
  if (!o.out.empty()) {
    const auto dir = out_dir(o);
    std::ofstream tr(dir / "translations.txt");
    for (const auto& s : h) {
      for (std::size_t i = 0; i < s.size(); ++i) tr << (i ? " " : "") << s[i];
      tr << '\n';
    }
    write_json(dir / "bleu.json", {{"bleu", result.score}, {"split", o.split}, {"precisions", result.precisions},
                                   {"brevity_penalty", result.brevity_penalty}});
  }
  out << fixed2(result.score) << '\n';
}

void cmd_sweep(const Options& o, std::ostream& out) {
  const auto cfg = load_config(o);
  const auto ds = load_dataset(o.data);
  const auto pre = load_ckpt(o.checkpoint);
  const auto dir = out_dir(o);
  SweepInputs in;
  in.pretrained = &pre;
  in.train = &ds.train;
  in.valid = &ds.valid;
  in.test = &ds.test;
  in.tgt_vocab = &ds.tgt_vocab;
  in.train_config = cfg.train;
  in.analysis = cfg.analysis;
  const auto cells = expand_grid(cfg.train.objective, cfg.sweep);
  json rows = json::array();
  const auto results = run_sweep(in, cells, [&out](const SweepResult& r) { out << to_json(r).dump() << '\n'; });
  std::ofstream csv(dir / "sweep.csv");
  csv << "cell,objective,lambda_margin,threshold_k,margin_fn,alpha,weight_on,ok,bleu,average_delta,percent_negative,"
         "gated_fraction\n";
  for (const auto& r : results) {
    rows.push_back(to_json(r));
    const auto& c = r.cell.objective;
    csv << '"' << r.cell.name << "\"," << to_string(c.objective) << ',' << c.lambda_margin << ',' << c.threshold_k
        << ',' << to_string(c.margin_function.variant) << ',' << c.margin_function.alpha << ','
        << (c.weight_on ? "true" : "false") << ',' << (r.ok ? "true" : "false") << ',';
    if (r.ok)
      csv << r.bleu << ',' << r.stats.average_delta << ',' << r.stats.percent_negative << ',' << r.gated_fraction;
    else
      csv << ",,,";
    csv << '\n';
  }
  write_json(dir / "sweep.json", rows);
}

int fail(std::ostream& err, const char* kind, const std::string& message, int code) {
  err << json{{"error", {{"kind", kind}, {"message", message}}}}.dump() << '\n';
  return code;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Margin-based NMT training lab", "marginmt"};
  app.require_subcommand(1);
  Options o;

  auto common = [&o](CLI::App* c) {
    c->add_option("--config", o.config, "experiment JSON file");
    c->add_option("--seed", o.seed, "override the experiment seed");
    c->add_option("--objective", o.objective, "ce | mto | mso");
    c->add_option("--margin-fn", o.margin_fn, "linear | cube | quintic | log");
    c->add_option("--alpha", o.alpha, "log margin steepness");
    c->add_option("--lambda-margin", o.lambda_margin, "margin loss weight");
    c->add_option("--lambda-lm", o.lambda_lm, "LM loss weight in pretraining");
    c->add_option("--threshold-k", o.threshold_k, "sentence gate threshold");
    c->add_option("--out", o.out, "output directory");
  };
  auto* gen = app.add_subcommand("generate-data", "write a synthetic corpus with planted hallucinations");
  auto* pre = app.add_subcommand("pretrain", "joint NMT + LM pretraining");
  auto* ft = app.add_subcommand("finetune", "finetune the NMT model with the LM fixed");
  auto* an = app.add_subcommand("analyze", "margin statistics and histogram");
  auto* fl = app.add_subcommand("filter", "flag pairs the sentence gate would drop");
  auto* ev = app.add_subcommand("evaluate", "BLEU of hypothesis/reference files or of a checkpoint");
  auto* sw = app.add_subcommand("sweep", "finetune a grid of objective settings");
  for (auto* c : {gen, pre, ft, an, fl, ev, sw}) common(c);
  for (auto* c : {pre, ft, an, fl, ev, sw}) c->add_option("--data", o.data, "directory written by generate-data");
  for (auto* c : {ft, an, fl, ev, sw}) c->add_option("--checkpoint", o.checkpoint, "checkpoint file");
  for (auto* c : {pre, ft}) c->add_option("--resume", o.resume, "continue from a periodic checkpoint");
  an->add_option("--split", o.split, "train | valid | test")->capture_default_str();
  ev->add_option("--split", o.split, "train | valid | test")->capture_default_str();
  fl->add_option("--split", o.split, "train | valid | test");
  ev->add_option("--hyp", o.hyp, "hypothesis file, one tokenized sentence per line");
  ev->add_option("--ref", o.ref, "reference file, one tokenized sentence per line");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    return fail(err, "usage", e.what(), 2);
  }
  if (fl->parsed() && fl->count("--split") == 0) o.split = "train";

  try {
    if (gen->parsed()) cmd_generate(o, out);
    if (pre->parsed()) cmd_pretrain(o, out, err);
    if (ft->parsed()) cmd_finetune(o, out, err);
    if (an->parsed()) cmd_analyze(o, out);
    if (fl->parsed()) cmd_filter(o, out);
    if (ev->parsed()) cmd_evaluate(o, out);
    if (sw->parsed()) cmd_sweep(o, out);
  } catch (const UsageError& e) {
    return fail(err, "usage", e.what(), 2);
  } catch (const SchemaError& e) {
    return fail(err, "usage", e.what(), 2);
  } catch (const std::exception& e) {
    return fail(err, "runtime", e.what(), 1);
  }
  return 0;
}

}  // namespace marginmt
