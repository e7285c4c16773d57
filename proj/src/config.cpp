#include "marginmt/config.hpp"

#include <fstream>
#include <set>

namespace marginmt {

using nlohmann::json;

void TrainConfig::validate() const {
  objective.validate();
  if (warmup_steps < 1) throw std::invalid_argument("train: warmup_steps must be >= 1");
  if (!(lr_peak > 0)) throw std::invalid_argument("train: lr_peak must be > 0");
  if (batch_tokens == 0) throw std::invalid_argument("train: batch_tokens must be positive");
  if (eval_every == 0) throw std::invalid_argument("train: eval_every must be positive");
  if (!(adam.beta1 >= 0 && adam.beta1 < 1 && adam.beta2 >= 0 && adam.beta2 < 1 && adam.eps > 0))
    throw std::invalid_argument("train: invalid Adam constants");
}

void ExperimentConfig::apply_seed(std::uint64_t s) {
  seed = s;
  data.corpus.seed = s;
  train.seed = s;
}

namespace {

// Reads typed fields out of one JSON object and rejects unknown keys.
class Section {
 public:
  Section(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw SchemaError(where_ + ": expected an object");
  }
  void done() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw SchemaError(where_ + ": unknown key '" + it.key() + "'");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    const json& v = j_.at(key);
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) throw SchemaError("expected boolean");
      } else if constexpr (std::is_integral_v<T>) {
        if (!v.is_number_integer()) throw SchemaError("expected integer");
        if constexpr (std::is_unsigned_v<T>)
          if (v.get<long long>() < 0) throw SchemaError("expected non-negative integer");
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!v.is_number()) throw SchemaError("expected number");
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!v.is_string()) throw SchemaError("expected string");
      }
      out = v.get<T>();
    } catch (const std::exception& e) {
      throw SchemaError(where_ + "." + key + ": " + e.what());
    }
  }

  template <typename T, typename Parse>
  void get_parsed(const char* key, T& out, Parse parse) {
    std::string s;
    get(key, s);
    if (!j_.contains(key)) return;
    try {
      out = parse(s);
    } catch (const std::invalid_argument& e) {
      throw SchemaError(where_ + "." + key + ": " + e.what());
    }
  }

  template <typename T>
  void get_list(const char* key, std::vector<T>& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    const json& v = j_.at(key);
    if (!v.is_array()) throw SchemaError(where_ + "." + key + ": expected array");
    out.clear();
    for (const auto& e : v) {
      if constexpr (std::is_same_v<T, bool>) {
        if (!e.is_boolean()) throw SchemaError(where_ + "." + key + ": expected booleans");
      } else {
        if (!e.is_number()) throw SchemaError(where_ + "." + key + ": expected numbers");
      }
      out.push_back(e.get<T>());
    }
  }

  template <typename T, typename Parse>
  void get_parsed_list(const char* key, std::vector<T>& out, Parse parse) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    const json& v = j_.at(key);
    if (!v.is_array()) throw SchemaError(where_ + "." + key + ": expected array");
    out.clear();
    for (const auto& e : v) {
      if (!e.is_string()) throw SchemaError(where_ + "." + key + ": expected strings");
      try {
        out.push_back(parse(e.get<std::string>()));
      } catch (const std::invalid_argument& ex) {
        throw SchemaError(where_ + "." + key + ": " + ex.what());
      }
    }
  }

  bool has(const char* key) {
    seen_.insert(key);
    return j_.contains(key);
  }
  const json& at(const char* key) const { return j_.at(key); }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

json model_json(const ModelConfig& m) {
  return {{"vocab_size_src", m.vocab_size_src}, {"vocab_size_tgt", m.vocab_size_tgt},
          {"d_model", m.d_model},               {"n_heads", m.n_heads},
          {"d_ff", m.d_ff},                     {"n_enc_layers", m.n_enc_layers},
          {"n_dec_layers", m.n_dec_layers},     {"n_lm_layers", m.n_lm_layers},
          {"dropout_rate", m.dropout_rate},     {"max_len", m.max_len}};
}

void read_model(const json& j, ModelConfig& m) {
  Section s(j, "model");
  s.get("vocab_size_src", m.vocab_size_src);
  s.get("vocab_size_tgt", m.vocab_size_tgt);
  s.get("d_model", m.d_model);
  s.get("n_heads", m.n_heads);
  s.get("d_ff", m.d_ff);
  s.get("n_enc_layers", m.n_enc_layers);
  s.get("n_dec_layers", m.n_dec_layers);
  s.get("n_lm_layers", m.n_lm_layers);
  s.get("dropout_rate", m.dropout_rate);
  s.get("max_len", m.max_len);
  s.done();
}

json objective_json(const ObjectiveConfig& o) {
  return {{"objective", to_string(o.objective)},
          {"lambda_margin", o.lambda_margin},
          {"lambda_lm", o.lambda_lm},
          {"threshold_k", o.threshold_k},
          {"margin_fn", to_string(o.margin_function.variant)},
          {"alpha", o.margin_function.alpha},
          {"clamp_epsilon", o.margin_function.clamp_epsilon},
          {"weight_on", o.weight_on},
          {"detach_weight", o.detach_weight}};
}

void read_objective(const json& j, ObjectiveConfig& o) {
  Section s(j, "objective");
  s.get_parsed("objective", o.objective, parse_objective);
  s.get("lambda_margin", o.lambda_margin);
  s.get("lambda_lm", o.lambda_lm);
  s.get("threshold_k", o.threshold_k);
  s.get_parsed("margin_fn", o.margin_function.variant, parse_margin_variant);
  s.get("alpha", o.margin_function.alpha);
  s.get("clamp_epsilon", o.margin_function.clamp_epsilon);
  s.get("weight_on", o.weight_on);
  s.get("detach_weight", o.detach_weight);
  s.done();
}

json train_fields(const TrainConfig& c) {
  return {{"steps_pretrain", c.steps_pretrain},
          {"steps_finetune", c.steps_finetune},
          {"lr_peak", c.lr_peak},
          {"warmup_steps", c.warmup_steps},
          {"adam_beta1", c.adam.beta1},
          {"adam_beta2", c.adam.beta2},
          {"adam_eps", c.adam.eps},
          {"clip_norm", c.clip_norm},
          {"batch_tokens", c.batch_tokens},
          {"checkpoint_every", c.checkpoint_every},
          {"eval_every", c.eval_every},
          {"eval_sample", c.eval_sample},
          {"continue_schedule", c.continue_schedule},
          {"finetune_lm", c.finetune_lm}};
}

void read_train_fields(Section& s, TrainConfig& c) {
  s.get("steps_pretrain", c.steps_pretrain);
  s.get("steps_finetune", c.steps_finetune);
  s.get("lr_peak", c.lr_peak);
  s.get("warmup_steps", c.warmup_steps);
  s.get("adam_beta1", c.adam.beta1);
  s.get("adam_beta2", c.adam.beta2);
  s.get("adam_eps", c.adam.eps);
  s.get("clip_norm", c.clip_norm);
  s.get("batch_tokens", c.batch_tokens);
  s.get("checkpoint_every", c.checkpoint_every);
  s.get("eval_every", c.eval_every);
  s.get("eval_sample", c.eval_sample);
  s.get("continue_schedule", c.continue_schedule);
  s.get("finetune_lm", c.finetune_lm);
}

}  // namespace

json to_json(const TrainConfig& c) {
  json j = train_fields(c);
  j["seed"] = c.seed;
  j["model"] = model_json(c.model);
  j["objective"] = objective_json(c.objective);
  return j;
}

TrainConfig train_config_from_json(const json& j) {
  TrainConfig c;
  Section s(j, "train_config");
  read_train_fields(s, c);
  s.get("seed", c.seed);
  if (s.has("model")) read_model(s.at("model"), c.model);
  if (s.has("objective")) read_objective(s.at("objective"), c.objective);
  s.done();
  return c;
}

json to_json(const ExperimentConfig& c) {
  const auto& d = c.data.corpus;
  json sweep = json::object();
  auto strings = [](const auto& v) {
    json a = json::array();
    for (const auto& x : v) a.push_back(to_string(x));
    return a;
  };
  if (!c.sweep.objective.empty()) sweep["objective"] = strings(c.sweep.objective);
  if (!c.sweep.lambda_margin.empty()) sweep["lambda_margin"] = c.sweep.lambda_margin;
  if (!c.sweep.threshold_k.empty()) sweep["threshold_k"] = c.sweep.threshold_k;
  if (!c.sweep.margin_fn.empty()) sweep["margin_fn"] = strings(c.sweep.margin_fn);
  if (!c.sweep.alpha.empty()) sweep["alpha"] = c.sweep.alpha;
  if (!c.sweep.weight_on.empty()) sweep["weight_on"] = c.sweep.weight_on;
  return {{"seed", c.seed},
          {"data",
           {{"task", to_string(d.task)},
            {"n_pairs", d.n_pairs},
            {"n_valid", c.data.n_valid},
            {"n_test", c.data.n_test},
            {"len_min", d.len_min},
            {"len_max", d.len_max},
            {"vocab_size", d.vocab_size},
            {"branching", d.branching},
            {"hallucination_rate", d.hallucination_rate}}},
          {"model", model_json(c.train.model)},
          {"train", train_fields(c.train)},
          {"objective", objective_json(c.train.objective)},
          {"analysis",
           {{"sample_size", c.analysis.sample_size},
            {"beam_size", c.analysis.beam_size},
            {"length_penalty", c.analysis.length_penalty},
            {"decode_max_len", c.analysis.decode_max_len},
            {"histogram_bins", c.analysis.histogram_bins}}},
          {"sweep", sweep}};
}

ExperimentConfig experiment_from_json(const json& j) {
  ExperimentConfig c;
  Section root(j, "config");
  std::uint64_t seed = c.seed;
  root.get("seed", seed);
  if (root.has("data")) {
    Section s(root.at("data"), "data");
    auto& d = c.data.corpus;
    s.get_parsed("task", d.task, parse_task);
    s.get("n_pairs", d.n_pairs);
    s.get("n_valid", c.data.n_valid);
    s.get("n_test", c.data.n_test);
    s.get("len_min", d.len_min);
    s.get("len_max", d.len_max);
    s.get("vocab_size", d.vocab_size);
    s.get("branching", d.branching);
    s.get("hallucination_rate", d.hallucination_rate);
    s.done();
  }
  if (root.has("model")) read_model(root.at("model"), c.train.model);
  if (root.has("train")) {
    Section s(root.at("train"), "train");
    read_train_fields(s, c.train);
    s.done();
  }
  if (root.has("objective")) read_objective(root.at("objective"), c.train.objective);
  if (root.has("analysis")) {
    Section s(root.at("analysis"), "analysis");
    s.get("sample_size", c.analysis.sample_size);
    s.get("beam_size", c.analysis.beam_size);
    s.get("length_penalty", c.analysis.length_penalty);
    s.get("decode_max_len", c.analysis.decode_max_len);
    s.get("histogram_bins", c.analysis.histogram_bins);
    s.done();
  }
  if (root.has("sweep")) {
    Section s(root.at("sweep"), "sweep");
    s.get_parsed_list("objective", c.sweep.objective, parse_objective);
    s.get_list("lambda_margin", c.sweep.lambda_margin);
    s.get_list("threshold_k", c.sweep.threshold_k);
    s.get_parsed_list("margin_fn", c.sweep.margin_fn, parse_margin_variant);
    s.get_list("alpha", c.sweep.alpha);
    s.get_list("weight_on", c.sweep.weight_on);
    s.done();
  }
  root.done();
  c.apply_seed(seed);
  return c;
}

ExperimentConfig load_experiment(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read config file " + path);
  json j;
  try {
    j = json::parse(is);
  } catch (const json::parse_error& e) {
    throw SchemaError(path + ": " + e.what());
  }
  return experiment_from_json(j);
}

}  // namespace marginmt
