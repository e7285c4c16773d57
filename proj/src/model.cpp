#include "marginmt/model.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

#include "marginmt/ops.hpp"

namespace marginmt {

void ModelConfig::validate() const {
  if (vocab_size_src <= 0 || vocab_size_tgt <= 0) throw std::invalid_argument("model: vocabulary sizes must be positive");
  if (d_model <= 0 || n_heads <= 0 || d_ff <= 0 || max_len <= 0)
    throw std::invalid_argument("model: extents must be positive");
  if (n_enc_layers <= 0 || n_dec_layers <= 0 || n_lm_layers <= 0)
    throw std::invalid_argument("model: layer counts must be positive");
  if (d_model % n_heads != 0) throw std::invalid_argument("model: d_model must be divisible by n_heads");
  if (!(dropout_rate >= 0 && dropout_rate < 1)) throw std::invalid_argument("model: dropout_rate must lie in [0, 1)");
}

namespace {

Tensor xavier(rnd::Engine& rng, std::size_t in, std::size_t out) {
  const double a = std::sqrt(6.0 / static_cast<double>(in + out));
  std::vector<double> v(in * out);
  for (auto& x : v) x = (2.0 * rnd::unit(rng) - 1.0) * a;
  return Tensor({in, out}, std::move(v), true);
}

Tensor normal_table(rnd::Engine& rng, std::size_t rows, std::size_t d) {
  const double sd = 1.0 / std::sqrt(static_cast<double>(d));
  std::vector<double> v(rows * d);
  for (auto& x : v) x = rnd::normal(rng) * sd;
  return Tensor({rows, d}, std::move(v), true);
}

Tensor filled(std::size_t n, double value) { return Tensor({n}, value, true); }

}  // namespace

void ModelBundle::add(std::string name, Tensor value, ParamGroup group) {
  params_.push_back(Parameter{std::move(name), std::move(value), group});
}

ModelBundle::ModelBundle(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  auto rng = rnd::engine(seed, 0x30de1);
  const auto d = static_cast<std::size_t>(config_.d_model);
  const auto ff = static_cast<std::size_t>(config_.d_ff);

  auto attention = [&](const std::string& p, ParamGroup g) {
    for (const char* m : {"q", "k", "v", "o"}) {
      add(p + "." + m + ".weight", xavier(rng, d, d), g);
      add(p + "." + m + ".bias", filled(d, 0.0), g);
    }
  };
  auto norm = [&](const std::string& p, ParamGroup g) {
    add(p + ".gain", filled(d, 1.0), g);
    add(p + ".bias", filled(d, 0.0), g);
  };
  auto ffn = [&](const std::string& p, ParamGroup g) {
    add(p + ".in.weight", xavier(rng, d, ff), g);
    add(p + ".in.bias", filled(ff, 0.0), g);
    add(p + ".out.weight", xavier(rng, ff, d), g);
    add(p + ".out.bias", filled(d, 0.0), g);
  };

  add("src_embed", normal_table(rng, static_cast<std::size_t>(config_.vocab_size_src), d), ParamGroup::NmtOnly);
  add("tgt_embed", normal_table(rng, static_cast<std::size_t>(config_.vocab_size_tgt), d), ParamGroup::Shared);
  add("out_proj.weight", xavier(rng, d, static_cast<std::size_t>(config_.vocab_size_tgt)), ParamGroup::Shared);
  add("out_proj.bias", filled(static_cast<std::size_t>(config_.vocab_size_tgt), 0.0), ParamGroup::Shared);

  for (int l = 0; l < config_.n_enc_layers; ++l) {
    const std::string p = "enc." + std::to_string(l);
    norm(p + ".norm1", ParamGroup::NmtOnly);
    attention(p + ".self_attn", ParamGroup::NmtOnly);
    norm(p + ".norm2", ParamGroup::NmtOnly);
    ffn(p + ".ffn", ParamGroup::NmtOnly);
  }
  norm("enc.final_norm", ParamGroup::NmtOnly);
  for (int l = 0; l < config_.n_dec_layers; ++l) {
    const std::string p = "dec." + std::to_string(l);
    norm(p + ".norm1", ParamGroup::NmtOnly);
    attention(p + ".self_attn", ParamGroup::NmtOnly);
    norm(p + ".norm2", ParamGroup::NmtOnly);
    attention(p + ".cross_attn", ParamGroup::NmtOnly);
    norm(p + ".norm3", ParamGroup::NmtOnly);
    ffn(p + ".ffn", ParamGroup::NmtOnly);
  }
  norm("dec.final_norm", ParamGroup::NmtOnly);
  for (int l = 0; l < config_.n_lm_layers; ++l) {
    const std::string p = "lm." + std::to_string(l);
    norm(p + ".norm1", ParamGroup::LmOnly);
    attention(p + ".self_attn", ParamGroup::LmOnly);
    norm(p + ".norm2", ParamGroup::LmOnly);
    ffn(p + ".ffn", ParamGroup::LmOnly);
  }
  norm("lm.final_norm", ParamGroup::LmOnly);
}

const Tensor& ModelBundle::param(const std::string& name) const {
  for (const auto& p : params_)
    if (p.name == name) return p.value;
  throw std::out_of_range("model: no parameter named '" + name + "'");
}

namespace {
std::vector<Tensor> select(const std::vector<Parameter>& params, bool nmt_only, bool lm_only, bool shared) {
  std::vector<Tensor> out;
  for (const auto& p : params) {
    if ((p.group == ParamGroup::NmtOnly && nmt_only) || (p.group == ParamGroup::LmOnly && lm_only) ||
        (p.group == ParamGroup::Shared && shared))
      out.push_back(p.value);
  }
  return out;
}
}  // namespace

std::vector<Tensor> ModelBundle::nmt_parameters() const { return select(params_, true, false, true); }
std::vector<Tensor> ModelBundle::lm_parameters() const { return select(params_, false, true, true); }
std::vector<Tensor> ModelBundle::lm_exclusive_parameters() const { return select(params_, false, true, false); }
std::vector<Tensor> ModelBundle::all_parameters() const { return select(params_, true, true, true); }

ModelBundle ModelBundle::clone() const {
  ModelBundle b;
  b.config_ = config_;
  for (const auto& p : params_) {
    Tensor copy(p.value.shape(), std::vector<double>(p.value.data().begin(), p.value.data().end()), true);
    b.params_.push_back(Parameter{p.name, std::move(copy), p.group});
  }
  return b;
}

void ModelBundle::zero_grad() {
  for (auto& p : params_) p.value.zero_grad();
}

namespace {

class Forward {
 public:
  Forward(const ModelBundle& b, const ForwardContext& ctx) : b_(b), ctx_(ctx), cfg_(b.config()) {}

  const Tensor& p(const std::string& name) const { return b_.param(name); }

  Tensor drop(const Tensor& x) const {
    if (!ctx_.train || ctx_.rng == nullptr) return x;
    return ops::dropout(x, cfg_.dropout_rate, *ctx_.rng);
  }

  Tensor linear(const Tensor& x, const std::string& prefix) const {
    return ops::add(ops::matmul(x, p(prefix + ".weight")), p(prefix + ".bias"));
  }

  Tensor norm(const Tensor& x, const std::string& prefix) const {
    return ops::layer_norm(x, p(prefix + ".gain"), p(prefix + ".bias"));
  }

  Tensor ffn(const Tensor& x, const std::string& prefix) const {
    return linear(ops::relu(linear(x, prefix + ".in")), prefix + ".out");
  }

  Tensor embed(const Tensor& table, const TokenMatrix& m) const {
    if (m.cols > static_cast<std::size_t>(cfg_.max_len))
      throw std::invalid_argument("sequence length " + std::to_string(m.cols) + " exceeds max_len " +
                                  std::to_string(cfg_.max_len));
    if (m.ids.size() != m.rows * m.cols || m.pad.size() != m.ids.size())
      throw ShapeError("embedding_lookup", "token matrix does not match its extents");
    const auto d = static_cast<std::size_t>(cfg_.d_model);
    Tensor e = ops::scale(ops::embedding(table, m.ids, {m.rows, m.cols}), std::sqrt(static_cast<double>(d)));
    std::vector<double> pe(m.cols * d);
    for (std::size_t t = 0; t < m.cols; ++t)
      for (std::size_t i = 0; i < d; i += 2) {
        const double angle = static_cast<double>(t) / std::pow(10000.0, static_cast<double>(i) / static_cast<double>(d));
        pe[t * d + i] = std::sin(angle);
        if (i + 1 < d) pe[t * d + i + 1] = std::cos(angle);
      }
    return drop(ops::add(e, Tensor({m.cols, d}, std::move(pe))));
  }

  // mask has rows * tq * tk entries (1 = blocked); replicated over heads.
  Tensor attention(const Tensor& xq, const Tensor& xkv, const std::vector<std::uint8_t>& mask,
                   const std::string& prefix) const {
    const std::size_t rows = xq.dim(0), tq = xq.dim(1), tk = xkv.dim(1);
    const auto h = static_cast<std::size_t>(cfg_.n_heads);
    const auto d = static_cast<std::size_t>(cfg_.d_model);
    const std::size_t dh = d / h;
    auto heads = [&](const Tensor& x, std::size_t t) {
      return ops::transpose(ops::reshape(x, {rows, t, h, dh}), 1, 2);  // [rows, h, t, dh]
    };
    Tensor q = heads(linear(xq, prefix + ".q"), tq);
    Tensor k = heads(linear(xkv, prefix + ".k"), tk);
    Tensor v = heads(linear(xkv, prefix + ".v"), tk);
    Tensor scores = ops::scale(ops::matmul(q, ops::transpose(k, 2, 3)), 1.0 / std::sqrt(static_cast<double>(dh)));
    std::vector<std::uint8_t> full(rows * h * tq * tk);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t hh = 0; hh < h; ++hh)
        std::copy_n(mask.begin() + static_cast<long>(r * tq * tk), tq * tk,
                    full.begin() + static_cast<long>((r * h + hh) * tq * tk));
    Tensor att = ops::softmax(ops::masked_fill(scores, full, -1e9));
    Tensor ctx = ops::reshape(ops::transpose(ops::matmul(att, v), 1, 2), {rows, tq, d});
    return linear(ctx, prefix + ".o");
  }

  static std::vector<std::uint8_t> key_mask(const TokenMatrix& q, const TokenMatrix& k, bool causal) {
    std::vector<std::uint8_t> m(q.rows * q.cols * k.cols, 0);
    for (std::size_t r = 0; r < q.rows; ++r)
      for (std::size_t i = 0; i < q.cols; ++i)
        for (std::size_t j = 0; j < k.cols; ++j)
          m[(r * q.cols + i) * k.cols + j] = (k.pad[r * k.cols + j] != 0 || (causal && j > i)) ? 1 : 0;
    return m;
  }

  Tensor project(const Tensor& x) const {
    return ops::softmax(ops::add(ops::matmul(x, b_.projection_weight()), b_.projection_bias()));
  }

 private:
  const ModelBundle& b_;
  const ForwardContext& ctx_;
  const ModelConfig& cfg_;
};

void check_ids(const TokenMatrix& m, int vocab, const char* side) {
  for (std::size_t i = 0; i < m.ids.size(); ++i)
    if (m.ids[i] < 0 || m.ids[i] >= vocab)
      throw std::out_of_range(std::string(side) + " id " + std::to_string(m.ids[i]) + " outside vocabulary of " +
                              std::to_string(vocab));
}

}  // namespace

Tensor encode(const ModelBundle& bundle, const TokenMatrix& src, const ForwardContext& ctx) {
  check_ids(src, bundle.config().vocab_size_src, "source");
  Forward f(bundle, ctx);
  const auto mask = Forward::key_mask(src, src, false);
  Tensor x = f.embed(bundle.param("src_embed"), src);
  for (int l = 0; l < bundle.config().n_enc_layers; ++l) {
    const std::string p = "enc." + std::to_string(l);
    Tensor h = f.norm(x, p + ".norm1");
    x = ops::add(x, f.drop(f.attention(h, h, mask, p + ".self_attn")));
    x = ops::add(x, f.drop(f.ffn(f.norm(x, p + ".norm2"), p + ".ffn")));
  }
  return f.norm(x, "enc.final_norm");
}

Tensor decode(const ModelBundle& bundle, const Tensor& memory, const TokenMatrix& src, const TokenMatrix& tgt_in,
              const ForwardContext& ctx) {
  check_ids(tgt_in, bundle.config().vocab_size_tgt, "target");
  if (src.rows != tgt_in.rows) throw ShapeError("decode", "source and target batch sizes differ");
  Forward f(bundle, ctx);
  const auto self_mask = Forward::key_mask(tgt_in, tgt_in, true);
  const auto cross_mask = Forward::key_mask(tgt_in, src, false);
  Tensor x = f.embed(bundle.target_embedding(), tgt_in);
  for (int l = 0; l < bundle.config().n_dec_layers; ++l) {
    const std::string p = "dec." + std::to_string(l);
    Tensor h = f.norm(x, p + ".norm1");
    x = ops::add(x, f.drop(f.attention(h, h, self_mask, p + ".self_attn")));
    x = ops::add(x, f.drop(f.attention(f.norm(x, p + ".norm2"), memory, cross_mask, p + ".cross_attn")));
    x = ops::add(x, f.drop(f.ffn(f.norm(x, p + ".norm3"), p + ".ffn")));
  }
  return f.project(f.norm(x, "dec.final_norm"));
}

Tensor nmt_forward(const ModelBundle& bundle, const TokenMatrix& src, const TokenMatrix& tgt_in,
                   const ForwardContext& ctx) {
  return decode(bundle, encode(bundle, src, ctx), src, tgt_in, ctx);
}

Tensor lm_forward(const ModelBundle& bundle, const TokenMatrix& tgt_in, const ForwardContext& ctx) {
  check_ids(tgt_in, bundle.config().vocab_size_tgt, "target");
  Forward f(bundle, ctx);
  const auto mask = Forward::key_mask(tgt_in, tgt_in, true);
  Tensor x = f.embed(bundle.target_embedding(), tgt_in);
  for (int l = 0; l < bundle.config().n_lm_layers; ++l) {
    const std::string p = "lm." + std::to_string(l);
    Tensor h = f.norm(x, p + ".norm1");
    x = ops::add(x, f.drop(f.attention(h, h, mask, p + ".self_attn")));
    x = ops::add(x, f.drop(f.ffn(f.norm(x, p + ".norm2"), p + ".ffn")));
  }
  return f.project(f.norm(x, "lm.final_norm"));
}

std::uint64_t parameter_checksum(const std::vector<Tensor>& params) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&h](const void* data, std::size_t n) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& t : params) {
    for (auto e : t.shape()) feed(&e, sizeof e);
    feed(t.data().data(), t.size() * sizeof(double));
  }
  return h;
}

}  // namespace marginmt
