#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "marginmt/random.hpp"
#include "marginmt/tensor.hpp"

namespace marginmt {

struct ModelConfig {
  int vocab_size_src = 0;
  int vocab_size_tgt = 0;
  int d_model = 64;
  int n_heads = 4;
  int d_ff = 128;
  int n_enc_layers = 2;
  int n_dec_layers = 2;
  int n_lm_layers = 2;
  double dropout_rate = 0.1;
  int max_len = 64;

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

/// Which model(s) read a parameter.
enum class ParamGroup { NmtOnly, LmOnly, Shared };

struct Parameter {
  std::string name;
  Tensor value;
  ParamGroup group;
};

/// NMT encoder-decoder plus a decoder-only LM. The target embedding table and
/// the pre-softmax projection (weight and bias) are single tensors read by
/// both output paths.
class ModelBundle {
 public:
  ModelBundle() = default;
  ModelBundle(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }

  std::vector<Parameter>& parameters() { return params_; }
  const std::vector<Parameter>& parameters() const { return params_; }
  const Tensor& param(const std::string& name) const;

  /// Parameters trained by the NMT objective (NMT-only plus shared).
  std::vector<Tensor> nmt_parameters() const;
  /// Parameters read by the LM (LM-only plus shared).
  std::vector<Tensor> lm_parameters() const;
  std::vector<Tensor> lm_exclusive_parameters() const;
  std::vector<Tensor> all_parameters() const;

  const Tensor& target_embedding() const { return param("tgt_embed"); }
  const Tensor& projection_weight() const { return param("out_proj.weight"); }
  const Tensor& projection_bias() const { return param("out_proj.bias"); }

  /// Independent copy of every parameter value.
  ModelBundle clone() const;

  void zero_grad();

 private:
  void add(std::string name, Tensor value, ParamGroup group);

  ModelConfig config_;
  std::vector<Parameter> params_;
};

/// Row-major [rows, cols] token ids with a pad mask (1 = padding).
struct TokenMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::span<const int> ids;
  std::span<const std::uint8_t> pad;
};

/// Dropout is active only when `train` is set and `rng` is given.
struct ForwardContext {
  bool train = false;
  rnd::Engine* rng = nullptr;
};

/// Encoder states [rows, cols, d_model].
Tensor encode(const ModelBundle& bundle, const TokenMatrix& src, const ForwardContext& ctx = {});

/// p_NMT rows [rows, cols, vocab_tgt] given encoder states and the teacher-
/// forced target input (BOS + prefix).
Tensor decode(const ModelBundle& bundle, const Tensor& memory, const TokenMatrix& src, const TokenMatrix& tgt_in,
              const ForwardContext& ctx = {});

Tensor nmt_forward(const ModelBundle& bundle, const TokenMatrix& src, const TokenMatrix& tgt_in,
                   const ForwardContext& ctx = {});

/// p_LM rows [rows, cols, vocab_tgt]; reads only the target side.
Tensor lm_forward(const ModelBundle& bundle, const TokenMatrix& tgt_in, const ForwardContext& ctx = {});

/// Order-sensitive FNV-1a hash over parameter shapes and value bytes.
std::uint64_t parameter_checksum(const std::vector<Tensor>& params);

}  // namespace marginmt
