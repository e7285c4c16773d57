#include "marginmt/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace marginmt {

std::string to_string(Stage s) { return s == Stage::Pretrain ? "pretrain" : "finetune"; }

namespace {

constexpr char kMagic[8] = {'M', 'M', 'N', 'M', 'T', 'C', 'K', 'P'};

class Writer {
 public:
  void u8(std::uint8_t v) { out_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    out_ += s;
  }
  void raw(const char* p, std::size_t n) { out_.append(p, n); }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(const std::string& in) : in_(in) {}
  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(in_[pos_++]);
  }
  std::uint32_t u32() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(u8()) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(u8()) << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const auto n = u32();
    need(n);
    std::string s = in_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool at_end() const { return pos_ == in_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > in_.size()) throw std::runtime_error("checkpoint: truncated data");
  }
  const std::string& in_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string serialize_checkpoint(const Checkpoint& c) {
  Writer w;
  w.raw(kMagic, sizeof kMagic);
  w.u32(kCheckpointVersion);
  w.str(to_json(c.config).dump());
  w.u8(c.stage == Stage::Pretrain ? 0 : 1);
  w.u64(c.step);
  w.u64(c.pretrain_steps);
  w.u64(c.epoch);
  w.u64(c.batch_cursor);
  w.str(c.rng_state);
  const auto& params = c.bundle.parameters();
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    w.str(p.name);
    w.u8(static_cast<std::uint8_t>(p.group));
    w.u32(static_cast<std::uint32_t>(p.value.rank()));
    for (auto d : p.value.shape()) w.u64(d);
    for (double v : p.value.data()) w.f64(v);
  }
  w.u64(c.adam.t);
  w.u32(static_cast<std::uint32_t>(c.optimized.size()));
  for (std::size_t i = 0; i < c.optimized.size(); ++i) {
    w.str(c.optimized[i]);
    const bool has = i < c.adam.m.size();
    const std::size_t n = c.bundle.param(c.optimized[i]).size();
    for (std::size_t j = 0; j < n; ++j) w.f64(has ? c.adam.m[i][j] : 0.0);
    for (std::size_t j = 0; j < n; ++j) w.f64(has ? c.adam.v[i][j] : 0.0);
  }
  w.u32(static_cast<std::uint32_t>(c.lm_reference.size()));
  for (const auto& [name, values] : c.lm_reference) {
    w.str(name);
    w.u64(values.size());
    for (double v : values) w.f64(v);
  }
  return w.take();
}

Checkpoint deserialize_checkpoint(const std::string& bytes) {
  if (bytes.size() < sizeof kMagic || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0)
    throw std::runtime_error("checkpoint: bad magic");
  Reader r(bytes);
  for (std::size_t i = 0; i < sizeof kMagic; ++i) r.u8();
  const auto version = r.u32();
  if (version != kCheckpointVersion) throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  Checkpoint c;
  c.config = train_config_from_json(nlohmann::json::parse(r.str()));
  const auto stage = r.u8();
  if (stage > 1) throw std::runtime_error("checkpoint: bad stage tag");
  c.stage = stage == 0 ? Stage::Pretrain : Stage::Finetune;
  c.step = r.u64();
  c.pretrain_steps = r.u64();
  c.epoch = r.u64();
  c.batch_cursor = r.u64();
  c.rng_state = r.str();

  // Rebuild the bundle layout from the config, then overwrite values by name.
  c.bundle = ModelBundle(c.config.model, 0);
  const auto n_params = r.u32();
  if (n_params != c.bundle.parameters().size()) throw std::runtime_error("checkpoint: parameter count mismatch");
  for (std::uint32_t i = 0; i < n_params; ++i) {
    const auto name = r.str();
    const auto group = r.u8();
    auto& p = c.bundle.parameters()[i];
    if (p.name != name || static_cast<std::uint8_t>(p.group) != group)
      throw std::runtime_error("checkpoint: unexpected parameter '" + name + "'");
    Shape shape(r.u32());
    for (auto& d : shape) d = r.u64();
    if (shape != p.value.shape()) throw std::runtime_error("checkpoint: shape mismatch for '" + name + "'");
    for (double& v : p.value.data()) v = r.f64();
  }
  c.adam.t = r.u64();
  const auto n_opt = r.u32();
  for (std::uint32_t i = 0; i < n_opt; ++i) {
    c.optimized.push_back(r.str());
    const std::size_t n = c.bundle.param(c.optimized.back()).size();
    std::vector<double> m(n), v(n);
    for (auto& x : m) x = r.f64();
    for (auto& x : v) x = r.f64();
    c.adam.m.push_back(std::move(m));
    c.adam.v.push_back(std::move(v));
  }
  const auto n_ref = r.u32();
  for (std::uint32_t i = 0; i < n_ref; ++i) {
    auto name = r.str();
    const auto n = r.u64();
    if (n != c.bundle.param(name).size()) throw std::runtime_error("checkpoint: reference size mismatch for '" + name + "'");
    std::vector<double> values(n);
    for (auto& x : values) x = r.f64();
    c.lm_reference.emplace_back(std::move(name), std::move(values));
  }
  if (!r.at_end()) throw std::runtime_error("checkpoint: trailing bytes");
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const auto bytes = serialize_checkpoint(ckpt);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write checkpoint " + path.string());
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read checkpoint " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return deserialize_checkpoint(ss.str());
}

}  // namespace marginmt
