#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "marginmt/config.hpp"
#include "marginmt/model.hpp"
#include "marginmt/optim.hpp"

namespace marginmt {

enum class Stage { Pretrain, Finetune };

std::string to_string(Stage s);

/// Everything needed to resume training bit-identically.
struct Checkpoint {
  TrainConfig config;
  ModelBundle bundle;
  Stage stage = Stage::Pretrain;
  /// Optimizer steps completed in `stage`.
  std::uint64_t step = 0;
  /// Steps completed by the pretraining stage this bundle came from.
  std::uint64_t pretrain_steps = 0;
  /// Names of the optimized parameters, aligned with `adam`.
  std::vector<std::string> optimized;
  AdamState adam;
  std::string rng_state;
  std::uint64_t epoch = 0;
  std::uint64_t batch_cursor = 0;
  /// Shared-table values as finetuning began. The fixed LM keeps reading
  /// these while the NMT side moves the live tables. Empty otherwise.
  std::vector<std::pair<std::string, std::vector<double>>> lm_reference;
};

// Binary layout, all integers and floats little-endian:
//   "MMNMTCKP" u32 version
//   str config_json, u8 stage, u64 step, u64 pretrain_steps, u64 epoch,
//   u64 batch_cursor, str rng_state
//   u32 n_params, then per parameter: str name, u8 group, u32 rank,
//       u64 dims[rank], f64 values[numel]
//   u64 adam_t, u32 n_optimized, then per entry: str name, f64 m[], f64 v[]
//   u32 n_reference, then per entry: str name, u64 count, f64 values[count]
// where str is u32 length + bytes.
inline constexpr std::uint32_t kCheckpointVersion = 2;

std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(const std::string& bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace marginmt
