#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>

#include "laver/model.hpp"
#include "laver/tensor.hpp"

namespace laver {

// LVCK layout, little-endian:
//   "LVCK" | u16 version | u32 config bytes | config text | u32 tensor count |
//   per tensor: u16 name bytes | name | LVTD blob
inline constexpr std::uint16_t kLvckVersion = 1;
inline constexpr const char* kTeacherPrefix = "teacher/";

struct Checkpoint {
  std::string config_text;
  std::map<std::string, Tensor> tensors;
};

/// Student tensors under their own names, teacher tensors (when given) under "teacher/".
Checkpoint make_checkpoint(const std::string& config_text, const ModelParams& student,
                           const ModelParams* teacher);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Rebuilds parameters of the given config from the checkpoint. `prefix`
/// selects the student ("") or the teacher (kTeacherPrefix). Missing or
/// mis-shaped tensors are rejected by name.
ModelParams restore_params(const Checkpoint& ckpt, const ModelConfig& config,
                           const std::string& prefix = "");

}  // namespace laver
