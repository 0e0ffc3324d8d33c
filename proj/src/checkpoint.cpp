#include "laver/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

#include "laver/tensor_io.hpp"

namespace laver {

Checkpoint make_checkpoint(const std::string& config_text, const ModelParams& student,
                           const ModelParams* teacher) {
  Checkpoint c{config_text, {}};
  student.visit([&](const std::string& name, ParamGroup, const Tensor& t) { c.tensors[name] = t; });
  if (teacher != nullptr) {
    teacher->visit([&](const std::string& name, ParamGroup, const Tensor& t) {
      c.tensors[kTeacherPrefix + name] = t;
    });
  }
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os.write("LVCK", 4);
  detail::write_u16(os, kLvckVersion);
  detail::write_u32(os, static_cast<std::uint32_t>(ckpt.config_text.size()));
  os.write(ckpt.config_text.data(), static_cast<std::streamsize>(ckpt.config_text.size()));
  detail::write_u32(os, static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, t] : ckpt.tensors) {
    if (name.size() > 0xffff) throw std::invalid_argument("LVCK: tensor name too long");
    detail::write_u16(os, static_cast<std::uint16_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_lvtd(os, t);
  }
  if (!os) throw std::runtime_error("write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint " + path.string());
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "LVCK", 4) != 0) {
    throw std::runtime_error(path.string() + ": not an LVCK checkpoint");
  }
  const auto version = detail::read_u16(is);
  if (version != kLvckVersion) {
    throw std::runtime_error(path.string() + ": unsupported LVCK version " + std::to_string(version));
  }
  Checkpoint c;
  c.config_text.resize(detail::read_u32(is));
  if (!is.read(c.config_text.data(), static_cast<std::streamsize>(c.config_text.size()))) {
    throw std::runtime_error(path.string() + ": truncated config block");
  }
  const auto count = detail::read_u32(is);
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name(detail::read_u16(is), '\0');
    if (!is.read(name.data(), static_cast<std::streamsize>(name.size()))) {
      throw std::runtime_error(path.string() + ": truncated tensor name");
    }
    c.tensors[name] = read_lvtd(is);
  }
  return c;
}

ModelParams restore_params(const Checkpoint& ckpt, const ModelConfig& config, const std::string& prefix) {
  ModelParams p = ModelParams::zeros(config);
  p.visit([&](const std::string& name, ParamGroup, Tensor& t) {
    auto it = ckpt.tensors.find(prefix + name);
    if (it == ckpt.tensors.end()) throw std::runtime_error("checkpoint lacks tensor " + prefix + name);
    if (it->second.shape() != t.shape()) {
      throw std::runtime_error("checkpoint tensor " + prefix + name + " has shape " +
                               shape_string(it->second.shape()) + ", expected " + shape_string(t.shape()));
    }
    t = it->second;
  });
  return p;
}

}  // namespace laver
