#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <type_traits>
#include <vector>

#include "json.hpp"
#include "latte/error.hpp"
#include "latte/model.hpp"

namespace latte {

// Layout (little-endian):
//   "LATTECKP" | u32 version | u32 header length | header JSON
//   | u32 tensor count | per tensor: u32 name length, name, u32 rank,
//     u64 extents..., u8 dtype (0 = f32), raw f32 values
inline constexpr char kCheckpointMagic[8] = {'L', 'A', 'T', 'T', 'E', 'C', 'K', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointMetadata {
  std::size_t epoch = 0;
  double best_val_mse = 0.0;
  std::string encoder = "default";
};

struct LoadedCheckpoint {
  ModelConfig config;
  CheckpointMetadata metadata;
  std::map<std::string, std::pair<Shape, std::vector<float>>> tensors;
};

namespace detail {

template <typename U>
void write_pod(std::ostream& os, U v) {
  static_assert(std::is_trivially_copyable_v<U>);
  os.write(reinterpret_cast<const char*>(&v), sizeof(U));
}

template <typename U>
U read_pod(std::istream& is, const std::string& path) {
  U v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(U))) throw IoError("truncated checkpoint '" + path + "'");
  return v;
}

inline std::string read_bytes(std::istream& is, std::size_t n, const std::string& path) {
  std::string s(n, '\0');
  if (n > 0 && !is.read(s.data(), static_cast<std::streamsize>(n))) {
    throw IoError("truncated checkpoint '" + path + "'");
  }
  return s;
}

}  // namespace detail

template <typename T>
void save_checkpoint(const LatteModel<T>& model, const std::string& path, const CheckpointMetadata& meta) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write checkpoint '" + path + "'");
  nlohmann::json header = {{"format_version", kCheckpointVersion},
                           {"model_config", model.config().to_json()},
                           {"vocabulary", Vocabulary::builtin().fingerprint()},
                           {"encoder", meta.encoder},
                           {"epoch", meta.epoch},
                           {"best_val_mse", meta.best_val_mse}};
  const std::string text = header.dump();
  os.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::write_pod<std::uint32_t>(os, kCheckpointVersion);
  detail::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(text.size()));
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  const auto& params = model.parameters();
  detail::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    detail::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(p.name.size()));
    os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    detail::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(p.tensor.rank()));
    for (auto e : p.tensor.shape()) detail::write_pod<std::uint64_t>(os, e);
    detail::write_pod<std::uint8_t>(os, 0);
    for (T v : p.tensor.data()) detail::write_pod<float>(os, static_cast<float>(v));
  }
  if (!os) throw IoError("failed writing checkpoint '" + path + "'");
}

inline LoadedCheckpoint read_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint '" + path + "'");
  if (detail::read_bytes(is, sizeof(kCheckpointMagic), path) != std::string(kCheckpointMagic, sizeof(kCheckpointMagic))) {
    throw SchemaError("'" + path + "' is not a checkpoint");
  }
  const auto version = detail::read_pod<std::uint32_t>(is, path);
  if (version != kCheckpointVersion) {
    throw SchemaError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto header_len = detail::read_pod<std::uint32_t>(is, path);
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(detail::read_bytes(is, header_len, path));
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("corrupt checkpoint header: ") + e.what());
  }
  LoadedCheckpoint ck;
  ck.config = ModelConfig::from_json(header.at("model_config"));
  if (header.value("vocabulary", std::uint64_t{0}) != Vocabulary::builtin().fingerprint()) {
    throw SchemaError("checkpoint was trained with a different vocabulary");
  }
  ck.metadata.epoch = header.value("epoch", std::size_t{0});
  ck.metadata.best_val_mse = header.value("best_val_mse", 0.0);
  ck.metadata.encoder = header.value("encoder", std::string("default"));
  const auto count = detail::read_pod<std::uint32_t>(is, path);
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name = detail::read_bytes(is, detail::read_pod<std::uint32_t>(is, path), path);
    const auto rank = detail::read_pod<std::uint32_t>(is, path);
    Shape shape(rank);
    for (auto& e : shape) e = static_cast<std::size_t>(detail::read_pod<std::uint64_t>(is, path));
    if (detail::read_pod<std::uint8_t>(is, path) != 0) throw SchemaError("unsupported dtype for '" + name + "'");
    std::vector<float> values(shape_numel(shape));
    if (!values.empty() &&
        !is.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(float)))) {
      throw IoError("truncated checkpoint '" + path + "'");
    }
    ck.tensors.emplace(name, std::make_pair(std::move(shape), std::move(values)));
  }
  return ck;
}

/// Copies checkpoint tensors into a model, validating every name and shape.
template <typename T>
void load_parameters(LatteModel<T>& model, const LoadedCheckpoint& ck) {
  if (!(ck.config == model.config())) throw SchemaError("checkpoint config does not match the model");
  auto& params = model.parameters();
  if (ck.tensors.size() != params.size()) {
    throw SchemaError("checkpoint holds " + std::to_string(ck.tensors.size()) + " tensors, model expects " +
                      std::to_string(params.size()));
  }
  for (auto& p : params) {
    const auto it = ck.tensors.find(p.name);
    if (it == ck.tensors.end()) throw SchemaError("checkpoint is missing parameter '" + p.name + "'");
    if (it->second.first != p.tensor.shape()) {
      throw SchemaError("parameter '" + p.name + "' has shape " + shape_str(it->second.first) + ", expected " +
                        shape_str(p.tensor.shape()));
    }
    auto dst = p.tensor.data();
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] = static_cast<T>(it->second.second[k]);
  }
}

template <typename T = float>
LatteModel<T> load_model(const std::string& path, std::optional<TextEncoder> encoder = std::nullopt,
                         CheckpointMetadata* meta = nullptr) {
  const auto ck = read_checkpoint(path);
  TextEncoder enc = encoder ? std::move(*encoder) : TextEncoder::from_spec(ck.metadata.encoder);
  LatteModel<T> model(ck.config, std::move(enc));
  load_parameters(model, ck);
  if (meta) *meta = ck.metadata;
  return model;
}

}  // namespace latte
