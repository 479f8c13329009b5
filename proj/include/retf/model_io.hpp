#ifndef RETF_MODEL_IO_HPP
#define RETF_MODEL_IO_HPP

#include "retf/compression.hpp"
#include "retf/model.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <variant>
#include <vector>

namespace retf {

/// Raised for malformed config documents and model files.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

nlohmann::json config_to_json(const ModelConfig& cfg);

/// Strict parse: every required key present with the right type, unknown keys
/// rejected. Messages name the offending key.
ModelConfig config_from_json(const nlohmann::json& doc);

/// Reads a config document, or resolves a preset name when no such file exists.
ModelConfig load_config(const std::string& path_or_preset);

// Model container layout (all integers little-endian):
//   "RETF" | u32 version | [v2 only: u8 element type, 1 = int8]
//   | u32 config length | config JSON (UTF-8)
//   | payload in canonical tensor order
// v1 payload: every parameter as f64.
// v2 payload: per tensor, f64 scale then rows*cols int8 values.
inline constexpr std::uint32_t kFloatModelVersion = 1;
inline constexpr std::uint32_t kQuantizedModelVersion = 2;
inline constexpr std::uint8_t kInt8ElementTag = 1;

std::vector<std::uint8_t> encode_model(const ParamSet& p);
std::vector<std::uint8_t> encode_model(const QuantizedModel& q);

using LoadedModel = std::variant<ParamSet, QuantizedModel>;
LoadedModel decode_model(const std::vector<std::uint8_t>& bytes);

void save_model(const std::filesystem::path& path, const ParamSet& p);
void save_model(const std::filesystem::path& path, const QuantizedModel& q);
LoadedModel load_model(const std::filesystem::path& path);

/// Byte offset at which the payload starts.
std::size_t payload_offset(const std::vector<std::uint8_t>& bytes);

}  // namespace retf

#endif  // RETF_MODEL_IO_HPP
