#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "jdapt/fusion.hpp"
#include "jdapt/linalg.hpp"
#include "jdapt/neural.hpp"

namespace jdapt::serialize {

using nlohmann::json;

/// Current container version. Readers reject anything newer.
inline constexpr int kFormatVersion = 1;

/// {"shape": [rows, cols], "data": [...]} in row-major order.
json matrix_to_json(const Matrix& m);
Matrix matrix_from_json(const json& j);
json vector_to_json(const Vector& v);
Vector vector_from_json(const json& j);

json to_json(const neural::DenseNet& net);
neural::DenseNet dense_from_json(const json& j);
json to_json(const neural::AttentionParams& p);
neural::AttentionParams attention_from_json(const json& j);
json to_json(const linalg::CoralMap& m);
linalg::CoralMap coral_from_json(const json& j);
json to_json(const fusion::FusionModel& m);
fusion::FusionModel fusion_from_json(const json& j);

/// Checksum over the version and the canonical dump of the payload.
std::string payload_checksum(int version, const json& payload);

/// Wraps a payload as {"format", "kind", "version", "checksum", "payload"}.
std::string make_container(const std::string& kind, const json& payload);

/// Parses and verifies a container. Throws IncompatibleVersionError for a
/// newer version and CorruptionError for unparsable input, a wrong kind or a
/// checksum mismatch.
json open_container(const std::string& text, const std::string& kind);

void write_container(const std::filesystem::path& path, const std::string& kind,
                     const json& payload);
json read_container(const std::filesystem::path& path, const std::string& kind);

}  // namespace jdapt::serialize
