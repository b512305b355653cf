#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "jdapt/linalg.hpp"

namespace jdapt {

enum class Domain { kGeneral, kTarget };
enum class Label { kSafe, kUnsafe, kUnknown };

const char* to_string(Domain d);
const char* to_string(Label l);
Domain domain_from_string(const std::string& s);
Label label_from_string(const std::string& s);

/// One sample: a text embedding plus one embedding per image frame, all in
/// the same d-dimensional space.
struct EmbeddingRecord {
  std::string id;
  Domain domain = Domain::kGeneral;
  Label label = Label::kUnknown;
  std::vector<float> text_embedding;
  std::vector<std::vector<float>> frame_embeddings;
  std::map<std::string, std::string> meta;

  std::size_t dim() const { return text_embedding.size(); }
  std::size_t frames() const { return frame_embeddings.size(); }
};

struct Dataset {
  std::vector<EmbeddingRecord> records;
  std::size_t dim = 0;
  std::vector<std::string> provenance;

  std::size_t size() const { return records.size(); }
  bool empty() const { return records.empty(); }
};

namespace ingest {

/// Checks dims, finiteness, non-empty ids and id uniqueness.
void validate(const Dataset& ds);
void validate_record(const EmbeddingRecord& rec, std::size_t expected_dim);

/// Parses one NDJSON line. `line_no` is used in error messages only.
EmbeddingRecord parse_record(const std::string& line, std::size_t line_no);
std::string format_record(const EmbeddingRecord& rec);

struct LoadOptions {
  /// L2-normalize the text vector and each frame vector independently.
  bool normalize = true;
};

Dataset load_records(const std::filesystem::path& path, const LoadOptions& opts = {});
void write_records(const Dataset& ds, const std::filesystem::path& path);

Vector l2_normalize(const Vector& v);
std::vector<float> l2_normalize(std::span<const float> v);
void normalize_in_place(Dataset& ds);

/// Undersamples the majority of {safe, unsafe} to the minority count; records
/// with an unknown label are dropped. Survivors keep their relative order.
Dataset balance(const Dataset& ds, std::uint64_t seed);

/// Seeded shuffle, then contiguous partition by the given fractions.
std::vector<Dataset> split(const Dataset& ds, std::span<const double> fractions,
                           std::uint64_t seed);

/// Frame mean of a record in double precision.
Vector pooled_frames(const EmbeddingRecord& rec);
Vector text_vector(const EmbeddingRecord& rec);

}  // namespace ingest
}  // namespace jdapt
