#include "jdapt/ingest.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <unordered_set>

#include <json.hpp>

#include "jdapt/errors.hpp"
#include "jdapt/io.hpp"

namespace jdapt {

using nlohmann::json;

const char* to_string(Domain d) { return d == Domain::kGeneral ? "general" : "target"; }

const char* to_string(Label l) {
  switch (l) {
    case Label::kSafe:
      return "safe";
    case Label::kUnsafe:
      return "unsafe";
    case Label::kUnknown:
      return "unknown";
  }
  return "unknown";
}

Domain domain_from_string(const std::string& s) {
  if (s == "general") return Domain::kGeneral;
  if (s == "target") return Domain::kTarget;
  throw ValidationError("unknown domain '" + s + "'");
}

Label label_from_string(const std::string& s) {
  if (s == "safe") return Label::kSafe;
  if (s == "unsafe") return Label::kUnsafe;
  if (s == "unknown") return Label::kUnknown;
  throw ValidationError("unknown label '" + s + "'");
}

namespace ingest {

namespace {

std::string describe(const EmbeddingRecord& rec) { return "record '" + rec.id + "'"; }

std::vector<float> parse_vector(const json& j, const char* field, std::size_t line_no) {
  if (!j.is_array()) {
    throw ParseError(std::string(field) + " must be an array of numbers", line_no);
  }
  std::vector<float> out;
  out.reserve(j.size());
  for (const auto& v : j) {
    if (!v.is_number()) {
      throw ParseError(std::string(field) + " contains a non-number", line_no);
    }
    const double x = v.get<double>();
    const auto f = static_cast<float>(x);
    if (!std::isfinite(x) || !std::isfinite(f)) {
      throw ParseError(std::string(field) + " contains a non-finite value", line_no);
    }
    out.push_back(f);
  }
  return out;
}

void append_floats(std::string& out, std::span<const float> values) {
  out.push_back('[');
  char buf[32];
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i > 0) out.push_back(',');
    const auto res = std::to_chars(buf, buf + sizeof(buf), values[i]);
    out.append(buf, res.ptr);
  }
  out.push_back(']');
}

}  // namespace

void validate_record(const EmbeddingRecord& rec, std::size_t expected_dim) {
  if (rec.id.empty()) {
    throw ValidationError("record id must be non-empty");
  }
  if (rec.text_embedding.empty()) {
    throw ShapeError(describe(rec) + ": empty text_embedding");
  }
  if (expected_dim != 0 && rec.text_embedding.size() != expected_dim) {
    throw ShapeError(describe(rec) + ": text_embedding has dim " +
                     std::to_string(rec.text_embedding.size()) + ", expected " +
                     std::to_string(expected_dim));
  }
  const std::size_t d = rec.text_embedding.size();
  if (rec.frame_embeddings.empty()) {
    throw ShapeError(describe(rec) + ": needs at least one frame embedding");
  }
  for (std::size_t f = 0; f < rec.frame_embeddings.size(); ++f) {
    if (rec.frame_embeddings[f].size() != d) {
      throw ShapeError(describe(rec) + ": frame " + std::to_string(f) + " has dim " +
                       std::to_string(rec.frame_embeddings[f].size()) + ", expected " +
                       std::to_string(d));
    }
  }
  auto finite = [](const std::vector<float>& v) {
    return std::all_of(v.begin(), v.end(), [](float x) { return std::isfinite(x); });
  };
  if (!finite(rec.text_embedding) ||
      !std::all_of(rec.frame_embeddings.begin(), rec.frame_embeddings.end(), finite)) {
    throw ValidationError(describe(rec) + ": non-finite embedding entry");
  }
}

void validate(const Dataset& ds) {
  if (ds.records.empty()) {
    throw ValidationError("no records");
  }
  std::unordered_set<std::string> seen;
  for (const auto& rec : ds.records) {
    validate_record(rec, ds.dim);
    if (!seen.insert(rec.id).second) {
      throw ValidationError("duplicate record id '" + rec.id + "'");
    }
  }
}

EmbeddingRecord parse_record(const std::string& line, std::size_t line_no) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::exception& e) {
    throw ParseError(std::string("malformed JSON: ") + e.what(), line_no);
  }
  if (!j.is_object()) {
    throw ParseError("record must be a JSON object", line_no);
  }
  static const std::unordered_set<std::string> kKeys = {
      "id", "domain", "label", "text_embedding", "frame_embeddings", "meta"};
  for (const auto& [key, _] : j.items()) {
    if (!kKeys.contains(key)) {
      throw ParseError("unexpected key '" + key + "'", line_no);
    }
  }
  for (const char* key : {"id", "domain", "label", "text_embedding", "frame_embeddings"}) {
    if (!j.contains(key)) {
      throw ParseError(std::string("missing key '") + key + "'", line_no);
    }
  }
  if (!j["id"].is_string() || !j["domain"].is_string() || !j["label"].is_string()) {
    throw ParseError("id, domain and label must be strings", line_no);
  }
  EmbeddingRecord rec;
  rec.id = j["id"].get<std::string>();
  try {
    rec.domain = domain_from_string(j["domain"].get<std::string>());
    rec.label = label_from_string(j["label"].get<std::string>());
  } catch (const ValidationError& e) {
    throw ParseError(e.what(), line_no);
  }
  rec.text_embedding = parse_vector(j["text_embedding"], "text_embedding", line_no);
  const auto& frames = j["frame_embeddings"];
  if (!frames.is_array()) {
    throw ParseError("frame_embeddings must be an array of arrays", line_no);
  }
  for (const auto& f : frames) {
    rec.frame_embeddings.push_back(parse_vector(f, "frame_embeddings", line_no));
  }
  if (j.contains("meta")) {
    const auto& meta = j["meta"];
    if (!meta.is_object()) {
      throw ParseError("meta must be an object of strings", line_no);
    }
    for (const auto& [k, v] : meta.items()) {
      if (!v.is_string()) {
        throw ParseError("meta values must be strings", line_no);
      }
      rec.meta[k] = v.get<std::string>();
    }
  }
  return rec;
}

std::string format_record(const EmbeddingRecord& rec) {
  std::string out;
  out.reserve(32 + 12 * rec.text_embedding.size() * (1 + rec.frame_embeddings.size()));
  out += "{\"id\":";
  out += json(rec.id).dump();
  out += ",\"domain\":\"";
  out += to_string(rec.domain);
  out += "\",\"label\":\"";
  out += to_string(rec.label);
  out += "\",\"text_embedding\":";
  append_floats(out, rec.text_embedding);
  out += ",\"frame_embeddings\":[";
  for (std::size_t f = 0; f < rec.frame_embeddings.size(); ++f) {
    if (f > 0) out.push_back(',');
    append_floats(out, rec.frame_embeddings[f]);
  }
  out.push_back(']');
  if (!rec.meta.empty()) {
    out += ",\"meta\":";
    out += json(rec.meta).dump();
  }
  out.push_back('}');
  return out;
}

Dataset load_records(const std::filesystem::path& path, const LoadOptions& opts) {
  std::ifstream in(path);
  if (!in) {
    throw IoError("cannot open " + path.string());
  }
  Dataset ds;
  ds.provenance.push_back(path.string());
  std::unordered_set<std::string> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    EmbeddingRecord rec = parse_record(line, line_no);
    if (ds.dim == 0) ds.dim = rec.text_embedding.size();
    try {
      validate_record(rec, ds.dim);
    } catch (const ValidationError& e) {
      throw ParseError(e.what(), line_no);
    }
    if (!seen.insert(rec.id).second) {
      throw ParseError("duplicate record id '" + rec.id + "'", line_no);
    }
    ds.records.push_back(std::move(rec));
  }
  if (ds.records.empty()) {
    throw ValidationError("no records in " + path.string());
  }
  if (opts.normalize) {
    normalize_in_place(ds);
  }
  return ds;
}

void write_records(const Dataset& ds, const std::filesystem::path& path) {
  validate(ds);
  std::string out;
  for (const auto& rec : ds.records) {
    out += format_record(rec);
    out.push_back('\n');
  }
  io::write_file(path, out);
}

Vector l2_normalize(const Vector& v) {
  const double n = v.norm();
  if (!(n > 0.0) || !std::isfinite(n)) {
    throw ValidationError("cannot normalize a zero or non-finite vector");
  }
  return v / n;
}

std::vector<float> l2_normalize(std::span<const float> v) {
  double sq = 0.0;
  for (const float x : v) sq += static_cast<double>(x) * x;
  const double n = std::sqrt(sq);
  if (!(n > 0.0) || !std::isfinite(n)) {
    throw ValidationError("cannot normalize a zero or non-finite vector");
  }
  std::vector<float> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = static_cast<float>(v[i] / n);
  }
  return out;
}

void normalize_in_place(Dataset& ds) {
  for (auto& rec : ds.records) {
    try {
      rec.text_embedding = l2_normalize(rec.text_embedding);
      for (auto& f : rec.frame_embeddings) f = l2_normalize(f);
    } catch (const ValidationError& e) {
      throw ValidationError(describe(rec) + ": " + e.what());
    }
  }
}

Dataset balance(const Dataset& ds, std::uint64_t seed) {
  std::vector<std::size_t> safe, unsafe;
  for (std::size_t i = 0; i < ds.records.size(); ++i) {
    if (ds.records[i].label == Label::kSafe) safe.push_back(i);
    if (ds.records[i].label == Label::kUnsafe) unsafe.push_back(i);
  }
  if (safe.empty() || unsafe.empty()) {
    throw BalanceError("balance needs both safe and unsafe records (safe=" +
                       std::to_string(safe.size()) + ", unsafe=" + std::to_string(unsafe.size()) +
                       ")");
  }
  auto& major = safe.size() >= unsafe.size() ? safe : unsafe;
  const std::size_t keep = std::min(safe.size(), unsafe.size());
  std::mt19937_64 rng(seed);
  std::shuffle(major.begin(), major.end(), rng);
  major.resize(keep);

  std::vector<std::size_t> survivors;
  survivors.reserve(2 * keep);
  survivors.insert(survivors.end(), safe.begin(), safe.end());
  survivors.insert(survivors.end(), unsafe.begin(), unsafe.end());
  std::sort(survivors.begin(), survivors.end());

  Dataset out;
  out.dim = ds.dim;
  out.provenance = ds.provenance;
  out.records.reserve(survivors.size());
  for (const auto i : survivors) out.records.push_back(ds.records[i]);
  return out;
}

std::vector<Dataset> split(const Dataset& ds, std::span<const double> fractions,
                           std::uint64_t seed) {
  if (fractions.empty()) {
    throw ValidationError("split: no fractions given");
  }
  double total = 0.0;
  for (const double f : fractions) {
    if (!(f > 0.0)) {
      throw ValidationError("split: fractions must be positive");
    }
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-9) {
    throw ValidationError("split: fractions must sum to 1");
  }
  const std::size_t n = ds.records.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  std::vector<Dataset> parts;
  double cum = 0.0;
  std::size_t begin = 0;
  for (std::size_t k = 0; k < fractions.size(); ++k) {
    cum += fractions[k];
    const std::size_t end = k + 1 == fractions.size()
                                ? n
                                : std::min(n, static_cast<std::size_t>(
                                                  std::floor(static_cast<double>(n) * cum + 0.5)));
    Dataset part;
    part.dim = ds.dim;
    part.provenance = ds.provenance;
    for (std::size_t i = begin; i < std::max(begin, end); ++i) {
      part.records.push_back(ds.records[order[i]]);
    }
    begin = std::max(begin, end);
    parts.push_back(std::move(part));
  }
  return parts;
}

Vector pooled_frames(const EmbeddingRecord& rec) {
  const auto d = static_cast<Eigen::Index>(rec.dim());
  Vector mean = Vector::Zero(d);
  for (const auto& f : rec.frame_embeddings) {
    for (Eigen::Index i = 0; i < d; ++i) mean(i) += f[static_cast<std::size_t>(i)];
  }
  return mean / static_cast<double>(rec.frame_embeddings.size());
}

Vector text_vector(const EmbeddingRecord& rec) {
  Vector v(static_cast<Eigen::Index>(rec.dim()));
  for (std::size_t i = 0; i < rec.dim(); ++i) v(static_cast<Eigen::Index>(i)) = rec.text_embedding[i];
  return v;
}

}  // namespace ingest
}  // namespace jdapt
