#include "jdapt/serialize.hpp"

#include "jdapt/errors.hpp"
#include "jdapt/io.hpp"

namespace jdapt::serialize {

namespace {

constexpr const char* kFormatName = "jdapt";

template <class T>
T get_field(const json& j, const char* key) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw CorruptionError(std::string("field '") + key + "': " + e.what());
  }
}

}  // namespace

json matrix_to_json(const Matrix& m) {
  json j;
  j["shape"] = {m.rows(), m.cols()};
  j["data"] = std::vector<double>(m.data(), m.data() + m.size());
  return j;
}

Matrix matrix_from_json(const json& j) {
  const auto shape = get_field<std::vector<Eigen::Index>>(j, "shape");
  const auto data = get_field<std::vector<double>>(j, "data");
  if (shape.size() != 2 || shape[0] < 0 || shape[1] < 0 ||
      static_cast<std::size_t>(shape[0] * shape[1]) != data.size()) {
    throw CorruptionError("matrix shape does not match its data length");
  }
  Matrix m(shape[0], shape[1]);
  std::copy(data.begin(), data.end(), m.data());
  return m;
}

json vector_to_json(const Vector& v) {
  json j;
  j["shape"] = {v.size()};
  j["data"] = std::vector<double>(v.data(), v.data() + v.size());
  return j;
}

Vector vector_from_json(const json& j) {
  const auto shape = get_field<std::vector<Eigen::Index>>(j, "shape");
  const auto data = get_field<std::vector<double>>(j, "data");
  if (shape.size() != 1 || static_cast<std::size_t>(shape[0]) != data.size()) {
    throw CorruptionError("vector shape does not match its data length");
  }
  Vector v(shape[0]);
  std::copy(data.begin(), data.end(), v.data());
  return v;
}

json to_json(const neural::DenseNet& net) {
  json layers = json::array();
  for (const auto& l : net.layers()) {
    layers.push_back({{"activation", neural::to_string(l.activation)},
                      {"weight", matrix_to_json(l.weight)},
                      {"bias", vector_to_json(l.bias)}});
  }
  return {{"layers", layers}};
}

neural::DenseNet dense_from_json(const json& j) {
  std::vector<neural::DenseLayer> layers;
  try {
    for (const auto& l : j.at("layers")) {
      layers.push_back({matrix_from_json(l.at("weight")), vector_from_json(l.at("bias")),
                        neural::activation_from_string(l.at("activation").get<std::string>())});
    }
  } catch (const json::exception& e) {
    throw CorruptionError(std::string("dense network: ") + e.what());
  }
  return neural::DenseNet(std::move(layers));
}

json to_json(const neural::AttentionParams& p) {
  auto list = [](const std::vector<Matrix>& ms) {
    json a = json::array();
    for (const auto& m : ms) a.push_back(matrix_to_json(m));
    return a;
  };
  return {{"heads", p.heads},
          {"model_dim", p.model_dim},
          {"query", list(p.query)},
          {"key", list(p.key)},
          {"value", list(p.value)},
          {"output", matrix_to_json(p.output)}};
}

neural::AttentionParams attention_from_json(const json& j) {
  neural::AttentionParams p;
  p.heads = get_field<int>(j, "heads");
  p.model_dim = get_field<int>(j, "model_dim");
  try {
    for (const auto& m : j.at("query")) p.query.push_back(matrix_from_json(m));
    for (const auto& m : j.at("key")) p.key.push_back(matrix_from_json(m));
    for (const auto& m : j.at("value")) p.value.push_back(matrix_from_json(m));
    p.output = matrix_from_json(j.at("output"));
  } catch (const json::exception& e) {
    throw CorruptionError(std::string("attention parameters: ") + e.what());
  }
  p.validate();
  return p;
}

json to_json(const linalg::CoralMap& m) {
  return {{"transform", matrix_to_json(m.transform)},
          {"source_mean", vector_to_json(m.source_mean)},
          {"target_mean", vector_to_json(m.target_mean)},
          {"lambda", m.lambda},
          {"center_and_shift", m.center_and_shift}};
}

linalg::CoralMap coral_from_json(const json& j) {
  linalg::CoralMap m;
  try {
    m.transform = matrix_from_json(j.at("transform"));
    m.source_mean = vector_from_json(j.at("source_mean"));
    m.target_mean = vector_from_json(j.at("target_mean"));
  } catch (const json::exception& e) {
    throw CorruptionError(std::string("coral map: ") + e.what());
  }
  m.lambda = get_field<double>(j, "lambda");
  m.center_and_shift = get_field<bool>(j, "center_and_shift");
  m.validate();
  return m;
}

json to_json(const fusion::FusionModel& m) {
  return {{"attention", to_json(m.attention)}, {"frozen", m.frozen}, {"embed_dim", m.embed_dim}};
}

fusion::FusionModel fusion_from_json(const json& j) {
  fusion::FusionModel m;
  try {
    m.attention = attention_from_json(j.at("attention"));
  } catch (const json::exception& e) {
    throw CorruptionError(std::string("fusion model: ") + e.what());
  }
  m.frozen = get_field<bool>(j, "frozen");
  m.embed_dim = get_field<int>(j, "embed_dim");
  m.validate();
  return m;
}

std::string payload_checksum(int version, const json& payload) {
  return io::sha256_hex(std::to_string(version) + "\n" + payload.dump());
}

std::string make_container(const std::string& kind, const json& payload) {
  json doc;
  doc["format"] = kFormatName;
  doc["kind"] = kind;
  doc["version"] = kFormatVersion;
  doc["checksum"] = payload_checksum(kFormatVersion, payload);
  doc["payload"] = payload;
  return doc.dump() + "\n";
}

json open_container(const std::string& text, const std::string& kind) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw CorruptionError(std::string("container is not valid JSON: ") + e.what());
  }
  if (!doc.is_object() || !doc.contains("version") || !doc["version"].is_number_integer()) {
    throw CorruptionError("container has no integer version");
  }
  const int version = doc["version"].get<int>();
  if (version > kFormatVersion) {
    throw IncompatibleVersionError("container version " + std::to_string(version) +
                                   " is newer than supported version " +
                                   std::to_string(kFormatVersion));
  }
  if (version < 1) {
    throw IncompatibleVersionError("container version " + std::to_string(version) +
                                   " is not supported");
  }
  if (get_field<std::string>(doc, "format") != kFormatName) {
    throw CorruptionError("not a jdapt container");
  }
  if (get_field<std::string>(doc, "kind") != kind) {
    throw CorruptionError("container holds '" + doc["kind"].dump() + "', expected '" + kind + "'");
  }
  if (!doc.contains("payload")) {
    throw CorruptionError("container has no payload");
  }
  const auto expected = get_field<std::string>(doc, "checksum");
  if (payload_checksum(version, doc["payload"]) != expected) {
    throw CorruptionError("container checksum mismatch");
  }
  return doc["payload"];
}

void write_container(const std::filesystem::path& path, const std::string& kind,
                     const json& payload) {
  io::write_file(path, make_container(kind, payload));
}

json read_container(const std::filesystem::path& path, const std::string& kind) {
  return open_container(io::read_file(path), kind);
}

}  // namespace jdapt::serialize
