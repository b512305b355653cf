#include <doctest.h>

#include <algorithm>
#include <fstream>
#include <set>

#include "helpers.hpp"
#include "jdapt/errors.hpp"
#include "jdapt/ingest.hpp"

using namespace jdapt;
using namespace jdapt::ingest;

namespace {

void write_text(const std::filesystem::path& p, const std::string& s) {
  std::ofstream(p) << s;
}

std::string line(const std::string& id, int text_dim, std::vector<int> frame_dims,
                 const std::string& label = "safe") {
  auto vec = [](int n) {
    std::string s = "[";
    for (int i = 0; i < n; ++i) s += (i ? "," : "") + std::to_string(0.25 * (i + 1));
    return s + "]";
  };
  std::string frames = "[";
  for (std::size_t f = 0; f < frame_dims.size(); ++f) frames += (f ? "," : "") + vec(frame_dims[f]);
  frames += "]";
  return "{\"id\":\"" + id + "\",\"domain\":\"general\",\"label\":\"" + label +
         "\",\"text_embedding\":" + vec(text_dim) + ",\"frame_embeddings\":" + frames + "}\n";
}

Dataset labelled(int safe, int unsafe) {
  Dataset ds = testutil::random_dataset(safe + unsafe, 3, 1, 4);
  for (int i = 0; i < safe + unsafe; ++i) ds.records[i].label = i < safe ? Label::kSafe : Label::kUnsafe;
  return ds;
}

std::vector<std::string> ids(const Dataset& ds) {
  std::vector<std::string> out;
  for (const auto& r : ds.records) out.push_back(r.id);
  return out;
}

}  // namespace

TEST_CASE("empty file has no records") {
  testutil::TempDir dir("ingest");
  write_text(dir / "empty.ndjson", "");
  CHECK_THROWS_WITH_AS(load_records(dir / "empty.ndjson"), doctest::Contains("no records"),
                       ValidationError);
}

TEST_CASE("one record with d=4 and two frames loads") {
  testutil::TempDir dir("ingest");
  write_text(dir / "one.ndjson", line("a", 4, {4, 4}));
  const Dataset ds = load_records(dir / "one.ndjson", {.normalize = false});
  CHECK(ds.size() == 1);
  CHECK(ds.dim == 4);
  CHECK(ds.records[0].frames() == 2);
  CHECK(ds.records[0].text_embedding[3] == 1.0f);
}

TEST_CASE("a ragged frame names the offending record") {
  testutil::TempDir dir("ingest");
  write_text(dir / "bad.ndjson",
             line("r1", 4, {4}) + line("r2", 4, {4}) + line("r3", 4, {4, 5}) + line("r4", 4, {4}));
  CHECK_THROWS_WITH_AS(load_records(dir / "bad.ndjson"), doctest::Contains("r3"), ParseError);
  try {
    load_records(dir / "bad.ndjson");
  } catch (const ParseError& e) {
    CHECK(e.line() == 3);
  }
}

TEST_CASE("loader rejects malformed lines, non-finite values and duplicates") {
  testutil::TempDir dir("ingest");
  write_text(dir / "a.ndjson", line("x", 2, {2}) + "{not json\n");
  CHECK_THROWS_AS(load_records(dir / "a.ndjson"), ParseError);
  write_text(dir / "b.ndjson", line("x", 2, {2}) + line("x", 2, {2}));
  CHECK_THROWS_WITH_AS(load_records(dir / "b.ndjson"), doctest::Contains("duplicate"), ParseError);
  write_text(dir / "c.ndjson",
             "{\"id\":\"n\",\"domain\":\"general\",\"label\":\"safe\",\"text_embedding\":[1e999,1],"
             "\"frame_embeddings\":[[1,1]]}\n");
  CHECK_THROWS_AS(load_records(dir / "c.ndjson"), ParseError);
  write_text(dir / "d.ndjson",
             "{\"id\":\"n\",\"domain\":\"general\",\"label\":\"safe\",\"text_embedding\":[1,1],"
             "\"frame_embeddings\":[[1,1]],\"extra\":1}\n");
  CHECK_THROWS_AS(load_records(dir / "d.ndjson"), ParseError);
  write_text(dir / "e.ndjson",
             "{\"id\":\"n\",\"domain\":\"general\",\"label\":\"maybe\",\"text_embedding\":[1,1],"
             "\"frame_embeddings\":[[1,1]]}\n");
  CHECK_THROWS_AS(load_records(dir / "e.ndjson"), ParseError);
  write_text(dir / "f.ndjson", line("x", 2, {}));
  CHECK_THROWS_AS(load_records(dir / "f.ndjson"), ParseError);
  CHECK_THROWS_AS(load_records(dir / "missing.ndjson"), IoError);
}

TEST_CASE("l2_normalize examples") {
  Vector a(2);
  a << 3, 4;
  const Vector na = l2_normalize(a);
  CHECK(na(0) == doctest::Approx(0.6));
  CHECK(na(1) == doctest::Approx(0.8));
  Vector u = Vector::Zero(3);
  u(1) = 1.0;
  CHECK((l2_normalize(u) - u).norm() == 0.0);
  std::vector<float> ones{1, 1, 1, 1};
  for (float v : l2_normalize(std::span<const float>(ones))) CHECK(v == doctest::Approx(0.5));
  CHECK_THROWS_AS(l2_normalize(Vector(Vector::Zero(3))), ValidationError);
}

TEST_CASE("normalized load gives unit vectors per modality") {
  testutil::TempDir dir("ingest");
  Dataset ds = testutil::random_dataset(20, 6, 3, 8);
  write_records(ds, dir / "r.ndjson");
  const Dataset n = load_records(dir / "r.ndjson");
  for (const auto& r : n.records) {
    CHECK(text_vector(r).norm() == doctest::Approx(1.0).epsilon(1e-5));
    for (const auto& f : r.frame_embeddings) {
      double s = 0;
      for (float v : f) s += static_cast<double>(v) * v;
      CHECK(std::sqrt(s) == doctest::Approx(1.0).epsilon(1e-5));
    }
  }
}

TEST_CASE("write then load round-trips bit-exactly") {
  testutil::TempDir dir("ingest");
  Dataset ds = testutil::random_dataset(30, 5, 2, 9);
  ds.records[4].meta["source"] = "a \"quoted\" value";
  ds.records[7].label = Label::kUnknown;
  ds.records[7].domain = Domain::kTarget;
  ds.records[2].text_embedding[0] = 1.17549435e-38f;
  write_records(ds, dir / "rt.ndjson");
  const Dataset back = load_records(dir / "rt.ndjson", {.normalize = false});
  REQUIRE(back.size() == ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto &a = ds.records[i], &b = back.records[i];
    CHECK(a.id == b.id);
    CHECK(a.label == b.label);
    CHECK(a.domain == b.domain);
    CHECK(a.meta == b.meta);
    CHECK(a.text_embedding == b.text_embedding);
    CHECK(a.frame_embeddings == b.frame_embeddings);
  }
}

TEST_CASE("balance examples") {
  const Dataset even = labelled(10, 10);
  CHECK(ids(balance(even, 1)) == ids(even));

  const Dataset skewed = labelled(100, 40);
  const Dataset b = balance(skewed, 3);
  const auto n_unsafe = std::count_if(b.records.begin(), b.records.end(),
                                      [](const auto& r) { return r.label == Label::kUnsafe; });
  CHECK(b.size() == 80);
  CHECK(n_unsafe == 40);
  CHECK(ids(balance(skewed, 3)) == ids(b));
  CHECK(ids(balance(skewed, 4)) != ids(b));

  // survivors keep their order and come from the input
  const auto in = ids(skewed), out = ids(b);
  std::size_t pos = 0;
  for (const auto& id : out) {
    while (pos < in.size() && in[pos] != id) ++pos;
    CHECK(pos < in.size());
  }
}

TEST_CASE("balance drops unknown labels and needs both classes") {
  Dataset ds = labelled(5, 3);
  ds.records[0].label = Label::kUnknown;
  CHECK(balance(ds, 0).size() == 6);
  CHECK_THROWS_AS(balance(labelled(5, 0), 0), BalanceError);
}

TEST_CASE("split examples") {
  const Dataset ds = labelled(6, 4);
  std::vector<double> whole{1.0};
  const auto one = split(ds, whole, 0);
  REQUIRE(one.size() == 1);
  CHECK(one[0].size() == 10);

  std::vector<double> halves{0.5, 0.5};
  const auto parts = split(ds, halves, 5);
  REQUIRE(parts.size() == 2);
  CHECK(parts[0].size() == 5);
  CHECK(parts[1].size() == 5);
  std::multiset<std::string> all;
  for (const auto& p : parts)
    for (const auto& id : ids(p)) all.insert(id);
  const auto orig = ids(ds);
  CHECK(all == std::multiset<std::string>(orig.begin(), orig.end()));

  const auto again = split(ds, halves, 5);
  CHECK(ids(again[0]) == ids(parts[0]));
  CHECK(ids(again[1]) == ids(parts[1]));
}

TEST_CASE("split sizes stay within one of n times fraction") {
  const Dataset ds = labelled(60, 43);
  std::vector<double> f{0.2, 0.3, 0.5};
  const auto parts = split(ds, f, 2);
  std::size_t total = 0;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    CHECK(std::abs(static_cast<double>(parts[i].size()) - 103 * f[i]) < 1.0);
    total += parts[i].size();
  }
  CHECK(total == 103);
}

TEST_CASE("split rejects bad fractions") {
  const Dataset ds = labelled(3, 3);
  std::vector<double> neg{1.5, -0.5}, shortf{0.5, 0.4}, none;
  CHECK_THROWS_AS(split(ds, neg, 0), ValidationError);
  CHECK_THROWS_AS(split(ds, shortf, 0), ValidationError);
  CHECK_THROWS_AS(split(ds, none, 0), ValidationError);
}

TEST_CASE("pooled frames is the frame mean") {
  const auto r = testutil::make_record("p", Label::kSafe, {0, 0}, {{1, 2}, {3, -2}});
  const Vector p = pooled_frames(r);
  CHECK(p(0) == 2.0);
  CHECK(p(1) == 0.0);
}
