// Acceptance gate: one line per criterion, nonzero exit if any fails.

#include <fcntl.h>
#include <netinet/in.h>
#include <arpa/inet.h>
#include <signal.h>
#include <sys/socket.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "jdapt/config.hpp"
#include "jdapt/errors.hpp"
#include "jdapt/gradcheck.hpp"
#include "jdapt/ingest.hpp"
#include "jdapt/io.hpp"
#include "jdapt/linalg.hpp"
#include "jdapt/pipeline.hpp"
#include "jdapt/serve.hpp"
#include "jdapt/synth.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace jdapt;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double v, int prec = 4) {
  std::ostringstream o;
  o.precision(prec);
  o << v;
  return o.str();
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() /
                     ("jdapt_acceptance_" + std::to_string(::getpid())) / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// Covariance by explicit double loops, kept separate from the library.
Matrix naive_covariance(const Matrix& x) {
  const auto n = x.rows();
  const auto d = x.cols();
  std::vector<double> mean(static_cast<std::size_t>(d), 0.0);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < d; ++j) mean[static_cast<std::size_t>(j)] += x(i, j);
  for (auto& m : mean) m /= static_cast<double>(n);
  Matrix c = Matrix::Zero(d, d);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index a = 0; a < d; ++a)
      for (Eigen::Index b = a; b < d; ++b)
        c(a, b) += (x(i, a) - mean[static_cast<std::size_t>(a)]) *
                   (x(i, b) - mean[static_cast<std::size_t>(b)]);
  for (Eigen::Index a = 0; a < d; ++a)
    for (Eigen::Index b = a; b < d; ++b) {
      c(a, b) /= static_cast<double>(n - 1);
      c(b, a) = c(a, b);
    }
  return c;
}

double naive_rel_frobenius(const Matrix& a, const Matrix& b) {
  double num = 0.0, den = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    num += (a.data()[i] - b.data()[i]) * (a.data()[i] - b.data()[i]);
    den += b.data()[i] * b.data()[i];
  }
  return std::sqrt(num / den);
}

// Gaussian sample with covariance Q diag(s) Q^T, s log-uniform in [lo, hi].
Matrix anisotropic_sample(Eigen::Index n, Eigen::Index d, double lo, double hi, double shift,
                          std::mt19937_64& rng) {
  std::normal_distribution<double> nd(0.0, 1.0);
  std::uniform_real_distribution<double> u(std::log(lo), std::log(hi));
  Matrix g(d, d);
  for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = nd(rng);
  const Eigen::MatrixXd q = Eigen::HouseholderQR<Eigen::MatrixXd>(g).householderQ();
  Vector scale(d);
  for (Eigen::Index i = 0; i < d; ++i) scale(i) = std::sqrt(std::exp(u(rng)));
  Matrix z(n, d);
  for (Eigen::Index i = 0; i < z.size(); ++i) z.data()[i] = nd(rng);
  Matrix x = z * scale.asDiagonal() * q.transpose();
  x.array() += shift;
  return x;
}

Outcome criterion_coral() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(2024);
  const Eigen::Index n = 5000, d = 48;
  const Matrix source = anisotropic_sample(n, d, 20.0, 400.0, 3.0, rng);
  const Matrix target = anisotropic_sample(n, d, 20.0, 400.0, -5.0, rng);
  const Matrix ct = naive_covariance(target);

  linalg::CoralOptions exact;
  exact.lambda = 0.0;
  const double err0 =
      naive_rel_frobenius(naive_covariance(linalg::apply_coral(linalg::fit_coral(source, target, exact), source)), ct);
  linalg::CoralOptions reg;
  reg.lambda = 1.0;
  const double err1 =
      naive_rel_frobenius(naive_covariance(linalg::apply_coral(linalg::fit_coral(source, target, reg), source)), ct);
  const double secs = seconds_since(t0);
  return {err0 < 1e-6 && err1 < 5e-2 && secs < 5.0,
          "lambda=0 err " + fmt(err0, 3) + " (<1e-6), lambda=1 err " + fmt(err1, 3) +
              " (<5e-2), " + fmt(secs, 3) + " s (<5)"};
}

Outcome criterion_gradcheck() {
  const auto t0 = Clock::now();
  const auto checks = gradcheck::check_all({}, 0, {});
  bool ok = checks.size() == 3;
  std::string detail;
  for (const auto& c : checks) {
    ok = ok && c.result.max_relative_error < 1e-4 && c.result.checked > 0;
    detail += c.name + " " + fmt(c.result.max_relative_error, 3) + ", ";
  }
  const double secs = seconds_since(t0);
  ok = ok && secs < 60.0;
  return {ok, detail + "tolerance 1e-4, " + fmt(secs, 3) + " s (<60)"};
}

// Writes a scenario to disk and returns a config pointing at it.
config::PipelineConfig scenario_config(const synth::SynthScenario& sc, const fs::path& dir,
                                       detector::Condition cond) {
  const auto data = synth::generate(sc);
  ingest::write_records(data.general, dir / "general.ndjson");
  ingest::write_records(data.target_benign, dir / "target_benign.ndjson");
  ingest::write_records(data.target_test, dir / "target_test.ndjson");
  config::PipelineConfig cfg;
  cfg.paths = {dir / "general.ndjson", dir / "target_benign.ndjson", dir / "target_test.ndjson",
               dir / (std::string("artifacts_") + detector::to_string(cond))};
  cfg.normalize = false;
  cfg.condition = cond;
  cfg.reseed(sc.seed);
  return cfg;
}

double run_accuracy(config::PipelineConfig cfg, const std::string& tag = "") {
  if (!tag.empty()) cfg.paths.artifacts += "_" + tag;
  pipeline::Runner run(cfg);
  return run.run_all().report.accuracy;
}

Outcome criteria_covariate_shift(Outcome& h1) {
  const auto t0 = Clock::now();
  auto sc = synth::default_scenario(synth::ScenarioKind::kCovariateShift, 11, 4.0);
  sc.d = 16;
  sc.m = 2;
  sc.n_general = 4000;
  sc.n_target_test = 1000;
  const fs::path dir = scratch("covariate_shift");
  const auto cfg_concat = scenario_config(sc, dir, detector::Condition::kConcat);
  const double concat = run_accuracy(cfg_concat);
  auto cfg_full = cfg_concat;
  cfg_full.condition = detector::Condition::kFull;
  cfg_full.paths.artifacts = dir / "artifacts_full";
  const double full = run_accuracy(cfg_full);
  const double secs = seconds_since(t0);
  h1 = {concat <= 0.70, "concat accuracy " + fmt(concat) + " (<=0.70)"};
  return {full >= 0.90 && full >= concat + 0.15 && secs < 600.0,
          "full accuracy " + fmt(full) + " (>=0.90), gap over concat " + fmt(full - concat) +
              " (>=0.15), " + fmt(secs, 3) + " s (<600)"};
}

Outcome criterion_interaction() {
  auto sc = synth::default_scenario(synth::ScenarioKind::kInteractionLabel, 12);
  sc.d = 16;
  const fs::path dir = scratch("interaction_label");
  auto probe = scenario_config(sc, dir, detector::Condition::kConcat);
  probe.detector.hidden.clear();
  const double linear = run_accuracy(probe);
  auto fused = probe;
  fused.condition = detector::Condition::kFusionOnly;
  fused.detector.hidden = {256};
  fused.paths.artifacts = dir / "artifacts_fusion_only";
  const double mlp = run_accuracy(fused);
  return {linear <= 0.60 && mlp >= 0.75 && mlp - linear >= 0.15,
          "linear probe on concat " + fmt(linear) + " (<=0.60), fusion_only " + fmt(mlp) +
              " (>=0.75), gap " + fmt(mlp - linear) + " (>=0.15)"};
}

Outcome criterion_weighting() {
  auto sc = synth::default_scenario(synth::ScenarioKind::kConflictingConcept, 13);
  sc.flip_fraction = 0.3;
  sc.displacement = 6.0;
  const fs::path dir = scratch("conflicting_concept");
  auto weighted = scenario_config(sc, dir, detector::Condition::kFull);
  pipeline::Runner run(weighted);
  const double acc_w = run.run_all().report.accuracy;
  auto unit = weighted;
  unit.force_unit_weights = true;
  const double acc_u = run_accuracy(unit, "unit");

  double flipped_sum = 0.0, aligned_sum = 0.0;
  std::size_t flipped_n = 0, aligned_n = 0;
  const auto lookup = run.weights().as_map();
  for (const auto& rec : run.general().records) {
    const double w = lookup.at(rec.id);
    if (rec.meta.count("flipped")) {
      flipped_sum += w;
      ++flipped_n;
    } else {
      aligned_sum += w;
      ++aligned_n;
    }
  }
  const double flipped = flipped_sum / static_cast<double>(std::max<std::size_t>(1, flipped_n));
  const double aligned = aligned_sum / static_cast<double>(std::max<std::size_t>(1, aligned_n));
  return {flipped_n > 0 && acc_w - acc_u >= 0.10 && flipped < 0.5 * aligned,
          "weighted " + fmt(acc_w) + " vs unit weights " + fmt(acc_u) + " (gap >=0.10), mean weight flipped " +
              fmt(flipped, 3) + " vs aligned " + fmt(aligned, 3) + " (ratio <0.5)"};
}

// Sends one line and reads one response line.
class LineClient {
 public:
  explicit LineClient(std::uint16_t port) {
    fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    sockaddr_in a{};
    a.sin_family = AF_INET;
    a.sin_port = htons(port);
    ::inet_pton(AF_INET, "127.0.0.1", &a.sin_addr);
    for (int attempt = 0; attempt < 100; ++attempt) {
      if (::connect(fd_, reinterpret_cast<sockaddr*>(&a), sizeof a) == 0) return;
      std::this_thread::sleep_for(std::chrono::milliseconds(20));
    }
    throw IoError("cannot connect to port " + std::to_string(port));
  }
  ~LineClient() {
    if (fd_ >= 0) ::close(fd_);
  }
  bool send_line(const std::string& line) {
    std::string s = line + "\n";
    const char* p = s.data();
    std::size_t n = s.size();
    while (n > 0) {
      const ssize_t k = ::send(fd_, p, n, MSG_NOSIGNAL);
      if (k <= 0) return false;
      p += k;
      n -= static_cast<std::size_t>(k);
    }
    return true;
  }
  bool read_line(std::string& out) {
    for (;;) {
      const auto nl = buf_.find('\n');
      if (nl != std::string::npos) {
        out = buf_.substr(0, nl);
        buf_.erase(0, nl + 1);
        return true;
      }
      char chunk[65536];
      const ssize_t k = ::recv(fd_, chunk, sizeof chunk, 0);
      if (k <= 0) return false;
      buf_.append(chunk, static_cast<std::size_t>(k));
    }
  }

 private:
  int fd_ = -1;
  std::string buf_;
};

std::string request_json(const EmbeddingRecord& rec) {
  return json{{"id", rec.id},
              {"text_embedding", rec.text_embedding},
              {"frame_embeddings", rec.frame_embeddings}}
      .dump();
}

// A small but complete d=512, m=4 model. Training quality is irrelevant here.
fs::path latency_model() {
  auto sc = synth::default_scenario(synth::ScenarioKind::kCovariateShift, 14);
  sc.d = 512;
  sc.m = 4;
  sc.mean_offset.resize(0);
  sc.recolor.resize(0, 0);
  sc.n_general = 200;
  sc.n_target_benign = 100;
  sc.n_target_test = 20;
  const fs::path dir = scratch("latency");
  auto cfg = scenario_config(sc, dir, detector::Condition::kFull);
  cfg.fusion.train.epochs = 1;
  cfg.domain.train.epochs = 2;
  cfg.detector.train.epochs = 2;
  pipeline::Runner run(cfg);
  run.run_all();
  return cfg.paths.artifacts / pipeline::files::kModel;
}

Outcome criterion_latency() {
  const auto model_path = latency_model();
  const auto bundle = pipeline::load_verified_model(model_path);
  serve::Server server(bundle, serve::parse_listen("127.0.0.1:0"));
  std::thread loop([&] { server.run(); });

  auto sc = synth::default_scenario(synth::ScenarioKind::kCovariateShift, 15);
  sc.d = 512;
  sc.m = 4;
  sc.mean_offset.resize(0);
  sc.recolor.resize(0, 0);
  sc.n_general = 1000;
  sc.n_target_benign = 1;
  sc.n_target_test = 2;
  const auto requests = synth::generate(sc).general;

  std::vector<double> latencies;
  bool ok = true;
  {
    LineClient client(server.port());
    for (const auto& rec : requests.records) {
      std::string reply;
      if (!client.send_line(request_json(rec)) || !client.read_line(reply)) {
        ok = false;
        break;
      }
      const auto j = json::parse(reply);
      if (!j.contains("latency_us") || j.at("id") != rec.id) {
        ok = false;
        break;
      }
      latencies.push_back(j.at("latency_us").get<double>());
    }
  }
  server.stop();
  loop.join();
  if (!ok || latencies.size() != 1000) return {false, "server did not answer every request"};
  std::sort(latencies.begin(), latencies.end());
  const double p95 = latencies[static_cast<std::size_t>(std::ceil(0.95 * 1000.0)) - 1];
  return {p95 < 5000.0, "p95 latency_us " + fmt(p95) + " over 1000 requests at d=512 m=4 (<5000)"};
}

Outcome criterion_determinism() {
  auto sc = synth::default_scenario(synth::ScenarioKind::kCovariateShift, 16);
  const fs::path dir = scratch("determinism");
  auto cfg = scenario_config(sc, dir, detector::Condition::kFull);
  auto cfg_b = cfg;
  cfg_b.paths.artifacts = dir / "artifacts_second";
  pipeline::Runner a(cfg), b(cfg_b);
  const auto ra = a.run_all();
  const auto rb = b.run_all();
  const auto model_a = io::read_file(cfg.paths.artifacts / pipeline::files::kModel);
  const auto model_b = io::read_file(cfg_b.paths.artifacts / pipeline::files::kModel);
  bool identical = model_a == model_b && ra.report.accuracy == rb.report.accuracy;
  for (const char* f : {pipeline::files::kFusion, pipeline::files::kCoral,
                        pipeline::files::kWeights, pipeline::files::kFeatures}) {
    identical = identical && io::read_file(cfg.paths.artifacts / f) ==
                                 io::read_file(cfg_b.paths.artifacts / f);
  }

  const auto loaded = pipeline::load_verified_model(cfg.paths.artifacts / pipeline::files::kModel);
  const auto& original = a.bundle();
  auto probe = sc;
  probe.seed = 99;
  probe.n_general = 100;
  probe.n_target_benign = 1;
  probe.n_target_test = 2;
  const auto inputs = synth::generate(probe).general;
  std::size_t equal = 0;
  for (const auto& rec : inputs.records) {
    const auto p = original.classify(rec);
    const auto q = loaded.classify(rec);
    equal += static_cast<std::size_t>(p.score == q.score && p.label == q.label);
  }
  return {identical && equal == 100,
          std::string("model containers ") + (identical ? "bit-identical" : "DIFFER") +
              ", round-trip identical scores on " + std::to_string(equal) + "/100 inputs"};
}

// Runs the CLI server as a child process and returns its bound port.
struct ChildServer {
  pid_t pid = -1;
  std::uint16_t port = 0;
};

ChildServer spawn_server(const fs::path& model) {
  int pipefd[2];
  if (::pipe(pipefd) != 0) throw IoError("pipe failed");
  const pid_t pid = ::fork();
  if (pid == 0) {
    ::dup2(pipefd[1], STDOUT_FILENO);
    ::close(pipefd[0]);
    ::close(pipefd[1]);
    const std::string m = model.string();
    ::execl(JDAPT_CLI_PATH, JDAPT_CLI_PATH, "serve", "--model", m.c_str(), "--listen",
            "127.0.0.1:0", static_cast<char*>(nullptr));
    ::_exit(127);
  }
  ::close(pipefd[1]);
  std::string line;
  char c;
  while (::read(pipefd[0], &c, 1) == 1 && c != '\n') line.push_back(c);
  ::close(pipefd[0]);
  const auto pos = line.find_last_of(' ');
  if (line.rfind("listening on port", 0) != 0 || pos == std::string::npos) {
    ::kill(pid, SIGKILL);
    ::waitpid(pid, nullptr, 0);
    throw IoError("server did not report a port: '" + line + "'");
  }
  return {pid, static_cast<std::uint16_t>(std::stoi(line.substr(pos + 1)))};
}

Outcome criterion_data_invariants() {
  std::vector<std::string> failures;

  // balance
  auto sc = synth::default_scenario(synth::ScenarioKind::kConflictingConcept, 17);
  sc.n_general = 999;
  sc.n_target_benign = 5;
  sc.n_target_test = 5;
  const auto data = synth::generate(sc);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto b = ingest::balance(data.general, seed);
    std::size_t safe = 0, unsafe = 0;
    for (const auto& r : b.records) (r.label == Label::kSafe ? safe : unsafe)++;
    if (safe != unsafe || safe == 0) failures.push_back("balance counts differ");
  }

  // split
  const std::vector<double> fractions{0.6, 0.25, 0.15};
  const auto parts = ingest::split(data.general, fractions, 3);
  std::multiset<std::string> seen;
  for (const auto& p : parts)
    for (const auto& r : p.records) seen.insert(r.id);
  std::multiset<std::string> all;
  for (const auto& r : data.general.records) all.insert(r.id);
  std::set<std::string> unique(seen.begin(), seen.end());
  if (seen != all || unique.size() != seen.size()) failures.push_back("split is not a partition");

  // loader errors carry the offending line
  const fs::path dir = scratch("invariants");
  const std::string good =
      R"({"id":"a","domain":"general","label":"safe","text_embedding":[1,0],"frame_embeddings":[[0,1]],"meta":{}})";
  const std::string ragged =
      R"({"id":"b","domain":"general","label":"safe","text_embedding":[1,0],"frame_embeddings":[[0,1,2]],"meta":{}})";
  const std::string nan =
      R"({"id":"c","domain":"general","label":"safe","text_embedding":[1,NaN],"frame_embeddings":[[0,1]],"meta":{}})";
  for (const auto& [bad, line] : {std::pair{ragged, 3}, std::pair{nan, 2}}) {
    const fs::path f = dir / ("bad" + std::to_string(line) + ".ndjson");
    std::string body;
    for (int i = 1; i < line; ++i) {
      std::string g = good;
      g.replace(g.find("\"a\""), 3, "\"a" + std::to_string(i) + "\"");
      body += g + "\n";
    }
    io::write_file(f, body + bad + "\n" + good + "\n");
    try {
      ingest::load_records(f);
      failures.push_back("loader accepted a bad record");
    } catch (const ParseError& e) {
      if (e.line() != static_cast<std::size_t>(line)) failures.push_back("loader reported the wrong line");
    }
  }

  // fuzzed server
  auto small = synth::default_scenario(synth::ScenarioKind::kCovariateShift, 18);
  small.n_general = 300;
  small.n_target_benign = 100;
  small.n_target_test = 10;
  auto cfg = scenario_config(small, dir, detector::Condition::kFull);
  cfg.fusion.train.epochs = 2;
  cfg.domain.train.epochs = 2;
  cfg.detector.train.epochs = 2;
  pipeline::Runner(cfg).run_all();
  const auto child = spawn_server(cfg.paths.artifacts / pipeline::files::kModel);
  std::size_t answered = 0, expected = 0;
  bool alive = true;
  {
    LineClient client(child.port);
    std::mt19937_64 rng(19);
    std::uniform_int_distribution<int> len(0, 300), byte(0, 255), kind(0, 3);
    const std::string valid = request_json(synth::generate(small).target_test.records.front());
    for (int i = 0; i < 10000; ++i) {
      std::string line;
      const int k = kind(rng);
      if (k == 0) {
        // Damaged valid request.
        line = valid;
        for (int j = 0; j < 3; ++j) line[static_cast<std::size_t>(len(rng)) % line.size()] = static_cast<char>(byte(rng));
      } else {
        const int n = len(rng);
        for (int j = 0; j < n; ++j) line.push_back(static_cast<char>(byte(rng)));
      }
      std::replace(line.begin(), line.end(), '\n', ' ');
      std::string_view v(line);
      if (!v.empty() && v.back() == '\r') v.remove_suffix(1);
      const bool wants_reply = !v.empty();
      if (!client.send_line(line)) {
        alive = false;
        break;
      }
      if (wants_reply) {
        ++expected;
        std::string reply;
        if (!client.read_line(reply)) {
          alive = false;
          break;
        }
        const auto j = json::parse(reply, nullptr, false);
        if (!j.is_discarded() && j.is_object()) ++answered;
      }
    }
    std::string reply;
    alive = alive && client.send_line(valid) && client.read_line(reply) &&
            json::parse(reply).contains("label");
  }
  int status = 0;
  const bool exited = ::waitpid(child.pid, &status, WNOHANG) != 0;
  ::kill(child.pid, SIGTERM);
  ::waitpid(child.pid, nullptr, 0);
  if (exited || !alive || answered != expected) failures.push_back("server failed under fuzzing");

  std::string detail = "balance exact, split partitions, loader line numbers, " +
                       std::to_string(answered) + "/" + std::to_string(expected) +
                       " fuzz lines answered with server alive";
  if (!failures.empty()) detail = failures.front() + "; " + detail;
  return {failures.empty(), detail};
}

}  // namespace

int main() {
  struct Row {
    int id;
    const char* name;
    Outcome outcome;
  };
  std::vector<Row> rows;
  auto guarded = [](const std::function<Outcome()>& fn) {
    try {
      return fn();
    } catch (const std::exception& e) {
      return Outcome{false, std::string("exception: ") + e.what()};
    }
  };

  rows.push_back({1, "CORAL correctness", guarded(criterion_coral)});
  rows.push_back({2, "gradient fidelity", guarded(criterion_gradcheck)});
  Outcome h1{false, "not run"};
  const Outcome h2 = guarded([&] { return criteria_covariate_shift(h1); });
  rows.push_back({3, "baseline fails under shift", h1});
  rows.push_back({4, "full pipeline succeeds under shift", h2});
  rows.push_back({5, "fusion value on interaction labels", guarded(criterion_interaction)});
  rows.push_back({6, "importance-weighting value", guarded(criterion_weighting)});
  rows.push_back({7, "real-time serving", guarded(criterion_latency)});
  rows.push_back({8, "determinism and persistence", guarded(criterion_determinism)});
  rows.push_back({9, "data-handling invariants", guarded(criterion_data_invariants)});

  std::sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) { return a.id < b.id; });
  bool all = true;
  for (const auto& r : rows) {
    all = all && r.outcome.pass;
    std::cout << (r.outcome.pass ? "PASS" : "FAIL") << "  criterion " << r.id << " (" << r.name
              << "): " << r.outcome.detail << "\n";
  }
  std::error_code ec;
  fs::remove_all(fs::temp_directory_path() / ("jdapt_acceptance_" + std::to_string(::getpid())), ec);
  return all ? 0 : 1;
}
