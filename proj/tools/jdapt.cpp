#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "jdapt/config.hpp"
#include "jdapt/errors.hpp"
#include "jdapt/gradcheck.hpp"
#include "jdapt/io.hpp"
#include "jdapt/pipeline.hpp"
#include "jdapt/serve.hpp"
#include "jdapt/synth.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitValidation = 2;
constexpr int kExitRuntime = 3;

struct StageFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string condition;
  std::string out;
};

void add_stage_flags(CLI::App* cmd, StageFlags& f) {
  cmd->add_option("--config", f.config, "pipeline config (INI)")->required();
  cmd->add_option("--seed", f.seed, "base seed, overrides [pipeline] seed");
  cmd->add_option("--condition", f.condition,
                  "text_only | concat | fusion_only | da_only | full");
  cmd->add_option("--out", f.out, "artifact directory, overrides [paths] artifacts");
}

jdapt::config::PipelineConfig resolve_config(const StageFlags& f) {
  auto cfg = jdapt::config::load_config(f.config);
  if (f.seed) cfg.reseed(*f.seed);
  if (!f.condition.empty()) cfg.condition = jdapt::detector::condition_from_string(f.condition);
  if (!f.out.empty()) cfg.paths.artifacts = f.out;
  cfg.validate();
  return cfg;
}

struct SynthFlags {
  std::string kind = "covariate_shift";
  std::uint64_t seed = 0;
  int d = 16;
  int m = 2;
  std::size_t n_general = 4000;
  std::size_t n_target_benign = 1000;
  std::size_t n_target_test = 1000;
  std::optional<double> flip_fraction;
  double displacement = 6.0;
  double offset = 4.0;
  bool no_recolor = false;
  std::string out = ".";
};

int cmd_synth(const SynthFlags& f) {
  auto sc = jdapt::synth::default_scenario(jdapt::synth::scenario_from_string(f.kind), f.seed,
                                           f.offset);
  // Shift parameters are tied to d, so rebuild them if d changed.
  sc.d = f.d;
  if (sc.kind == jdapt::synth::ScenarioKind::kCovariateShift) {
    const auto basis = jdapt::synth::latent_basis(f.d, f.seed);
    sc.mean_offset = f.offset * basis.label_dir;
    sc.recolor = f.no_recolor ? jdapt::Matrix()
                              : jdapt::synth::anisotropic_recolor(basis, 3, 0.4, 2.5, f.seed);
  }
  sc.m = f.m;
  sc.n_general = f.n_general;
  sc.n_target_benign = f.n_target_benign;
  sc.n_target_test = f.n_target_test;
  if (f.flip_fraction) sc.flip_fraction = *f.flip_fraction;
  sc.displacement = f.displacement;
  const auto data = jdapt::synth::generate(sc);

  const fs::path dir(f.out);
  fs::create_directories(dir);
  jdapt::ingest::write_records(data.general, dir / "general.ndjson");
  jdapt::ingest::write_records(data.target_benign, dir / "target_benign.ndjson");
  jdapt::ingest::write_records(data.target_test, dir / "target_test.ndjson");

  // A ready-to-run config next to the data. Synthetic embeddings are not
  // unit vectors, so normalization stays off.
  jdapt::config::PipelineConfig cfg;
  cfg.paths = {"general.ndjson", "target_benign.ndjson", "target_test.ndjson", "artifacts"};
  cfg.normalize = false;
  cfg.reseed(f.seed);
  jdapt::io::write_file(dir / "pipeline.ini", jdapt::config::format_config(cfg));

  std::cout << json{{"general", data.general.size()},
                    {"target_benign", data.target_benign.size()},
                    {"target_test", data.target_test.size()},
                    {"out", dir.string()}}
                   .dump()
            << "\n";
  return 0;
}

int cmd_stage(const std::string& name, const StageFlags& f) {
  jdapt::pipeline::Runner run(resolve_config(f));
  if (name == "train-fusion") run.train_fusion();
  if (name == "fuse") run.fuse();
  if (name == "train-domain") run.train_domain();
  if (name == "adapt") run.adapt();
  if (name == "train-detector") run.train_detector();
  std::cout << json{{"stage", name}, {"artifacts", run.config().paths.artifacts.string()}}.dump()
            << "\n";
  return 0;
}

int cmd_pipeline(const StageFlags& f) {
  jdapt::pipeline::Runner run(resolve_config(f));
  const auto summary = run.run_all();
  std::cout << summary.to_json().dump(2) << "\n";
  return 0;
}

int cmd_eval(const std::string& model, const std::string& test, const std::string& condition,
             const std::string& out) {
  std::optional<jdapt::detector::Condition> c;
  if (!condition.empty()) c = jdapt::detector::condition_from_string(condition);
  const auto rep = jdapt::pipeline::evaluate_model(model, test, c);
  if (!out.empty()) jdapt::io::write_file(out, rep.to_json(true).dump() + "\n");
  std::cout << rep.to_json(false).dump(2) << "\n";
  return 0;
}

int cmd_serve(const std::string& model, const std::string& listen) {
  const auto bundle = jdapt::pipeline::load_verified_model(model);
  if (listen == "-") {
    std::ios::sync_with_stdio(false);
    jdapt::serve::serve_stream(bundle, std::cin, std::cout);
    return 0;
  }
  jdapt::serve::Server server(bundle, jdapt::serve::parse_listen(listen));
  std::cout << "listening on port " << server.port() << std::endl;
  server.run();
  return 0;
}

int cmd_gradcheck(std::uint64_t seed, bool inject_fault) {
  jdapt::neural::GradCheckOptions opts;
  opts.inject_fault = inject_fault;
  const auto checks = jdapt::gradcheck::check_all({}, seed, opts);
  constexpr double kTolerance = 1e-4;
  bool ok = true;
  json report = json::array();
  for (const auto& c : checks) {
    const bool pass = c.result.max_relative_error < kTolerance;
    ok = ok && pass;
    report.push_back({{"architecture", c.name},
                      {"loss", c.loss},
                      {"parameters", c.parameters},
                      {"checked", c.result.checked},
                      {"max_relative_error", c.result.max_relative_error},
                      {"pass", pass}});
  }
  std::cout << json{{"tolerance", kTolerance}, {"checks", report}, {"pass", ok}}.dump(2) << "\n";
  return ok ? 0 : kExitRuntime;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multimodal unsafe-input detector with domain adaptation"};
  app.require_subcommand(1);

  SynthFlags synth;
  auto* c_synth = app.add_subcommand("synth", "generate a synthetic scenario");
  c_synth->add_option("--kind", synth.kind, "covariate_shift | interaction_label | conflicting_concept");
  c_synth->add_option("--seed", synth.seed);
  c_synth->add_option("--d", synth.d, "embedding dimension");
  c_synth->add_option("--m", synth.m, "frames per record");
  c_synth->add_option("--n-general", synth.n_general);
  c_synth->add_option("--n-target-benign", synth.n_target_benign);
  c_synth->add_option("--n-target-test", synth.n_target_test);
  c_synth->add_option("--flip-fraction", synth.flip_fraction);
  c_synth->add_option("--displacement", synth.displacement);
  c_synth->add_option("--offset", synth.offset, "covariate_shift mean offset along the label direction");
  c_synth->add_flag("--no-recolor", synth.no_recolor);
  c_synth->add_option("--out", synth.out, "output directory");

  StageFlags stage;
  std::string stage_name;
  for (const char* name : {"train-fusion", "fuse", "train-domain", "adapt", "train-detector"}) {
    auto* cmd = app.add_subcommand(name, std::string("run the ") + name + " stage");
    add_stage_flags(cmd, stage);
    cmd->callback([&, name] { stage_name = name; });
  }
  auto* c_pipeline = app.add_subcommand("pipeline", "run every stage and evaluate");
  add_stage_flags(c_pipeline, stage);

  std::string model, test, condition, out;
  auto* c_eval = app.add_subcommand("eval", "evaluate a trained model");
  c_eval->add_option("--model", model)->required();
  c_eval->add_option("--test", test)->required();
  c_eval->add_option("--condition", condition);
  c_eval->add_option("--out", out, "write the full report here");

  std::string listen = "127.0.0.1:8765";
  auto* c_serve = app.add_subcommand("serve", "NDJSON classification server");
  c_serve->add_option("--model", model)->required();
  c_serve->add_option("--listen", listen, "host:port, or - for stdin/stdout");

  std::uint64_t gc_seed = 0;
  bool inject_fault = false;
  auto* c_grad = app.add_subcommand("gradcheck", "finite-difference gradient check");
  c_grad->add_option("--seed", gc_seed);
  c_grad->add_flag("--inject-fault", inject_fault)->group("");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitValidation;
  }

  try {
    if (c_synth->parsed()) return cmd_synth(synth);
    if (!stage_name.empty()) return cmd_stage(stage_name, stage);
    if (c_pipeline->parsed()) return cmd_pipeline(stage);
    if (c_eval->parsed()) return cmd_eval(model, test, condition, out);
    if (c_serve->parsed()) return cmd_serve(model, listen);
    if (c_grad->parsed()) return cmd_gradcheck(gc_seed, inject_fault);
  } catch (const jdapt::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.is_validation() ? kExitValidation : kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return 0;
}
