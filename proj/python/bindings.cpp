#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "jdapt/config.hpp"
#include "jdapt/detector.hpp"
#include "jdapt/errors.hpp"
#include "jdapt/gradcheck.hpp"
#include "jdapt/ingest.hpp"
#include "jdapt/linalg.hpp"
#include "jdapt/pipeline.hpp"
#include "jdapt/serve.hpp"
#include "jdapt/synth.hpp"

namespace py = pybind11;
using namespace jdapt;

namespace {

py::object json_to_py(const nlohmann::json& j) {
  return py::module_::import("json").attr("loads")(j.dump());
}

EmbeddingRecord make_record(const std::vector<float>& text,
                            const std::vector<std::vector<float>>& frames) {
  EmbeddingRecord rec;
  rec.id = "py";
  rec.text_embedding = text;
  rec.frame_embeddings = frames;
  return rec;
}

}  // namespace

PYBIND11_MODULE(_jdapt, m) {
  m.doc() = "Multimodal unsafe-input detection with domain adaptation";

  static py::exception<Error> base(m, "Error");
  static py::exception<ValidationError> validation(m, "ValidationError", base.ptr());
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const ValidationError& e) {
      py::set_error(validation, e.what());
    } catch (const Error& e) {
      py::set_error(base, e.what());
    }
  });

  m.def("sample_covariance", &linalg::sample_covariance, py::arg("x"), py::arg("ddof") = 1);

  py::class_<linalg::CoralMap>(m, "CoralMap")
      .def_readonly("transform", &linalg::CoralMap::transform)
      .def_readonly("source_mean", &linalg::CoralMap::source_mean)
      .def_readonly("target_mean", &linalg::CoralMap::target_mean)
      .def_readonly("lam", &linalg::CoralMap::lambda)
      .def_readonly("center_and_shift", &linalg::CoralMap::center_and_shift)
      .def("apply", [](const linalg::CoralMap& map, const Matrix& x) {
        return linalg::apply_coral(map, x);
      });

  m.def(
      "fit_coral",
      [](const Matrix& source, const Matrix& target, double lam, bool center_and_shift) {
        linalg::CoralOptions opts;
        opts.lambda = lam;
        opts.center_and_shift = center_and_shift;
        return linalg::fit_coral(source, target, opts);
      },
      py::arg("source"), py::arg("target"), py::arg("lam") = 1.0,
      py::arg("center_and_shift") = true);

  m.def(
      "synth",
      [](const std::string& kind, const std::filesystem::path& out, std::uint64_t seed, int d,
         int m_frames, std::size_t n_general, std::size_t n_target_benign,
         std::size_t n_target_test) {
        auto sc = synth::default_scenario(synth::scenario_from_string(kind), seed);
        if (d != sc.d && sc.kind == synth::ScenarioKind::kCovariateShift) {
          const auto basis = synth::latent_basis(d, seed);
          sc.mean_offset = 4.0 * basis.label_dir;
          sc.recolor = synth::anisotropic_recolor(basis, 3, 0.4, 2.5, seed);
        }
        sc.d = d;
        sc.m = m_frames;
        sc.n_general = n_general;
        sc.n_target_benign = n_target_benign;
        sc.n_target_test = n_target_test;
        const auto data = synth::generate(sc);
        std::filesystem::create_directories(out);
        ingest::write_records(data.general, out / "general.ndjson");
        ingest::write_records(data.target_benign, out / "target_benign.ndjson");
        ingest::write_records(data.target_test, out / "target_test.ndjson");
      },
      py::arg("kind"), py::arg("out"), py::arg("seed") = 0, py::arg("d") = 16, py::arg("m") = 2,
      py::arg("n_general") = 4000, py::arg("n_target_benign") = 1000,
      py::arg("n_target_test") = 1000,
      "Write general/target_benign/target_test NDJSON files for a scenario.");

  m.def(
      "load_records",
      [](const std::filesystem::path& path, bool normalize) {
        const auto ds = ingest::load_records(path, ingest::LoadOptions{normalize});
        py::list out;
        for (const auto& r : ds.records) {
          py::dict d;
          d["id"] = r.id;
          d["domain"] = to_string(r.domain);
          d["label"] = to_string(r.label);
          d["text_embedding"] = r.text_embedding;
          d["frame_embeddings"] = r.frame_embeddings;
          d["meta"] = r.meta;
          out.append(d);
        }
        return out;
      },
      py::arg("path"), py::arg("normalize") = true);

  m.def(
      "run_pipeline",
      [](const std::filesystem::path& config_path, std::optional<std::string> condition,
         std::optional<std::uint64_t> seed, std::optional<std::filesystem::path> artifacts) {
        auto cfg = config::load_config(config_path);
        if (condition) cfg.condition = detector::condition_from_string(*condition);
        if (seed) cfg.reseed(*seed);
        if (artifacts) cfg.paths.artifacts = *artifacts;
        pipeline::Runner run(cfg);
        nlohmann::json summary;
        {
          py::gil_scoped_release release;
          summary = run.run_all().to_json();
        }
        return json_to_py(summary);
      },
      py::arg("config"), py::arg("condition") = py::none(), py::arg("seed") = py::none(),
      py::arg("artifacts") = py::none());

  m.def(
      "evaluate",
      [](const std::filesystem::path& model, const std::filesystem::path& test) {
        return json_to_py(pipeline::evaluate_model(model, test, std::nullopt).to_json(false));
      },
      py::arg("model"), py::arg("test"));

  py::class_<detector::ModelBundle>(m, "Model")
      .def_static("load", &pipeline::load_verified_model, py::arg("path"))
      .def_property_readonly("embed_dim", &detector::ModelBundle::embed_dim)
      .def_property_readonly("condition",
                             [](const detector::ModelBundle& b) {
                               return std::string(detector::to_string(b.detector.manifest.condition));
                             })
      .def(
          "classify",
          [](const detector::ModelBundle& b, const std::vector<float>& text,
             const std::vector<std::vector<float>>& frames) {
            const auto p = b.classify(make_record(text, frames));
            return py::make_tuple(std::string(to_string(p.label)), p.score);
          },
          py::arg("text_embedding"), py::arg("frame_embeddings"))
      .def("handle_request", [](const detector::ModelBundle& b, const std::string& line) {
        return serve::handle_request_line(b, line);
      });

  m.def(
      "gradcheck",
      [](std::uint64_t seed) {
        py::list out;
        for (const auto& c : gradcheck::check_all({}, seed, {})) {
          py::dict d;
          d["architecture"] = c.name;
          d["loss"] = c.loss;
          d["parameters"] = c.parameters;
          d["max_relative_error"] = c.result.max_relative_error;
          out.append(d);
        }
        return out;
      },
      py::arg("seed") = 0);
}
