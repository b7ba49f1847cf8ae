#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "extembed/checkpoint.hpp"
#include "extembed/chunking.hpp"
#include "extembed/cli.hpp"
#include "extembed/encode.hpp"
#include "extembed/errors.hpp"
#include "extembed/position_ext.hpp"
#include "extembed/retrieval_eval.hpp"
#include "extembed/synth_bench.hpp"
#include "extembed/task_io.hpp"

namespace py = pybind11;
using namespace extembed;

namespace {

ExtensionSpec make_spec(const std::string& strategy, long original_context, std::optional<long> target_context,
                        std::optional<double> ntk_lambda, std::optional<long> group, std::optional<long> window,
                        bool attention_scaling) {
  ExtensionSpec s;
  s.strategy = parse_strategy(strategy);
  s.original_context = original_context;
  s.target_context = target_context.value_or(original_context);
  s.ntk_lambda = ntk_lambda;
  s.group = group;
  s.window = window;
  s.attention_scaling = attention_scaling;
  return resolve_spec(s);
}

py::tuple run_cli(const std::vector<std::string>& args) {
  std::vector<std::string> store{"extembed"};
  store.insert(store.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& a : store) argv.push_back(a.c_str());
  std::ostringstream out, err;
  int code;
  {
    py::gil_scoped_release release;
    code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  }
  return py::make_tuple(code, out.str(), err.str());
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Context-window extension toolkit for toy embedding encoders";

  auto base = py::register_exception<Error>(m, "Error");
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<DataError>(m, "DataError", base.ptr());
  py::register_exception<LengthError>(m, "LengthError", base.ptr());
  py::register_exception<GenerationError>(m, "GenerationError", base.ptr());
  py::register_exception<NumericError>(m, "NumericError", base.ptr());

  py::enum_<PositionMode>(m, "PositionMode")
      .value("ABSOLUTE", PositionMode::Absolute)
      .value("ROTARY", PositionMode::Rotary);

  py::class_<ModelConfig>(m, "ModelConfig")
      .def(py::init<>())
      .def_readwrite("hidden_size", &ModelConfig::hidden_size)
      .def_readwrite("n_layers", &ModelConfig::n_layers)
      .def_readwrite("n_heads", &ModelConfig::n_heads)
      .def_readwrite("ffn_multiplier", &ModelConfig::ffn_multiplier)
      .def_readwrite("vocab_size", &ModelConfig::vocab_size)
      .def_readwrite("original_context", &ModelConfig::original_context)
      .def_readwrite("position_mode", &ModelConfig::position_mode)
      .def_readwrite("init_seed", &ModelConfig::init_seed)
      .def_readwrite("rope_base", &ModelConfig::rope_base);

  py::class_<Model>(m, "Model")
      .def_readonly("config", &Model::config)
      .def("checksum", [](const Model& self) { return model_checksum(self); })
      .def_property_readonly("position_rows", [](const Model& self) { return self.weights.positions.rows(); })
      .def_property_readonly("frozen_rows", [](const Model& self) { return self.weights.positions.frozen_count(); });

  m.def("init_model", &init_model, py::arg("config"));
  m.def("load_checkpoint", &load_checkpoint, py::arg("path"));
  m.def("save_checkpoint", &save_checkpoint, py::arg("model"), py::arg("path"));

  py::class_<ExtensionSpec>(m, "ExtensionSpec")
      .def(py::init(&make_spec), py::arg("strategy") = "NONE", py::arg("original_context") = 512,
           py::arg("target_context") = py::none(), py::arg("ntk_lambda") = py::none(), py::arg("group") = py::none(),
           py::arg("window") = py::none(), py::arg("attention_scaling") = true)
      .def_property_readonly("strategy", [](const ExtensionSpec& s) { return std::string(to_string(s.strategy)); })
      .def_readonly("original_context", &ExtensionSpec::original_context)
      .def_readonly("target_context", &ExtensionSpec::target_context)
      .def_readonly("ntk_lambda", &ExtensionSpec::ntk_lambda)
      .def_readonly("group", &ExtensionSpec::group)
      .def_readonly("window", &ExtensionSpec::window)
      .def_readonly("notes", &ExtensionSpec::notes)
      .def("scale_factor", &ExtensionSpec::scale_factor);

  py::class_<ModelEmbedder>(m, "Embedder")
      .def(py::init<const Model&, ExtensionSpec, bool>(), py::arg("model"), py::arg("spec"),
           py::arg("truncate") = false, py::keep_alive<1, 2>())
      .def("embed", [](const ModelEmbedder& self, const std::string& text) { return self.embed_text(text).values; },
           py::arg("text"));

  m.def("grouped_positions", &grouped_positions, py::arg("pid"), py::arg("s"));
  m.def("recurrent_positions", &recurrent_positions, py::arg("pid"), py::arg("original_context"));
  m.def("self_extend_relpos", &self_extend_relpos, py::arg("i"), py::arg("j"), py::arg("group"), py::arg("window"));
  m.def("resolve_se_params", &resolve_se_params, py::arg("original_context"), py::arg("target_context"));
  m.def("resolve_ntk_lambda", &resolve_ntk_lambda, py::arg("s"));
  m.def("attention_scale", &attention_scale, py::arg("n"), py::arg("original_context"));
  m.def(
      "plan_chunks",
      [](std::size_t n, std::size_t lo) {
        std::vector<std::pair<std::size_t, std::size_t>> out;
        for (const auto& c : plan_chunks(n, lo)) out.emplace_back(c.start, c.end);
        return out;
      },
      py::arg("input_len"), py::arg("original_context"));

  m.def("word_budget", &word_budget, py::arg("length"));
  m.def(
      "generate_tasks",
      [](const std::string& kind, std::vector<long> grid, std::size_t queries, std::size_t candidates,
         std::uint64_t seed, const std::filesystem::path& out_dir) {
        SyntheticTaskConfig c;
        c.kind = parse_task_kind(kind);
        c.length_grid = std::move(grid);
        c.queries_per_length = queries;
        c.candidates_per_length = candidates;
        c.seed = seed;
        return write_tasks(generate_tasks(c), out_dir);
      },
      py::arg("kind"), py::arg("grid"), py::arg("queries") = 50, py::arg("candidates") = 100, py::arg("seed") = 42,
      py::arg("out_dir"));

  m.def("acc_at_1", &acc_at_1, py::arg("rankings"), py::arg("qrels"));
  m.def(
      "ndcg_at_10", [](const Rankings& r, const Qrels& q) { return ndcg_at_10(r, q).score; }, py::arg("rankings"),
      py::arg("qrels"));

  m.def("run_cli", &run_cli, py::arg("args"),
        "Runs the command-line tool in-process; returns (exit_code, stdout, stderr).");
}
