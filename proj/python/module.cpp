#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "imcsca/commands.hpp"
#include "imcsca/error.hpp"
#include "imcsca/mapper.hpp"

namespace py = pybind11;
using namespace imcsca;
namespace fs = std::filesystem;

namespace {

RunConfig config_from(const std::vector<std::string>& overrides) {
  RunConfig c;
  for (const auto& o : overrides) apply_override(c, o);
  return c;
}

// Hardware and attack keys only, as the CLI attack path reads them.
RunConfig attacker_config(const fs::path& hardware, const std::vector<std::string>& overrides) {
  RunConfig c;
  const std::vector<std::string> sections{"hw.", "attack."};
  load_config_into(c, hardware, sections);
  for (const auto& o : overrides) {
    require_section(o.substr(0, o.find('=')), sections);
    apply_override(c, o);
  }
  return c;
}

}  // namespace

PYBIND11_MODULE(_imcsca, m) {
  auto error = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", error);
  py::register_exception<ShapeError>(m, "ShapeError", error);
  py::register_exception<MappingError>(m, "MappingError", error);
  py::register_exception<SimulationError>(m, "SimulationError", error);
  py::register_exception<TraceFormatError>(m, "TraceFormatError", error);
  py::register_exception<AttackError>(m, "AttackError", error);

  m.def("lenet", [] { return format_network(lenet_cifar10()); });
  m.def("normalize_network", [](const std::string& text) { return format_network(parse_network(text)); },
        py::arg("text"));
  m.def("config_keys", &config_keys);
  m.def("format_config", [](const std::vector<std::string>& o) { return format_config(config_from(o)); },
        py::arg("overrides") = std::vector<std::string>{});

  m.def(
      "tiles_per_layer",
      [](const std::string& text, const std::vector<std::string>& overrides) {
        const auto c = config_from(overrides);
        const auto net = parse_network(text);
        const auto mapping = map_network(net, synthetic_weights(net, c.resolved_weights_seed()), c.tile);
        std::vector<std::size_t> out;
        for (const auto& g : mapping.layers) out.push_back(g.tile_ids.size());
        return out;
      },
      py::arg("network"), py::arg("overrides") = std::vector<std::string>{});

  m.def(
      "simulate",
      [](const fs::path& out, const std::vector<std::string>& overrides) {
        const auto s = cmd_simulate(config_from(overrides), out);
        return py::dict(py::arg("tiles") = s.tiles, py::arg("images") = s.images,
                        py::arg("traces") = s.traces);
      },
      py::arg("out"), py::arg("overrides") = std::vector<std::string>{});

  m.def(
      "inject",
      [](const fs::path& in, const fs::path& out, double noise_std, double target_rate,
         std::uint64_t seed) {
        ArtifactSpec spec;
        spec.noise_std = noise_std;
        spec.target_rate = target_rate;
        spec.rng_seed = seed;
        return cmd_inject(in, spec, out);
      },
      py::arg("traces"), py::arg("out"), py::arg("noise_std") = 0.0, py::arg("target_rate") = 0.0,
      py::arg("seed") = 0);

  m.def(
      "attack",
      [](const fs::path& traces, const fs::path& hardware, const fs::path& report,
         const std::vector<std::string>& overrides) {
        const auto c = attacker_config(hardware, overrides);
        return format_network(cmd_attack(traces, c.hw, c.attack, report).network());
      },
      py::arg("traces"), py::arg("hardware"), py::arg("report"),
      py::arg("overrides") = std::vector<std::string>{});

  m.def(
      "compare",
      [](const fs::path& report, const fs::path& truth) {
        const auto r = cmd_compare(report, truth);
        return py::make_tuple(r.mismatches(), r.summary());
      },
      py::arg("report"), py::arg("truth"));

  m.def(
      "read_trace",
      [](const fs::path& path) {
        auto t = read_trace(path);
        py::array_t<double> samples(static_cast<py::ssize_t>(t.samples.size()));
        std::copy(t.samples.begin(), t.samples.end(), samples.mutable_data());
        return py::dict(py::arg("tile_id") = t.tile_id, py::arg("sample_rate") = t.sample_rate,
                        py::arg("t0") = t.t0, py::arg("samples") = samples);
      },
      py::arg("path"));

  m.def(
      "sar_energy_by_code",
      [](const std::vector<std::string>& overrides) { return sar_energy_by_code(config_from(overrides).tech); },
      py::arg("overrides") = std::vector<std::string>{});
}
