#include "imcsca/commands.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "imcsca/artifacts.hpp"
#include "imcsca/error.hpp"
#include "imcsca/mapper.hpp"
#include "imcsca/netspec.hpp"
#include "imcsca/powersim.hpp"
#include "imcsca/trace.hpp"

namespace imcsca {

namespace fs = std::filesystem;

namespace {

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
  if (!out) throw Error("write failed for " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

NetworkSpec configured_network(const RunConfig& config) {
  return config.network.empty() ? lenet_cifar10() : load_network(config.network);
}

QuantizedWeights configured_weights(const RunConfig& config, const NetworkSpec& net) {
  if (config.weights.empty()) return synthetic_weights(net, config.resolved_weights_seed());
  fs::path manifest = config.weights_manifest;
  if (manifest.empty()) manifest = config.weights.string() + ".manifest";
  return quantize_network(net, load_weights(net, config.weights, manifest));
}

std::vector<Activation> configured_images(const RunConfig& config, const Shape& input) {
  if (config.images.count <= 0) throw ConfigError("images.count must be at least 1");
  std::vector<Activation> images;
  images.reserve(static_cast<std::size_t>(config.images.count));
  for (int i = 0; i < config.images.count; ++i) {
    if (!config.images.cifar_batch.empty()) {
      images.push_back(load_cifar_record(config.images.cifar_batch,
                                         static_cast<std::size_t>(config.images.cifar_first + i)));
      if (!(images.back().shape == input))
        throw ConfigError("dataset images are " + to_string(images.back().shape) +
                          " but the network expects " + to_string(input));
    } else {
      images.push_back(synthetic_image(input, config.resolved_image_seed() + static_cast<std::uint64_t>(i)));
    }
  }
  return images;
}

struct Prepared {
  NetworkSpec net;
  NetworkMapping mapping;
  SimulationResult result;
};

Prepared prepare(const RunConfig& config) {
  config.validate();
  Prepared p;
  p.net = configured_network(config);
  const auto weights = configured_weights(config, p.net);
  const auto images = configured_images(config, p.net.input);
  p.mapping = map_network(p.net, weights, config.tile);
  if (config.dummy_conductance)
    p.mapping = apply_dummy_conductance(std::move(p.mapping), config.resolved_sim_seed());
  SimulationOptions options = config.sim;
  options.rng_seed = config.resolved_sim_seed();
  p.result = simulate_inference(p.mapping, p.net, weights, images, config.tech, options);
  return p;
}

bool has_binary_traces(const fs::path& dir) {
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.path().extension() == ".tracebin") return true;
  return false;
}

}  // namespace

std::string format_hw_knowledge(const HwKnowledge& hw) {
  RunConfig c;
  c.hw = hw;
  std::istringstream all(format_config(c));
  std::string out, line;
  while (std::getline(all, line))
    if (line.starts_with("hw.")) out += line + "\n";
  return out;
}

SimulateSummary cmd_simulate(const RunConfig& config, const fs::path& out) {
  const Prepared p = prepare(config);
  std::ostringstream logits;
  for (const auto& image : p.result.logits()) {
    for (std::size_t i = 0; i < image.size(); ++i) logits << (i ? " " : "") << image[i];
    logits << "\n";
  }

  SimulateSummary s;
  s.tiles = static_cast<int>(p.result.traces.size());
  s.images = config.images.count;
  s.traces = out / "traces";
  fs::create_directories(s.traces);
  write_trace_dir(p.result.traces, s.traces, config.binary_traces);
  write_text(out / "hardware.conf",
             format_hw_knowledge(hw_knowledge(config.tile, config.tech, p.net.input)));
  write_text(out / "truth" / "network.net", format_network(p.net));
  write_text(out / "truth" / "mapping.txt", mapping_manifest(p.mapping));
  write_text(out / "truth" / "events.log", format_event_log(p.result.events));
  write_text(out / "truth" / "logits.txt", logits.str());
  write_text(out / "truth" / "run.conf", format_config(config));
  return s;
}

int cmd_inject(const fs::path& in, const ArtifactSpec& spec, const fs::path& out) {
  const auto traces = read_trace_dir(in);
  if (traces.empty()) throw TraceFormatError("no trace files in " + in.string());
  const auto degraded = apply_artifacts(traces, spec);
  fs::create_directories(out);
  write_trace_dir(degraded, out, has_binary_traces(in));
  return static_cast<int>(degraded.size());
}

ExtractedArchitecture cmd_attack(const fs::path& traces, const HwKnowledge& hw,
                                 const AttackParams& params, const fs::path& report) {
  const auto loaded = read_trace_dir(traces);
  if (loaded.empty()) throw AttackError("no trace files in " + traces.string());
  auto arch = run_attack(loaded, hw, params);
  write_text(report, format_report(arch));
  return arch;
}

MatchReport cmd_compare(const fs::path& report, const fs::path& truth) {
  return compare(parse_report(read_text(report)), load_network(truth));
}

std::string adc_energy_csv(const TechnologyModel& tech) {
  tech.validate();
  const auto energy = sar_energy_by_code(tech);
  std::string out = "code,energy_j\n";
  char buf[64];
  for (std::size_t code = 0; code < energy.size(); ++code) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g\n", code, energy[code]);
    out += buf;
  }
  return out;
}

void cmd_adc_energy(const TechnologyModel& tech, const fs::path& out) {
  write_text(out, adc_energy_csv(tech));
}

RobustnessMatrix cmd_matrix(const RunConfig& config, const fs::path& out) {
  const Prepared p = prepare(config);
  const HwKnowledge hw = hw_knowledge(config.tile, config.tech, p.net.input);
  auto m = robustness_matrix(p.result.traces, p.net, p.mapping, hw, config.attack,
                             config.matrix.rates, config.matrix.noises, config.resolved_matrix_seed());
  if (!out.empty()) write_text(out, m.format());
  return m;
}

}  // namespace imcsca
