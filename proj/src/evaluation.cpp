#include "imcsca/evaluation.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <map>
#include <sstream>
#include <thread>

#include "imcsca/artifacts.hpp"
#include "imcsca/error.hpp"

namespace imcsca {

HwKnowledge hw_knowledge(const TileConfig& tile, const TechnologyModel& tech, const Shape& input) {
  HwKnowledge hw;
  hw.array_rows = tile.array_rows;
  hw.array_cols = tile.array_cols;
  hw.adc_count = tile.adc_count;
  hw.adc_bits = tile.adc_bits;
  hw.columns_per_weight = tile.columns_per_output();
  hw.input_bits = 8;
  hw.serial_clock_hz = tech.serial_clock_hz;
  hw.digital_clock_hz = tech.digital_clock_hz;
  hw.adc_step_time = tech.adc_step_time;
  hw.settle_time = tech.settle_time;
  hw.transient_time = tech.transient_time();
  hw.bit_overhead = tech.bit_overhead;
  hw.input_channels = input.channels;
  hw.input_width = input.width;
  return hw;
}

std::string to_string(CellStatus status) {
  switch (status) {
    case CellStatus::Success:
      return "Success";
    case CellStatus::FailAtFc:
      return "Fail at FC";
    case CellStatus::Fail:
      return "Fail";
  }
  return "?";
}

namespace {

std::map<int, TileFeatures> features_by_tile(const std::vector<PowerTrace>& traces,
                                             const HwKnowledge& hw, const AttackParams& params,
                                             std::vector<std::string>& why) {
  std::map<int, TileFeatures> out;
  const auto analyses = analyze_traces(traces, hw, params);
  for (std::size_t i = 0; i < traces.size(); ++i) {
    std::string reason;
    if (auto f = features_of(traces[i], analyses[i], hw, &reason))
      out.emplace(traces[i].tile_id, *f);
    else
      why.push_back(reason);
  }
  return out;
}

void append(std::string* detail, const std::string& text) {
  if (!detail) return;
  if (!detail->empty()) *detail += "; ";
  *detail += text;
}

}  // namespace

CellStatus evaluate_output_sizes(const std::vector<PowerTrace>& traces, const NetworkSpec& net,
                                 const NetworkMapping& mapping, const HwKnowledge& hw,
                                 const AttackParams& params, std::string* detail) {
  std::vector<std::string> why;
  const auto features = features_by_tile(traces, hw, params, why);
  bool conv_failed = false, fc_failed = false;
  for (const auto& grid : mapping.layers) {
    const LayerSpec& truth = net.layers.at(static_cast<std::size_t>(grid.layer_id));
    LayerGroup g;
    g.kind = truth.kind;
    std::vector<int> ids = grid.tile_ids;
    std::sort(ids.begin(), ids.end());
    bool ok = true;
    for (int id : ids) {
      const auto it = features.find(id);
      if (it == features.end()) {
        ok = false;
        break;
      }
      g.tiles.push_back(it->second);
    }
    if (ok) {
      try {
        ok = output_size_extraction(g, hw).out == truth.out;
      } catch (const AttackError&) {
        ok = false;
      }
    }
    if (!ok) {
      (truth.kind == LayerKind::Conv ? conv_failed : fc_failed) = true;
      append(detail, "layer " + std::to_string(grid.layer_id) + " wrong");
    }
  }
  if (conv_failed) return CellStatus::Fail;
  if (fc_failed) return CellStatus::FailAtFc;
  return CellStatus::Success;
}

CellStatus evaluate_kernels(const std::vector<PowerTrace>& traces, const NetworkSpec& net,
                            const NetworkMapping& mapping, const HwKnowledge& hw,
                            const AttackParams& params, std::string* detail) {
  std::vector<std::string> why;
  const auto features = features_by_tile(traces, hw, params, why);
  bool failed = false;
  for (const auto& grid : mapping.layers) {
    const LayerSpec& truth = net.layers.at(static_cast<std::size_t>(grid.layer_id));
    if (truth.kind != LayerKind::Conv || grid.grid_rows < 2) continue;
    const int c_in = layer_input_shape(net, static_cast<std::size_t>(grid.layer_id)).channels;
    LayerGroup g;
    g.kind = LayerKind::Conv;
    std::vector<int> ids = grid.tile_ids;
    std::sort(ids.begin(), ids.end());
    bool ok = true;
    for (int id : ids) {
      const auto it = features.find(id);
      if (it == features.end()) {
        ok = false;
        break;
      }
      g.tiles.push_back(it->second);
    }
    if (ok) {
      try {
        ok = kernel_size_extraction(g, grid.grid_rows, c_in, hw, params).kernel == truth.kernel;
      } catch (const AttackError&) {
        ok = false;
      }
    }
    if (!ok) {
      failed = true;
      append(detail, "kernel of layer " + std::to_string(grid.layer_id) + " wrong");
    }
  }
  return failed ? CellStatus::Fail : CellStatus::Success;
}

std::string RobustnessMatrix::format() const {
  std::ostringstream out;
  auto table = [&](const char* title, bool kernels) {
    out << title << "\n" << "rate\\noise";
    for (double n : noises) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%g mW", n * 1e3);
      out << "," << buf;
    }
    out << "\n";
    for (std::size_t r = 0; r < rates.size(); ++r) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%g MSa/s", rates[r] / 1e6);
      out << buf;
      for (std::size_t n = 0; n < noises.size(); ++n)
        out << "," << to_string(kernels ? at(r, n).kernels : at(r, n).output_sizes);
      out << "\n";
    }
  };
  table("output size extraction", false);
  out << "\n";
  table("kernel size extraction", true);
  return out.str();
}

RobustnessMatrix robustness_matrix(const std::vector<PowerTrace>& clean, const NetworkSpec& net,
                                   const NetworkMapping& mapping, const HwKnowledge& hw,
                                   const AttackParams& params, std::vector<double> rates,
                                   std::vector<double> noises, std::uint64_t seed) {
  if (rates.empty() || noises.empty()) throw ConfigError("matrix: rates and noises must not be empty");
  std::sort(rates.begin(), rates.end(), std::greater<>());
  std::sort(noises.begin(), noises.end());
  RobustnessMatrix m;
  m.rates = rates;
  m.noises = noises;
  m.cells.resize(rates.size() * noises.size());
  for (std::size_t r = 0; r < rates.size(); ++r)
    for (std::size_t n = 0; n < noises.size(); ++n) {
      m.cells[r * noises.size() + n].rate = rates[r];
      m.cells[r * noises.size() + n].noise = noises[n];
    }
  // Reject bad rates up front rather than inside a worker.
  for (double r : rates) (void)resample(PowerTrace{0, clean.front().sample_rate, 0.0, {0.0}}, r);

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < m.cells.size(); i = next++) {
      MatrixCell& c = m.cells[i];
      ArtifactSpec spec;
      spec.noise_std = c.noise;
      spec.target_rate = c.rate;
      spec.rng_seed = seed;
      const auto traces = apply_artifacts(clean, spec);
      c.output_sizes = evaluate_output_sizes(traces, net, mapping, hw, params, &c.detail);
      c.kernels = evaluate_kernels(traces, net, mapping, hw, params, &c.detail);
    }
  };
  const unsigned threads =
      std::clamp<unsigned>(std::thread::hardware_concurrency(), 1u, 4u);
  std::vector<std::thread> pool;
  for (unsigned t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  return m;
}

bool is_monotone(const RobustnessMatrix& m, bool kernels) {
  auto sev = [&](std::size_t r, std::size_t n) {
    return (kernels ? m.at(r, n).kernels : m.at(r, n).output_sizes) != CellStatus::Success;
  };
  for (std::size_t r = 0; r < m.rates.size(); ++r)
    for (std::size_t n = 0; n < m.noises.size(); ++n) {
      if (n + 1 < m.noises.size() && sev(r, n + 1) < sev(r, n)) return false;
      if (r + 1 < m.rates.size() && sev(r + 1, n) < sev(r, n)) return false;
    }
  return true;
}

bool fc_fails_first(const RobustnessMatrix& m) {
  for (std::size_t r = 0; r < m.rates.size(); ++r)
    for (std::size_t n = 0; n < m.noises.size(); ++n) {
      const CellStatus s = m.at(r, n).output_sizes;
      if (s == CellStatus::Success) continue;
      if (s != CellStatus::FailAtFc) return false;
      break;
    }
  return true;
}

}  // namespace imcsca
