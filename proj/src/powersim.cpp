#include "imcsca/powersim.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <random>
#include <sstream>

#include "imcsca/error.hpp"

namespace imcsca {

ReadEvent array_read_event(const TileMapping& tile, std::span<const std::uint8_t> input_bits,
                           const TechnologyModel& tech) {
  if (input_bits.size() != static_cast<std::size_t>(tile.used_rows))
    throw SimulationError("read event: " + std::to_string(input_bits.size()) +
                          " input bits for " + std::to_string(tile.used_rows) + " used rows");
  ReadEvent ev;
  ev.duration = tech.settle_time;
  std::vector<double> column(static_cast<std::size_t>(tile.array_cols), 0.0);
  bool any_active = false;
  for (int r = 0; r < tile.used_rows; ++r) {
    if (!input_bits[static_cast<std::size_t>(r)]) continue;
    any_active = true;
    const double* row = &tile.conductance[static_cast<std::size_t>(r) * tile.array_cols];
    for (int c = 0; c < tile.array_cols; ++c) column[static_cast<std::size_t>(c)] += row[c];
  }
  // Every bitline is held at virtual ground, so unused columns conduct too.
  double total_current = 0.0;
  int switching = 0;
  for (double& g : column) {
    g *= tech.v_read;
    total_current += g;
    if (g > 0.0) ++switching;
  }
  ev.static_power = tech.v_read * total_current;
  ev.transient_energy = any_active ? 0.5 * tech.c_bitline * tile.used_rows * tech.v_read *
                                         tech.v_read * switching
                                   : 0.0;
  ev.pairs.resize(static_cast<std::size_t>(tile.used_pairs()));
  for (int p = 0; p < tile.used_pairs(); ++p)
    ev.pairs[static_cast<std::size_t>(p)] = {column[static_cast<std::size_t>(2 * p)],
                                             column[static_cast<std::size_t>(2 * p + 1)]};
  return ev;
}

double subtract_and_sample(double i_pos, double i_neg, const TechnologyModel& tech) {
  const double v = tech.v_dd / 2.0 + (i_pos - i_neg) * tech.settle_time / tech.c_sample;
  return std::clamp(v, 0.0, tech.v_dd);
}

double digital_power(DigitalComponent kind, std::uint64_t rising, std::uint64_t falling,
                     const TechnologyModel& tech) {
  const auto& lut = tech.digital_energy_lut;
  return static_cast<double>(rising) * lut.at(kind, Transition::Rise) +
         static_cast<double>(falling) * lut.at(kind, Transition::Fall);
}

double digital_power(std::string_view kind, std::uint64_t rising, std::uint64_t falling,
                     const TechnologyModel& tech) {
  return digital_power(parse_digital_component(kind), rising, falling, tech);
}

std::vector<std::vector<std::int64_t>> SimulationResult::logits() const {
  std::vector<std::vector<std::int64_t>> out;
  for (const auto& per_image : outputs) out.push_back(per_image.back().values);
  return out;
}

std::string format_event_log(const EventLog& log) {
  std::ostringstream out;
  out.precision(17);
  out << "# layer <id> <start> <end> <tail_end>\n";
  for (const auto& l : log.layers)
    out << "layer " << l.layer_id << ' ' << l.start << ' ' << l.end << ' ' << l.tail_end << '\n';
  out << "# tile <id> <layer> <start> <end> <conversions_per_adc> <read_events> <event_energy>\n";
  out << "# window <tile> <start> <end> <static_power>\n";
  for (const auto& t : log.tiles) {
    out << "tile " << t.tile_id << ' ' << t.layer_id << ' ' << t.start_time << ' ' << t.end_time
        << ' ' << t.conversions_per_adc << ' ' << t.read_events << ' ' << t.event_energy << '\n';
    for (const auto& w : t.windows)
      out << "window " << t.tile_id << ' ' << w.start << ' ' << w.end << ' ' << w.static_power
          << '\n';
  }
  return out.str();
}

namespace {

// Energy accumulated per native sample bin, starting at t0.
class EnergyBins {
 public:
  EnergyBins(double t0, double rate) : t0_(t0), rate_(rate) {}

  void add(double ts, double te, double energy) {
    if (energy == 0.0) return;
    const double x0 = (ts - t0_) * rate_;
    const double x1 = (te - t0_) * rate_;
    const auto i0 = static_cast<std::size_t>(std::max(0.0, std::floor(x0)));
    if (!(x1 > x0)) {
      grow(i0 + 1);
      bins_[i0] += energy;
      return;
    }
    const auto i1 = static_cast<std::size_t>(std::floor(x1));
    grow(i1 + 1);
    const double density = energy / (x1 - x0);
    if (i0 == i1) {
      bins_[i0] += energy;
      return;
    }
    bins_[i0] += (static_cast<double>(i0 + 1) - x0) * density;
    for (std::size_t i = i0 + 1; i < i1; ++i) bins_[i] += density;
    bins_[i1] += (x1 - static_cast<double>(i1)) * density;
  }

  PowerTrace finish(int tile_id, double t_end) {
    grow(static_cast<std::size_t>(std::ceil((t_end - t0_) * rate_ - 1e-9)));
    PowerTrace trace;
    trace.tile_id = tile_id;
    trace.sample_rate = rate_;
    trace.t0 = t0_;
    trace.samples.resize(bins_.size());
    for (std::size_t i = 0; i < bins_.size(); ++i) trace.samples[i] = bins_[i] * rate_;
    return trace;
  }

 private:
  void grow(std::size_t n) {
    if (bins_.size() < n) bins_.resize(n, 0.0);
  }

  double t0_;
  double rate_;
  std::vector<double> bins_;
};

struct BitToggles {
  std::uint64_t rise = 0;
  std::uint64_t fall = 0;
};

BitToggles toggles(std::uint32_t before, std::uint32_t after) {
  return {static_cast<std::uint64_t>(std::popcount(~before & after)),
          static_cast<std::uint64_t>(std::popcount(before & ~after))};
}

// Per-code SAR results; step energies depend only on the output code.
struct SarTable {
  std::vector<std::vector<double>> step_energy;  // recorded, by code

  explicit SarTable(const TechnologyModel& tech) {
    const int codes = 1 << tech.adc_bits;
    step_energy.resize(static_cast<std::size_t>(codes));
    for (int c = 0; c < codes; ++c) {
      const auto conv = sar_convert((c + 0.5) / codes * tech.v_ref, tech);
      step_energy[static_cast<std::size_t>(conv.code)] = conv.step_energy;
    }
  }
};

int sar_code(double v_in, const TechnologyModel& tech) {
  const int bits = tech.adc_bits;
  v_in = std::clamp(v_in, 0.0, tech.v_ref);
  const double c_total = std::ldexp(tech.c_unit, bits);
  double held = 0.0;
  int code = 0;
  for (int n = 1; n <= bits; ++n) {
    const double cn = tech.dac_capacitor(n);
    const int d = (-v_in + tech.v_ref * (held + cn) / c_total) <= 0.0 ? 1 : 0;
    if (d) held += cn;
    code = (code << 1) | d;
  }
  return code;
}

struct TileRun {
  const TileMapping* tile = nullptr;
  EnergyBins bins;
  TileEventLog log;
  std::vector<int> last_code;  // per ADC output register
  double trace_end = 0.0;
};

class Simulator {
 public:
  Simulator(const NetworkMapping& mapping, const NetworkSpec& net, const TechnologyModel& tech,
            const SimulationOptions& options)
      : mapping_(mapping), net_(net), tech_(tech), options_(options), sar_(tech),
        rng_(options.rng_seed) {
    for (const auto& t : mapping.tiles) {
      TileRun run{&t, EnergyBins(0.0, tech.native_rate), {}, {}, 0.0};
      run.log.tile_id = t.tile_id;
      run.log.layer_id = t.layer_id;
      run.log.start_time = -1.0;
      run.last_code.assign(static_cast<std::size_t>(mapping.config.adc_count), 0);
      const int needed = (t.used_pairs() + mapping.config.adc_count - 1) / mapping.config.adc_count;
      run.log.conversions_per_adc =
          options.pad_adc ? mapping.config.max_conversions_per_adc() : needed;
      runs_.push_back(std::move(run));
    }
  }

  // Runs one image starting at `t`; returns the time the last layer's digital
  // work completes.
  double run_image(const Activation& image, double t, std::vector<LayerOutput>& outputs) {
    Activation act = image;
    for (std::size_t li = 0; li < net_.layers.size(); ++li) {
      const LayerSpec& layer = net_.layers[li];
      if (!layer.has_weights()) continue;  // pooling is folded into the producer's tail
      const LayerGrid* grid = mapping_.grid_for_layer(static_cast<int>(li));
      if (grid == nullptr) throw SimulationError("no tiles mapped for layer " + std::to_string(li));

      std::vector<std::vector<std::uint8_t>> vectors;
      Shape out_shape;
      if (layer.kind == LayerKind::Conv) {
        vectors = im2col_inputs(act, layer.kernel, layer.stride, layer.padding);
        const int w = conv_output_width(act.shape.width, layer.kernel, layer.stride, layer.padding);
        out_shape = {layer.out, w, w};
      } else {
        vectors.push_back(flatten(act).data);
        out_shape = {layer.out, 1, 1};
      }
      if (vectors.front().size() != static_cast<std::size_t>(grid->logical_rows))
        throw SimulationError("layer " + std::to_string(li) + ": input vector length " +
                              std::to_string(vectors.front().size()) + " does not match " +
                              std::to_string(grid->logical_rows) + " mapped rows");
      if (grid->logical_cols != layer.out * mapping_.config.columns_per_output())
        throw SimulationError("layer " + std::to_string(li) + ": mapped columns do not match");

      LayerOutput acc;
      acc.shape = out_shape;
      acc.values.assign(out_shape.size(), 0);

      LayerTiming timing;
      timing.layer_id = static_cast<int>(li);
      timing.start = t;
      double layer_end = t;
      std::uniform_real_distribution<double> delay(0.0, options_.max_delay);
      for (int id : grid->tile_ids) {
        const double start = t + (options_.scramble_timing ? delay(rng_) : 0.0);
        layer_end = std::max(layer_end, run_tile(runs_[static_cast<std::size_t>(id)], vectors,
                                                 start, acc));
      }
      timing.end = layer_end;
      outputs.push_back(acc);

      // Digital tail: ReLU, requantisation, any following pooling layers and
      // routing to the next layer.
      const bool last = li + 1 == net_.layers.size();
      double tail_energy = 0.0;
      std::uint64_t pool_cycles = 0;
      if (!last) {
        act = requantize(acc);
        for (auto v : act.data) tail_energy += digital_power(DigitalComponent::Relu, std::popcount(v), std::popcount(v), tech_);
        std::size_t next = li + 1;
        while (next < net_.layers.size() && net_.layers[next].kind == LayerKind::Pool) {
          const int size = net_.layers[next].pool;
          pool_cycles += (act.shape.size() + tech_.pool_lanes - 1) / tech_.pool_lanes;
          tail_energy += pool_energy(act, size);
          act = max_pool(act, size);
          LayerOutput p;
          p.shape = act.shape;
          p.values.assign(act.data.begin(), act.data.end());
          outputs.push_back(std::move(p));
          ++next;
        }
        std::uint8_t prev = 0;
        for (auto v : act.data) {
          const auto tg = toggles(prev, v);
          tail_energy += digital_power(DigitalComponent::Router, tg.rise, tg.fall, tech_);
          prev = v;
        }
      }
      const double tail_time =
          static_cast<double>(tech_.layer_sync_cycles + pool_cycles) * tech_.digital_period();
      timing.tail_end = layer_end + tail_time;
      const double share = tail_energy / static_cast<double>(grid->tile_ids.size());
      for (int id : grid->tile_ids) {
        auto& run = runs_[static_cast<std::size_t>(id)];
        deposit(run, layer_end, timing.tail_end, share);
        run.trace_end = std::max(run.trace_end, timing.tail_end);
      }
      log_.layers.push_back(timing);
      t = timing.tail_end;
    }
    return t;
  }

  SimulationResult finish() {
    SimulationResult result;
    for (auto& run : runs_) {
      if (options_.record_traces)
        result.traces.push_back(run.bins.finish(run.tile->tile_id, run.trace_end + tech_.tail));
      result.events.tiles.push_back(std::move(run.log));
    }
    result.events.layers = std::move(log_.layers);
    return result;
  }

 private:
  void deposit(TileRun& run, double ts, double te, double energy) {
    run.log.event_energy += energy;
    if (options_.record_traces) run.bins.add(ts, te, energy);
  }

  double pool_energy(const Activation& in, int size) const {
    double e = 0.0;
    for (int c = 0; c < in.shape.channels; ++c)
      for (int y = 0; y + size <= in.shape.height; y += size)
        for (int x = 0; x + size <= in.shape.width; x += size) {
          std::uint8_t m = 0;
          for (int dy = 0; dy < size; ++dy)
            for (int dx = 0; dx < size; ++dx) {
              const std::uint8_t v = std::max(m, in.at(c, y + dy, x + dx));
              const auto tg = toggles(m, v);
              e += digital_power(DigitalComponent::MaxPool, tg.rise, tg.fall, tech_);
              m = v;
            }
        }
    return e;
  }

  double run_tile(TileRun& run, const std::vector<std::vector<std::uint8_t>>& vectors,
                  double start, LayerOutput& acc) {
    const TileMapping& tile = *run.tile;
    const TileConfig& cfg = mapping_.config;
    const int bits_per_input = 8;
    const int n_conv = run.log.conversions_per_adc;
    const double t_a = tech_.transient_time();
    const double conv_time = tech_.adc_bits * tech_.adc_step_time;
    const double period = t_a + tech_.settle_time + n_conv * conv_time + tech_.bit_overhead;
    const double g_unit = tech_.v_read * cfg.level_step();

    if (run.log.start_time < 0.0) {
      run.log.start_time = start;
      run.bins = EnergyBins(start - tech_.lead_in, tech_.native_rate);
    }

    const int pairs = tile.used_pairs();
    const int first_out = tile.col_offset / cfg.columns_per_output();
    const std::size_t pixels = vectors.size();
    std::vector<std::uint8_t> bits(static_cast<std::size_t>(tile.used_rows));
    std::vector<std::int64_t> pair_acc(static_cast<std::size_t>(pairs));
    std::vector<double> slot_energy(static_cast<std::size_t>(tech_.adc_bits));

    double t = start;
    for (std::size_t v = 0; v < pixels; ++v) {
      const auto& vec = vectors[v];
      std::fill(pair_acc.begin(), pair_acc.end(), 0);
      for (int b = bits_per_input - 1; b >= 0; --b) {
        for (int r = 0; r < tile.used_rows; ++r)
          bits[static_cast<std::size_t>(r)] = (vec[static_cast<std::size_t>(tile.row_offset + r)] >> b) & 1;
        const ReadEvent ev = array_read_event(tile, bits, tech_);
        ++run.log.read_events;

        // Phase A: bitline transient. Phase B: stable read.
        deposit(run, t, t + t_a, ev.transient_energy);
        const double b_start = t + t_a;
        const double b_end = b_start + tech_.settle_time;
        deposit(run, b_start, b_end, ev.static_power * tech_.settle_time);
        run.log.windows.push_back({t, b_end, ev.static_power});

        // Phase C: conversions, adc_count in parallel per slot.
        double tc = b_end;
        for (int s = 0; s < n_conv; ++s) {
          std::fill(slot_energy.begin(), slot_energy.end(), 0.0);
          double register_energy = 0.0;
          for (int a = 0; a < cfg.adc_count; ++a) {
            const int p = s * cfg.adc_count + a;
            double v_in;
            if (p < pairs) {
              const auto& pc = ev.pairs[static_cast<std::size_t>(p)];
              v_in = subtract_and_sample(pc.i_pos, pc.i_neg, tech_);
            } else if (options_.pad_adc) {
              v_in = tech_.v_dd / 2.0;
            } else {
              continue;
            }
            const int code = sar_code(v_in, tech_);
            const auto& steps = sar_.step_energy[static_cast<std::size_t>(code)];
            for (std::size_t j = 0; j < steps.size(); ++j) slot_energy[j] += steps[j];
            auto& last = run.last_code[static_cast<std::size_t>(a)];
            const auto tg = toggles(static_cast<std::uint32_t>(last), static_cast<std::uint32_t>(code));
            register_energy += digital_power(DigitalComponent::Register, tg.rise, tg.fall, tech_);
            last = code;
          }
          for (std::size_t j = 0; j < slot_energy.size(); ++j) {
            const double ts = tc + static_cast<double>(j) * tech_.adc_step_time;
            deposit(run, ts, ts + tech_.adc_step_time, slot_energy[j]);
          }
          const double last_step = tc + (tech_.adc_bits - 1) * tech_.adc_step_time;
          deposit(run, last_step, last_step + tech_.adc_step_time, register_energy);
          tc += conv_time;
        }

        // Shift-add: acc = 2 * acc + partial sum, committed after the conversions.
        double shift_energy = 0.0;
        for (int p = 0; p < pairs; ++p) {
          const auto& pc = ev.pairs[static_cast<std::size_t>(p)];
          const auto psum = static_cast<std::int64_t>(std::llround((pc.i_pos - pc.i_neg) / g_unit));
          auto& a = pair_acc[static_cast<std::size_t>(p)];
          const std::int64_t next = a * 2 + psum;
          const auto tg = toggles(static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(next));
          shift_energy += digital_power(DigitalComponent::ShiftAdd, tg.rise, tg.fall, tech_);
          a = next;
        }
        deposit(run, tc, tc + tech_.bit_overhead, shift_energy);
        t += period;
      }
      // MSB cell carries the high nibble.
      for (int o = 0; o < pairs / 2; ++o) {
        const std::int64_t value = 16 * pair_acc[static_cast<std::size_t>(2 * o)] +
                                   pair_acc[static_cast<std::size_t>(2 * o + 1)];
        acc.values[static_cast<std::size_t>(first_out + o) * pixels + v] += value;
      }
    }
    run.log.end_time = t;
    run.trace_end = std::max(run.trace_end, t);
    return t;
  }

  const NetworkMapping& mapping_;
  const NetworkSpec& net_;
  const TechnologyModel& tech_;
  const SimulationOptions& options_;
  SarTable sar_;
  std::mt19937_64 rng_;
  std::vector<TileRun> runs_;
  EventLog log_;
};

}  // namespace

SimulationResult simulate_inference(const NetworkMapping& mapping, const NetworkSpec& net,
                                    const QuantizedWeights& weights,
                                    std::span<const Activation> images, const TechnologyModel& tech,
                                    const SimulationOptions& options) {
  tech.validate();
  mapping.config.validate();
  if (!options.halt_pipeline)
    throw SimulationError("pipelined inference is not modelled; halt_pipeline must be set");
  if (mapping.config.adc_bits != tech.adc_bits)
    throw SimulationError("tile adc_bits does not match the technology model");
  if (images.empty()) throw SimulationError("no input images");
  if (weights.layers.size() != net.layers.size())
    throw SimulationError("weights do not cover every layer");
  propagate_shapes(net);
  std::size_t weighted = 0;
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    if (!net.layers[i].has_weights()) continue;
    ++weighted;
    if (weights.layers[i].dims != weight_dims(net, i))
      throw SimulationError("weights for layer " + std::to_string(i) + " have the wrong shape");
  }
  if (weighted != mapping.layers.size())
    throw SimulationError("mapping has " + std::to_string(mapping.layers.size()) +
                          " weighted layers, network has " + std::to_string(weighted));
  for (const auto& img : images)
    if (!(img.shape == net.input) || img.data.size() != net.input.size())
      throw SimulationError("image shape " + to_string(img.shape) + " does not match network input");

  Simulator sim(mapping, net, tech, options);
  std::vector<std::vector<LayerOutput>> outputs;
  double t = tech.lead_in;
  for (const auto& img : images) {
    std::vector<LayerOutput> per_layer;
    t = sim.run_image(img, t, per_layer);
    outputs.push_back(std::move(per_layer));
  }
  SimulationResult result = sim.finish();
  result.outputs = std::move(outputs);
  return result;
}

}  // namespace imcsca
