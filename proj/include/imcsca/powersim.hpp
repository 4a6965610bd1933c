#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "imcsca/mapper.hpp"
#include "imcsca/netspec.hpp"
#include "imcsca/trace.hpp"

namespace imcsca {

enum class DigitalComponent { ShiftAdd, Register, Relu, MaxPool, Router };
enum class Transition { Rise, Fall };

std::string_view to_string(DigitalComponent kind);
DigitalComponent parse_digital_component(std::string_view name);  // throws ConfigError

struct DigitalEnergyLut {
  // joules per single-bit transition
  std::map<std::pair<DigitalComponent, Transition>, double> energy;

  static DigitalEnergyLut defaults();
  double at(DigitalComponent kind, Transition t) const;
};

struct TechnologyModel {
  double v_read = 0.2;             // volts, read pulse amplitude
  double v_dd = 0.9;               // volts
  double v_ref = 0.9;              // volts, ADC reference
  double c_unit = 1e-15;           // farads, DAC unit capacitor
  double c_sample = 256e-15;       // farads, sample/hold (= total DAC capacitance)
  double c_bitline = 1e-16;        // farads per row of bitline
  double serial_clock_hz = 50e6;   // bit-serial input clock
  double digital_clock_hz = 500e6;
  double adc_step_time = 2e-9;     // one SAR step
  double settle_time = 4e-9;       // stable analog read window
  double native_rate = 1e10;       // trace sample rate, Sa/s
  int adc_bits = 8;
  // Shift-add commit after the last conversion of every input bit.
  double bit_overhead = 2e-9;
  // Digital work between layers: a fixed synchronisation delay plus pooling
  // throughput in comparisons per digital clock.
  int layer_sync_cycles = 8;
  int pool_lanes = 64;
  // Idle capture margin before a tile starts and after it finishes.
  double lead_in = 1e-6;
  double tail = 100e-9;
  DigitalEnergyLut digital_energy_lut = DigitalEnergyLut::defaults();

  void validate() const;

  double transient_time() const { return 1.0 / native_rate; }
  double digital_period() const { return 1.0 / digital_clock_hz; }
  double serial_period() const { return 1.0 / serial_clock_hz; }
  // Binary-weighted DAC capacitor of the n-th step (1-based, MSB first).
  double dac_capacitor(int n) const { return std::ldexp(c_unit, adc_bits - n); }
};

// ---- SAR ADC -------------------------------------------------------------

// Signed energy drawn from V_ref at step n given the per-step change of the
// comparator node and the decided bits D_1..D_{n-1}.
double sar_step_energy_raw(int n, double delta_vx, std::span<const int> decided,
                           const TechnologyModel& tech);
// Non-negative energy seen by a supply probe.
double sar_step_energy(int n, double delta_vx, std::span<const int> decided,
                       const TechnologyModel& tech);

struct SarConversion {
  int code = 0;
  std::vector<double> step_energy;      // recorded (floored at zero)
  std::vector<double> raw_step_energy;  // signed
  double duration = 0.0;

  double total_energy() const;
  double total_raw_energy() const;
};

SarConversion sar_convert(double v_in, const TechnologyModel& tech);

// Total signed conversion energy for every output code, indexed by code.
std::vector<double> sar_energy_by_code(const TechnologyModel& tech);

// ---- analog array --------------------------------------------------------

struct PairCurrents {
  double i_pos = 0.0;
  double i_neg = 0.0;
};

struct ReadEvent {
  std::vector<PairCurrents> pairs;  // one per used differential pair
  double transient_energy = 0.0;    // joules
  double static_power = 0.0;        // watts during the stable window
  double duration = 0.0;            // seconds
};

// `input_bits` holds one 0/1 value per used row.
ReadEvent array_read_event(const TileMapping& tile, std::span<const std::uint8_t> input_bits,
                           const TechnologyModel& tech);

double subtract_and_sample(double i_pos, double i_neg, const TechnologyModel& tech);

// ---- digital -------------------------------------------------------------

double digital_power(DigitalComponent kind, std::uint64_t rising, std::uint64_t falling,
                     const TechnologyModel& tech);
double digital_power(std::string_view kind, std::uint64_t rising, std::uint64_t falling,
                     const TechnologyModel& tech);

// ---- full inference ------------------------------------------------------

struct SimulationOptions {
  bool halt_pipeline = true;
  bool scramble_timing = false;
  double max_delay = 200e-9;  // seconds
  bool pad_adc = false;
  bool record_traces = true;
  std::uint64_t rng_seed = 0;
};

struct AnalogWindow {
  double start = 0.0;  // transient onset
  double end = 0.0;    // end of the stable read
  double static_power = 0.0;
};

struct TileEventLog {
  int tile_id = 0;
  int layer_id = 0;
  double start_time = 0.0;
  double end_time = 0.0;
  int conversions_per_adc = 0;
  std::uint64_t read_events = 0;
  double event_energy = 0.0;  // sum of recorded event energies, joules
  std::vector<AnalogWindow> windows;
};

struct LayerTiming {
  int layer_id = 0;
  double start = 0.0;
  double end = 0.0;       // last tile finished
  double tail_end = 0.0;  // inter-layer digital work finished
};

struct EventLog {
  std::vector<TileEventLog> tiles;
  std::vector<LayerTiming> layers;
};

std::string format_event_log(const EventLog& log);

struct SimulationResult {
  std::vector<PowerTrace> traces;                  // one per tile, by tile id
  std::vector<std::vector<LayerOutput>> outputs;   // per image, per layer
  EventLog events;

  // Final-layer accumulators per image.
  std::vector<std::vector<std::int64_t>> logits() const;
};

SimulationResult simulate_inference(const NetworkMapping& mapping, const NetworkSpec& net,
                                    const QuantizedWeights& weights,
                                    std::span<const Activation> images, const TechnologyModel& tech,
                                    const SimulationOptions& options);

}  // namespace imcsca
