#include <algorithm>
#include <numeric>

#include "imcsca/error.hpp"
#include "imcsca/powersim.hpp"

namespace imcsca {

std::string_view to_string(DigitalComponent kind) {
  switch (kind) {
    case DigitalComponent::ShiftAdd:
      return "shift_add";
    case DigitalComponent::Register:
      return "register";
    case DigitalComponent::Relu:
      return "relu";
    case DigitalComponent::MaxPool:
      return "maxpool";
    case DigitalComponent::Router:
      return "router";
  }
  return "?";
}

DigitalComponent parse_digital_component(std::string_view name) {
  for (auto k : {DigitalComponent::ShiftAdd, DigitalComponent::Register, DigitalComponent::Relu,
                 DigitalComponent::MaxPool, DigitalComponent::Router})
    if (to_string(k) == name) return k;
  throw ConfigError("unknown digital component '" + std::string(name) + "'");
}

DigitalEnergyLut DigitalEnergyLut::defaults() {
  // 28 nm-class ballpark, joules per bit transition.
  DigitalEnergyLut lut;
  lut.energy[{DigitalComponent::ShiftAdd, Transition::Rise}] = 1.2e-15;
  lut.energy[{DigitalComponent::ShiftAdd, Transition::Fall}] = 0.9e-15;
  lut.energy[{DigitalComponent::Register, Transition::Rise}] = 0.8e-15;
  lut.energy[{DigitalComponent::Register, Transition::Fall}] = 0.6e-15;
  lut.energy[{DigitalComponent::Relu, Transition::Rise}] = 0.5e-15;
  lut.energy[{DigitalComponent::Relu, Transition::Fall}] = 0.4e-15;
  lut.energy[{DigitalComponent::MaxPool, Transition::Rise}] = 1.0e-15;
  lut.energy[{DigitalComponent::MaxPool, Transition::Fall}] = 0.8e-15;
  lut.energy[{DigitalComponent::Router, Transition::Rise}] = 2.0e-15;
  lut.energy[{DigitalComponent::Router, Transition::Fall}] = 1.5e-15;
  return lut;
}

double DigitalEnergyLut::at(DigitalComponent kind, Transition t) const {
  const auto it = energy.find({kind, t});
  if (it == energy.end())
    throw ConfigError("digital energy LUT has no entry for " + std::string(to_string(kind)));
  return it->second;
}

void TechnologyModel::validate() const {
  const double positives[] = {v_read,           v_dd,          c_unit,      c_sample,   c_bitline,
                              serial_clock_hz, digital_clock_hz, adc_step_time, settle_time, native_rate};
  for (double v : positives)
    if (!(v > 0.0)) throw ConfigError("technology model: all physical values must be positive");
  // A zero reference is allowed: every conversion then costs nothing.
  if (!(v_ref >= 0.0)) throw ConfigError("technology model: v_ref must be >= 0");
  if (adc_bits < 1 || adc_bits > 16) throw ConfigError("technology model: adc_bits out of range");
  if (bit_overhead < 0.0 || lead_in < 0.0 || tail < 0.0 || layer_sync_cycles < 0 || pool_lanes < 1)
    throw ConfigError("technology model: timing margins must be non-negative");
  const double total = std::ldexp(c_unit, adc_bits);
  if (std::abs(c_sample - total) > 1e-9 * total)
    throw ConfigError("technology model: c_sample must equal 2^adc_bits x c_unit");
  for (const auto& [key, e] : digital_energy_lut.energy)
    if (e < 0.0) throw ConfigError("technology model: digital LUT energies must be >= 0");
}

double sar_step_energy_raw(int n, double delta_vx, std::span<const int> decided,
                           const TechnologyModel& tech) {
  if (n < 1 || n > tech.adc_bits)
    throw SimulationError("SAR step " + std::to_string(n) + " out of range 1.." +
                          std::to_string(tech.adc_bits));
  const double vref = tech.v_ref;
  const double cn = tech.dac_capacitor(n);
  if (n == 1) return -cn * vref * (delta_vx - vref);
  if (decided.size() < static_cast<std::size_t>(n - 1))
    throw SimulationError("SAR step " + std::to_string(n) + " needs the previous decisions");
  double held = 0.0;
  for (int i = 1; i < n; ++i) held += tech.dac_capacitor(i) * decided[static_cast<std::size_t>(i - 1)];
  return -vref * (delta_vx * held + cn * (delta_vx - vref));
}

double sar_step_energy(int n, double delta_vx, std::span<const int> decided,
                       const TechnologyModel& tech) {
  return std::max(0.0, sar_step_energy_raw(n, delta_vx, decided, tech));
}

double SarConversion::total_energy() const {
  return std::accumulate(step_energy.begin(), step_energy.end(), 0.0);
}

double SarConversion::total_raw_energy() const {
  return std::accumulate(raw_step_energy.begin(), raw_step_energy.end(), 0.0);
}

SarConversion sar_convert(double v_in, const TechnologyModel& tech) {
  const int bits = tech.adc_bits;
  const double vref = tech.v_ref;
  v_in = std::clamp(v_in, 0.0, vref);
  const double c_total = std::ldexp(tech.c_unit, bits);

  SarConversion conv;
  conv.duration = bits * tech.adc_step_time;
  std::vector<int> decided;
  decided.reserve(static_cast<std::size_t>(bits));
  // After sampling the bottom plates are grounded and the top node sits at -V_in.
  double vx_prev = -v_in;
  double held = 0.0;  // capacitance already latched to V_ref
  for (int n = 1; n <= bits; ++n) {
    const double cn = tech.dac_capacitor(n);
    const double vx = -v_in + vref * (held + cn) / c_total;
    const double raw = sar_step_energy_raw(n, vx - vx_prev, decided, tech);
    conv.raw_step_energy.push_back(raw);
    conv.step_energy.push_back(std::max(0.0, raw));
    const int d = vx <= 0.0 ? 1 : 0;
    decided.push_back(d);
    if (d) held += cn;
    conv.code = (conv.code << 1) | d;
    vx_prev = vx;
  }
  return conv;
}

std::vector<double> sar_energy_by_code(const TechnologyModel& tech) {
  const int codes = 1 << tech.adc_bits;
  std::vector<double> energy(static_cast<std::size_t>(codes));
  for (int c = 0; c < codes; ++c) {
    const double v_mid = (c + 0.5) / codes * tech.v_ref;
    const SarConversion conv = sar_convert(v_mid, tech);
    energy[static_cast<std::size_t>(conv.code)] = conv.total_raw_energy();
  }
  return energy;
}

}  // namespace imcsca
