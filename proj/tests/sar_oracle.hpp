#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "imcsca/powersim.hpp"

namespace testing {

using imcsca::TechnologyModel;

// Capacitor-array model of the SAR conversion, independent of the per-step
// energy formula: bottom plates switch between ground and V_ref, the floating
// top plate keeps its sampled charge, and the energy of a step is V_ref times
// the charge pushed out of the V_ref terminal.
struct ChargeOracle {
  int code = 0;
  double energy = 0.0;
};

inline ChargeOracle charge_oracle(double v_in, const TechnologyModel& tech) {
  const int bits = tech.adc_bits;
  const double vref = tech.v_ref;
  v_in = std::clamp(v_in, 0.0, vref);
  // caps[0] is the grounded termination capacitor; caps[n] is the n-th MSB.
  std::vector<double> caps(static_cast<std::size_t>(bits) + 1);
  caps[0] = tech.c_unit;
  for (int n = 1; n <= bits; ++n) caps[static_cast<std::size_t>(n)] = tech.c_unit * std::pow(2.0, bits - n);
  const double c_total = std::accumulate(caps.begin(), caps.end(), 0.0);

  std::vector<double> bottom(caps.size(), 0.0);  // bottom-plate voltages
  double vx = -v_in;
  const double q_top = c_total * vx;  // sum C_i (vx - bottom_i), conserved
  auto settle = [&] {
    double s = 0.0;
    for (std::size_t i = 0; i < caps.size(); ++i) s += caps[i] * bottom[i];
    return (q_top + s) / c_total;
  };

  ChargeOracle out;
  int last = 1;
  for (int n = 1; n <= bits; ++n) {
    std::vector<double> q_before(caps.size());
    for (std::size_t i = 0; i < caps.size(); ++i) q_before[i] = caps[i] * (bottom[i] - vx);
    // A rejected previous bit returns to ground in the same switching event.
    if (n > 1 && !last) bottom[static_cast<std::size_t>(n - 1)] = 0.0;
    bottom[static_cast<std::size_t>(n)] = vref;
    vx = settle();
    double drawn = 0.0;
    for (std::size_t i = 0; i < caps.size(); ++i)
      if (bottom[i] == vref) drawn += caps[i] * (bottom[i] - vx) - q_before[i];
    out.energy += vref * drawn;
    last = vx <= 0.0 ? 1 : 0;
    out.code = (out.code << 1) | last;
  }
  return out;
}


}  // namespace testing
