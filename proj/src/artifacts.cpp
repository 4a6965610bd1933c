#include "imcsca/artifacts.hpp"

#include <cmath>
#include <random>
#include <sstream>

#include "imcsca/error.hpp"

namespace imcsca {

void ArtifactSpec::validate() const {
  if (!(noise_std >= 0.0)) throw ConfigError("artifacts: noise_std must be >= 0");
  if (!(target_rate >= 0.0)) throw ConfigError("artifacts: target_rate must be >= 0");
}

PowerTrace add_gaussian_noise(const PowerTrace& trace, double noise_std, std::uint64_t seed) {
  PowerTrace out = trace;
  if (noise_std == 0.0) return out;
  if (noise_std < 0.0) throw ConfigError("noise_std must be >= 0");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, noise_std);
  for (double& s : out.samples) s += noise(rng);
  return out;
}

namespace {

std::string valid_divisors(double rate) {
  std::ostringstream out;
  const double candidates[] = {1e10, 5e9, 2e9, 1e9, 5e8, 2e8, 1e8};
  bool first = true;
  for (double c : candidates) {
    if (c > rate) continue;
    const double ratio = rate / c;
    if (std::abs(ratio - std::round(ratio)) > 1e-9 * ratio) continue;
    out << (first ? "" : ", ") << c;
    first = false;
  }
  return out.str();
}

}  // namespace

PowerTrace resample(const PowerTrace& trace, double target_rate) {
  if (!(target_rate > 0.0)) throw ConfigError("resample: target rate must be positive");
  const double ratio = trace.sample_rate / target_rate;
  const double factor_d = std::round(ratio);
  if (factor_d < 1.0 || std::abs(ratio - factor_d) > 1e-9 * ratio)
    throw ConfigError("resample: target rate " + std::to_string(target_rate) +
                      " does not divide source rate " + std::to_string(trace.sample_rate) +
                      " (valid: " + valid_divisors(trace.sample_rate) + ")");
  const auto factor = static_cast<std::size_t>(factor_d);
  if (factor == 1) return trace;

  PowerTrace out;
  out.tile_id = trace.tile_id;
  out.sample_rate = target_rate;
  out.t0 = trace.t0;
  const std::size_t n = trace.samples.size();
  out.samples.resize((n + factor - 1) / factor);
  for (std::size_t i = 0; i < out.samples.size(); ++i) {
    double sum = 0.0;
    const std::size_t end = std::min(n, (i + 1) * factor);
    for (std::size_t j = i * factor; j < end; ++j) sum += trace.samples[j];
    // A short final bin is padded with idle (zero) samples.
    out.samples[i] = sum / static_cast<double>(factor);
  }
  return out;
}

PowerTrace apply_artifacts(const PowerTrace& trace, const ArtifactSpec& spec) {
  spec.validate();
  const double rate = spec.target_rate > 0.0 ? spec.target_rate : trace.sample_rate;
  const std::uint64_t seed = spec.rng_seed * 0x9E3779B97F4A7C15ull + static_cast<std::uint64_t>(trace.tile_id);
  if (spec.noise_before_resample)
    return resample(add_gaussian_noise(trace, spec.noise_std, seed), rate);
  return add_gaussian_noise(resample(trace, rate), spec.noise_std, seed);
}

std::vector<PowerTrace> apply_artifacts(const std::vector<PowerTrace>& traces,
                                        const ArtifactSpec& spec) {
  std::vector<PowerTrace> out;
  out.reserve(traces.size());
  for (const auto& t : traces) out.push_back(apply_artifacts(t, spec));
  return out;
}

}  // namespace imcsca
