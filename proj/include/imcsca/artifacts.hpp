#pragma once

#include <cstdint>
#include <vector>

#include "imcsca/trace.hpp"

namespace imcsca {

struct ArtifactSpec {
  double noise_std = 0.0;    // watts
  double target_rate = 0.0;  // Sa/s; 0 keeps the source rate
  std::uint64_t rng_seed = 0;
  bool noise_before_resample = false;

  void validate() const;
};

PowerTrace add_gaussian_noise(const PowerTrace& trace, double noise_std, std::uint64_t seed);

// Bin-mean downsampling. The source rate must be an integer multiple of the
// target rate.
PowerTrace resample(const PowerTrace& trace, double target_rate);

// Resample then add noise (or the reverse when requested). Each tile gets its
// own noise stream derived from the seed and tile id.
PowerTrace apply_artifacts(const PowerTrace& trace, const ArtifactSpec& spec);
std::vector<PowerTrace> apply_artifacts(const std::vector<PowerTrace>& traces,
                                        const ArtifactSpec& spec);

}  // namespace imcsca
