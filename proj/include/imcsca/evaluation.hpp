#pragma once

// Harness side of the firewall: judges attack results against the mapping the
// simulator used. Never called from the attack path itself.

#include <cstdint>
#include <string>
#include <vector>

#include "imcsca/attack.hpp"
#include "imcsca/mapper.hpp"
#include "imcsca/powersim.hpp"

namespace imcsca {

// The public subset of a tile configuration, as the attacker would know it.
HwKnowledge hw_knowledge(const TileConfig& tile, const TechnologyModel& tech, const Shape& input);

enum class CellStatus { Success, FailAtFc, Fail };

std::string to_string(CellStatus status);

// Output-size extraction per layer, fed with the true tile group and the
// extracted per-tile features. Fail when any conv layer is wrong, FailAtFc
// when only fc layers are.
CellStatus evaluate_output_sizes(const std::vector<PowerTrace>& traces, const NetworkSpec& net,
                                 const NetworkMapping& mapping, const HwKnowledge& hw,
                                 const AttackParams& params, std::string* detail = nullptr);

// Kernel extraction from row power for every conv layer spanning two or more
// tile rows, fed with the true tile group and input channel count.
CellStatus evaluate_kernels(const std::vector<PowerTrace>& traces, const NetworkSpec& net,
                            const NetworkMapping& mapping, const HwKnowledge& hw,
                            const AttackParams& params, std::string* detail = nullptr);

struct MatrixCell {
  double rate = 0.0;
  double noise = 0.0;
  CellStatus output_sizes = CellStatus::Fail;
  CellStatus kernels = CellStatus::Fail;
  std::string detail;
};

struct RobustnessMatrix {
  std::vector<double> rates;   // descending
  std::vector<double> noises;  // ascending, watts
  std::vector<MatrixCell> cells;  // rates-major

  const MatrixCell& at(std::size_t rate_index, std::size_t noise_index) const {
    return cells[rate_index * noises.size() + noise_index];
  }
  std::string format() const;
};

// Every cell resamples the same clean traces, then adds noise with `seed`.
RobustnessMatrix robustness_matrix(const std::vector<PowerTrace>& clean, const NetworkSpec& net,
                                   const NetworkMapping& mapping, const HwKnowledge& hw,
                                   const AttackParams& params, std::vector<double> rates,
                                   std::vector<double> noises, std::uint64_t seed);

// A failed cell never turns into a success with more noise or a lower rate.
bool is_monotone(const RobustnessMatrix& m, bool kernels);

// Along every rate row, the first non-success is "Fail at FC".
bool fc_fails_first(const RobustnessMatrix& m);

}  // namespace imcsca
