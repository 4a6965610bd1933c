#pragma once

// The command-line operations as library calls. Each one reads and writes
// files only through its arguments and is deterministic for fixed inputs.

#include <filesystem>
#include <string>

#include "imcsca/attack.hpp"
#include "imcsca/config.hpp"
#include "imcsca/evaluation.hpp"

namespace imcsca {

// Layout under `out`:
//   traces/        one trace file per tile
//   hardware.conf  hw.* keys an attacker could read off a datasheet
//   truth/         network.net, mapping.txt, events.log, logits.txt, run.conf
// Throws ConfigError for zero images.
struct SimulateSummary {
  int tiles = 0;
  int images = 0;
  std::filesystem::path traces;
};
SimulateSummary cmd_simulate(const RunConfig& config, const std::filesystem::path& out);

// Rewrites every trace in `in` with artifacts applied. The output keeps the
// input's file variant. Zero noise at the source rate copies byte for byte.
int cmd_inject(const std::filesystem::path& in, const ArtifactSpec& spec,
               const std::filesystem::path& out);

// Nothing but the trace directory and public hardware knowledge goes in.
// Throws AttackError when extraction fails.
ExtractedArchitecture cmd_attack(const std::filesystem::path& traces, const HwKnowledge& hw,
                                 const AttackParams& params, const std::filesystem::path& report);

MatchReport cmd_compare(const std::filesystem::path& report, const std::filesystem::path& truth);

// "code,energy_j" header plus one row per output code.
std::string adc_energy_csv(const TechnologyModel& tech);
void cmd_adc_energy(const TechnologyModel& tech, const std::filesystem::path& out);

// Simulates once, then degrades the clean traces over the configured grid.
RobustnessMatrix cmd_matrix(const RunConfig& config, const std::filesystem::path& out);

// Public hardware parameters of a configured tile, as config text.
std::string format_hw_knowledge(const HwKnowledge& hw);

}  // namespace imcsca
