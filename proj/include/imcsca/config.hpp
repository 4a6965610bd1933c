#pragma once

// Run configuration: flat "key = value" text with dotted sections, e.g.
//
//   seed = 3
//   tile.array_rows = 128
//   tech.lut.shift_add.rise = 1e-15
//   matrix.rates = 1e10, 1e9
//
// '#' starts a comment. Unknown keys and malformed values are errors.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "imcsca/artifacts.hpp"
#include "imcsca/attack.hpp"
#include "imcsca/mapper.hpp"
#include "imcsca/powersim.hpp"

namespace imcsca {

struct ImageSource {
  int count = 1;
  std::optional<std::uint64_t> seed;
  std::filesystem::path cifar_batch;  // empty: synthetic images
  int cifar_first = 0;                // first record used from the batch
};

struct MatrixGrid {
  std::vector<double> rates{1e10, 1e9, 5e8, 2e8};
  std::vector<double> noises{0.0, 1e-3, 2e-3, 3e-3};
  std::optional<std::uint64_t> seed;
};

struct RunConfig {
  std::uint64_t seed = 0;  // default for every seed not set on its own

  std::filesystem::path network;           // empty: built-in LeNet
  std::filesystem::path weights;           // empty: synthetic weights
  std::filesystem::path weights_manifest;  // defaults to <weights>.manifest
  std::optional<std::uint64_t> weights_seed;

  TileConfig tile;
  TechnologyModel tech;
  SimulationOptions sim;
  std::optional<std::uint64_t> sim_seed;
  bool dummy_conductance = false;
  bool binary_traces = false;

  ArtifactSpec artifacts;
  std::optional<std::uint64_t> artifacts_seed;
  HwKnowledge hw;
  AttackParams attack;
  ImageSource images;
  MatrixGrid matrix;

  std::uint64_t resolved_weights_seed() const { return weights_seed.value_or(seed); }
  std::uint64_t resolved_image_seed() const { return images.seed.value_or(seed); }
  std::uint64_t resolved_sim_seed() const { return sim_seed.value_or(seed); }
  std::uint64_t resolved_artifacts_seed() const { return artifacts_seed.value_or(seed); }
  std::uint64_t resolved_matrix_seed() const { return matrix.seed.value_or(seed); }

  // Range checks on every section plus existence of referenced files.
  void validate() const;
};

// Sets one key. `origin` prefixes error messages.
void set_config_value(RunConfig& config, std::string_view key, std::string_view value,
                      std::string_view origin = "--set");

// "key=value" as given on the command line.
void apply_override(RunConfig& config, std::string_view assignment);

// A non-empty `sections` restricts the accepted keys to those starting with
// one of the given prefixes, e.g. {"hw.", "attack."}.
void parse_config(RunConfig& config, std::string_view text, std::string_view origin = "config",
                  const std::vector<std::string>& sections = {});
RunConfig load_config(const std::filesystem::path& path);

// Relative paths in a config file resolve against the file's directory.
// paths.tech names a file of tech.* keys that is applied in place.
void load_config_into(RunConfig& config, const std::filesystem::path& path,
                      const std::vector<std::string>& sections = {});

// Throws ConfigError unless `key` starts with one of `sections`.
void require_section(std::string_view key, const std::vector<std::string>& sections);

// Every known key, sorted.
std::vector<std::string> config_keys();

// Resolved configuration in the same text format; parsing it back yields the
// same configuration.
std::string format_config(const RunConfig& config);

}  // namespace imcsca
