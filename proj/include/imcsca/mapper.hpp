#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "imcsca/netspec.hpp"

namespace imcsca {

struct TileConfig {
  int array_rows = 128;
  int array_cols = 128;
  int adc_count = 4;
  int adc_bits = 8;
  int cell_bits = 4;
  int cells_per_weight = 2;
  double g_min = 1e-6;    // siemens
  double g_max = 100e-6;  // siemens
  int conductance_levels = 16;

  void validate() const;

  double level_step() const { return (g_max - g_min) / (conductance_levels - 1); }
  double conductance(int level) const { return g_min + level * level_step(); }
  // Positive/negative x cells per weight.
  int columns_per_output() const { return 2 * cells_per_weight; }
  int max_conversions_per_adc() const { return array_cols / 2 / adc_count; }
};

// Conductances of the four cells holding one signed 8-bit weight.
struct CellQuad {
  double pos_msb;
  double pos_lsb;
  double neg_msb;
  double neg_lsb;
};

CellQuad weight_to_conductances(int q, const TileConfig& cfg);

// Inverse of weight_to_conductances for cells holding exact level values.
int conductances_to_weight(const CellQuad& cells, const TileConfig& cfg);

// Column offsets of a weight's cells inside its 4-column group. Adjacent
// pairs are subtracted in the analog domain.
inline constexpr int kPosMsb = 0;
inline constexpr int kNegMsb = 1;
inline constexpr int kPosLsb = 2;
inline constexpr int kNegLsb = 3;

struct TileMapping {
  int tile_id = 0;
  int layer_id = 0;
  int tile_row = 0;    // grid position within the layer
  int tile_col = 0;
  int row_offset = 0;  // first logical row / column held by this tile
  int col_offset = 0;
  int used_rows = 0;
  int used_cols = 0;
  int array_rows = 0;
  int array_cols = 0;
  std::vector<double> conductance;  // array_rows x array_cols, row-major, siemens

  double g(int row, int col) const {
    return conductance[static_cast<std::size_t>(row) * array_cols + col];
  }
  double& g(int row, int col) {
    return conductance[static_cast<std::size_t>(row) * array_cols + col];
  }
  // Differential column pairs, one ADC conversion each.
  int used_pairs() const { return used_cols / 2; }
};

struct LayerGrid {
  int layer_id = 0;
  int logical_rows = 0;
  int logical_cols = 0;
  int grid_rows = 0;
  int grid_cols = 0;
  std::vector<int> tile_ids;  // row-major over the grid
};

struct NetworkMapping {
  TileConfig config;
  std::vector<TileMapping> tiles;
  std::vector<LayerGrid> layers;  // weighted layers only, in network order

  const LayerGrid* grid_for_layer(int layer_id) const;
};

NetworkMapping map_network(const NetworkSpec& net, const QuantizedWeights& weights,
                           const TileConfig& cfg);

// One flattened K*K*C_in vector per output pixel, raster order. Element order
// is channel-major then kernel row then kernel column, matching the row order
// used by map_network.
std::vector<std::vector<std::uint8_t>> im2col_inputs(const Activation& in, int kernel, int stride,
                                                     int padding);

// Fills every unused column of every tile with uniform random conductances.
NetworkMapping apply_dummy_conductance(NetworkMapping mapping, std::uint64_t seed);

// Debug manifest: one line per tile with layer, grid position and usage.
std::string mapping_manifest(const NetworkMapping& mapping);

}  // namespace imcsca
