#include "imcsca/mapper.hpp"

#include <cmath>
#include <random>
#include <sstream>

#include "imcsca/error.hpp"

namespace imcsca {

void TileConfig::validate() const {
  if (array_rows < 1 || array_cols < 1 || adc_count < 1 || adc_bits < 1 || cell_bits < 1 ||
      cells_per_weight < 1 || conductance_levels < 2)
    throw ConfigError("tile config: all counts must be positive");
  if (cell_bits * cells_per_weight != 8)
    throw ConfigError("tile config: cell_bits x cells_per_weight must equal the 8-bit weight width");
  if (conductance_levels != (1 << cell_bits))
    throw ConfigError("tile config: conductance_levels must equal 2^cell_bits");
  if (cells_per_weight != 2)
    throw ConfigError("tile config: only the MSB/LSB two-cell split is supported");
  if (array_cols % (2 * adc_count) != 0)
    throw ConfigError("tile config: array_cols must be divisible by 2 x adc_count");
  if (array_cols % 4 != 0) throw ConfigError("tile config: array_cols must be a multiple of 4");
  if (!(g_min > 0.0) || !(g_max > g_min))
    throw ConfigError("tile config: need 0 < g_min < g_max");
}

CellQuad weight_to_conductances(int q, const TileConfig& cfg) {
  const int mag = std::min(std::abs(q), 127);
  const double high = cfg.conductance(mag >> 4);
  const double low = cfg.conductance(mag & 0xf);
  if (q >= 0) return {high, low, cfg.g_min, cfg.g_min};
  return {cfg.g_min, cfg.g_min, high, low};
}

int conductances_to_weight(const CellQuad& cells, const TileConfig& cfg) {
  const auto level = [&](double g) {
    return static_cast<int>(std::lround((g - cfg.g_min) / cfg.level_step()));
  };
  const int pos = 16 * level(cells.pos_msb) + level(cells.pos_lsb);
  const int neg = 16 * level(cells.neg_msb) + level(cells.neg_lsb);
  return pos - neg;
}

const LayerGrid* NetworkMapping::grid_for_layer(int layer_id) const {
  for (const auto& g : layers)
    if (g.layer_id == layer_id) return &g;
  return nullptr;
}

NetworkMapping map_network(const NetworkSpec& net, const QuantizedWeights& weights,
                           const TileConfig& cfg) {
  cfg.validate();
  propagate_shapes(net);
  if (weights.layers.size() != net.layers.size())
    throw MappingError("weights do not cover every layer");

  NetworkMapping mapping;
  mapping.config = cfg;
  const int cols_per_out = cfg.columns_per_output();

  for (std::size_t li = 0; li < net.layers.size(); ++li) {
    const LayerSpec& layer = net.layers[li];
    if (!layer.has_weights()) continue;
    const QuantizedTensor& w = weights.layers[li];
    if (w.dims != weight_dims(net, li))
      throw MappingError("weights for layer " + std::to_string(li) + " have the wrong shape");

    // Logical matrix: one row per flattened kernel element, four columns per
    // output channel.
    const int outs = w.dims[0];
    int rows = 1;
    for (std::size_t d = 1; d < w.dims.size(); ++d) rows *= w.dims[d];
    const int cols = outs * cols_per_out;
    if (rows < 1 || cols < 1) throw MappingError("layer " + std::to_string(li) + " maps to an empty matrix");

    LayerGrid grid;
    grid.layer_id = static_cast<int>(li);
    grid.logical_rows = rows;
    grid.logical_cols = cols;
    grid.grid_rows = (rows + cfg.array_rows - 1) / cfg.array_rows;
    grid.grid_cols = (cols + cfg.array_cols - 1) / cfg.array_cols;

    for (int tr = 0; tr < grid.grid_rows; ++tr) {
      for (int tc = 0; tc < grid.grid_cols; ++tc) {
        TileMapping t;
        t.tile_id = static_cast<int>(mapping.tiles.size());
        t.layer_id = static_cast<int>(li);
        t.tile_row = tr;
        t.tile_col = tc;
        t.row_offset = tr * cfg.array_rows;
        t.col_offset = tc * cfg.array_cols;
        t.used_rows = std::min(cfg.array_rows, rows - t.row_offset);
        t.used_cols = std::min(cfg.array_cols, cols - t.col_offset);
        t.array_rows = cfg.array_rows;
        t.array_cols = cfg.array_cols;
        t.conductance.assign(static_cast<std::size_t>(cfg.array_rows) * cfg.array_cols, cfg.g_min);

        const int first_out = t.col_offset / cols_per_out;
        const int n_out = t.used_cols / cols_per_out;
        for (int r = 0; r < t.used_rows; ++r) {
          const int logical_row = t.row_offset + r;
          for (int o = 0; o < n_out; ++o) {
            const int q = w.values[static_cast<std::size_t>(first_out + o) * rows + logical_row];
            const CellQuad cells = weight_to_conductances(q, cfg);
            const int c = o * cols_per_out;
            t.g(r, c + kPosMsb) = cells.pos_msb;
            t.g(r, c + kNegMsb) = cells.neg_msb;
            t.g(r, c + kPosLsb) = cells.pos_lsb;
            t.g(r, c + kNegLsb) = cells.neg_lsb;
          }
        }
        grid.tile_ids.push_back(t.tile_id);
        mapping.tiles.push_back(std::move(t));
      }
    }
    mapping.layers.push_back(std::move(grid));
  }
  return mapping;
}

std::vector<std::vector<std::uint8_t>> im2col_inputs(const Activation& in, int kernel, int stride,
                                                     int padding) {
  const int wout = conv_output_width(in.shape.width, kernel, stride, padding);
  if (wout < 1) throw ShapeError("im2col: convolution geometry does not fit the input");
  const int cin = in.shape.channels;
  std::vector<std::vector<std::uint8_t>> vectors;
  vectors.reserve(static_cast<std::size_t>(wout) * wout);
  for (int y = 0; y < wout; ++y) {
    for (int x = 0; x < wout; ++x) {
      std::vector<std::uint8_t> v;
      v.reserve(static_cast<std::size_t>(kernel) * kernel * cin);
      for (int c = 0; c < cin; ++c)
        for (int ky = 0; ky < kernel; ++ky)
          for (int kx = 0; kx < kernel; ++kx) {
            const int iy = y * stride + ky - padding;
            const int ix = x * stride + kx - padding;
            const bool inside = iy >= 0 && ix >= 0 && iy < in.shape.height && ix < in.shape.width;
            v.push_back(inside ? in.at(c, iy, ix) : 0);
          }
      vectors.push_back(std::move(v));
    }
  }
  return vectors;
}

NetworkMapping apply_dummy_conductance(NetworkMapping mapping, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(mapping.config.g_min, mapping.config.g_max);
  for (auto& t : mapping.tiles)
    for (int r = 0; r < t.array_rows; ++r)
      for (int c = t.used_cols; c < t.array_cols; ++c) t.g(r, c) = dist(rng);
  return mapping;
}

std::string mapping_manifest(const NetworkMapping& mapping) {
  std::ostringstream out;
  out << "# tile layer tile_row tile_col used_rows used_cols\n";
  for (const auto& t : mapping.tiles)
    out << t.tile_id << ' ' << t.layer_id << ' ' << t.tile_row << ' ' << t.tile_col << ' '
        << t.used_rows << ' ' << t.used_cols << '\n';
  return out.str();
}

}  // namespace imcsca
