#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace imcsca {

enum class LayerKind { Conv, Pool, FC };

std::string_view to_string(LayerKind kind);

struct LayerSpec {
  LayerKind kind = LayerKind::FC;
  int out = 1;      // output channels (Conv) or output features (FC)
  int kernel = 1;   // Conv only
  int stride = 1;   // Conv only
  int padding = 0;  // Conv only
  int pool = 1;     // Pool only

  static LayerSpec conv(int out_channels, int kernel, int stride = 1, int padding = 0);
  static LayerSpec max_pool(int size);
  static LayerSpec fc(int out_features);

  bool has_weights() const { return kind != LayerKind::Pool; }
  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

struct Shape {
  int channels = 0;
  int height = 0;
  int width = 0;

  std::size_t size() const {
    return static_cast<std::size_t>(channels) * height * width;
  }
  friend bool operator==(const Shape&, const Shape&) = default;
};

std::string to_string(const Shape& shape);

struct NetworkSpec {
  Shape input;
  std::vector<LayerSpec> layers;
};

// Conv(6,K5) -> Pool2 -> Conv(16,K5) -> Pool2 -> FC120 -> FC84 -> FC10 on 3x32x32.
NetworkSpec lenet_cifar10();

// Output width of a convolution, or -1 when the geometry does not divide
// exactly or collapses to zero.
int conv_output_width(int in_width, int kernel, int stride, int padding);

// Feature-map shape after every layer. Throws ShapeError naming the layer.
std::vector<Shape> propagate_shapes(const NetworkSpec& net);

// Input shape seen by layer `index` (the network input for index 0).
Shape layer_input_shape(const NetworkSpec& net, std::size_t index);

// Weight tensor dims: Conv {out, in_channels, K, K}; FC {out, in_features};
// empty for Pool.
std::vector<int> weight_dims(const NetworkSpec& net, std::size_t index);

// Text form of a network, one layer per line:
//
//   input 3x32x32
//   conv out=6 k=5 s=1 p=0
//   pool 2
//   fc 120
//
// '#' starts a comment.
NetworkSpec parse_network(std::string_view text);
std::string format_network(const NetworkSpec& net);
NetworkSpec load_network(const std::filesystem::path& path);
void save_network(const NetworkSpec& net, const std::filesystem::path& path);

struct QuantizedTensor {
  std::vector<int> dims;
  std::vector<std::int8_t> values;
  double scale = 1.0;

  double dequantize(std::size_t i) const { return values[i] * scale; }
};

// One entry per layer; Pool layers hold an empty tensor.
struct QuantizedWeights {
  std::vector<QuantizedTensor> layers;
};

// Symmetric per-tensor quantization: scale = max|w| / 127, clamp to +-127.
QuantizedTensor quantize_weights(std::span<const float> weights, std::vector<int> dims,
                                 int bits = 8);

struct FloatTensor {
  std::vector<int> dims;
  std::vector<float> values;
};

// Uniform(-1, 1) float weights for every layer, shifted to zero mean per
// output channel. Seeded.
std::vector<FloatTensor> synthetic_float_weights(const NetworkSpec& net, std::uint64_t seed);
QuantizedWeights quantize_network(const NetworkSpec& net, const std::vector<FloatTensor>& weights);
QuantizedWeights synthetic_weights(const NetworkSpec& net, std::uint64_t seed);

// Flat little-endian float32 blob plus a text manifest with one line per
// weighted layer: "<layer index> <dim0> <dim1> ...".
std::vector<FloatTensor> load_weights(const NetworkSpec& net, const std::filesystem::path& blob,
                                      const std::filesystem::path& manifest);
void save_weights(const NetworkSpec& net, const std::vector<FloatTensor>& weights,
                  const std::filesystem::path& blob, const std::filesystem::path& manifest);

// Unsigned 8-bit activation tensor in CHW order.
struct Activation {
  Shape shape;
  std::vector<std::uint8_t> data;

  std::uint8_t at(int c, int y, int x) const {
    return data[(static_cast<std::size_t>(c) * shape.height + y) * shape.width + x];
  }
};

Activation synthetic_image(const Shape& shape, std::uint64_t seed);

// Reads record `index` of a CIFAR-10 binary batch (1 label byte + 3072 pixels).
Activation load_cifar_record(const std::filesystem::path& batch, std::size_t index);

struct LayerOutput {
  Shape shape;
  std::vector<std::int64_t> values;

  friend bool operator==(const LayerOutput&, const LayerOutput&) = default;
};

// Smallest right shift that brings the largest ReLU'd accumulator into 8 bits.
int activation_shift(std::span<const std::int64_t> accumulators);

// ReLU + shift to uint8. Used between layers by both the reference and the
// simulator.
Activation requantize(const LayerOutput& accumulators);

Activation max_pool(const Activation& in, int size);

// Flattens CHW into a (C*H*W, 1, 1) activation.
Activation flatten(const Activation& in);

// Bit-exact integer inference. Conv/FC entries hold raw accumulators, Pool
// entries hold the pooled 8-bit activations.
std::vector<LayerOutput> infer_reference(const NetworkSpec& net, const QuantizedWeights& weights,
                                         const Activation& image);

}  // namespace imcsca
