#include "imcsca/netspec.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "imcsca/error.hpp"

namespace imcsca {

std::string_view to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::Conv:
      return "conv";
    case LayerKind::Pool:
      return "pool";
    case LayerKind::FC:
      return "fc";
  }
  return "?";
}

std::string to_string(const Shape& shape) {
  return std::to_string(shape.channels) + "x" + std::to_string(shape.height) + "x" +
         std::to_string(shape.width);
}

LayerSpec LayerSpec::conv(int out_channels, int kernel, int stride, int padding) {
  LayerSpec l;
  l.kind = LayerKind::Conv;
  l.out = out_channels;
  l.kernel = kernel;
  l.stride = stride;
  l.padding = padding;
  return l;
}

LayerSpec LayerSpec::max_pool(int size) {
  LayerSpec l;
  l.kind = LayerKind::Pool;
  l.out = 0;
  l.pool = size;
  return l;
}

LayerSpec LayerSpec::fc(int out_features) {
  LayerSpec l;
  l.kind = LayerKind::FC;
  l.out = out_features;
  return l;
}

NetworkSpec lenet_cifar10() {
  NetworkSpec net;
  net.input = {3, 32, 32};
  net.layers = {LayerSpec::conv(6, 5),   LayerSpec::max_pool(2), LayerSpec::conv(16, 5),
                LayerSpec::max_pool(2),  LayerSpec::fc(120),     LayerSpec::fc(84),
                LayerSpec::fc(10)};
  return net;
}

int conv_output_width(int in_width, int kernel, int stride, int padding) {
  if (in_width < 1 || kernel < 1 || stride < 1 || padding < 0) return -1;
  const int span = in_width - kernel + 2 * padding;
  if (span < 0 || span % stride != 0) return -1;
  return span / stride + 1;
}

namespace {

std::string layer_name(std::size_t index, const LayerSpec& layer) {
  return "layer " + std::to_string(index) + " (" + std::string(to_string(layer.kind)) + ")";
}

}  // namespace

std::vector<Shape> propagate_shapes(const NetworkSpec& net) {
  if (net.layers.empty()) throw ShapeError("network has no layers");
  if (net.input.channels < 1 || net.input.height < 1 || net.input.width < 1)
    throw ShapeError("input shape must be positive, got " + to_string(net.input));
  if (net.input.height != net.input.width)
    throw ShapeError("only square inputs are supported, got " + to_string(net.input));

  std::vector<Shape> shapes;
  shapes.reserve(net.layers.size());
  Shape cur = net.input;
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const LayerSpec& l = net.layers[i];
    switch (l.kind) {
      case LayerKind::Conv: {
        if (l.out < 1 || l.kernel < 1 || l.stride < 1 || l.padding < 0)
          throw ShapeError(layer_name(i, l) + ": invalid conv parameters");
        if (cur.height == 1 && cur.width == 1 && i > 0 &&
            net.layers[i - 1].kind == LayerKind::FC)
          throw ShapeError(layer_name(i, l) + ": conv cannot follow a fully connected layer");
        const int w = conv_output_width(cur.width, l.kernel, l.stride, l.padding);
        if (w < 1)
          throw ShapeError(layer_name(i, l) + ": (" + std::to_string(cur.width) + " - " +
                           std::to_string(l.kernel) + " + 2*" + std::to_string(l.padding) +
                           ") is not divisible by stride " + std::to_string(l.stride));
        cur = {l.out, w, w};
        break;
      }
      case LayerKind::Pool: {
        if (l.pool < 1) throw ShapeError(layer_name(i, l) + ": pool size must be >= 1");
        if (cur.width % l.pool != 0)
          throw ShapeError(layer_name(i, l) + ": width " + std::to_string(cur.width) +
                           " is not divisible by pool " + std::to_string(l.pool));
        cur = {cur.channels, cur.height / l.pool, cur.width / l.pool};
        break;
      }
      case LayerKind::FC: {
        if (l.out < 1) throw ShapeError(layer_name(i, l) + ": out_features must be >= 1");
        cur = {l.out, 1, 1};
        break;
      }
    }
    shapes.push_back(cur);
  }
  return shapes;
}

Shape layer_input_shape(const NetworkSpec& net, std::size_t index) {
  if (index == 0) return net.input;
  return propagate_shapes(net).at(index - 1);
}

std::vector<int> weight_dims(const NetworkSpec& net, std::size_t index) {
  const LayerSpec& l = net.layers.at(index);
  const Shape in = layer_input_shape(net, index);
  switch (l.kind) {
    case LayerKind::Conv:
      return {l.out, in.channels, l.kernel, l.kernel};
    case LayerKind::FC:
      return {l.out, static_cast<int>(in.size())};
    case LayerKind::Pool:
      break;
  }
  return {};
}

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

int parse_int(const std::string& token, std::size_t line_no) {
  try {
    std::size_t used = 0;
    const int v = std::stoi(token, &used);
    if (used != token.size()) throw std::invalid_argument(token);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("network line " + std::to_string(line_no) + ": expected integer, got '" +
                      token + "'");
  }
}

}  // namespace

NetworkSpec parse_network(std::string_view text) {
  NetworkSpec net;
  bool have_input = false;
  std::istringstream in{std::string(text)};
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    if (const auto hash = raw.find('#'); hash != std::string::npos) raw.resize(hash);
    const std::string line = trim(raw);
    if (line.empty()) continue;
    std::istringstream tokens(line);
    std::string head;
    tokens >> head;
    std::vector<std::string> args;
    for (std::string t; tokens >> t;) args.push_back(t);

    if (head == "input") {
      if (args.size() != 1) throw ConfigError("network line " + std::to_string(line_no) + ": input CxHxW");
      std::string dims = args[0];
      std::replace(dims.begin(), dims.end(), 'x', ' ');
      std::istringstream ds(dims);
      std::string c, h, w;
      ds >> c >> h >> w;
      net.input = {parse_int(c, line_no), parse_int(h, line_no), parse_int(w, line_no)};
      have_input = true;
    } else if (head == "conv") {
      LayerSpec l = LayerSpec::conv(0, 0);
      bool have_out = false, have_k = false;
      for (const auto& a : args) {
        const auto eq = a.find('=');
        if (eq == std::string::npos)
          throw ConfigError("network line " + std::to_string(line_no) + ": expected key=value, got '" + a + "'");
        const std::string key = a.substr(0, eq);
        const int v = parse_int(a.substr(eq + 1), line_no);
        if (key == "out") {
          l.out = v;
          have_out = true;
        } else if (key == "k") {
          l.kernel = v;
          have_k = true;
        } else if (key == "s") {
          l.stride = v;
        } else if (key == "p") {
          l.padding = v;
        } else {
          throw ConfigError("network line " + std::to_string(line_no) + ": unknown conv key '" + key + "'");
        }
      }
      if (!have_out || !have_k)
        throw ConfigError("network line " + std::to_string(line_no) + ": conv needs out= and k=");
      net.layers.push_back(l);
    } else if (head == "pool") {
      if (args.size() != 1) throw ConfigError("network line " + std::to_string(line_no) + ": pool <size>");
      net.layers.push_back(LayerSpec::max_pool(parse_int(args[0], line_no)));
    } else if (head == "fc") {
      if (args.size() != 1) throw ConfigError("network line " + std::to_string(line_no) + ": fc <features>");
      net.layers.push_back(LayerSpec::fc(parse_int(args[0], line_no)));
    } else {
      throw ConfigError("network line " + std::to_string(line_no) + ": unknown directive '" + head + "'");
    }
  }
  if (!have_input) throw ConfigError("network file has no 'input' line");
  propagate_shapes(net);
  return net;
}

std::string format_network(const NetworkSpec& net) {
  std::ostringstream out;
  out << "input " << to_string(net.input) << "\n";
  for (const auto& l : net.layers) {
    switch (l.kind) {
      case LayerKind::Conv:
        out << "conv out=" << l.out << " k=" << l.kernel << " s=" << l.stride << " p=" << l.padding
            << "\n";
        break;
      case LayerKind::Pool:
        out << "pool " << l.pool << "\n";
        break;
      case LayerKind::FC:
        out << "fc " << l.out << "\n";
        break;
    }
  }
  return out.str();
}

NetworkSpec load_network(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open network file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_network(ss.str());
}

void save_network(const NetworkSpec& net, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write network file " + path.string());
  out << format_network(net);
}

QuantizedTensor quantize_weights(std::span<const float> weights, std::vector<int> dims, int bits) {
  if (bits != 8) throw ConfigError("only 8-bit weight quantization is supported");
  QuantizedTensor q;
  q.dims = std::move(dims);
  q.values.resize(weights.size());
  double max_abs = 0.0;
  for (float w : weights) {
    if (!std::isfinite(w)) throw ConfigError("non-finite weight");
    max_abs = std::max(max_abs, std::abs(static_cast<double>(w)));
  }
  if (max_abs == 0.0) {
    q.scale = 1.0;
    return q;
  }
  q.scale = max_abs / 127.0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const double r = std::round(static_cast<double>(weights[i]) / q.scale);
    q.values[i] = static_cast<std::int8_t>(std::clamp(r, -127.0, 127.0));
  }
  return q;
}

std::vector<FloatTensor> synthetic_float_weights(const NetworkSpec& net, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> dist(-1.0f, 1.0f);
  std::vector<FloatTensor> out;
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    FloatTensor t;
    t.dims = weight_dims(net, i);
    std::size_t n = t.dims.empty() ? 0 : 1;
    for (int d : t.dims) n *= static_cast<std::size_t>(d);
    t.values.resize(n);
    for (auto& v : t.values) v = dist(rng);
    // Zero-mean per output channel, as trained kernels tend to be; otherwise
    // whole channels die behind the ReLU on all-positive pixel inputs.
    if (!t.dims.empty()) {
      const std::size_t per_out = n / static_cast<std::size_t>(t.dims[0]);
      for (std::size_t o = 0; o < static_cast<std::size_t>(t.dims[0]); ++o) {
        double mean = 0.0;
        for (std::size_t i = 0; i < per_out; ++i) mean += t.values[o * per_out + i];
        mean /= static_cast<double>(per_out);
        for (std::size_t i = 0; i < per_out; ++i)
          t.values[o * per_out + i] -= static_cast<float>(mean);
      }
    }
    out.push_back(std::move(t));
  }
  return out;
}

QuantizedWeights quantize_network(const NetworkSpec& net, const std::vector<FloatTensor>& weights) {
  if (weights.size() != net.layers.size())
    throw ShapeError("weight list has " + std::to_string(weights.size()) + " entries for " +
                     std::to_string(net.layers.size()) + " layers");
  QuantizedWeights qw;
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const auto dims = weight_dims(net, i);
    if (weights[i].dims != dims)
      throw ShapeError("weights for layer " + std::to_string(i) + " have the wrong shape");
    if (dims.empty()) {
      qw.layers.emplace_back();
      continue;
    }
    qw.layers.push_back(quantize_weights(weights[i].values, dims));
  }
  return qw;
}

QuantizedWeights synthetic_weights(const NetworkSpec& net, std::uint64_t seed) {
  return quantize_network(net, synthetic_float_weights(net, seed));
}

std::vector<FloatTensor> load_weights(const NetworkSpec& net, const std::filesystem::path& blob,
                                      const std::filesystem::path& manifest) {
  std::ifstream man(manifest);
  if (!man) throw ConfigError("cannot open weight manifest " + manifest.string());
  std::ifstream data(blob, std::ios::binary);
  if (!data) throw ConfigError("cannot open weight blob " + blob.string());

  std::vector<FloatTensor> out(net.layers.size());
  for (std::size_t i = 0; i < net.layers.size(); ++i) out[i].dims = weight_dims(net, i);

  std::string line;
  while (std::getline(man, line)) {
    if (trim(line).empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::size_t index = 0;
    if (!(ls >> index) || index >= net.layers.size())
      throw ConfigError("weight manifest: bad layer index in '" + line + "'");
    std::vector<int> dims;
    for (int d; ls >> d;) dims.push_back(d);
    if (dims != out[index].dims)
      throw ShapeError("weight manifest: layer " + std::to_string(index) +
                       " dims do not match the network");
    std::size_t n = 1;
    for (int d : dims) n *= static_cast<std::size_t>(d);
    out[index].values.resize(n);
    for (auto& v : out[index].values) {
      unsigned char b[4];
      if (!data.read(reinterpret_cast<char*>(b), 4))
        throw ConfigError("weight blob is shorter than the manifest requires");
      const std::uint32_t bits = static_cast<std::uint32_t>(b[0]) |
                                 (static_cast<std::uint32_t>(b[1]) << 8) |
                                 (static_cast<std::uint32_t>(b[2]) << 16) |
                                 (static_cast<std::uint32_t>(b[3]) << 24);
      v = std::bit_cast<float>(bits);
    }
  }
  for (std::size_t i = 0; i < net.layers.size(); ++i)
    if (!out[i].dims.empty() && out[i].values.empty())
      throw ConfigError("weight manifest has no entry for layer " + std::to_string(i));
  return out;
}

void save_weights(const NetworkSpec& net, const std::vector<FloatTensor>& weights,
                  const std::filesystem::path& blob, const std::filesystem::path& manifest) {
  std::ofstream man(manifest);
  std::ofstream data(blob, std::ios::binary);
  if (!man || !data) throw ConfigError("cannot write weights to " + blob.string());
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    if (weights.at(i).dims.empty()) continue;
    man << i;
    for (int d : weights[i].dims) man << ' ' << d;
    man << '\n';
    for (float v : weights[i].values) {
      const auto bits = std::bit_cast<std::uint32_t>(v);
      const char b[4] = {static_cast<char>(bits & 0xff), static_cast<char>((bits >> 8) & 0xff),
                         static_cast<char>((bits >> 16) & 0xff),
                         static_cast<char>((bits >> 24) & 0xff)};
      data.write(b, 4);
    }
  }
}

Activation synthetic_image(const Shape& shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> dist(0, 255);
  Activation a;
  a.shape = shape;
  a.data.resize(shape.size());
  for (auto& v : a.data) v = static_cast<std::uint8_t>(dist(rng));
  return a;
}

Activation load_cifar_record(const std::filesystem::path& batch, std::size_t index) {
  constexpr std::size_t kRecord = 3073;
  std::ifstream in(batch, std::ios::binary);
  if (!in) throw ConfigError("cannot open CIFAR batch " + batch.string());
  in.seekg(static_cast<std::streamoff>(index * kRecord + 1));
  Activation a;
  a.shape = {3, 32, 32};
  a.data.resize(3072);
  if (!in.read(reinterpret_cast<char*>(a.data.data()), 3072))
    throw ConfigError("CIFAR batch " + batch.string() + " has no record " + std::to_string(index));
  return a;
}

int activation_shift(std::span<const std::int64_t> accumulators) {
  std::int64_t max_v = 0;
  for (auto v : accumulators) max_v = std::max(max_v, v);
  int shift = 0;
  while ((max_v >> shift) > 255) ++shift;
  return shift;
}

Activation requantize(const LayerOutput& acc) {
  const int shift = activation_shift(acc.values);
  Activation a;
  a.shape = acc.shape;
  a.data.resize(acc.values.size());
  for (std::size_t i = 0; i < acc.values.size(); ++i)
    a.data[i] = static_cast<std::uint8_t>(std::max<std::int64_t>(acc.values[i], 0) >> shift);
  return a;
}

Activation max_pool(const Activation& in, int size) {
  Activation out;
  out.shape = {in.shape.channels, in.shape.height / size, in.shape.width / size};
  out.data.resize(out.shape.size());
  std::size_t o = 0;
  for (int c = 0; c < out.shape.channels; ++c)
    for (int y = 0; y < out.shape.height; ++y)
      for (int x = 0; x < out.shape.width; ++x) {
        std::uint8_t m = 0;
        for (int dy = 0; dy < size; ++dy)
          for (int dx = 0; dx < size; ++dx) m = std::max(m, in.at(c, y * size + dy, x * size + dx));
        out.data[o++] = m;
      }
  return out;
}

Activation flatten(const Activation& in) {
  Activation out = in;
  out.shape = {static_cast<int>(in.shape.size()), 1, 1};
  return out;
}

namespace {

LayerOutput conv_layer(const LayerSpec& l, const QuantizedTensor& w, const Activation& in) {
  const int cin = in.shape.channels;
  const int wout = conv_output_width(in.shape.width, l.kernel, l.stride, l.padding);
  LayerOutput out;
  out.shape = {l.out, wout, wout};
  out.values.assign(out.shape.size(), 0);
  const int k = l.kernel;
  for (int o = 0; o < l.out; ++o)
    for (int y = 0; y < wout; ++y)
      for (int x = 0; x < wout; ++x) {
        std::int64_t acc = 0;
        for (int c = 0; c < cin; ++c)
          for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
              const int iy = y * l.stride + ky - l.padding;
              const int ix = x * l.stride + kx - l.padding;
              if (iy < 0 || ix < 0 || iy >= in.shape.height || ix >= in.shape.width) continue;
              const std::size_t wi = ((static_cast<std::size_t>(o) * cin + c) * k + ky) * k + kx;
              acc += static_cast<std::int64_t>(w.values[wi]) * in.at(c, iy, ix);
            }
        out.values[(static_cast<std::size_t>(o) * wout + y) * wout + x] = acc;
      }
  return out;
}

LayerOutput fc_layer(const LayerSpec& l, const QuantizedTensor& w, const Activation& in) {
  const std::size_t n_in = in.data.size();
  LayerOutput out;
  out.shape = {l.out, 1, 1};
  out.values.assign(static_cast<std::size_t>(l.out), 0);
  for (int o = 0; o < l.out; ++o) {
    std::int64_t acc = 0;
    for (std::size_t i = 0; i < n_in; ++i)
      acc += static_cast<std::int64_t>(w.values[o * n_in + i]) * in.data[i];
    out.values[static_cast<std::size_t>(o)] = acc;
  }
  return out;
}

}  // namespace

std::vector<LayerOutput> infer_reference(const NetworkSpec& net, const QuantizedWeights& weights,
                                         const Activation& image) {
  propagate_shapes(net);
  if (!(image.shape == net.input) || image.data.size() != net.input.size())
    throw ShapeError("image shape " + to_string(image.shape) + " does not match network input " +
                     to_string(net.input));
  if (weights.layers.size() != net.layers.size())
    throw ShapeError("weights do not cover every layer");

  std::vector<LayerOutput> outputs;
  Activation act = image;
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const LayerSpec& l = net.layers[i];
    if (l.kind == LayerKind::Pool) {
      act = max_pool(act, l.pool);
      LayerOutput p;
      p.shape = act.shape;
      p.values.assign(act.data.begin(), act.data.end());
      outputs.push_back(std::move(p));
      continue;
    }
    const auto dims = weight_dims(net, i);
    if (weights.layers[i].dims != dims) throw ShapeError("weights for layer " + std::to_string(i) + " have the wrong shape");
    LayerOutput acc = l.kind == LayerKind::Conv ? conv_layer(l, weights.layers[i], act)
                                                : fc_layer(l, weights.layers[i], flatten(act));
    act = requantize(acc);
    outputs.push_back(std::move(acc));
  }
  return outputs;
}

}  // namespace imcsca
