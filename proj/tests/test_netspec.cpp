#include <cmath>
#include <fstream>
#include <random>

#include "doctest.h"
#include "imcsca/error.hpp"
#include "imcsca/netspec.hpp"
#include "support.hpp"

using namespace imcsca;

TEST_SUITE("netspec") {

TEST_CASE("output width of a convolution") {
  CHECK(conv_output_width(32, 5, 1, 0) == 28);
  CHECK(conv_output_width(14, 5, 1, 0) == 10);
  for (int w : {1, 7, 32}) CHECK(conv_output_width(w, 1, 1, 0) == w);
  CHECK(conv_output_width(4, 5, 1, 0) == -1);
  CHECK(conv_output_width(10, 3, 2, 0) == -1);  // (10 - 3) not a multiple of 2

  // Count sliding windows directly.
  int windows = 0;
  for (int x = 0; x + 5 <= 14; ++x) ++windows;
  CHECK(conv_output_width(14, 5, 1, 0) == windows);
}

TEST_CASE("LeNet shapes") {
  const auto net = lenet_cifar10();
  const auto shapes = propagate_shapes(net);
  REQUIRE(shapes.size() == net.layers.size());
  CHECK(shapes[0] == Shape{6, 28, 28});
  CHECK(shapes[1] == Shape{6, 14, 14});
  CHECK(shapes[2] == Shape{16, 10, 10});
  CHECK(shapes[3] == Shape{16, 5, 5});
  CHECK(shapes[4] == Shape{120, 1, 1});
  CHECK(shapes.back() == Shape{10, 1, 1});
  CHECK(weight_dims(net, 0) == std::vector<int>{6, 3, 5, 5});
  CHECK(weight_dims(net, 4) == std::vector<int>{120, 400});
  CHECK(weight_dims(net, 1).empty());
}

TEST_CASE("invalid stacks are rejected") {
  NetworkSpec net;
  net.input = {3, 8, 8};
  net.layers = {LayerSpec::conv(4, 9)};
  CHECK_THROWS_AS(propagate_shapes(net), ShapeError);
  net.layers = {LayerSpec::fc(4), LayerSpec::conv(2, 1)};
  CHECK_THROWS_AS(propagate_shapes(net), ShapeError);
  net.layers = {LayerSpec::max_pool(3)};
  CHECK_THROWS_AS(propagate_shapes(net), ShapeError);
}

TEST_CASE("network text round trip") {
  const auto net = lenet_cifar10();
  const auto text = format_network(net);
  const auto back = parse_network(text);
  CHECK(back.input == net.input);
  CHECK(back.layers == net.layers);
  CHECK(parse_network("# comment\ninput 1x4x4\nfc 3  # trailing\n").layers.size() == 1);
  CHECK_THROWS_AS(parse_network("fc 3\n"), ConfigError);
  CHECK_THROWS_AS(parse_network("input 1x4x4\nconv out=2\n"), ConfigError);
  CHECK_THROWS_AS(parse_network("input 1x4x4\nlstm 3\n"), ConfigError);
}

TEST_CASE("quantization") {
  const std::vector<float> w{-1.0f, 0.5f, 1.0f};
  const auto q = quantize_weights(w, {3});
  CHECK(q.values == std::vector<std::int8_t>{-127, 64, 127});
  CHECK(q.scale == doctest::Approx(1.0 / 127));

  const std::vector<float> zeros(5, 0.0f);
  for (auto v : quantize_weights(zeros, {5}).values) CHECK(v == 0);

  std::mt19937_64 rng(7);
  std::uniform_real_distribution<float> d(-3.0f, 3.0f);
  std::vector<float> r(500);
  for (auto& x : r) x = d(rng);
  const auto qr = quantize_weights(r, {500});
  for (std::size_t i = 0; i < r.size(); ++i) CHECK(std::abs(qr.dequantize(i) - r[i]) <= qr.scale / 2 + 1e-7);
}

TEST_CASE("synthetic weights have zero-mean rows and are seeded") {
  const auto net = lenet_cifar10();
  const auto a = synthetic_float_weights(net, 3);
  const auto b = synthetic_float_weights(net, 3);
  CHECK(a[0].values == b[0].values);
  CHECK(a[0].values != synthetic_float_weights(net, 4)[0].values);
  const auto& fc = a[4];
  const int in = fc.dims[1];
  for (int o = 0; o < fc.dims[0]; ++o) {
    double s = 0.0;
    for (int i = 0; i < in; ++i) s += fc.values[static_cast<std::size_t>(o) * in + i];
    CHECK(std::abs(s / in) < 1e-5);
  }
}

TEST_CASE("weight blob round trip") {
  testing::TempDir dir("weights");
  const auto net = lenet_cifar10();
  const auto w = synthetic_float_weights(net, 11);
  save_weights(net, w, dir / "w.bin", dir / "w.bin.manifest");
  const auto back = load_weights(net, dir / "w.bin", dir / "w.bin.manifest");
  REQUIRE(back.size() == w.size());
  for (std::size_t i = 0; i < w.size(); ++i) {
    CHECK(back[i].dims == w[i].dims);
    CHECK(back[i].values == w[i].values);
  }
  std::filesystem::resize_file(dir / "w.bin", 100);
  CHECK_THROWS_AS(load_weights(net, dir / "w.bin", dir / "w.bin.manifest"), ConfigError);
}

TEST_CASE("CIFAR record reader skips the label byte") {
  testing::TempDir dir("cifar");
  std::vector<unsigned char> bytes(2 * 3073);
  for (std::size_t i = 0; i < bytes.size(); ++i) bytes[i] = static_cast<unsigned char>(i * 7);
  {
    std::ofstream out(dir / "batch.bin", std::ios::binary);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  }
  const auto img = load_cifar_record(dir / "batch.bin", 1);
  CHECK(img.shape == Shape{3, 32, 32});
  CHECK(img.data[0] == bytes[3073 + 1]);
  CHECK(img.data[3071] == bytes[2 * 3073 - 1]);
  CHECK_THROWS_AS(load_cifar_record(dir / "batch.bin", 2), ConfigError);
}

TEST_CASE("identity fc passes the input through") {
  NetworkSpec net;
  net.input = {4, 1, 1};
  net.layers = {LayerSpec::fc(4)};
  std::vector<float> eye(16, 0.0f);
  for (int i = 0; i < 4; ++i) eye[static_cast<std::size_t>(i) * 5] = 1.0f;
  const auto qw = quantize_network(net, {FloatTensor{{4, 4}, eye}});
  Activation in{{4, 1, 1}, {0, 9, 200, 255}};
  const auto out = infer_reference(net, qw, in);
  const double scale = qw.layers[0].scale;
  for (int i = 0; i < 4; ++i) CHECK(out[0].values[i] * scale == doctest::Approx(in.data[i]));
}

TEST_CASE("all-zero image gives all-zero logits") {
  const auto net = lenet_cifar10();
  const auto qw = synthetic_weights(net, 1);
  Activation zero{net.input, std::vector<std::uint8_t>(net.input.size(), 0)};
  const auto out = infer_reference(net, qw, zero);
  for (auto v : out.back().values) CHECK(v == 0);
}

TEST_CASE("conv matches a nested-loop oracle") {
  NetworkSpec net;
  net.input = {3, 8, 8};
  net.layers = {LayerSpec::conv(2, 3), LayerSpec::fc(2)};
  const auto qw = synthetic_weights(net, 5);
  const auto img = synthetic_image(net.input, 9);
  const auto out = infer_reference(net, qw, img);
  const auto& w = qw.layers[0].values;  // {2, 3, 3, 3}
  REQUIRE(out[0].shape == Shape{2, 6, 6});
  for (int o = 0; o < 2; ++o)
    for (int y = 0; y < 6; ++y)
      for (int x = 0; x < 6; ++x) {
        std::int64_t acc = 0;
        for (int c = 0; c < 3; ++c)
          for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx)
              acc += static_cast<std::int64_t>(w[static_cast<std::size_t>(((o * 3 + c) * 3 + ky) * 3 + kx)]) *
                     img.at(c, y + ky, x + kx);
        CHECK(out[0].values[static_cast<std::size_t>((o * 6 + y) * 6 + x)] == acc);
      }
}

TEST_CASE("padded strided conv matches the oracle") {
  NetworkSpec net;
  net.input = {2, 9, 9};
  net.layers = {LayerSpec::conv(3, 3, 2, 1), LayerSpec::fc(1)};
  const auto qw = synthetic_weights(net, 6);
  const auto img = synthetic_image(net.input, 2);
  const auto out = infer_reference(net, qw, img);
  REQUIRE(out[0].shape == Shape{3, 5, 5});
  const auto& w = qw.layers[0].values;
  for (int o = 0; o < 3; ++o)
    for (int y = 0; y < 5; ++y)
      for (int x = 0; x < 5; ++x) {
        std::int64_t acc = 0;
        for (int c = 0; c < 2; ++c)
          for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx) {
              const int iy = 2 * y + ky - 1, ix = 2 * x + kx - 1;
              if (iy < 0 || ix < 0 || iy >= 9 || ix >= 9) continue;
              acc += static_cast<std::int64_t>(w[static_cast<std::size_t>(((o * 2 + c) * 3 + ky) * 3 + kx)]) *
                     img.at(c, iy, ix);
            }
        CHECK(out[0].values[static_cast<std::size_t>((o * 5 + y) * 5 + x)] == acc);
      }
}

TEST_CASE("requantize and pooling") {
  LayerOutput acc{{1, 2, 2}, {-5, 300, 600, 12}};
  CHECK(activation_shift(acc.values) == 2);
  const auto a = requantize(acc);
  CHECK(a.data == std::vector<std::uint8_t>{0, 75, 150, 3});
  const auto p = max_pool(a, 2);
  CHECK(p.shape == Shape{1, 1, 1});
  CHECK(p.data[0] == 150);
}

}  // TEST_SUITE
