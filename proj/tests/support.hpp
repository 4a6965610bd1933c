#pragma once

#include <filesystem>
#include <random>
#include <string>

#include <unistd.h>

#include "imcsca/netspec.hpp"

namespace testing {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("imcsca_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

// Small valid conv/pool/fc stack: one or two convs with optional 2x2 pooling,
// then one to three fc layers.
inline imcsca::NetworkSpec random_network(std::uint64_t seed) {
  using imcsca::LayerSpec;
  std::mt19937_64 rng(seed);
  auto pick = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
  imcsca::NetworkSpec net;
  int width = pick(8, 16);
  net.input = {pick(1, 3), width, width};
  const int convs = pick(1, 2);
  for (int i = 0; i < convs; ++i) {
    const int k = 2 * pick(0, 2) + 1;
    if (width - k + 1 < 2) break;
    net.layers.push_back(LayerSpec::conv(2 * pick(1, 20), k));
    width = width - k + 1;
    if (width % 2 == 0 && width >= 4 && pick(0, 1)) {
      net.layers.push_back(LayerSpec::max_pool(2));
      width /= 2;
    }
  }
  const int fcs = pick(1, 3);
  // Widths are even: one conversion round resolves two outputs.
  for (int i = 0; i < fcs; ++i) net.layers.push_back(LayerSpec::fc(2 * pick(1, 100)));
  return net;
}

}  // namespace testing
