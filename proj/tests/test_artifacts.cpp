#include <cmath>
#include <fstream>
#include <numeric>

#include "doctest.h"
#include "imcsca/artifacts.hpp"
#include "imcsca/error.hpp"
#include "imcsca/trace.hpp"
#include "support.hpp"

using namespace imcsca;

namespace {

PowerTrace ramp(std::size_t n, int tile = 0) {
  PowerTrace t;
  t.tile_id = tile;
  t.sample_rate = 1e10;
  t.t0 = 2.5e-7;
  t.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) t.samples[i] = 1e-4 * std::sin(0.01 * static_cast<double>(i)) + 2e-4;
  return t;
}

}  // namespace

TEST_SUITE("trace") {

TEST_CASE("text and binary files round-trip exactly") {
  testing::TempDir dir("trace");
  const auto t = ramp(1000, 7);
  for (bool binary : {false, true}) {
    const auto path = dir / trace_file_name(t.tile_id, binary);
    write_trace(t, path, binary);
    const auto back = read_trace(path);
    CHECK(back.tile_id == 7);
    CHECK(back.sample_rate == t.sample_rate);
    CHECK(back.t0 == t.t0);
    CHECK(back.samples == t.samples);
  }
}

TEST_CASE("header line") {
  PowerTrace t;
  t.tile_id = 3;
  t.sample_rate = 1e9;
  t.samples = {0.0, 1.0};
  CHECK(trace_header(t).rfind("imc-trace v1, tile=3, rate=", 0) == 0);
  CHECK(trace_header(t).find("n=2") != std::string::npos);
}

TEST_CASE("malformed files are rejected") {
  testing::TempDir dir("badtrace");
  auto write = [&](const std::string& name, const std::string& text) {
    std::ofstream(dir / name) << text;
    return dir / name;
  };
  CHECK_THROWS_AS(read_trace(write("a.trace", "hello\n1\n")), TraceFormatError);
  CHECK_THROWS_AS(read_trace(write("b.trace", "imc-trace v1, tile=0, rate=1e9, n=3\n1\n2\n")), TraceFormatError);
  CHECK_THROWS_AS(read_trace(write("c.trace", "imc-trace v1, tile=0, rate=1e9, n=1\nx\n")), TraceFormatError);
  CHECK_THROWS_AS(read_trace(write("d.trace", "imc-trace v1, tile=0, n=1\n1\n")), TraceFormatError);
  CHECK_THROWS_AS(read_trace(dir / "missing.trace"), TraceFormatError);
}

TEST_CASE("directory read sorts by tile and ignores other files") {
  testing::TempDir dir("tracedir");
  write_trace_dir({ramp(10, 2), ramp(10, 0), ramp(10, 11)}, dir.path());
  std::ofstream(dir / "notes.txt") << "ignored\n";
  const auto all = read_trace_dir(dir.path());
  REQUIRE(all.size() == 3);
  CHECK(all[0].tile_id == 0);
  CHECK(all[1].tile_id == 2);
  CHECK(all[2].tile_id == 11);
  CHECK_THROWS_AS(read_trace_dir(dir / "nope"), TraceFormatError);
}

}  // TEST_SUITE

TEST_SUITE("artifacts") {

TEST_CASE("zero noise is the identity") {
  const auto t = ramp(5000);
  CHECK(add_gaussian_noise(t, 0.0, 1).samples == t.samples);
  CHECK(resample(t, t.sample_rate).samples == t.samples);
  CHECK(apply_artifacts(t, ArtifactSpec{}).samples == t.samples);
}

TEST_CASE("noise is unbiased and seeded") {
  PowerTrace t;
  t.samples.assign(100000, 1e-3);
  const double sigma = 2e-3;
  const auto a = add_gaussian_noise(t, sigma, 42);
  const auto b = add_gaussian_noise(t, sigma, 42);
  CHECK(a.samples == b.samples);
  CHECK(a.samples != add_gaussian_noise(t, sigma, 43).samples);
  double mean = 0.0, var = 0.0;
  for (std::size_t i = 0; i < t.samples.size(); ++i) mean += a.samples[i] - t.samples[i];
  mean /= static_cast<double>(t.samples.size());
  for (std::size_t i = 0; i < t.samples.size(); ++i) {
    const double d = a.samples[i] - t.samples[i] - mean;
    var += d * d;
  }
  var /= static_cast<double>(t.samples.size() - 1);
  CHECK(std::abs(mean) < 5 * sigma / std::sqrt(static_cast<double>(t.samples.size())));
  CHECK(std::sqrt(var) == doctest::Approx(sigma).epsilon(0.02));
  CHECK_THROWS_AS(add_gaussian_noise(t, -1.0, 1), ConfigError);
}

TEST_CASE("resampling averages whole bins") {
  const auto t = ramp(10000);
  const auto r = resample(t, 1e9);
  REQUIRE(r.samples.size() == 1000);
  CHECK(r.sample_rate == 1e9);
  CHECK(r.t0 == t.t0);
  for (std::size_t i = 0; i < r.samples.size(); i += 37) {
    double s = 0.0;
    for (std::size_t j = 0; j < 10; ++j) s += t.samples[10 * i + j];
    CHECK(r.samples[i] == doctest::Approx(s / 10).epsilon(1e-12));
  }
  CHECK(resample(t, 2e8).samples.size() == t.samples.size() / 50);
  // Energy is conserved when the length divides.
  CHECK(r.energy() == doctest::Approx(t.energy()).epsilon(1e-12));
}

TEST_CASE("constant trace stays constant") {
  PowerTrace t;
  t.samples.assign(1000, 3.5e-4);
  for (double rate : {5e9, 1e9, 2e8})
    for (double v : resample(t, rate).samples) CHECK(v == doctest::Approx(3.5e-4).epsilon(1e-14));
}

TEST_CASE("invalid rates name the valid divisors") {
  const auto t = ramp(100);
  try {
    (void)resample(t, 3e9);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    const std::string what = e.what();
    CHECK(what.find("valid") != std::string::npos);
    CHECK(what.find("1e+09") != std::string::npos);
  }
  CHECK_THROWS_AS(resample(t, 2e10), ConfigError);
  CHECK_THROWS_AS(resample(t, 0.0), ConfigError);
}

TEST_CASE("per-tile noise streams differ") {
  ArtifactSpec spec;
  spec.noise_std = 1e-3;
  spec.rng_seed = 3;
  const auto out = apply_artifacts(std::vector<PowerTrace>{ramp(100, 0), ramp(100, 1)}, spec);
  CHECK(out[0].samples != out[1].samples);
  const auto again = apply_artifacts(std::vector<PowerTrace>{ramp(100, 0), ramp(100, 1)}, spec);
  CHECK(out[1].samples == again[1].samples);
}

}  // TEST_SUITE
