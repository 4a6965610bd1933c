#include <fstream>
#include <sstream>

#include "doctest.h"
#include "imcsca/commands.hpp"
#include "imcsca/error.hpp"
#include "imcsca/powersim.hpp"
#include "support.hpp"

using namespace imcsca;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

bool same_tree(const fs::path& a, const fs::path& b) {
  std::vector<fs::path> fa, fb;
  for (const auto& e : fs::recursive_directory_iterator(a))
    if (e.is_regular_file()) fa.push_back(fs::relative(e.path(), a));
  for (const auto& e : fs::recursive_directory_iterator(b))
    if (e.is_regular_file()) fb.push_back(fs::relative(e.path(), b));
  std::sort(fa.begin(), fa.end());
  std::sort(fb.begin(), fb.end());
  if (fa != fb) return false;
  for (const auto& f : fa)
    if (slurp(a / f) != slurp(b / f)) return false;
  return true;
}

RunConfig small_run(const fs::path& dir) {
  std::ofstream(dir / "small.net") << "input 1x8x8\nconv out=4 k=3\npool 2\nfc 12\nfc 4\n";
  RunConfig c;
  c.network = dir / "small.net";
  c.seed = 5;
  return c;
}

}  // namespace

TEST_SUITE("commands") {

TEST_CASE("simulate writes traces and ground truth") {
  testing::TempDir dir("cmd_sim");
  const auto c = small_run(dir.path());
  const auto s = cmd_simulate(c, dir / "out");
  CHECK(s.tiles == 3);
  CHECK(fs::exists(dir / "out" / "traces" / trace_file_name(0)));
  for (const auto* f : {"hardware.conf", "truth/network.net", "truth/mapping.txt", "truth/events.log",
                        "truth/logits.txt", "truth/run.conf"})
    CHECK(fs::exists(dir / "out" / f));

  cmd_simulate(c, dir / "again");
  CHECK(same_tree(dir / "out", dir / "again"));

  RunConfig none = c;
  none.images.count = 0;
  CHECK_THROWS_AS(cmd_simulate(none, dir / "none"), ConfigError);
}

TEST_CASE("attack and compare through files") {
  testing::TempDir dir("cmd_attack");
  const auto c = small_run(dir.path());
  cmd_simulate(c, dir / "out");
  RunConfig hw;
  load_config_into(hw, dir / "out" / "hardware.conf", {"hw."});
  CHECK(hw.hw.input_width == 8);
  CHECK(hw.hw.input_channels == 1);
  cmd_attack(dir / "out" / "traces", hw.hw, hw.attack, dir / "report.txt");
  const auto m = cmd_compare(dir / "report.txt", dir / "out" / "truth" / "network.net");
  INFO(m.summary());
  CHECK(m.all_match());

  fs::create_directories(dir / "empty");
  CHECK_THROWS_AS(cmd_attack(dir / "empty", hw.hw, hw.attack, dir / "r2.txt"), AttackError);
}

TEST_CASE("inject") {
  testing::TempDir dir("cmd_inject");
  const auto c = small_run(dir.path());
  cmd_simulate(c, dir / "out");
  const auto traces = dir / "out" / "traces";

  CHECK(cmd_inject(traces, ArtifactSpec{}, dir / "copy") == 3);
  CHECK(same_tree(traces, dir / "copy"));

  ArtifactSpec low;
  low.target_rate = 2e8;
  cmd_inject(traces, low, dir / "low");
  const auto a = read_trace(traces / trace_file_name(0));
  const auto b = read_trace(dir / "low" / trace_file_name(0));
  CHECK(b.samples.size() == (a.samples.size() + 49) / 50);

  ArtifactSpec bad;
  bad.target_rate = 3e9;
  CHECK_THROWS_AS(cmd_inject(traces, bad, dir / "bad"), ConfigError);
}

TEST_CASE("binary traces stay binary") {
  testing::TempDir dir("cmd_bin");
  auto c = small_run(dir.path());
  c.binary_traces = true;
  cmd_simulate(c, dir / "out");
  CHECK(fs::exists(dir / "out" / "traces" / trace_file_name(0, true)));
  cmd_inject(dir / "out" / "traces", ArtifactSpec{}, dir / "copy");
  CHECK(same_tree(dir / "out" / "traces", dir / "copy"));
}

TEST_CASE("ADC energy table") {
  const TechnologyModel tech;
  const auto csv = adc_energy_csv(tech);
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  CHECK(line == "code,energy_j");
  const auto energy = sar_energy_by_code(tech);
  int rows = 0;
  while (std::getline(in, line)) {
    const auto comma = line.find(',');
    const int code = std::stoi(line.substr(0, comma));
    CHECK(code == rows);
    CHECK(std::stod(line.substr(comma + 1)) == energy[static_cast<std::size_t>(code)]);
    ++rows;
  }
  CHECK(rows == 256);

  TechnologyModel zero;
  zero.v_ref = 0.0;
  std::istringstream z(adc_energy_csv(zero));
  std::getline(z, line);
  while (std::getline(z, line)) CHECK(std::stod(line.substr(line.find(',') + 1)) == 0.0);
}

TEST_CASE("hardware knowledge text parses back") {
  HwKnowledge hw;
  hw.input_width = 28;
  RunConfig c;
  parse_config(c, format_hw_knowledge(hw), "hw", {"hw."});
  CHECK(c.hw.input_width == 28);
}

}  // TEST_SUITE
