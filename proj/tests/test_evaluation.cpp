#include <fstream>
#include <regex>
#include <set>
#include <sstream>

#include "doctest.h"
#include "imcsca/evaluation.hpp"

using namespace imcsca;

namespace {

RobustnessMatrix grid(const std::vector<std::vector<CellStatus>>& rows) {
  RobustnessMatrix m;
  for (std::size_t r = 0; r < rows.size(); ++r) m.rates.push_back(1e10 / static_cast<double>(r + 1));
  for (std::size_t n = 0; n < rows[0].size(); ++n) m.noises.push_back(1e-3 * static_cast<double>(n));
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t n = 0; n < rows[r].size(); ++n) {
      MatrixCell c;
      c.rate = m.rates[r];
      c.noise = m.noises[n];
      c.output_sizes = rows[r][n];
      c.kernels = CellStatus::Success;
      m.cells.push_back(c);
    }
  return m;
}

std::string read(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace

TEST_SUITE("evaluation") {

TEST_CASE("monotonicity and failure order checks") {
  using S = CellStatus;
  const auto good = grid({{S::Success, S::FailAtFc, S::Fail}, {S::FailAtFc, S::Fail, S::Fail}});
  CHECK(is_monotone(good, false));
  CHECK(fc_fails_first(good));

  const auto recovers = grid({{S::Success, S::Fail, S::Success}});
  CHECK(!is_monotone(recovers, false));

  const auto by_rate = grid({{S::Fail}, {S::Success}});
  CHECK(!is_monotone(by_rate, false));

  const auto conv_first = grid({{S::Success, S::Fail, S::Fail}});
  CHECK(!fc_fails_first(conv_first));
}

TEST_CASE("hardware knowledge carries only public tile facts") {
  const auto hw = hw_knowledge(TileConfig{}, TechnologyModel{}, Shape{3, 32, 32});
  CHECK(hw.array_rows == 128);
  CHECK(hw.adc_count == 4);
  CHECK(hw.columns_per_weight == 4);
  CHECK(hw.max_conversions() == 16);
  CHECK(hw.input_width == 32);
  // Bit period: transient + settle + 8 SAR steps per conversion + shift-add.
  CHECK(hw.bit_period(3) == doctest::Approx(0.1e-9 + 4e-9 + 3 * 16e-9 + 2e-9));
}

// The attack code path must not see the mapping, the simulator or the event
// log. Checked on the sources themselves.
TEST_CASE("attack sources stay behind the information firewall") {
  const std::filesystem::path root = IMCSCA_SOURCE_DIR;
  const std::set<std::string> allowed{"imcsca/attack.hpp", "imcsca/netspec.hpp", "imcsca/trace.hpp",
                                      "imcsca/error.hpp"};
  const std::regex include_re(R"re(#include\s+"([^"]+)")re");
  for (const auto* file : {"src/attack.cpp", "include/imcsca/attack.hpp"}) {
    const std::string text = read(root / file);
    REQUIRE(!text.empty());
    for (std::sregex_iterator it(text.begin(), text.end(), include_re), end; it != end; ++it) {
      INFO(file << " includes " << (*it)[1]);
      CHECK(allowed.count((*it)[1]) == 1);
    }
    for (const auto* banned : {"TileMapping", "NetworkMapping", "EventLog", "SimulationResult",
                               "events.log", "mapping.txt", "TechnologyModel"}) {
      INFO(file << " mentions " << banned);
      CHECK(text.find(banned) == std::string::npos);
    }
  }
  // The CLI attack path accepts hardware and attack keys only.
  const std::string cli = read(root / "tools/imcsca_main.cpp");
  CHECK(cli.find(R"(resolve(atk_flags, {"hw.", "attack."}))") != std::string::npos);
}

}  // TEST_SUITE
