// Acceptance run: one PASS/FAIL line per criterion. Exits nonzero when any
// criterion fails.
//
//   acceptance <path to imcsca binary> [scratch dir]

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <sys/wait.h>

#include "imcsca/artifacts.hpp"
#include "imcsca/attack.hpp"
#include "imcsca/commands.hpp"
#include "imcsca/error.hpp"
#include "imcsca/evaluation.hpp"
#include "imcsca/mapper.hpp"
#include "imcsca/powersim.hpp"
#include "sar_oracle.hpp"
#include "support.hpp"

using namespace imcsca;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

std::string g_cli;
fs::path g_work;

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t) {
  return std::chrono::duration<double>(Clock::now() - t).count();
}

// Runs the CLI with stdout captured to `log`; returns its exit status.
int cli(const std::string& args, const fs::path& log) {
  const std::string cmd = "\"" + g_cli + "\" " + args + " > \"" + log.string() + "\" 2>&1";
  const int raw = std::system(cmd.c_str());
  return WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::uintmax_t tree_bytes(const fs::path& dir) {
  std::uintmax_t n = 0;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) n += e.file_size();
  return n;
}

bool same_files(const fs::path& a, const fs::path& b) {
  std::vector<std::string> na, nb;
  for (const auto& e : fs::directory_iterator(a)) na.push_back(e.path().filename().string());
  for (const auto& e : fs::directory_iterator(b)) nb.push_back(e.path().filename().string());
  std::sort(na.begin(), na.end());
  std::sort(nb.begin(), nb.end());
  if (na != nb || na.empty()) return false;
  for (const auto& f : na)
    if (slurp(a / f) != slurp(b / f)) return false;
  return true;
}

std::string q(const fs::path& p) { return "\"" + p.string() + "\""; }

// simulate -> attack -> compare through the CLI. Returns the compare status,
// or the first failing status.
struct Pipeline {
  int simulate = -1, attack = -1, compare = -1;
  fs::path dir;
};

Pipeline pipeline(const std::string& name, const std::string& sim_args) {
  Pipeline p;
  p.dir = g_work / name;
  fs::remove_all(p.dir);
  fs::create_directories(p.dir);
  p.simulate = cli("simulate --seed 0 --out " + q(p.dir / "run") + " " + sim_args, p.dir / "simulate.log");
  if (p.simulate != 0) return p;
  p.attack = cli("attack --traces " + q(p.dir / "run" / "traces") + " --config " +
                     q(p.dir / "run" / "hardware.conf") + " --out " + q(p.dir / "report.txt"),
                 p.dir / "attack.log");
  if (p.attack != 0) return p;
  p.compare = cli("compare " + q(p.dir / "report.txt") + " " + q(p.dir / "run" / "truth" / "network.net"),
                  p.dir / "compare.log");
  return p;
}

Outcome tile_allocation() {
  const auto t0 = Clock::now();
  const auto net = lenet_cifar10();
  const auto m = map_network(net, synthetic_weights(net, 0), TileConfig{});
  const double dt = seconds_since(t0);
  std::string split;
  bool ok = m.tiles.size() == 23 && m.layers.size() == 5;
  const std::size_t want[] = {1, 2, 16, 3, 1};
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    split += (i ? "/" : "") + std::to_string(m.layers[i].tile_ids.size());
    ok = ok && i < 5 && m.layers[i].tile_ids.size() == want[i];
  }
  return {ok && dt < 1.0, std::to_string(m.tiles.size()) + " tiles, split " + split + ", " +
                              std::to_string(dt) + " s"};
}

Outcome end_to_end() {
  const auto t0 = Clock::now();
  const auto p = pipeline("c2", "");
  const double dt = seconds_since(t0);
  if (p.compare != 0)
    return {false, "exit codes simulate=" + std::to_string(p.simulate) + " attack=" + std::to_string(p.attack) +
                       " compare=" + std::to_string(p.compare)};
  const auto extracted = parse_report(slurp(p.dir / "report.txt"));
  const auto truth = lenet_cifar10();
  const bool exact = extracted.input == truth.input && extracted.layers == truth.layers;
  const double mb = static_cast<double>(tree_bytes(p.dir / "run" / "traces")) / 1e6;
  std::ostringstream d;
  d << "compare exit 0, layers " << (exact ? "identical" : "differ") << " to LeNet, " << dt << " s, " << mb
    << " MB of traces";
  return {exact && dt < 300 && mb < 200, d.str()};
}

struct LenetRun {
  NetworkMapping mapping;
  SimulationResult result;
  HwKnowledge hw;
};

LenetRun lenet(std::uint64_t image_seed) {
  const auto net = lenet_cifar10();
  const auto w = synthetic_weights(net, 0);
  LenetRun r;
  r.mapping = map_network(net, w, TileConfig{});
  const std::vector<Activation> img{synthetic_image(net.input, image_seed)};
  r.result = simulate_inference(r.mapping, net, w, img, TechnologyModel{}, SimulationOptions{});
  r.hw = hw_knowledge(TileConfig{}, TechnologyModel{}, net.input);
  return r;
}

Outcome output_size_arithmetic() {
  const auto run = lenet(0);
  const auto groups = layer_property_extraction(extract_all_features(run.result.traces, run.hw), run.hw);
  if (groups.size() < 3) return {false, "only " + std::to_string(groups.size()) + " groups"};
  const auto& fc1 = groups[2];
  const auto r = output_size_extraction(fc1, run.hw);
  int full = 0;
  for (const auto& t : fc1.tiles) full += t.adc_exec_count == 16;
  const bool ok = fc1.kind == LayerKind::FC && fc1.tiles.size() == 16 && r.partial_tiles == 4 &&
                  r.partial_conversions == 12 && full == 12 && r.out == (3 * 128 + 96) / 4 && r.out == 120;
  return {ok, "fc1: " + std::to_string(fc1.tiles.size()) + " tiles, " + std::to_string(r.partial_tiles) +
                  " partial at " + std::to_string(r.partial_conversions) + " vs full 16 -> out " +
                  std::to_string(r.out)};
}

Outcome kernel_over_images() {
  int right = 0;
  std::string seen;
  for (std::uint64_t i = 0; i < 10; ++i) {
    const auto run = lenet(100 + i);
    int k = -1;
    try {
      const auto arch = run_attack(run.result.traces, run.hw);
      int convs = 0;
      for (const auto& l : arch.layers)
        if (l.spec.kind == LayerKind::Conv && ++convs == 2) k = l.spec.kernel;
    } catch (const AttackError&) {
    }
    right += k == 5;
    seen += (i ? "," : "") + std::to_string(k);
  }
  return {right == 10, "conv2 kernel over 10 images: " + seen};
}

Outcome pooling() {
  const auto conv = pooling_detection(28, 5, 10, true);
  const bool table = conv.pool == 2 && conv.geometry.padding == 0 && conv.geometry.stride == 1;
  const int fc = pooling_detection_fc(10, 16, 400);
  const auto run = lenet(0);
  const auto arch = run_attack(run.result.traces, run.hw);
  // Pools in the reconstructed network, in order.
  std::vector<int> pools;
  for (const auto& l : arch.layers)
    if (l.spec.kind == LayerKind::Pool) pools.push_back(l.spec.pool);
  const bool in_pipeline = pools == std::vector<int>{2, 2};
  return {table && fc == 2 && in_pipeline,
          "conv branch P=" + std::to_string(conv.geometry.padding) + " S=" + std::to_string(conv.geometry.stride) +
              " pool " + std::to_string(conv.pool) + "; fc branch pool " + std::to_string(fc) +
              "; pipeline pools " + (in_pipeline ? "2,2" : "differ")};
}

Outcome sar_oracle() {
  const TechnologyModel tech;
  const auto e = sar_energy_by_code(tech);
  double worst = 0.0;
  for (int c = 0; c < 256; ++c) {
    const auto o = testing::charge_oracle((c + 0.5) / 256 * tech.v_ref, tech);
    if (o.code != c) return {false, "oracle code mismatch at " + std::to_string(c)};
    worst = std::max(worst, std::abs(e[static_cast<std::size_t>(c)] - o.energy) / std::abs(o.energy));
  }
  const auto max_code = std::max_element(e.begin(), e.end()) - e.begin();
  const auto min_code = std::min_element(e.begin(), e.end()) - e.begin();
  const bool shape = max_code < 128 && min_code >= 128;
  std::ostringstream d;
  d << "worst relative error " << worst << ", max energy at code " << max_code << ", min at " << min_code;
  return {worst <= 1e-9 && shape, d.str()};
}

Outcome functional() {
  const auto net = lenet_cifar10();
  const auto w = synthetic_weights(net, 1);
  const auto m = map_network(net, w, TileConfig{});
  std::vector<Activation> imgs;
  for (int i = 0; i < 100; ++i) imgs.push_back(synthetic_image(net.input, 5000 + i));
  SimulationOptions o;
  o.record_traces = false;
  const auto r = simulate_inference(m, net, w, imgs, TechnologyModel{}, o);
  int exact = 0;
  for (std::size_t i = 0; i < imgs.size(); ++i) exact += r.logits()[i] == infer_reference(net, w, imgs[i]).back().values;
  int small = 0;
  for (std::uint64_t s = 1; s <= 3; ++s) {
    const auto n = testing::random_network(s);
    const auto ws = synthetic_weights(n, s);
    const std::vector<Activation> one{synthetic_image(n.input, s)};
    const auto rs = simulate_inference(map_network(n, ws, TileConfig{}), n, ws, one, TechnologyModel{}, o);
    small += rs.outputs[0] == infer_reference(n, ws, one[0]);
  }
  return {exact == 100 && small == 3,
          std::to_string(exact) + "/100 LeNet images, " + std::to_string(small) + "/3 random networks bit-exact"};
}

Outcome robustness() {
  const auto t0 = Clock::now();
  RunConfig c;
  const auto m = cmd_matrix(c, g_work / "matrix.txt");
  const double dt = seconds_since(t0);
  const auto& top_left = m.at(0, 0);
  const auto& bottom_right = m.at(m.rates.size() - 1, m.noises.size() - 1);
  const bool a = top_left.output_sizes == CellStatus::Success && top_left.kernels == CellStatus::Success;
  const bool b = m.rates.back() == 2e8 && m.noises.back() == 3e-3 && bottom_right.output_sizes == CellStatus::Fail;
  const bool c_ok = is_monotone(m, false) && is_monotone(m, true);
  const bool d = fc_fails_first(m);
  std::ostringstream s;
  s << "(a)" << (a ? "ok" : "no") << " (b)" << (b ? "ok" : "no") << " (c)" << (c_ok ? "ok" : "no") << " (d)"
    << (d ? "ok" : "no") << ", " << dt << " s";
  return {a && b && c_ok && d && dt < 1800, s.str()};
}

Outcome countermeasures() {
  const auto pad = pipeline("c9_pad", "--set sim.pad_adc=true");
  const std::string pad_log = slurp(pad.dir / "compare.log");
  const bool fc_size = pad_log.find("MISMATCH fc") != std::string::npos &&
                       pad_log.find(".out expected") != std::string::npos;
  const bool pad_ok = pad.attack == 3 || (pad.compare == 4 && fc_size);

  const auto scr = pipeline("c9_scramble", "--set sim.scramble_timing=true --set sim.max_delay=2e-7");
  const bool scr_exit = scr.attack == 3 || scr.compare == 4;
  // Grouping from the same traces against the simulator's layer grid.
  bool diverged = true;
  try {
    const auto traces = read_trace_dir(scr.dir / "run" / "traces");
    const auto hw = hw_knowledge(TileConfig{}, TechnologyModel{}, Shape{3, 32, 32});
    const auto groups = layer_property_extraction(extract_all_features(traces, hw), hw);
    const auto net = lenet_cifar10();
    const auto mapping = map_network(net, synthetic_weights(net, 0), TileConfig{});
    diverged = groups.size() != mapping.layers.size();
    for (std::size_t i = 0; !diverged && i < groups.size(); ++i)
      diverged = groups[i].tile_ids() != mapping.layers[i].tile_ids;
  } catch (const AttackError&) {
  }
  return {pad_ok && scr_exit && diverged,
          "pad_adc: attack " + std::to_string(pad.attack) + " compare " + std::to_string(pad.compare) +
              (fc_size ? " (fc sizes differ)" : "") + "; scramble: attack " + std::to_string(scr.attack) +
              " compare " + std::to_string(scr.compare) + (diverged ? ", grouping diverges" : ", grouping intact")};
}

Outcome determinism() {
  const auto a = pipeline("c10_a", "");
  const auto b = pipeline("c10_b", "");
  const bool traces = same_files(a.dir / "run" / "traces", b.dir / "run" / "traces");
  const bool reports = fs::exists(a.dir / "report.txt") &&
                       slurp(a.dir / "report.txt") == slurp(b.dir / "report.txt");
  return {traces && reports, std::string("traces ") + (traces ? "identical" : "differ") + ", reports " +
                                 (reports ? "identical" : "differ")};
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) {
    std::cerr << "usage: acceptance <imcsca binary> [scratch dir]\n";
    return 1;
  }
  g_cli = argv[1];
  g_work = argc > 2 ? fs::path(argv[2]) : fs::temp_directory_path() / "imcsca_acceptance";
  fs::remove_all(g_work);
  fs::create_directories(g_work);

  const std::pair<const char*, std::function<Outcome()>> criteria[] = {
      {"tile allocation", tile_allocation},
      {"end-to-end extraction, clean", end_to_end},
      {"output size arithmetic", output_size_arithmetic},
      {"kernel size over ten images", kernel_over_images},
      {"pooling", pooling},
      {"SAR ADC oracle equivalence", sar_oracle},
      {"functional oracle", functional},
      {"robustness matrix", robustness},
      {"countermeasure efficacy", countermeasures},
      {"determinism", determinism},
  };
  int failed = 0;
  int n = 0;
  for (const auto& [name, check] : criteria) {
    ++n;
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("criterion %2d %s: %s (%s)\n", n, o.pass ? "PASS" : "FAIL", name, o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d/%d criteria pass\n", n - failed, n);
  if (failed == 0) fs::remove_all(g_work);
  return failed == 0 ? 0 : 1;
}
