// imcsca: simulate per-tile power of an RRAM in-memory accelerator, degrade
// the traces, and extract the network architecture from them.

#include <cstdio>
#include <functional>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "imcsca/commands.hpp"
#include "imcsca/error.hpp"

namespace fs = std::filesystem;
using namespace imcsca;

namespace {

enum Exit { kOk = 0, kUsage = 1, kSimulation = 2, kAttack = 3, kMismatch = 4 };

struct ConfigFlags {
  std::string config;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
};

void add_config_flags(CLI::App* cmd, ConfigFlags& f, bool with_seed) {
  cmd->add_option("--config", f.config, "key = value configuration file")->check(CLI::ExistingFile);
  cmd->add_option("--set", f.sets, "override one key, section.key=value (repeatable)");
  if (with_seed) cmd->add_option("--seed", f.seed, "master seed for every unset seed");
}

// File, then --seed, then --set in order. `sections` limits the keys.
RunConfig resolve(const ConfigFlags& f, const std::vector<std::string>& sections = {}) {
  RunConfig c;
  if (!f.config.empty()) load_config_into(c, f.config, sections);
  if (f.seed) c.seed = *f.seed;
  for (const auto& s : f.sets) {
    if (!sections.empty()) require_section(s.substr(0, s.find('=')), sections);
    apply_override(c, s);
  }
  return c;
}

void write_or_print(const fs::path& out, const std::string& text) {
  if (out.empty()) {
    std::cout << text;
    return;
  }
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  std::ofstream f(out, std::ios::binary);
  if (!f) throw Error("cannot write " + out.string());
  f << text;
}

int guarded(const std::function<int()>& body, int fallback) {
  try {
    return body();
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const TraceFormatError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const ShapeError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const SimulationError& e) {
    std::cerr << "simulation error: " << e.what() << "\n";
    return kSimulation;
  } catch (const MappingError& e) {
    std::cerr << "mapping error: " << e.what() << "\n";
    return kSimulation;
  } catch (const AttackError& e) {
    std::cerr << "attack failed: " << e.what() << "\n";
    return kAttack;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return fallback;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Power side-channel architecture extraction for RRAM in-memory accelerators"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "imcsca 0.1.0");

  std::function<int()> action;

  ConfigFlags sim_flags;
  std::string sim_out;
  auto* sim = app.add_subcommand("simulate", "run inference and write per-tile power traces");
  add_config_flags(sim, sim_flags, true);
  sim->add_option("--out", sim_out, "output directory")->required();
  sim->callback([&] {
    action = [&] {
      const auto s = cmd_simulate(resolve(sim_flags), sim_out);
      std::cerr << "wrote " << s.tiles << " traces for " << s.images << " image(s) to "
                << s.traces.string() << "\n";
      return int{kOk};
    };
  });

  ConfigFlags inj_flags;
  std::string inj_traces, inj_out;
  auto* inj = app.add_subcommand("inject", "add measurement noise and resample a trace directory");
  add_config_flags(inj, inj_flags, true);
  inj->add_option("--traces", inj_traces, "input trace directory")->required();
  inj->add_option("--out", inj_out, "output trace directory")->required();
  inj->callback([&] {
    action = [&] {
      const RunConfig c = resolve(inj_flags, {"artifacts.", "seed"});
      ArtifactSpec spec = c.artifacts;
      spec.rng_seed = c.resolved_artifacts_seed();
      if (fs::weakly_canonical(inj_traces) == fs::weakly_canonical(inj_out))
        throw ConfigError("--out must differ from --traces");
      const int n = cmd_inject(inj_traces, spec, inj_out);
      std::cerr << "wrote " << n << " traces to " << inj_out << "\n";
      return int{kOk};
    };
  });

  ConfigFlags atk_flags;
  std::string atk_traces, atk_out;
  auto* atk = app.add_subcommand("attack", "extract the architecture from a trace directory");
  add_config_flags(atk, atk_flags, false);
  atk->add_option("--traces", atk_traces, "trace directory")->required();
  atk->add_option("--out", atk_out, "report path (stdout when omitted)");
  atk->callback([&] {
    action = [&] {
      // Only public hardware facts and attack tuning; no ground truth.
      const RunConfig c = resolve(atk_flags, {"hw.", "attack."});
      if (atk_out.empty()) {
        const auto traces = read_trace_dir(atk_traces);
        if (traces.empty()) throw AttackError("no trace files in " + atk_traces);
        std::cout << format_report(run_attack(traces, c.hw, c.attack));
      } else {
        const auto arch = cmd_attack(atk_traces, c.hw, c.attack, atk_out);
        std::cerr << "extracted " << arch.layers.size() << " layers, report in " << atk_out << "\n";
      }
      return int{kOk};
    };
  });

  std::string cmp_report, cmp_truth;
  auto* cmp = app.add_subcommand("compare", "compare a report with a ground-truth network file");
  cmp->add_option("report", cmp_report, "architecture report")->required()->check(CLI::ExistingFile);
  cmp->add_option("truth", cmp_truth, "ground-truth network file")->required()->check(CLI::ExistingFile);
  cmp->callback([&] {
    action = [&] {
      const auto m = cmd_compare(cmp_report, cmp_truth);
      std::cout << m.summary();
      return m.all_match() ? int{kOk} : int{kMismatch};
    };
  });

  ConfigFlags adc_flags;
  std::string adc_out;
  auto* adc = app.add_subcommand("adc-energy", "SAR conversion energy for every output code, as CSV");
  add_config_flags(adc, adc_flags, false);
  adc->add_option("--out", adc_out, "CSV path (stdout when omitted)");
  adc->callback([&] {
    action = [&] {
      write_or_print(adc_out, adc_energy_csv(resolve(adc_flags, {"tech."}).tech));
      return int{kOk};
    };
  });

  ConfigFlags mat_flags;
  std::string mat_out;
  auto* mat = app.add_subcommand("matrix", "success table over sample rates and noise levels");
  add_config_flags(mat, mat_flags, true);
  mat->add_option("--out", mat_out, "table path (stdout when omitted)");
  mat->callback([&] {
    action = [&] {
      const auto m = cmd_matrix(resolve(mat_flags), {});
      write_or_print(mat_out, m.format());
      return int{kOk};
    };
  });

  ConfigFlags cfg_flags;
  bool cfg_keys = false;
  auto* cfg = app.add_subcommand("config", "print the resolved configuration");
  add_config_flags(cfg, cfg_flags, true);
  cfg->add_flag("--keys", cfg_keys, "list every accepted key instead");
  cfg->callback([&] {
    action = [&] {
      if (cfg_keys) {
        for (const auto& k : config_keys()) std::cout << k << "\n";
        return int{kOk};
      }
      const RunConfig c = resolve(cfg_flags);
      c.validate();
      std::cout << format_config(c);
      return int{kOk};
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }
  const int fallback = sim->parsed() || mat->parsed() ? kSimulation : atk->parsed() ? kAttack : kUsage;
  return guarded(action, fallback);
}
