#include "imcsca/config.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <sstream>
#include <type_traits>

#include "imcsca/error.hpp"

namespace imcsca {

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

struct Entry {
  std::function<void(RunConfig&, std::string_view)> set;
  std::function<std::string(const RunConfig&)> get;
};

[[noreturn]] void bad(std::string_view what, std::string_view value) {
  throw ConfigError("expected " + std::string(what) + ", got '" + std::string(value) + "'");
}

double to_double(std::string_view s) {
  double v = 0.0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) bad("a number", s);
  return v;
}

long long to_integer(std::string_view s) {
  long long v = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) bad("an integer", s);
  return v;
}

std::uint64_t to_u64(std::string_view s) {
  std::uint64_t v = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) bad("an unsigned integer", s);
  return v;
}

bool to_bool(std::string_view s) {
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  bad("true or false", s);
}

template <typename T>
std::vector<T> to_list(std::string_view s, T (*one)(std::string_view)) {
  std::vector<T> out;
  while (!s.empty()) {
    const auto comma = s.find(',');
    const auto item = trim(s.substr(0, comma));
    if (item.empty()) bad("a comma-separated list", s);
    out.push_back(one(item));
    if (comma == std::string_view::npos) break;
    s.remove_prefix(comma + 1);
  }
  return out;
}

int to_int(std::string_view s) {
  const long long v = to_integer(s);
  if (v < std::numeric_limits<int>::min() || v > std::numeric_limits<int>::max()) bad("an int", s);
  return static_cast<int>(v);
}

template <typename T>
std::string join(const std::vector<T>& v) {
  std::string out;
  for (const auto& x : v) {
    if (!out.empty()) out += ", ";
    if constexpr (std::is_floating_point_v<T>)
      out += fmt_double(x);
    else
      out += std::to_string(x);
  }
  return out;
}

// Member accessors are written out per key; the helpers only remove the
// parse/print boilerplate.
template <typename Get>
Entry real(Get get) {
  return {[get](RunConfig& c, std::string_view v) { get(c) = to_double(v); },
          [get](const RunConfig& c) { return fmt_double(get(const_cast<RunConfig&>(c))); }};
}
template <typename Get>
Entry integer(Get get) {
  return {[get](RunConfig& c, std::string_view v) { get(c) = to_int(v); },
          [get](const RunConfig& c) { return std::to_string(get(const_cast<RunConfig&>(c))); }};
}
template <typename Get>
Entry flag(Get get) {
  return {[get](RunConfig& c, std::string_view v) { get(c) = to_bool(v); },
          [get](const RunConfig& c) { return std::string(get(const_cast<RunConfig&>(c)) ? "true" : "false"); }};
}
template <typename Get>
Entry path(Get get) {
  return {[get](RunConfig& c, std::string_view v) { get(c) = std::filesystem::path(v); },
          [get](const RunConfig& c) { return get(const_cast<RunConfig&>(c)).string(); }};
}
template <typename Get>
Entry seed(Get get) {
  return {[get](RunConfig& c, std::string_view v) { get(c) = to_u64(v); },
          [get](const RunConfig& c) {
            const auto& s = get(const_cast<RunConfig&>(c));
            return s ? std::to_string(*s) : std::string();
          }};
}
template <typename Get>
Entry reals(Get get) {
  return {[get](RunConfig& c, std::string_view v) { get(c) = to_list<double>(v, &to_double); },
          [get](const RunConfig& c) { return join(get(const_cast<RunConfig&>(c))); }};
}
template <typename Get>
Entry ints(Get get) {
  return {[get](RunConfig& c, std::string_view v) { get(c) = to_list<int>(v, &to_int); },
          [get](const RunConfig& c) { return join(get(const_cast<RunConfig&>(c))); }};
}

void load_tech_file(RunConfig& config, const std::filesystem::path& path);

#define KEY(expr) [](RunConfig& c) -> auto& { return expr; }

const std::map<std::string, Entry, std::less<>>& registry() {
  static const auto table = [] {
    std::map<std::string, Entry, std::less<>> t;
    t["seed"] = {[](RunConfig& c, std::string_view v) { c.seed = to_u64(v); },
                 [](const RunConfig& c) { return std::to_string(c.seed); }};

    t["paths.network"] = path(KEY(c.network));
    t["paths.weights"] = path(KEY(c.weights));
    t["paths.weights_manifest"] = path(KEY(c.weights_manifest));
    t["weights.seed"] = seed(KEY(c.weights_seed));
    // A separate technology file holding tech.* keys only. Its values land in
    // the tech section, so the key itself is never formatted back.
    t["paths.tech"] = {[](RunConfig& c, std::string_view v) { load_tech_file(c, std::filesystem::path(v)); },
                       [](const RunConfig&) { return std::string(); }};

    t["tile.array_rows"] = integer(KEY(c.tile.array_rows));
    t["tile.array_cols"] = integer(KEY(c.tile.array_cols));
    t["tile.adc_count"] = integer(KEY(c.tile.adc_count));
    t["tile.adc_bits"] = integer(KEY(c.tile.adc_bits));
    t["tile.cell_bits"] = integer(KEY(c.tile.cell_bits));
    t["tile.cells_per_weight"] = integer(KEY(c.tile.cells_per_weight));
    t["tile.g_min"] = real(KEY(c.tile.g_min));
    t["tile.g_max"] = real(KEY(c.tile.g_max));
    t["tile.conductance_levels"] = integer(KEY(c.tile.conductance_levels));

    t["tech.v_read"] = real(KEY(c.tech.v_read));
    t["tech.v_dd"] = real(KEY(c.tech.v_dd));
    t["tech.v_ref"] = real(KEY(c.tech.v_ref));
    t["tech.c_unit"] = real(KEY(c.tech.c_unit));
    t["tech.c_sample"] = real(KEY(c.tech.c_sample));
    t["tech.c_bitline"] = real(KEY(c.tech.c_bitline));
    t["tech.serial_clock_hz"] = real(KEY(c.tech.serial_clock_hz));
    t["tech.digital_clock_hz"] = real(KEY(c.tech.digital_clock_hz));
    t["tech.adc_step_time"] = real(KEY(c.tech.adc_step_time));
    t["tech.settle_time"] = real(KEY(c.tech.settle_time));
    t["tech.native_rate"] = real(KEY(c.tech.native_rate));
    t["tech.adc_bits"] = integer(KEY(c.tech.adc_bits));
    t["tech.bit_overhead"] = real(KEY(c.tech.bit_overhead));
    t["tech.layer_sync_cycles"] = integer(KEY(c.tech.layer_sync_cycles));
    t["tech.pool_lanes"] = integer(KEY(c.tech.pool_lanes));
    t["tech.lead_in"] = real(KEY(c.tech.lead_in));
    t["tech.tail"] = real(KEY(c.tech.tail));
    for (auto kind : {DigitalComponent::ShiftAdd, DigitalComponent::Register, DigitalComponent::Relu,
                      DigitalComponent::MaxPool, DigitalComponent::Router})
      for (auto [tr, name] : {std::pair{Transition::Rise, "rise"}, std::pair{Transition::Fall, "fall"}}) {
        const auto k = std::pair{kind, tr};
        t["tech.lut." + std::string(to_string(kind)) + "." + name] = {
            [k](RunConfig& c, std::string_view v) { c.tech.digital_energy_lut.energy[k] = to_double(v); },
            [k](const RunConfig& c) { return fmt_double(c.tech.digital_energy_lut.at(k.first, k.second)); }};
      }

    t["sim.scramble_timing"] = flag(KEY(c.sim.scramble_timing));
    t["sim.max_delay"] = real(KEY(c.sim.max_delay));
    t["sim.pad_adc"] = flag(KEY(c.sim.pad_adc));
    t["sim.dummy_conductance"] = flag(KEY(c.dummy_conductance));
    t["sim.binary_traces"] = flag(KEY(c.binary_traces));
    t["sim.seed"] = seed(KEY(c.sim_seed));

    t["artifacts.noise_std"] = real(KEY(c.artifacts.noise_std));
    t["artifacts.target_rate"] = real(KEY(c.artifacts.target_rate));
    t["artifacts.noise_before_resample"] = flag(KEY(c.artifacts.noise_before_resample));
    t["artifacts.seed"] = seed(KEY(c.artifacts_seed));

    t["hw.array_rows"] = integer(KEY(c.hw.array_rows));
    t["hw.array_cols"] = integer(KEY(c.hw.array_cols));
    t["hw.adc_count"] = integer(KEY(c.hw.adc_count));
    t["hw.adc_bits"] = integer(KEY(c.hw.adc_bits));
    t["hw.columns_per_weight"] = integer(KEY(c.hw.columns_per_weight));
    t["hw.input_bits"] = integer(KEY(c.hw.input_bits));
    t["hw.serial_clock_hz"] = real(KEY(c.hw.serial_clock_hz));
    t["hw.digital_clock_hz"] = real(KEY(c.hw.digital_clock_hz));
    t["hw.adc_step_time"] = real(KEY(c.hw.adc_step_time));
    t["hw.settle_time"] = real(KEY(c.hw.settle_time));
    t["hw.transient_time"] = real(KEY(c.hw.transient_time));
    t["hw.bit_overhead"] = real(KEY(c.hw.bit_overhead));
    t["hw.input_channels"] = integer(KEY(c.hw.input_channels));
    t["hw.input_width"] = integer(KEY(c.hw.input_width));

    t["attack.threshold_sigma"] = real(KEY(c.attack.threshold_sigma));
    t["attack.idle_window"] = real(KEY(c.attack.idle_window));
    t["attack.min_cluster"] = integer(KEY(c.attack.min_cluster));
    t["attack.fold_z_min"] = real(KEY(c.attack.fold_z_min));
    t["attack.slot_penalty"] = real(KEY(c.attack.slot_penalty));
    t["attack.extent_tie"] = real(KEY(c.attack.extent_tie));
    t["attack.share_timing"] = flag(KEY(c.attack.share_timing));
    t["attack.share_z"] = real(KEY(c.attack.share_z));
    t["attack.share_present_z"] = real(KEY(c.attack.share_present_z));
    t["attack.kernel_candidates"] = ints(KEY(c.attack.kernel_candidates));
    t["attack.first_layer_kernels"] = ints(KEY(c.attack.first_layer_kernels));
    t["attack.max_padding"] = integer(KEY(c.attack.max_padding));
    t["attack.max_stride"] = integer(KEY(c.attack.max_stride));
    t["attack.max_pool"] = integer(KEY(c.attack.max_pool));

    t["images.count"] = integer(KEY(c.images.count));
    t["images.seed"] = seed(KEY(c.images.seed));
    t["images.cifar_batch"] = path(KEY(c.images.cifar_batch));
    t["images.cifar_first"] = integer(KEY(c.images.cifar_first));

    t["matrix.rates"] = reals(KEY(c.matrix.rates));
    t["matrix.noises"] = reals(KEY(c.matrix.noises));
    t["matrix.seed"] = seed(KEY(c.matrix.seed));
    return t;
  }();
  return table;
}

#undef KEY

void require_file(const std::filesystem::path& p, std::string_view key) {
  if (!p.empty() && !std::filesystem::is_regular_file(p))
    throw ConfigError(std::string(key) + ": no such file '" + p.string() + "'");
}

bool is_path_key(std::string_view key) {
  return key.starts_with("paths.") || key == "images.cifar_batch";
}

void parse_lines(RunConfig& config, std::string_view text, std::string_view origin,
                 const std::filesystem::path* base, const std::vector<std::string>& sections) {
  int line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text.remove_prefix(nl == std::string_view::npos ? text.size() : nl + 1);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = std::string(origin) + ":" + std::to_string(line_no);
    if (eq == std::string_view::npos) throw ConfigError(where + ": expected 'key = value'");
    const auto key = trim(line.substr(0, eq));
    if (!sections.empty()) {
      try {
        require_section(key, sections);
      } catch (const ConfigError& e) {
        throw ConfigError(where + ": " + e.what());
      }
    }
    auto value = std::string(trim(line.substr(eq + 1)));
    if (base && is_path_key(key) && !value.empty() && std::filesystem::path(value).is_relative())
      value = (*base / value).lexically_normal().string();
    set_config_value(config, key, value, where);
  }
}

void load_tech_file(RunConfig& config, const std::filesystem::path& path) {
  RunConfig scratch;
  load_config_into(scratch, path);
  const auto& table = registry();
  const RunConfig defaults;
  for (const auto& [k, e] : table) {
    const std::string v = e.get(scratch);
    if (v == e.get(defaults)) continue;
    if (!k.starts_with("tech."))
      throw ConfigError(path.string() + ": technology file may only set tech.* keys, found " + k);
    e.set(config, v);
  }
}

}  // namespace

void RunConfig::validate() const {
  tile.validate();
  tech.validate();
  artifacts.validate();
  hw.validate();
  attack.validate();
  if (!(sim.max_delay >= 0.0)) throw ConfigError("sim.max_delay must be >= 0");
  if (images.count < 0) throw ConfigError("images.count must be >= 0");
  if (images.cifar_first < 0) throw ConfigError("images.cifar_first must be >= 0");
  if (matrix.rates.empty() || matrix.noises.empty())
    throw ConfigError("matrix.rates and matrix.noises must not be empty");
  for (double r : matrix.rates)
    if (!(r > 0.0)) throw ConfigError("matrix.rates must be positive");
  for (double n : matrix.noises)
    if (!(n >= 0.0)) throw ConfigError("matrix.noises must be >= 0");
  require_file(network, "paths.network");
  require_file(weights, "paths.weights");
  require_file(weights_manifest, "paths.weights_manifest");
  require_file(images.cifar_batch, "images.cifar_batch");
  if (!weights_manifest.empty() && weights.empty())
    throw ConfigError("paths.weights_manifest given without paths.weights");
}

void set_config_value(RunConfig& config, std::string_view key, std::string_view value,
                      std::string_view origin) {
  const auto& table = registry();
  const auto it = table.find(key);
  if (it == table.end())
    throw ConfigError(std::string(origin) + ": unknown key '" + std::string(key) + "'");
  try {
    it->second.set(config, trim(value));
  } catch (const ConfigError& e) {
    throw ConfigError(std::string(origin) + ": " + std::string(key) + ": " + e.what());
  }
}

void apply_override(RunConfig& config, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos)
    throw ConfigError("--set expects key=value, got '" + std::string(assignment) + "'");
  set_config_value(config, trim(assignment.substr(0, eq)), assignment.substr(eq + 1));
}

void require_section(std::string_view key, const std::vector<std::string>& sections) {
  for (const auto& s : sections)
    if (key.starts_with(s)) return;
  std::string allowed;
  for (const auto& s : sections) allowed += (allowed.empty() ? "" : ", ") + s + "*";
  throw ConfigError("key '" + std::string(key) + "' not accepted here (allowed: " + allowed + ")");
}

void parse_config(RunConfig& config, std::string_view text, std::string_view origin,
                  const std::vector<std::string>& sections) {
  parse_lines(config, text, origin, nullptr, sections);
}

void load_config_into(RunConfig& config, const std::filesystem::path& path,
                      const std::vector<std::string>& sections) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path.string() + "'");
  std::ostringstream text;
  text << in.rdbuf();
  const auto base = path.parent_path();
  parse_lines(config, text.str(), path.string(), &base, sections);
}

RunConfig load_config(const std::filesystem::path& path) {
  RunConfig config;
  load_config_into(config, path);
  return config;
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& [k, e] : registry()) keys.push_back(k);
  return keys;
}

std::string format_config(const RunConfig& config) {
  std::string out;
  for (const auto& [k, e] : registry()) {
    const std::string v = e.get(config);
    if (v.empty()) continue;  // unset optional seeds and paths
    out += k + " = " + v + "\n";
  }
  return out;
}

}  // namespace imcsca
