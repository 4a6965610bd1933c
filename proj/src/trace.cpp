#include "imcsca/trace.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>

#include "imcsca/error.hpp"

namespace imcsca {

double PowerTrace::energy() const {
  double sum = 0.0;
  for (double s : samples) sum += s;
  return sum / sample_rate;
}

namespace {

std::string fmt_double(double v, int precision) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", precision, v);
  return buf;
}

bool is_binary_path(const std::filesystem::path& p) { return p.extension() == ".tracebin"; }

}  // namespace

std::string trace_header(const PowerTrace& trace) {
  std::string h = "imc-trace v1, tile=" + std::to_string(trace.tile_id) +
                  ", rate=" + fmt_double(trace.sample_rate, 17) +
                  ", n=" + std::to_string(trace.samples.size());
  if (trace.t0 != 0.0) h += ", t0=" + fmt_double(trace.t0, 17);
  return h;
}

void write_trace(const PowerTrace& trace, const std::filesystem::path& path, bool binary) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw TraceFormatError("cannot write trace " + path.string());
  out << trace_header(trace) << '\n';
  if (binary) {
    std::vector<char> buf(trace.samples.size() * 8);
    for (std::size_t i = 0; i < trace.samples.size(); ++i) {
      const auto bits = std::bit_cast<std::uint64_t>(trace.samples[i]);
      for (int b = 0; b < 8; ++b) buf[i * 8 + b] = static_cast<char>((bits >> (8 * b)) & 0xff);
    }
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    return;
  }
  std::string text;
  text.reserve(trace.samples.size() * 14);
  char buf[40];
  for (double s : trace.samples) {
    const auto res = std::to_chars(buf, buf + sizeof buf, s);
    text.append(buf, res.ptr);
    text.push_back('\n');
  }
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
}

namespace {

struct Header {
  int tile = 0;
  double rate = 0.0;
  std::size_t n = 0;
  double t0 = 0.0;
};

Header parse_header(const std::string& line, const std::filesystem::path& path) {
  const std::string prefix = "imc-trace v1";
  if (line.rfind(prefix, 0) != 0)
    throw TraceFormatError(path.string() + ": not an imc-trace v1 file");
  std::map<std::string, std::string> fields;
  std::istringstream ss(line.substr(prefix.size()));
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto b = item.find_first_not_of(' ');
    if (b == std::string::npos) continue;
    item = item.substr(b);
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw TraceFormatError(path.string() + ": bad header field '" + item + "'");
    fields[item.substr(0, eq)] = item.substr(eq + 1);
  }
  Header h;
  try {
    h.tile = std::stoi(fields.at("tile"));
    h.rate = std::stod(fields.at("rate"));
    h.n = std::stoull(fields.at("n"));
    if (auto it = fields.find("t0"); it != fields.end()) h.t0 = std::stod(it->second);
  } catch (const std::exception&) {
    throw TraceFormatError(path.string() + ": header needs tile, rate and n");
  }
  if (!(h.rate > 0.0)) throw TraceFormatError(path.string() + ": rate must be positive");
  return h;
}

}  // namespace

PowerTrace read_trace(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw TraceFormatError("cannot open trace " + path.string());
  std::string line;
  std::getline(in, line);
  const Header h = parse_header(line, path);

  PowerTrace t;
  t.tile_id = h.tile;
  t.sample_rate = h.rate;
  t.t0 = h.t0;
  t.samples.resize(h.n);
  if (is_binary_path(path)) {
    std::vector<unsigned char> buf(h.n * 8);
    if (!in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size())))
      throw TraceFormatError(path.string() + ": truncated binary payload");
    for (std::size_t i = 0; i < h.n; ++i) {
      std::uint64_t bits = 0;
      for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(buf[i * 8 + b]) << (8 * b);
      t.samples[i] = std::bit_cast<double>(bits);
    }
    return t;
  }
  const std::string body((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const char* p = body.data();
  const char* end = body.data() + body.size();
  for (std::size_t i = 0; i < h.n; ++i) {
    while (p < end && (*p == '\n' || *p == '\r' || *p == ' ')) ++p;
    const auto res = std::from_chars(p, end, t.samples[i]);
    if (res.ec != std::errc())
      throw TraceFormatError(path.string() + ": bad sample on line " + std::to_string(i + 2));
    p = res.ptr;
  }
  while (p < end && (*p == '\n' || *p == '\r' || *p == ' ')) ++p;
  if (p != end) throw TraceFormatError(path.string() + ": more samples than n");
  return t;
}

std::string trace_file_name(int tile_id, bool binary) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "tile_%03d.%s", tile_id, binary ? "tracebin" : "trace");
  return buf;
}

void write_trace_dir(const std::vector<PowerTrace>& traces, const std::filesystem::path& dir,
                     bool binary) {
  std::filesystem::create_directories(dir);
  for (const auto& t : traces) write_trace(t, dir / trace_file_name(t.tile_id, binary), binary);
}

std::vector<PowerTrace> read_trace_dir(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir))
    throw TraceFormatError("trace directory " + dir.string() + " does not exist");
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    const auto ext = e.path().extension();
    if (e.is_regular_file() && (ext == ".trace" || ext == ".tracebin")) files.push_back(e.path());
  }
  std::vector<PowerTrace> traces;
  traces.reserve(files.size());
  for (const auto& f : files) traces.push_back(read_trace(f));
  std::sort(traces.begin(), traces.end(),
            [](const PowerTrace& a, const PowerTrace& b) { return a.tile_id < b.tile_id; });
  for (std::size_t i = 1; i < traces.size(); ++i)
    if (traces[i].tile_id == traces[i - 1].tile_id)
      throw TraceFormatError("duplicate traces for tile " + std::to_string(traces[i].tile_id));
  return traces;
}

}  // namespace imcsca
