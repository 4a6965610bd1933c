#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace imcsca {

// Uniformly sampled power of one tile. Sample i covers
// [t0 + i / sample_rate, t0 + (i + 1) / sample_rate).
struct PowerTrace {
  int tile_id = 0;
  double sample_rate = 1e10;  // samples per second
  double t0 = 0.0;            // seconds, start of the first sample
  std::vector<double> samples;  // watts

  double duration() const { return static_cast<double>(samples.size()) / sample_rate; }
  double energy() const;  // joules
};

// File format, text variant:
//
//   imc-trace v1, tile=<id>, rate=<Sa/s>, n=<count>[, t0=<seconds>]
//   <one sample in watts per line>
//
// The binary variant (".tracebin") has the same header line followed by n
// little-endian IEEE-754 doubles.
std::string trace_header(const PowerTrace& trace);
void write_trace(const PowerTrace& trace, const std::filesystem::path& path, bool binary = false);
PowerTrace read_trace(const std::filesystem::path& path);

// Canonical per-tile file name inside a trace directory.
std::string trace_file_name(int tile_id, bool binary = false);

void write_trace_dir(const std::vector<PowerTrace>& traces, const std::filesystem::path& dir,
                     bool binary = false);
// Reads every *.trace / *.tracebin file in `dir`, sorted by tile id. Other
// files are ignored.
std::vector<PowerTrace> read_trace_dir(const std::filesystem::path& dir);

}  // namespace imcsca
