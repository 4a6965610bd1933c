#pragma once

// The attacker's side. Inputs are per-tile power traces and public hardware
// parameters only; nothing in here may depend on the mapper or the simulator.

#include <optional>
#include <string>
#include <vector>

#include "imcsca/netspec.hpp"
#include "imcsca/trace.hpp"

namespace imcsca {

// Publicly known tile hardware: array geometry, ADC type and count, clocks and
// the read timing that follows from them.
struct HwKnowledge {
  int array_rows = 128;
  int array_cols = 128;
  int adc_count = 4;
  int adc_bits = 8;
  int columns_per_weight = 4;  // +/- pair times two cells per weight
  int input_bits = 8;
  double serial_clock_hz = 50e6;
  double digital_clock_hz = 500e6;
  double adc_step_time = 2e-9;
  double settle_time = 4e-9;
  double transient_time = 1e-10;
  double bit_overhead = 2e-9;
  // The dataset is public, so the first layer's input is known.
  int input_channels = 3;
  int input_width = 32;

  void validate() const;
  int max_conversions() const { return array_cols / (2 * adc_count); }
  double serial_period() const { return 1.0 / serial_clock_hz; }
  // Duration of one input bit on a tile whose ADCs convert `conversions` times.
  double bit_period(int conversions) const;
};

struct AttackParams {
  double threshold_sigma = 4.0;  // theta = idle_mean + threshold_sigma * idle_std
  double idle_window = 0.5e-6;   // leading segment assumed idle
  int min_cluster = 3;           // grid-consistent detections needed to lock the period
  double fold_z_min = 7.0;       // folded plateau significance when the threshold path fails
  double slot_penalty = 0.4;     // evidence a bit slot must exceed to count as active
  double extent_tie = 8.0;       // span scores closer than this count as tied
  bool share_timing = true;      // let a weak tile take a stronger tile's timing
  double share_z = 2.0;          // own fit must beat a shared timing by this many sigma
  double share_present_z = 4.0;  // shared timing significance for a tile with no fit of its own
  std::vector<int> kernel_candidates{1, 3, 5, 7};
  std::vector<int> first_layer_kernels{1, 3, 5};
  int max_padding = 4;
  int max_stride = 3;
  int max_pool = 4;

  void validate() const;
};

struct DetectedWindow {
  double start = 0.0;  // seconds
  double end = 0.0;

  double duration() const { return end - start; }
};

// Runs of the smoothed trace above the detection threshold. Raw material for
// the period search; misses and false alarms are expected under noise.
std::vector<DetectedWindow> detect_candidate_windows(const PowerTrace& trace, const HwKnowledge& hw,
                                                     const AttackParams& params = {});

struct TraceAnalysis {
  std::vector<DetectedWindow> candidates;
  std::vector<DetectedWindow> windows;  // one per input bit, on the inferred grid
  double threshold = 0.0;
  double idle_mean = 0.0;
  double idle_std = 0.0;
  int adc_exec_count = 0;
  double bit_period = 0.0;
  double mean_analog_power = 0.0;
  double score = 0.0;       // log-likelihood of the span against idle
  int timing_source = -1;   // tile whose timing was taken, or -1 for its own
  std::string failure;      // empty on success

  bool ok() const { return failure.empty(); }
};

TraceAnalysis analyze_trace(const PowerTrace& trace, const HwKnowledge& hw,
                            const AttackParams& params = {});

// Every trace on its own, then weak tiles share timing with tiles whose fit
// explains them as well as their own.
std::vector<TraceAnalysis> analyze_traces(const std::vector<PowerTrace>& traces,
                                          const HwKnowledge& hw, const AttackParams& params = {});

// Analog read windows, one per input bit. Candidates are locked onto the bit
// grid implied by the hardware timing, so weak or missed plateaus still count.
// Empty when the trace shows no activity or no consistent period.
std::vector<DetectedWindow> detect_analog_ops(const PowerTrace& trace, const HwKnowledge& hw,
                                              const AttackParams& params = {});

struct TileFeatures {
  int tile_id = 0;
  double start_time = 0.0;
  double end_time = 0.0;
  int vmm_count = 0;
  int adc_exec_count = 0;
  double mean_analog_power = 0.0;
  double bit_period = 0.0;
};

std::optional<TileFeatures> features_of(const PowerTrace& trace, const TraceAnalysis& analysis,
                                        const HwKnowledge& hw, std::string* why = nullptr);

// Throws AttackError when no analog activity can be locked.
TileFeatures extract_features(const PowerTrace& trace, const HwKnowledge& hw,
                              const AttackParams& params = {});
std::optional<TileFeatures> try_extract_features(const PowerTrace& trace, const HwKnowledge& hw,
                                                 const AttackParams& params, std::string* why);
std::vector<TileFeatures> extract_all_features(const std::vector<PowerTrace>& traces,
                                               const HwKnowledge& hw,
                                               const AttackParams& params = {});

struct LayerGroup {
  LayerKind kind = LayerKind::FC;
  std::vector<TileFeatures> tiles;  // ascending tile id
  double start_time = 0.0;
  double end_time = 0.0;
  int vmm_count = 0;

  std::vector<int> tile_ids() const;
};

// Algorithm 1: fc iff one VMM per tile; tiles starting within one serial clock
// form a layer. Groups are returned in execution order.
std::vector<LayerGroup> layer_property_extraction(std::vector<TileFeatures> features,
                                                  const HwKnowledge& hw);

struct OutputSizeResult {
  int out = 0;
  int grid_rows = 1;
  int grid_cols = 1;
  int partial_tiles = 0;
  int partial_conversions = 0;
  bool multiple_assumed = false;  // no partial tile seen
};

// Algorithm 2.
OutputSizeResult output_size_extraction(const LayerGroup& group, const HwKnowledge& hw);

struct ConvGeometry {
  int kernel = 1;
  int padding = 0;
  int stride = 1;
};

struct FirstLayerKernel {
  int kernel = 0;
  int out_width = 0;
  std::vector<ConvGeometry> candidates;  // every geometry consistent with the VMM count
};

// Brute force over the output-width relation for a single-tile-row layer.
FirstLayerKernel kernel_size_extraction_first_layer(int vmm_count, int input_width,
                                                    const AttackParams& params = {});

struct KernelEstimate {
  int kernel = 0;
  double total_rows = 0.0;
  double last_row_ratio = 0.0;
  std::string warning;
};

// Row count of a multi-row grid from per-tile-row power sums.
double estimate_total_rows(const std::vector<double>& row_powers, int array_rows);
std::vector<double> tile_row_powers(const LayerGroup& group, int grid_rows);

// Algorithm 3.
KernelEstimate kernel_size_extraction(const std::vector<double>& row_powers, int in_channels,
                                      const HwKnowledge& hw, const AttackParams& params = {});
KernelEstimate kernel_size_extraction(const LayerGroup& group, int grid_rows, int in_channels,
                                      const HwKnowledge& hw, const AttackParams& params = {});

struct PoolCandidate {
  int padding = 0;
  int stride = 1;
  int input_width = 0;
  int pool = 1;
};

struct PoolingResult {
  int pool = 1;
  ConvGeometry geometry;
  std::vector<PoolCandidate> candidates;
  bool delay_observed = false;
  std::string note;
};

// Algorithm 4, conv-to-conv branch.
PoolingResult pooling_detection(int prev_out_width, int next_kernel, int next_out_width,
                                bool delay_observed, const AttackParams& params = {});
// Algorithm 4, conv-to-fc branch. Throws when the sizes do not divide.
int pooling_detection_fc(int conv_out_width, int conv_out_channels, int fc_in_features);

struct ExtractedLayer {
  LayerSpec spec;
  std::vector<std::string> provenance;
};

struct ExtractedArchitecture {
  Shape input;
  std::vector<ExtractedLayer> layers;
  std::vector<std::string> notes;

  NetworkSpec network() const;
};

ExtractedArchitecture reconstruct_architecture(const std::vector<LayerGroup>& groups,
                                               const HwKnowledge& hw,
                                               const AttackParams& params = {});

// Feature extraction, grouping and reconstruction in one call.
ExtractedArchitecture run_attack(const std::vector<PowerTrace>& traces, const HwKnowledge& hw,
                                 const AttackParams& params = {});

// Network text format with the provenance of every value in trailing comments.
std::string format_report(const ExtractedArchitecture& arch);
NetworkSpec parse_report(const std::string& text);

struct FieldMatch {
  std::string field;
  std::string expected;
  std::string actual;
  bool match = false;
};

struct MatchReport {
  std::vector<FieldMatch> fields;

  int mismatches() const;
  bool all_match() const { return mismatches() == 0; }
  std::string summary() const;
};

// Weighted layers are aligned in order and named conv1, conv2, fc1, ... after
// the ground truth. Compared per layer: kind, out, kernel and pool_before.
MatchReport compare(const NetworkSpec& extracted, const NetworkSpec& truth);

}  // namespace imcsca
