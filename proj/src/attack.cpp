#include "imcsca/attack.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

#include "imcsca/error.hpp"

namespace imcsca {

void HwKnowledge::validate() const {
  if (array_rows < 1 || array_cols < 1) throw ConfigError("hw: array size must be positive");
  if (adc_count < 1 || array_cols % (2 * adc_count) != 0)
    throw ConfigError("hw: array_cols must be a multiple of 2 * adc_count");
  if (adc_bits < 1 || input_bits < 1 || columns_per_weight < 1)
    throw ConfigError("hw: bit widths and columns_per_weight must be positive");
  if (!(serial_clock_hz > 0.0) || !(digital_clock_hz > 0.0))
    throw ConfigError("hw: clock rates must be positive");
  if (!(adc_step_time > 0.0) || !(settle_time > 0.0) || transient_time < 0.0 || bit_overhead < 0.0)
    throw ConfigError("hw: read timing must be positive");
  if (input_channels < 1 || input_width < 1) throw ConfigError("hw: input shape must be positive");
}

double HwKnowledge::bit_period(int conversions) const {
  return transient_time + settle_time + conversions * adc_bits * adc_step_time + bit_overhead;
}

void AttackParams::validate() const {
  if (!(threshold_sigma >= 0.0)) throw ConfigError("attack: threshold_sigma must be >= 0");
  if (!(idle_window > 0.0)) throw ConfigError("attack: idle_window must be positive");
  if (min_cluster < 2) throw ConfigError("attack: min_cluster must be >= 2");
  if (!(fold_z_min > 0.0)) throw ConfigError("attack: fold_z_min must be positive");
  if (!(slot_penalty >= 0.0)) throw ConfigError("attack: slot_penalty must be >= 0");
  if (!(extent_tie >= 0.0) || !(share_z >= 0.0))
    throw ConfigError("attack: extent_tie and share_z must be >= 0");
  if (!(share_present_z > 0.0)) throw ConfigError("attack: share_present_z must be positive");
  if (kernel_candidates.empty() || first_layer_kernels.empty())
    throw ConfigError("attack: kernel candidate sets must not be empty");
  if (max_padding < 0 || max_stride < 1 || max_pool < 1)
    throw ConfigError("attack: search bounds must be positive");
}

namespace {

int smoothing_length(const HwKnowledge& hw, double rate) {
  return std::max(1, static_cast<int>(std::lround(hw.settle_time * rate)));
}

std::vector<double> boxcar(const std::vector<double>& x, int len) {
  const std::size_t n = x.size();
  std::vector<double> prefix(n + 1, 0.0);
  for (std::size_t i = 0; i < n; ++i) prefix[i + 1] = prefix[i] + x[i];
  std::vector<double> out(n);
  const auto back = static_cast<std::ptrdiff_t>((len - 1) / 2);
  for (std::size_t i = 0; i < n; ++i) {
    const auto lo = std::max<std::ptrdiff_t>(0, static_cast<std::ptrdiff_t>(i) - back);
    const auto hi = std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(n), lo + len);
    out[i] = (prefix[hi] - prefix[lo]) / static_cast<double>(hi - lo);
  }
  return out;
}

double otsu_threshold(const std::vector<double>& v, std::size_t lo, std::size_t hi) {
  const auto [mn_it, mx_it] = std::minmax_element(v.begin() + lo, v.begin() + hi);
  const double mn = *mn_it, mx = *mx_it;
  if (!(mx > mn)) return mx;
  constexpr int kBins = 512;
  std::vector<double> hist(kBins, 0.0);
  const double width = (mx - mn) / kBins;
  for (std::size_t i = lo; i < hi; ++i) {
    const int b = std::min(kBins - 1, static_cast<int>((v[i] - mn) / width));
    hist[b] += 1.0;
  }
  const double total = static_cast<double>(hi - lo);
  double sum_all = 0.0;
  for (int b = 0; b < kBins; ++b) sum_all += b * hist[b];
  double w0 = 0.0, sum0 = 0.0, best = -1.0;
  int best_bin = 0;
  for (int b = 0; b < kBins; ++b) {
    w0 += hist[b];
    sum0 += b * hist[b];
    const double w1 = total - w0;
    if (w0 == 0.0 || w1 == 0.0) continue;
    const double m0 = sum0 / w0, m1 = (sum_all - sum0) / w1;
    const double between = w0 * w1 * (m0 - m1) * (m0 - m1);
    if (between > best) {
      best = between;
      best_bin = b;
    }
  }
  return mn + (best_bin + 1) * width;
}

struct Detection {
  std::vector<double> smoothed;
  std::vector<DetectedWindow> windows;
  double threshold = 0.0;
  double idle_mean = 0.0;
  double idle_std = 0.0;
  double raw_idle_mean = 0.0;
  double raw_idle_std = 0.0;
  std::size_t idle_samples = 0;
};

Detection detect(const PowerTrace& trace, const HwKnowledge& hw, const AttackParams& params) {
  if (trace.samples.empty()) throw AttackError("tile " + std::to_string(trace.tile_id) + ": empty trace");
  if (!(trace.sample_rate > 0.0))
    throw AttackError("tile " + std::to_string(trace.tile_id) + ": sample rate must be positive");
  hw.validate();
  params.validate();

  Detection d;
  const std::vector<double>& x = trace.samples;
  const std::size_t n = x.size();
  const int len = smoothing_length(hw, trace.sample_rate);
  d.smoothed = boxcar(x, len);
  const std::vector<double>& s = d.smoothed;

  const auto wanted = static_cast<std::size_t>(std::llround(params.idle_window * trace.sample_rate));
  const std::size_t n_idle = std::clamp<std::size_t>(wanted, 1, std::max<std::size_t>(1, n / 4));
  double mean = 0.0, raw_mean = 0.0;
  for (std::size_t i = 0; i < n_idle; ++i) {
    mean += s[i];
    raw_mean += x[i];
  }
  mean /= static_cast<double>(n_idle);
  raw_mean /= static_cast<double>(n_idle);
  double var = 0.0;
  for (std::size_t i = 0; i < n_idle; ++i) var += (s[i] - mean) * (s[i] - mean);
  var /= static_cast<double>(n_idle);
  d.idle_mean = mean;
  d.idle_std = std::sqrt(var);
  d.raw_idle_mean = raw_mean;
  double raw_var = 0.0;
  for (std::size_t i = 0; i < n_idle; ++i) raw_var += (x[i] - raw_mean) * (x[i] - raw_mean);
  d.raw_idle_std = std::sqrt(raw_var / static_cast<double>(n_idle));
  d.idle_samples = n_idle;

  const double theta_idle = mean + params.threshold_sigma * d.idle_std;
  std::size_t first = n, last = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (s[i] > theta_idle) {
      first = std::min(first, i);
      last = i;
    }
  }
  d.threshold = theta_idle;
  if (first == n) return d;
  // The ADC phase sits above idle too; split it from the read plateaus.
  d.threshold = std::max(theta_idle, otsu_threshold(s, first, last + 1));

  const std::size_t min_len = std::max<std::size_t>(1, static_cast<std::size_t>(len) / 2);
  const std::size_t max_gap = min_len;
  std::vector<std::pair<std::size_t, std::size_t>> runs;
  for (std::size_t i = first; i <= last;) {
    if (!(s[i] > d.threshold)) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j <= last && s[j] > d.threshold) ++j;
    if (!runs.empty() && i - runs.back().second < max_gap)
      runs.back().second = j;
    else
      runs.emplace_back(i, j);
    i = j;
  }
  const double dt = 1.0 / trace.sample_rate;
  for (const auto& [a, b] : runs) {
    if (b - a < min_len) continue;
    d.windows.push_back({trace.t0 + static_cast<double>(a) * dt, trace.t0 + static_cast<double>(b) * dt});
  }
  return d;
}

struct PeriodLock {
  int conversions = 0;
  double period = 0.0;
  double anchor = 0.0;  // plateau start of some bit
  int teeth = 1;        // detections per bit: one per plateau, or one per conversion
  double tol = 0.0;
  std::size_t members = 0;
  double score = 0.0;
  double first_member = 0.0;
  double last_member = 0.0;
};

// Candidate starts of one tile repeat with the bit period, which can only be
// one of max_conversions values. A strong read plateau gives one detection per
// bit at the plateau start. A read weaker than the ADC gives one per
// conversion instead, a comb of `conversions` teeth one conversion apart that
// starts one settle time after the plateau. Every period whose residues
// cluster well enough is returned, best first; near-harmonics of the true
// period can cluster a handful of detections too, so the caller settles ties.
std::vector<PeriodLock> lock_periods(const std::vector<DetectedWindow>& candidates, double rate,
                                     const HwKnowledge& hw, const AttackParams& params,
                                     std::string& failure) {
  const std::size_t count = candidates.size();
  const double tol = std::max(1.5 / rate, hw.settle_time / 2.0);
  const double pitch = hw.adc_bits * hw.adc_step_time;
  const double t_ref = candidates.front().start;

  std::vector<PeriodLock> locks;
  std::vector<double> res;
  res.reserve(2 * count);
  for (int conv = 1; conv <= hw.max_conversions(); ++conv) {
    const double period = hw.bit_period(conv);
    if (2.0 * tol >= period) continue;
    res.clear();
    for (const auto& w : candidates) {
      double r = std::fmod(w.start - t_ref, period);
      if (r < 0) r += period;
      res.push_back(r);
    }
    std::sort(res.begin(), res.end());
    for (std::size_t i = 0; i < count; ++i) res.push_back(res[i] + period);
    std::size_t best = 0, best_lo = 0;
    for (std::size_t lo = 0, hi = 0; lo < count; ++lo) {
      if (hi < lo) hi = lo;
      while (hi + 1 < res.size() && res[hi + 1] - res[lo] <= 2.0 * tol) ++hi;
      if (hi - lo + 1 > best) {
        best = hi - lo + 1;
        best_lo = lo;
      }
    }
    PeriodLock lock;
    lock.conversions = conv;
    lock.period = period;
    lock.members = best;
    lock.tol = tol;
    lock.score = static_cast<double>(best) - static_cast<double>(count) * (2.0 * tol / period);
    double c = 0.0;
    for (std::size_t i = best_lo; i < best_lo + best; ++i) c += res[i];
    lock.anchor = t_ref + c / static_cast<double>(best);
    locks.push_back(lock);

    // Teeth one conversion late sit one inter-bit gap from the next plateau,
    // so the comb tolerance stays inside half that gap.
    const double ctol = std::max(1.5 / rate, 0.5 * (hw.transient_time + hw.bit_overhead));
    if (conv < 2 || 2.0 * ctol >= pitch) continue;
    // Comb over a circular histogram of the residues.
    const double bin = ctol / 4.0;
    const auto bins = static_cast<std::size_t>(std::ceil(period / bin));
    std::vector<std::size_t> hist(bins, 0);
    for (std::size_t i = 0; i < count; ++i)
      ++hist[std::min(bins - 1, static_cast<std::size_t>(res[i] / bin))];
    const std::size_t span = 8;  // 2 * tol
    std::vector<std::size_t> window(bins, 0);
    for (std::size_t b = 0; b < bins; ++b)
      for (std::size_t j = 0; j < span; ++j) window[b] += hist[(b + j) % bins];
    std::size_t comb_best = 0, comb_b = 0;
    for (std::size_t b = 0; b < bins; ++b) {
      std::size_t total = 0;
      for (int j = 0; j < conv; ++j)
        total += window[(b + static_cast<std::size_t>(std::lround(j * pitch / bin))) % bins];
      if (total > comb_best) {
        comb_best = total;
        comb_b = b;
      }
    }
    // Refine the first tooth on the member residues.
    const double tooth0 = (static_cast<double>(comb_b) + span / 2.0) * bin;
    double sum = 0.0;
    std::size_t used = 0;
    for (std::size_t i = 0; i < count; ++i)
      for (int j = 0; j < conv; ++j) {
        double d = std::remainder(res[i] - tooth0 - j * pitch, period);
        if (std::abs(d) <= ctol) {
          sum += d;
          ++used;
          break;
        }
      }
    PeriodLock comb;
    comb.conversions = conv;
    comb.period = period;
    comb.teeth = conv;
    comb.tol = ctol;
    comb.members = used;
    comb.score = static_cast<double>(used) - static_cast<double>(count) * (2.0 * ctol * conv / period);
    comb.anchor = t_ref + tooth0 + (used > 0 ? sum / static_cast<double>(used) : 0.0) - hw.settle_time;
    locks.push_back(comb);
  }
  if (locks.empty()) {
    failure = "sample rate too low to resolve any bit period";
    return {};
  }
  std::stable_sort(locks.begin(), locks.end(),
                   [](const PeriodLock& a, const PeriodLock& b) { return a.score > b.score; });
  const PeriodLock& top = locks.front();
  if (top.members < static_cast<std::size_t>(params.min_cluster) || 2 * top.members < count) {
    failure = "detections do not lock to a bit period (" + std::to_string(top.members) + " of " +
              std::to_string(count) + " consistent)";
    return {};
  }
  std::vector<PeriodLock> plausible;
  for (auto lock : locks) {
    if (lock.members < static_cast<std::size_t>(params.min_cluster) || lock.score < 0.8 * top.score)
      continue;
    const double tooth0 = lock.anchor + (lock.teeth > 1 ? hw.settle_time : 0.0);
    bool any = false;
    for (const auto& w : candidates) {
      bool member = false;
      for (int j = 0; j < lock.teeth && !member; ++j)
        member = std::abs(std::remainder(w.start - tooth0 - j * pitch, lock.period)) <= lock.tol;
      if (!member) continue;
      if (!any) lock.first_member = w.start;
      lock.last_member = w.start;
      any = true;
    }
    plausible.push_back(lock);
  }
  return plausible;
}

// Bit slots on a fixed grid: slot k covers samples [index(k), index(k) + width).
struct SlotGrid {
  double t0 = 0.0;
  double rate = 0.0;
  double origin = 0.0;
  double period = 0.0;
  std::ptrdiff_t width = 0;
  long k_lo = 0;
  long k_hi = -1;

  std::ptrdiff_t index(long k) const {
    return static_cast<std::ptrdiff_t>(std::floor((origin + static_cast<double>(k) * period - t0) * rate));
  }
  long nearest(double t) const { return std::clamp(std::lround((t - origin) / period), k_lo, k_hi); }
  bool empty() const { return k_hi < k_lo; }
};

SlotGrid make_grid(const PowerTrace& trace, double origin, double period) {
  SlotGrid g;
  g.t0 = trace.t0;
  g.rate = trace.sample_rate;
  g.origin = origin;
  g.period = period;
  g.width = static_cast<std::ptrdiff_t>(std::ceil(period * g.rate));
  const auto n = static_cast<std::ptrdiff_t>(trace.samples.size());
  g.k_lo = static_cast<long>(std::ceil((trace.t0 - origin) / period));
  while (g.index(g.k_lo) < 0) ++g.k_lo;
  g.k_hi = static_cast<long>(std::floor((trace.t0 + static_cast<double>(n) / g.rate - origin) / period));
  while (g.k_hi >= g.k_lo && g.index(g.k_hi) + g.width > n) --g.k_hi;
  return g;
}

// Mean slot between two slot indices, baseline removed.
std::vector<double> fold(const std::vector<double>& x, const SlotGrid& g, long k_first, long k_last,
                         double base) {
  std::vector<double> profile(static_cast<std::size_t>(g.width), 0.0);
  for (long k = k_first; k <= k_last; ++k) {
    const auto i0 = g.index(k);
    for (std::ptrdiff_t b = 0; b < g.width; ++b) profile[b] += x[i0 + b] - base;
  }
  for (double& v : profile) v /= static_cast<double>(k_last - k_first + 1);
  return profile;
}

// Offset and level of the brightest plateau-long stretch of a folded slot.
std::pair<std::ptrdiff_t, double> brightest(const std::vector<double>& profile, int plateau) {
  const auto width = static_cast<std::ptrdiff_t>(profile.size());
  std::ptrdiff_t offset = 0;
  double best = -1e300;
  for (std::ptrdiff_t b = 0; b < width; ++b) {
    double sum = 0.0;
    for (int j = 0; j < plateau; ++j) sum += profile[(b + j) % width];
    if (sum > best) {
      best = sum;
      offset = b;
    }
  }
  return {offset, best / plateau};
}

// Plateau offset in a slot gridded from a plateau anchor: the grid puts the
// plateau one settle time into the slot, so only a small shift is searched.
// A read weaker than the ADC would otherwise pull the offset onto a conversion.
std::ptrdiff_t plateau_offset(const std::vector<double>& profile, int plateau) {
  const auto width = static_cast<std::ptrdiff_t>(profile.size());
  const std::ptrdiff_t radius = plateau / 2;
  std::ptrdiff_t offset = plateau;
  double best = -1e300;
  for (std::ptrdiff_t b = plateau - radius; b <= plateau + radius; ++b) {
    double sum = 0.0;
    for (int j = 0; j < plateau; ++j) sum += profile[((b + j) % width + width) % width];
    if (sum > best) {
      best = sum;
      offset = ((b % width) + width) % width;
    }
  }
  return offset;
}

// ADC phase start in a folded slot, by least squares over the slot layout: a
// flat plateau one settle time long, `conversions` conversions sharing one
// shape, then a flat gap up to the next plateau. Conversion codes vary, but
// the plateau and gap only fit flat where they belong.
std::optional<std::ptrdiff_t> adc_phase_start(const std::vector<double>& profile, int conversions,
                                              int plateau, const HwKnowledge& hw, double rate) {
  const auto width = static_cast<std::ptrdiff_t>(profile.size());
  const double pitch = hw.adc_bits * hw.adc_step_time * rate;
  const auto shape = static_cast<std::ptrdiff_t>(std::ceil(pitch));
  if (pitch < 2.0 || plateau + conversions * pitch >= static_cast<double>(width)) return std::nullopt;
  // Group of each offset from the plateau start: 0 plateau, 1 gap, 2 + t conversion sample t.
  std::vector<std::ptrdiff_t> group(static_cast<std::size_t>(width));
  for (std::ptrdiff_t u = 0; u < width; ++u) {
    if (u < plateau) {
      group[u] = 0;
      continue;
    }
    const double v = static_cast<double>(u - plateau);
    const auto conv = static_cast<std::ptrdiff_t>(v / pitch);
    group[u] = conv < conversions
                   ? 2 + std::min(shape - 1, static_cast<std::ptrdiff_t>(v - static_cast<double>(conv) * pitch))
                   : 1;
  }
  std::vector<double> sum(static_cast<std::size_t>(shape + 2)), sq(sum.size());
  std::vector<std::size_t> count(sum.size());
  std::ptrdiff_t best_q = -1;
  double best = std::numeric_limits<double>::max();
  for (std::ptrdiff_t q = 0; q < width; ++q) {
    std::fill(sum.begin(), sum.end(), 0.0);
    std::fill(sq.begin(), sq.end(), 0.0);
    std::fill(count.begin(), count.end(), 0);
    const std::ptrdiff_t start = q - plateau + width;
    for (std::ptrdiff_t u = 0; u < width; ++u) {
      const double x = profile[(start + u) % width];
      const auto g = group[u];
      sum[g] += x;
      sq[g] += x * x;
      ++count[g];
    }
    double residual = 0.0;
    for (std::size_t g = 0; g < sum.size(); ++g)
      if (count[g] > 0) residual += sq[g] - sum[g] * sum[g] / static_cast<double>(count[g]);
    if (residual < best) {
      best = residual;
      best_q = q;
    }
  }
  if (best_q < 0) return std::nullopt;
  return best_q;
}

}  // namespace

std::vector<DetectedWindow> detect_candidate_windows(const PowerTrace& trace, const HwKnowledge& hw,
                                                     const AttackParams& params) {
  return detect(trace, hw, params).windows;
}

namespace {

struct GridLock {
  int conversions = 0;
  double period = 0.0;
  double anchor = 0.0;  // plateau start of some bit
  long fold_first = 0;  // slot span the template is folded over
  long fold_last = -1;
  SlotGrid grid;
  std::size_t members = 0;  // detections on the grid; zero for a folded lock
};

// Threshold path: cluster the candidate starts, then let the fold contrast
// separate the true period from near-harmonics.
std::optional<GridLock> lock_from_candidates(const PowerTrace& trace, const Detection& d,
                                             const HwKnowledge& hw, const AttackParams& params,
                                             std::string& failure) {
  const auto locks = lock_periods(d.windows, trace.sample_rate, hw, params, failure);
  // A comb fits only its own period, and the ADC fine structure it rides on
  // aliases across folds, so a clear comb lead is taken as is.
  if (!locks.empty() && locks.front().teeth > 1) {
    const PeriodLock& top = locks.front();
    double rival = -1e300;
    for (const auto& l : locks)
      if (l.conversions != top.conversions) rival = std::max(rival, l.score);
    if (rival < 0.9 * top.score) {
      SlotGrid g = make_grid(trace, top.anchor - hw.settle_time, top.period);
      if (!g.empty())
        return GridLock{top.conversions, top.period, top.anchor, g.nearest(top.first_member),
                        g.nearest(top.last_member), g, top.members};
    }
  }
  const int plateau = std::max(1, static_cast<int>(std::lround(hw.settle_time * trace.sample_rate)));
  std::optional<GridLock> best;
  std::vector<std::pair<int, double>> contrasts;
  double best_contrast = -1e300;
  for (const auto& l : locks) {
    SlotGrid g = make_grid(trace, l.anchor - hw.settle_time, l.period);
    if (g.empty()) continue;
    const long k0 = g.nearest(l.first_member), k1 = g.nearest(l.last_member);
    const auto profile = fold(trace.samples, g, k0, k1, d.raw_idle_mean);
    const double mean =
        std::accumulate(profile.begin(), profile.end(), 0.0) / static_cast<double>(profile.size());
    const double contrast = brightest(profile, plateau).second - mean;
    contrasts.emplace_back(l.conversions, contrast);
    if (contrast > best_contrast) {
      best_contrast = contrast;
      best = GridLock{l.conversions, l.period, l.anchor, k0, k1, g, l.members};
    }
  }
  // Only a different period competes; both readings of one period agree.
  double second_contrast = -1e300;
  for (const auto& [conv, contrast] : contrasts)
    if (best && conv != best->conversions) second_contrast = std::max(second_contrast, contrast);
  if (best && (!(best_contrast > 0.0) || second_contrast > 0.9 * best_contrast)) {
    failure = "ambiguous bit period";
    return std::nullopt;
  }
  return best;
}

// Fold path: when too few plateaus clear the threshold, fold the whole
// post-idle trace at every possible bit period and keep the one whose plateau
// stands out from the noise.
std::optional<GridLock> lock_by_folding(const PowerTrace& trace, const Detection& d,
                                        const HwKnowledge& hw, const AttackParams& params,
                                        std::string& failure) {
  const double rate = trace.sample_rate;
  const int plateau = std::max(1, static_cast<int>(std::lround(hw.settle_time * rate)));
  const double sigma = d.raw_idle_std;
  if (!(sigma > 0.0)) return std::nullopt;  // a clean trace with no candidates is idle
  const double origin = trace.t0 + static_cast<double>(d.idle_samples) / rate;
  std::optional<GridLock> best;
  double best_z = -1e300, second_z = -1e300;
  for (int conv = 1; conv <= hw.max_conversions(); ++conv) {
    const double period = hw.bit_period(conv);
    SlotGrid g = make_grid(trace, origin, period);
    if (g.empty() || g.width < plateau + 2) continue;
    const auto profile = fold(trace.samples, g, g.k_lo, g.k_hi, d.raw_idle_mean);
    const double mean =
        std::accumulate(profile.begin(), profile.end(), 0.0) / static_cast<double>(profile.size());
    const auto [offset, level] = brightest(profile, plateau);
    const double slots = static_cast<double>(g.k_hi - g.k_lo + 1);
    const double z = (level - mean) / (sigma / std::sqrt(slots * plateau));
    if (z > best_z) {
      second_z = best_z;
      best_z = z;
      const double anchor = origin + static_cast<double>(offset) / rate;
      best = GridLock{conv, period, anchor, 0, -1, make_grid(trace, anchor - hw.settle_time, period)};
    } else if (z > second_z) {
      second_z = z;
    }
  }
  if (!best || best_z < params.fold_z_min) {
    failure += (failure.empty() ? "" : "; ") + std::string("no bit period stands out of the noise");
    return std::nullopt;
  }
  if (second_z > 0.8 * best_z) {
    failure += (failure.empty() ? "" : "; ") + std::string("ambiguous bit period");
    return std::nullopt;
  }
  best->fold_first = best->grid.k_lo;
  best->fold_last = best->grid.k_hi;
  return best;
}

struct Extent {
  long first = 0;
  long vmm = 0;
};

// Per-slot evidence of activity: the ADC part of the template is matched
// directly; the plateau amplitude varies with the input bits, so it enters as
// a generalised likelihood ratio against the quiet part of the same slot.
// Positive means active.
std::vector<double> slot_evidence(const std::vector<double>& x, const SlotGrid& g,
                                  const std::vector<double>& tmpl, std::ptrdiff_t offset,
                                  int plateau, double base, double sigma, double penalty) {
  const std::ptrdiff_t width = g.width;
  std::vector<char> in_plateau(static_cast<std::size_t>(width), 0);
  for (std::ptrdiff_t j = -1; j <= plateau; ++j) in_plateau[((offset + j) % width + width) % width] = 1;
  // Quiet part of the slot: a level there is not a read, whatever its size.
  double peak = 0.0;
  for (double v : tmpl) peak = std::max(peak, v);
  std::vector<std::ptrdiff_t> quiet;
  for (std::ptrdiff_t b = 0; b < width; ++b)
    if (!in_plateau[b] && tmpl[b] <= 0.1 * peak) quiet.push_back(b);
  const double spread = 1.0 / plateau + (quiet.empty() ? 0.0 : 1.0 / static_cast<double>(quiet.size()));
  // The ADC term ignores any constant level over the slot, so digital tails
  // and slow drifts score as idle.
  double a_mean = 0.0;
  std::ptrdiff_t a_count = 0;
  for (std::ptrdiff_t b = 0; b < width; ++b)
    if (!in_plateau[b]) {
      a_mean += tmpl[b];
      ++a_count;
    }
  if (a_count > 0) a_mean /= static_cast<double>(a_count);
  const double var = sigma * sigma;
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(g.k_hi - g.k_lo + 1));
  for (long k = g.k_lo; k <= g.k_hi; ++k) {
    const auto i0 = g.index(k);
    double adc = 0.0;
    for (std::ptrdiff_t b = 0; b < width; ++b) {
      if (in_plateau[b]) continue;
      const double a = tmpl[b] - a_mean;
      adc += a * (x[i0 + b] - base - a_mean - 0.5 * a);
    }
    double y = 0.0;
    for (int j = 0; j < plateau; ++j) y += x[i0 + (offset + j) % width] - base;
    y /= plateau;
    if (!quiet.empty()) {
      double r = 0.0;
      for (auto b : quiet) r += x[i0 + b] - base;
      y -= r / static_cast<double>(quiet.size());
    }
    const double pl = y > 0.0 ? y * y / (2.0 * spread) : 0.0;
    out.push_back((adc + pl) / var - penalty);
  }
  return out;
}

// Best span of whole input vectors: Kadane for a first guess, then an exact
// search over nearby lengths that are multiples of the input width. Spans scoring
// within `tie` of the best are indistinguishable at their edges; among those,
// the one whose leading bit position is the quietest on average wins, since
// bits stream MSB first and activation MSBs are sparse.
std::optional<Extent> fit_extent(const std::vector<double>& evidence, long k_lo, int bits,
                                 double tie) {
  const long slots = static_cast<long>(evidence.size());
  std::vector<double> prefix(evidence.size() + 1, 0.0);
  double run = 0.0, best_run = 0.0;
  long run_start = 0, best_lo = 0, best_hi = 0;
  bool found = false;
  for (long j = 0; j < slots; ++j) {
    prefix[j + 1] = prefix[j] + evidence[j];
    if (run <= 0.0) {
      run = 0.0;
      run_start = j;
    }
    run += evidence[j];
    if (run > best_run) {
      best_run = run;
      best_lo = run_start;
      best_hi = j;
      found = true;
    }
  }
  if (!found) return std::nullopt;
  const long guess = std::max(1L, std::lround(static_cast<double>(best_hi - best_lo + 1) / bits));
  long best_j = -1, best_v = 0;
  double best_sum = -1e300;
  // Noise chips runs short or bridges them, so widen the length search.
  std::vector<long> lengths{guess};
  for (long d = 1; d <= std::max(1L, guess / 8); ++d) {
    lengths.push_back(guess - d);
    lengths.push_back(guess + d);
  }
  for (long v : lengths) {
    const long len = v * bits;
    if (v < 1 || len > slots) continue;
    for (long j = 0; j + len <= slots; ++j) {
      const double sum = prefix[j + len] - prefix[j];
      if (sum > best_sum) {
        best_sum = sum;
        best_j = j;
        best_v = v;
      }
    }
  }
  if (best_j < 0) return std::nullopt;
  if (best_v > 1) {
    const long len = best_v * bits;
    std::vector<double> by_position(static_cast<std::size_t>(bits), 0.0);
    for (long j = best_j; j < best_j + len; ++j)
      by_position[static_cast<std::size_t>((j - best_j) % bits)] += evidence[j];
    const long quietest =
        std::min_element(by_position.begin(), by_position.end()) - by_position.begin();
    // Shift so the quietest position leads, if the edges allow it.
    for (long shift : {quietest, quietest - bits}) {
      const long j = best_j + shift;
      if (shift == 0 || std::abs(shift) >= bits / 2 || j < 0 || j + len > slots) continue;
      if (prefix[j + len] - prefix[j] >= best_sum - tie) {
        best_j = j;
        break;
      }
    }
  }
  return Extent{k_lo + best_j, best_v};
}

// Re-centres the evidence halfway between the mean inside and outside the
// current span and refits, which adapts the activity boundary to the tile's
// own contrast.
std::optional<Extent> fit_extent_adaptive(std::vector<double> evidence, long k_lo, int bits,
                                          double tie) {
  auto extent = fit_extent(evidence, k_lo, bits, tie);
  for (int round = 0; round < 4 && extent; ++round) {
    const long j0 = extent->first - k_lo, j1 = j0 + extent->vmm * bits;
    const long slots = static_cast<long>(evidence.size());
    if (j1 - j0 >= slots) break;
    double in = 0.0, out = 0.0;
    for (long j = 0; j < slots; ++j) (j >= j0 && j < j1 ? in : out) += evidence[j];
    in /= static_cast<double>(j1 - j0);
    out /= static_cast<double>(slots - (j1 - j0));
    if (!(in > out)) break;
    const double mid = 0.5 * (in + out);
    if (std::abs(mid) < 1e-9 * std::abs(in - out)) break;
    for (double& e : evidence) e -= mid;
    const auto next = fit_extent(evidence, k_lo, bits, tie);
    if (!next || (next->first == extent->first && next->vmm == extent->vmm)) break;
    extent = next;
  }
  return extent;
}

}  // namespace

namespace {

// Activity in absolute time: slot k of the span starts at origin + k * period,
// for k in [0, vmm * bits).
struct Hypothesis {
  int conversions = 0;
  double period = 0.0;
  double origin = 0.0;
  long vmm = 0;
  double idle_level = 0.0;   // mean evidence of slots outside the span
  double idle_spread = 0.0;  // and its spread
};

// Slots covered by exactly one of two spans.
long differing_slots(const Hypothesis& a, const Hypothesis& b, int bits) {
  const long na = a.vmm * bits, nb = b.vmm * bits;
  if (a.conversions != b.conversions) return na + nb;
  const double shift = (b.origin - a.origin) / a.period;
  const long k = std::lround(shift);
  if (std::abs(shift - static_cast<double>(k)) > 0.25) return na + nb;
  const long overlap = std::max(0L, std::min(na, k + nb) - std::max(0L, k));
  return na + nb - 2 * overlap;
}

struct TraceContext {
  const PowerTrace* trace = nullptr;
  Detection d;
  double sigma = 0.0;
  int plateau = 1;
};

TraceContext context(const PowerTrace& trace, const HwKnowledge& hw, const AttackParams& params) {
  TraceContext c;
  c.trace = &trace;
  c.d = detect(trace, hw, params);
  c.plateau = std::max(1, static_cast<int>(std::lround(hw.settle_time * trace.sample_rate)));
  double peak = 0.0;
  for (double v : trace.samples) peak = std::max(peak, std::abs(v - c.d.raw_idle_mean));
  // A noiseless trace still needs a finite scale for the evidence.
  c.sigma = std::max(c.d.raw_idle_std, 1e-6 * peak);
  return c;
}

// Own timing of one trace: period lock, then the span fit.
std::optional<Hypothesis> own_hypothesis(const TraceContext& c, const HwKnowledge& hw,
                                         const AttackParams& params, std::string& failure) {
  const PowerTrace& trace = *c.trace;
  std::optional<GridLock> lock;
  if (!c.d.windows.empty()) lock = lock_from_candidates(trace, c.d, hw, params, failure);
  // A lock on a handful of detections is easily a noise coincidence.
  if (!lock || lock->members < static_cast<std::size_t>(2 * hw.input_bits)) {
    std::string why;
    if (auto folded = lock_by_folding(trace, c.d, hw, params, why))
      lock = folded;
    else if (!lock)
      failure += (failure.empty() ? "" : "; ") + why;
  }
  if (!lock) {
    if (failure.empty()) failure = "no analog activity above threshold";
    return std::nullopt;
  }
  const std::vector<double>& x = trace.samples;
  const double base = c.d.raw_idle_mean;
  SlotGrid grid = lock->grid;
  std::vector<double> tmpl = fold(x, grid, lock->fold_first, lock->fold_last, base);
  // Put the plateau one settle time into the slot, ahead of the ADC phase.
  if (const auto adc = adc_phase_start(tmpl, lock->conversions, c.plateau, hw, trace.sample_rate)) {
    const auto width = static_cast<std::ptrdiff_t>(tmpl.size());
    std::ptrdiff_t shift = *adc - 2 * c.plateau;
    shift = ((shift % width) + width) % width;
    if (shift > width / 2) shift -= width;
    if (shift != 0) {
      const double origin = grid.origin + static_cast<double>(shift) / trace.sample_rate;
      const long first = lock->fold_first, last = lock->fold_last;
      grid = make_grid(trace, origin, lock->period);
      if (grid.empty()) {
        failure = "active span leaves the trace";
        return std::nullopt;
      }
      const long k0 = std::clamp(first, grid.k_lo, grid.k_hi), k1 = std::clamp(last, grid.k_lo, grid.k_hi);
      tmpl = fold(x, grid, k0, std::max(k0, k1), base);
    }
  }
  std::ptrdiff_t offset = plateau_offset(tmpl, c.plateau);
  double peak = 0.0;
  for (double v : tmpl) peak = std::max(peak, std::abs(v));
  if (!(peak > 0.0)) {
    failure = "flat slot template";
    return std::nullopt;
  }
  std::optional<Extent> extent;
  double level = 0.0, spread = 0.0;
  for (int pass = 0; pass < 2; ++pass) {
    auto evidence = slot_evidence(x, grid, tmpl, offset, c.plateau, base, c.sigma, params.slot_penalty);
    extent = fit_extent_adaptive(evidence, grid.k_lo, hw.input_bits, params.extent_tie);
    if (!extent) break;
    const long j0 = extent->first - grid.k_lo, j1 = j0 + extent->vmm * hw.input_bits;
    double sum = 0.0, sq = 0.0;
    long count = 0;
    for (long j = 0; j < static_cast<long>(evidence.size()); ++j) {
      if (j >= j0 && j < j1) continue;
      sum += evidence[j];
      sq += evidence[j] * evidence[j];
      ++count;
    }
    level = count > 0 ? sum / count : 0.0;
    spread = count > 1 ? std::sqrt(std::max(0.0, sq / count - level * level)) : 0.0;
    // Refine the template on the fitted span only.
    tmpl = fold(x, grid, extent->first, extent->first + extent->vmm * hw.input_bits - 1, base);
    offset = plateau_offset(tmpl, c.plateau);
  }
  if (!extent) {
    failure = "no active span";
    return std::nullopt;
  }
  return Hypothesis{lock->conversions, lock->period,
                    grid.origin + static_cast<double>(extent->first) * lock->period, extent->vmm,
                    level, spread};
}

// Windows, power and log-likelihood score of one timing hypothesis on a trace.
// Nullopt when the span does not fit inside the trace.
std::optional<TraceAnalysis> evaluate(const TraceContext& c, const Hypothesis& h,
                                      const HwKnowledge& hw, const AttackParams& params) {
  const PowerTrace& trace = *c.trace;
  const std::vector<double>& x = trace.samples;
  const auto n = static_cast<std::ptrdiff_t>(x.size());
  const long slots = h.vmm * hw.input_bits;
  SlotGrid grid = make_grid(trace, h.origin, h.period);
  if (grid.empty() || grid.k_lo > 0 || grid.k_hi < slots - 1) return std::nullopt;
  grid.k_lo = 0;
  grid.k_hi = slots - 1;
  const double base = c.d.raw_idle_mean;
  const auto tmpl = fold(x, grid, 0, slots - 1, base);
  const std::ptrdiff_t offset = plateau_offset(tmpl, c.plateau);
  const auto evidence = slot_evidence(x, grid, tmpl, offset, c.plateau, base, c.sigma, params.slot_penalty);

  TraceAnalysis a;
  a.threshold = c.d.threshold;
  a.idle_mean = c.d.idle_mean;
  a.idle_std = c.d.idle_std;
  a.candidates = c.d.windows;
  a.score = std::accumulate(evidence.begin(), evidence.end(), 0.0);
  double power = 0.0;
  std::size_t used = 0;
  const double dt = 1.0 / trace.sample_rate;
  for (long k = 0; k < slots; ++k) {
    const auto p0 = grid.index(k) + offset;
    const double t = trace.t0 + static_cast<double>(p0) * dt;
    a.windows.push_back({t - hw.transient_time, t + c.plateau * dt});
    for (int j = 0; j < c.plateau && p0 + j < n; ++j) {
      power += x[p0 + j] - base;
      ++used;
    }
  }
  a.adc_exec_count = h.conversions;
  a.bit_period = h.period;
  a.mean_analog_power = used > 0 ? power / static_cast<double>(used) : 0.0;
  return a;
}

TraceAnalysis failed(const TraceContext& c, std::string why) {
  TraceAnalysis a;
  a.threshold = c.d.threshold;
  a.idle_mean = c.d.idle_mean;
  a.idle_std = c.d.idle_std;
  a.candidates = c.d.windows;
  a.failure = std::move(why);
  return a;
}

}  // namespace

TraceAnalysis analyze_trace(const PowerTrace& trace, const HwKnowledge& hw,
                            const AttackParams& params) {
  const TraceContext c = context(trace, hw, params);
  std::string failure;
  const auto h = own_hypothesis(c, hw, params, failure);
  if (!h) return failed(c, failure);
  auto a = evaluate(c, *h, hw, params);
  if (!a) return failed(c, "active span leaves the trace");
  return *a;
}

std::vector<TraceAnalysis> analyze_traces(const std::vector<PowerTrace>& traces,
                                          const HwKnowledge& hw, const AttackParams& params) {
  std::vector<TraceContext> ctx;
  std::vector<std::optional<Hypothesis>> own;
  std::vector<TraceAnalysis> out;
  ctx.reserve(traces.size());
  for (const auto& t : traces) {
    ctx.push_back(context(t, hw, params));
    std::string failure;
    own.push_back(own_hypothesis(ctx.back(), hw, params, failure));
    std::optional<TraceAnalysis> a;
    if (own.back()) a = evaluate(ctx.back(), *own.back(), hw, params);
    out.push_back(a ? *a : failed(ctx.back(), own.back() ? "active span leaves the trace" : failure));
  }
  if (!params.share_timing) return out;

  // Tiles of one layer run in lockstep. A tile whose own fit is not
  // significantly better than another tile's timing takes that timing; a tile
  // with no fit of its own takes a timing only if it is clearly present. The
  // candidates are few, so the bar sits below the blind fold search.
  const double present = 0.5 * params.share_present_z * params.share_present_z;
  // Per-slot contrast of a tile's own fit; timing only flows from stronger
  // tiles to weaker ones.
  std::vector<double> strength(traces.size(), -1e300);
  for (std::size_t i = 0; i < traces.size(); ++i) {
    if (!own[i] || !out[i].ok()) continue;
    const double per_slot = out[i].score / static_cast<double>(own[i]->vmm * hw.input_bits);
    strength[i] = own[i]->idle_spread > 0.0 ? (per_slot - own[i]->idle_level) / own[i]->idle_spread
                                            : std::numeric_limits<double>::max();
  }
  std::vector<TraceAnalysis> shared = out;
  for (std::size_t i = 0; i < traces.size(); ++i) {
    double best = -1e300;
    for (std::size_t j = 0; j < traces.size(); ++j) {
      if (j == i || !own[j] || !out[j].ok() || !(strength[j] > strength[i])) continue;
      // Siblings share start and VMM count; the ADC count is the tile's own,
      // and a tile without a lock tries every count.
      std::vector<Hypothesis> trials;
      for (int conv = 1; conv <= hw.max_conversions(); ++conv) {
        if (own[i] && conv != own[i]->conversions) continue;
        Hypothesis h = *own[j];
        h.conversions = conv;
        h.period = hw.bit_period(conv);
        trials.push_back(h);
      }
      for (const auto& h : trials) {
        double bar = present;
        if (own[i] && out[i].ok()) {
          const long diff = differing_slots(*own[i], h, hw.input_bits);
          if (diff == 0) continue;
          bar = out[i].score - own[i]->idle_level * static_cast<double>(own[i]->vmm * hw.input_bits) -
                params.share_z * own[i]->idle_spread * std::sqrt(static_cast<double>(diff));
        }
        auto a = evaluate(ctx[i], h, hw, params);
        if (!a) continue;
        // Scores count against the tile's own idle level, not the prior penalty.
        const double score =
            a->score - (own[i] ? own[i]->idle_level * static_cast<double>(h.vmm * hw.input_bits) : 0.0);
        if (score < bar || score <= best) continue;
        best = score;
        a->timing_source = traces[j].tile_id;
        shared[i] = *a;
      }
    }
  }
  return shared;
}

std::vector<DetectedWindow> detect_analog_ops(const PowerTrace& trace, const HwKnowledge& hw,
                                              const AttackParams& params) {
  return analyze_trace(trace, hw, params).windows;
}

std::optional<TileFeatures> features_of(const PowerTrace& trace, const TraceAnalysis& a,
                                        const HwKnowledge& hw, std::string* why) {
  if (!a.ok()) {
    if (why) *why = "tile " + std::to_string(trace.tile_id) + ": " + a.failure;
    return std::nullopt;
  }
  TileFeatures f;
  f.tile_id = trace.tile_id;
  f.start_time = a.windows.front().start;
  f.vmm_count = static_cast<int>(a.windows.size()) / hw.input_bits;
  f.adc_exec_count = a.adc_exec_count;
  f.bit_period = a.bit_period;
  f.end_time = f.start_time + static_cast<double>(a.windows.size()) * a.bit_period;
  f.mean_analog_power = a.mean_analog_power;
  return f;
}

std::optional<TileFeatures> try_extract_features(const PowerTrace& trace, const HwKnowledge& hw,
                                                 const AttackParams& params, std::string* why) {
  return features_of(trace, analyze_trace(trace, hw, params), hw, why);
}

TileFeatures extract_features(const PowerTrace& trace, const HwKnowledge& hw,
                              const AttackParams& params) {
  std::string why;
  auto f = try_extract_features(trace, hw, params, &why);
  if (!f) throw AttackError(why);
  return *f;
}

std::vector<TileFeatures> extract_all_features(const std::vector<PowerTrace>& traces,
                                               const HwKnowledge& hw, const AttackParams& params) {
  if (traces.empty()) throw AttackError("no traces");
  const auto analyses = analyze_traces(traces, hw, params);
  std::vector<TileFeatures> out;
  std::vector<std::string> errors;
  for (std::size_t i = 0; i < traces.size(); ++i) {
    std::string why;
    if (auto f = features_of(traces[i], analyses[i], hw, &why))
      out.push_back(*f);
    else
      errors.push_back(why);
  }
  if (!errors.empty()) {
    std::string msg = "feature extraction failed for " + std::to_string(errors.size()) + " tile(s)";
    for (const auto& e : errors) msg += "\n  " + e;
    throw AttackError(msg);
  }
  return out;
}

std::vector<int> LayerGroup::tile_ids() const {
  std::vector<int> ids;
  for (const auto& t : tiles) ids.push_back(t.tile_id);
  return ids;
}

std::vector<LayerGroup> layer_property_extraction(std::vector<TileFeatures> features,
                                                  const HwKnowledge& hw) {
  if (features.empty()) throw AttackError("no tiles to group");
  std::stable_sort(features.begin(), features.end(),
                   [](const TileFeatures& a, const TileFeatures& b) { return a.start_time < b.start_time; });
  const double tol = hw.serial_period();
  std::vector<LayerGroup> groups;
  for (const auto& f : features) {
    if (groups.empty() || f.start_time - groups.back().start_time > tol) {
      LayerGroup g;
      g.start_time = f.start_time;
      g.end_time = f.end_time;
      groups.push_back(g);
    }
    groups.back().tiles.push_back(f);
    groups.back().end_time = std::max(groups.back().end_time, f.end_time);
  }
  for (auto& g : groups) {
    std::sort(g.tiles.begin(), g.tiles.end(),
              [](const TileFeatures& a, const TileFeatures& b) { return a.tile_id < b.tile_id; });
    const bool fc = g.tiles.front().vmm_count == 1;
    g.kind = fc ? LayerKind::FC : LayerKind::Conv;
    g.vmm_count = g.tiles.front().vmm_count;
    for (const auto& t : g.tiles) {
      if ((t.vmm_count == 1) != fc)
        throw AttackError("tiles starting near " + std::to_string(g.start_time) +
                          " s mix fc and conv VMM counts");
      if (t.vmm_count != g.vmm_count)
        throw AttackError("tiles starting near " + std::to_string(g.start_time) +
                          " s disagree on VMM count (" + std::to_string(g.vmm_count) + " vs " +
                          std::to_string(t.vmm_count) + ")");
    }
  }
  return groups;
}

OutputSizeResult output_size_extraction(const LayerGroup& group, const HwKnowledge& hw) {
  if (group.tiles.empty()) throw AttackError("empty layer group");
  OutputSizeResult r;
  const int full = hw.max_conversions();
  const int size = static_cast<int>(group.tiles.size());
  std::set<int> partial_counts;
  for (const auto& t : group.tiles) {
    if (t.adc_exec_count < 1 || t.adc_exec_count > full)
      throw AttackError("tile " + std::to_string(t.tile_id) + ": ADC count out of range");
    if (t.adc_exec_count < full) {
      ++r.partial_tiles;
      partial_counts.insert(t.adc_exec_count);
    }
  }
  if (r.partial_tiles == 0) {
    r.multiple_assumed = true;
    r.grid_rows = 1;
    r.grid_cols = size;
    r.out = size * hw.array_cols / hw.columns_per_weight;
    return r;
  }
  if (partial_counts.size() != 1)
    throw AttackError("partial tiles disagree on ADC count; grid shape is ambiguous");
  if (size % r.partial_tiles != 0)
    throw AttackError("group of " + std::to_string(size) + " tiles is not divisible by " +
                      std::to_string(r.partial_tiles) + " partial tiles; grid shape is ambiguous");
  r.partial_conversions = *partial_counts.begin();
  r.grid_rows = r.partial_tiles;
  r.grid_cols = size / r.partial_tiles;
  const int full_col_tiles = r.grid_cols - 1;
  const int partial_cols = r.partial_conversions * 2 * hw.adc_count;
  const int cols = full_col_tiles * hw.array_cols + partial_cols;
  if (cols % hw.columns_per_weight != 0)
    throw AttackError("column count " + std::to_string(cols) + " is not a whole number of weights");
  r.out = cols / hw.columns_per_weight;
  return r;
}

FirstLayerKernel kernel_size_extraction_first_layer(int vmm_count, int input_width,
                                                    const AttackParams& params) {
  FirstLayerKernel r;
  const int w_out = static_cast<int>(std::lround(std::sqrt(static_cast<double>(vmm_count))));
  if (vmm_count < 1 || w_out * w_out != vmm_count)
    throw AttackError("VMM count " + std::to_string(vmm_count) + " is not a square output map");
  r.out_width = w_out;
  for (int k : params.first_layer_kernels)
    for (int p = 0; p < k; ++p)
      for (int s = 1; s <= params.max_stride; ++s)
        if (conv_output_width(input_width, k, s, p) == w_out) r.candidates.push_back({k, p, s});
  std::set<int> unpadded, any;
  for (const auto& c : r.candidates) {
    any.insert(c.kernel);
    if (c.padding == 0) unpadded.insert(c.kernel);
  }
  const std::set<int>& pick = unpadded.empty() ? any : unpadded;
  if (pick.size() != 1) {
    std::string list;
    for (int k : pick) list += (list.empty() ? "" : ", ") + std::to_string(k);
    throw AttackError("first-layer kernel for output width " + std::to_string(w_out) +
                      (pick.empty() ? ": no consistent kernel" : ": ambiguous, candidates " + list));
  }
  r.kernel = *pick.begin();
  return r;
}

std::vector<double> tile_row_powers(const LayerGroup& group, int grid_rows) {
  const int size = static_cast<int>(group.tiles.size());
  if (grid_rows < 1 || size % grid_rows != 0)
    throw AttackError("group of " + std::to_string(size) + " tiles does not split into " +
                      std::to_string(grid_rows) + " tile rows");
  const int cols = size / grid_rows;
  std::vector<double> rows(static_cast<std::size_t>(grid_rows), 0.0);
  for (int i = 0; i < size; ++i) rows[static_cast<std::size_t>(i / cols)] += group.tiles[i].mean_analog_power;
  return rows;
}

double estimate_total_rows(const std::vector<double>& row_powers, int array_rows) {
  if (row_powers.size() < 2)
    throw AttackError("row power ratio needs at least two tile rows");
  const std::size_t n = row_powers.size();
  double ref = 0.0;
  for (std::size_t i = 0; i + 1 < n; ++i) ref += row_powers[i];
  ref /= static_cast<double>(n - 1);
  if (!(ref > 0.0)) throw AttackError("reference tile-row power is not positive");
  const double ratio = std::max(0.0, row_powers.back() / ref);
  return (static_cast<double>(n - 1) + ratio) * array_rows;
}

KernelEstimate kernel_size_extraction(const std::vector<double>& row_powers, int in_channels,
                                      const HwKnowledge& hw, const AttackParams& params) {
  if (in_channels < 1) throw AttackError("input channel count must be positive");
  KernelEstimate r;
  r.total_rows = estimate_total_rows(row_powers, hw.array_rows);
  r.last_row_ratio = r.total_rows / hw.array_rows - static_cast<double>(row_powers.size() - 1);
  const double squared = r.total_rows / in_channels;
  const int rounded = static_cast<int>(std::lround(std::sqrt(squared)));
  const auto& cands = params.kernel_candidates;
  if (std::find(cands.begin(), cands.end(), rounded) != cands.end()) {
    r.kernel = rounded;
    return r;
  }
  r.kernel = *std::min_element(cands.begin(), cands.end(), [&](int a, int b) {
    return std::abs(a * a - squared) < std::abs(b * b - squared);
  });
  r.warning = "K=" + std::to_string(rounded) + " is not a candidate; snapped to " +
              std::to_string(r.kernel);
  return r;
}

KernelEstimate kernel_size_extraction(const LayerGroup& group, int grid_rows, int in_channels,
                                      const HwKnowledge& hw, const AttackParams& params) {
  if (grid_rows < 2)
    throw AttackError("kernel from row power needs at least two tile rows; use the first-layer search");
  return kernel_size_extraction(tile_row_powers(group, grid_rows), in_channels, hw, params);
}

namespace {

std::vector<PoolCandidate> pool_candidates(int prev_out_width, int kernel, int out_width,
                                           const AttackParams& params) {
  std::vector<PoolCandidate> out;
  for (int s = 1; s <= params.max_stride; ++s)
    for (int p = 0; p <= params.max_padding; ++p) {
      const int w_in = (out_width - 1) * s + kernel - 2 * p;
      if (w_in < 1 || conv_output_width(w_in, kernel, s, p) != out_width) continue;
      if (prev_out_width % w_in != 0) continue;
      out.push_back({p, s, w_in, prev_out_width / w_in});
    }
  return out;
}

std::string describe(const PoolCandidate& c) {
  return "P=" + std::to_string(c.padding) + " S=" + std::to_string(c.stride) + " in=" +
         std::to_string(c.input_width) + " pool=" + std::to_string(c.pool);
}

}  // namespace

PoolingResult pooling_detection(int prev_out_width, int next_kernel, int next_out_width,
                                bool delay_observed, const AttackParams& params) {
  PoolingResult r;
  r.delay_observed = delay_observed;
  r.candidates = pool_candidates(prev_out_width, next_kernel, next_out_width, params);
  if (r.candidates.empty())
    throw AttackError("no pooling candidate maps width " + std::to_string(prev_out_width) +
                      " onto K=" + std::to_string(next_kernel) + " output " +
                      std::to_string(next_out_width) + " (unpoolable)");
  const PoolCandidate* chosen = nullptr;
  for (const auto& c : r.candidates)
    if ((c.pool > 1) == delay_observed) {
      chosen = &c;
      break;
    }
  if (!chosen) {
    chosen = &r.candidates.front();
    r.note = delay_observed ? "start delay seen but no pooled candidate" : "no start delay but only pooled candidates";
  }
  r.pool = chosen->pool;
  r.geometry = {next_kernel, chosen->padding, chosen->stride};
  if (r.candidates.size() > 1) {
    std::string all;
    for (const auto& c : r.candidates) all += (all.empty() ? "" : "; ") + describe(c);
    r.note += (r.note.empty() ? "" : "; ") + std::string("candidates ") + all + " -> " +
              describe(*chosen) + (delay_observed ? " (start delay)" : " (no start delay)");
  }
  return r;
}

int pooling_detection_fc(int conv_out_width, int conv_out_channels, int fc_in_features) {
  if (conv_out_channels < 1 || fc_in_features % conv_out_channels != 0)
    throw AttackError("fc input " + std::to_string(fc_in_features) + " is not a multiple of " +
                      std::to_string(conv_out_channels) + " channels");
  const int sq = fc_in_features / conv_out_channels;
  const int n = static_cast<int>(std::lround(std::sqrt(static_cast<double>(sq))));
  if (n < 1 || n * n != sq || conv_out_width % n != 0)
    throw AttackError("fc input " + std::to_string(fc_in_features) +
                      " is not a pooled square of width " + std::to_string(conv_out_width));
  return conv_out_width / n;
}

NetworkSpec ExtractedArchitecture::network() const {
  NetworkSpec net;
  net.input = input;
  for (const auto& l : layers) net.layers.push_back(l.spec);
  return net;
}

namespace {

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

void add_pool(ExtractedArchitecture& arch, int pool, std::string why) {
  if (pool <= 1) return;
  arch.layers.push_back({LayerSpec::max_pool(pool), {std::move(why)}});
}

}  // namespace

ExtractedArchitecture reconstruct_architecture(const std::vector<LayerGroup>& groups,
                                               const HwKnowledge& hw, const AttackParams& params) {
  hw.validate();
  params.validate();
  if (groups.empty()) throw AttackError("no layer groups");
  ExtractedArchitecture arch;
  arch.input = {hw.input_channels, hw.input_width, hw.input_width};

  std::vector<double> gaps;
  for (std::size_t i = 1; i < groups.size(); ++i)
    gaps.push_back(groups[i].start_time - groups[i - 1].end_time);
  const double baseline = gaps.empty() ? 0.0 : *std::min_element(gaps.begin(), gaps.end());
  auto delayed = [&](std::size_t i) {
    return i > 0 && gaps[i - 1] > baseline + hw.serial_period();
  };

  std::vector<std::string> errors;
  std::optional<LayerKind> prev_kind;  // empty before the first layer
  int prev_out = 0, prev_width = 0;
  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    const LayerGroup& g = groups[gi];
    try {
      if (gi > 0 && prev_out == 0) throw AttackError("previous layer unresolved");
      const OutputSizeResult os = output_size_extraction(g, hw);
      std::string out_src = "out: tile grid " + std::to_string(g.tiles.size()) + " tiles";
      if (os.multiple_assumed)
        out_src += ", no partial tile, exact multiple of " +
                   std::to_string(hw.array_cols / hw.columns_per_weight) + " assumed";
      else
        out_src += ", " + std::to_string(os.grid_rows) + "x" + std::to_string(os.grid_cols) +
                   " grid, partial ADC x" + std::to_string(os.partial_conversions);
      const std::string timing = fmt("start %.6e s", g.start_time);

      if (g.kind == LayerKind::Conv) {
        const int w_out = static_cast<int>(std::lround(std::sqrt(static_cast<double>(g.vmm_count))));
        if (w_out * w_out != g.vmm_count)
          throw AttackError("VMM count " + std::to_string(g.vmm_count) + " is not a square output map");
        LayerSpec spec = LayerSpec::conv(os.out, 0);
        std::vector<std::string> prov{out_src};
        if (!prev_kind) {
          if (os.grid_rows >= 2) {
            const KernelEstimate k = kernel_size_extraction(g, os.grid_rows, hw.input_channels, hw, params);
            spec.kernel = k.kernel;
            prov.push_back(fmt("k: row count ~%.1f", k.total_rows) + (k.warning.empty() ? "" : ", " + k.warning));
            AttackParams only = params;
            only.first_layer_kernels = {k.kernel};
            try {
              const FirstLayerKernel fl = kernel_size_extraction_first_layer(g.vmm_count, hw.input_width, only);
              for (const auto& c : fl.candidates)
                if (c.padding == 0) {
                  spec.stride = c.stride;
                  break;
                }
            } catch (const AttackError&) {
              arch.notes.push_back("first conv: stride/padding not resolved");
            }
          } else {
            const FirstLayerKernel fl = kernel_size_extraction_first_layer(g.vmm_count, hw.input_width, params);
            spec.kernel = fl.kernel;
            for (const auto& c : fl.candidates)
              if (c.kernel == fl.kernel && c.padding == 0) {
                spec.stride = c.stride;
                break;
              }
            prov.push_back("k: output-width search, W_out=" + std::to_string(w_out));
          }
        } else if (prev_kind == LayerKind::Conv) {
          const bool delay = delayed(gi);
          PoolingResult pr;
          if (os.grid_rows >= 2) {
            const KernelEstimate k = kernel_size_extraction(g, os.grid_rows, prev_out, hw, params);
            prov.push_back(fmt("k: row count ~%.1f", k.total_rows) + (k.warning.empty() ? "" : ", " + k.warning));
            pr = pooling_detection(prev_width, k.kernel, w_out, delay, params);
          } else {
            // One tile row: joint search over kernel and pooling.
            std::vector<std::pair<int, PoolCandidate>> all;
            for (int k : params.kernel_candidates) {
              if (k * k * prev_out > hw.array_rows) continue;
              for (const auto& c : pool_candidates(prev_width, k, w_out, params))
                if (c.pool <= params.max_pool) all.emplace_back(k, c);
            }
            auto keep = [&](auto pred) {
              std::vector<std::pair<int, PoolCandidate>> f;
              for (const auto& e : all)
                if (pred(e)) f.push_back(e);
              if (!f.empty()) all = std::move(f);
            };
            keep([&](const auto& e) { return (e.second.pool > 1) == delay; });
            keep([](const auto& e) { return e.second.padding == 0; });
            keep([](const auto& e) { return e.second.stride == 1; });
            std::set<int> ks;
            for (const auto& e : all) ks.insert(e.first);
            if (ks.size() != 1) {
              std::string list;
              for (int k : ks) list += (list.empty() ? "" : ", ") + std::to_string(k);
              throw AttackError("single-row conv kernel ambiguous: candidates " +
                                (list.empty() ? std::string("none") : list));
            }
            pr = pooling_detection(prev_width, *ks.begin(), w_out, delay, params);
            prov.push_back("k: single-row geometry search");
          }
          spec.kernel = pr.geometry.kernel;
          spec.stride = pr.geometry.stride;
          spec.padding = pr.geometry.padding;
          std::string why = "pool search, conv branch: P=" + std::to_string(pr.geometry.padding) +
                            " S=" + std::to_string(pr.geometry.stride) + " in=" +
                            std::to_string(prev_width / pr.pool) +
                            (pr.delay_observed ? ", start delay" : "");
          if (!pr.note.empty()) arch.notes.push_back("layer " + std::to_string(gi + 1) + ": " + pr.note);
          add_pool(arch, pr.pool, why);
        } else {
          throw AttackError("conv layer after a fully connected layer is not supported");
        }
        prov.push_back(timing);
        arch.layers.push_back({spec, prov});
        prev_kind = LayerKind::Conv;
        prev_out = os.out;
        prev_width = w_out;
      } else {
        std::vector<std::string> prov{out_src};
        if (prev_kind == LayerKind::Conv) {
          std::vector<int> widths;
          for (int n = 1; n <= prev_width; ++n)
            if (prev_width % n == 0) widths.push_back(n);
          int n_pick = prev_width;
          if (os.grid_rows >= 2) {
            const double rows = estimate_total_rows(tile_row_powers(g, os.grid_rows), hw.array_rows);
            n_pick = *std::min_element(widths.begin(), widths.end(), [&](int a, int b) {
              return std::abs(static_cast<double>(a) * a * prev_out - rows) <
                     std::abs(static_cast<double>(b) * b * prev_out - rows);
            });
            prov.push_back(fmt("in: rows~%.1f", rows) + " -> " + std::to_string(n_pick) + "^2*" +
                           std::to_string(prev_out));
          } else {
            std::vector<int> fit;
            for (int n : widths)
              if (n * n * prev_out <= hw.array_rows) fit.push_back(n);
            if (fit.empty()) throw AttackError("no fc input size fits one tile row");
            n_pick = delayed(gi) && fit.size() > 1 && fit.back() == prev_width ? fit[fit.size() - 2] : fit.back();
            prov.push_back("in: single tile row, " + std::string(delayed(gi) ? "start delay" : "no start delay"));
          }
          const int pool = pooling_detection_fc(prev_width, prev_out, n_pick * n_pick * prev_out);
          add_pool(arch, pool, "pool search, fc branch: " + std::to_string(prev_width) + "/sqrt(" +
                                   std::to_string(n_pick * n_pick * prev_out) + "/" +
                                   std::to_string(prev_out) + ")");
        } else if (prev_kind == LayerKind::FC && os.grid_rows >= 2) {
          const double rows = estimate_total_rows(tile_row_powers(g, os.grid_rows), hw.array_rows);
          if (std::abs(rows - prev_out) > 0.25 * prev_out)
            arch.notes.push_back(fmt("layer %.0f: row estimate", static_cast<double>(gi + 1)) +
                                 fmt(" %.1f", rows) + " disagrees with previous out " +
                                 std::to_string(prev_out));
        }
        prov.push_back(timing);
        arch.layers.push_back({LayerSpec::fc(os.out), prov});
        prev_kind = LayerKind::FC;
        prev_out = os.out;
        prev_width = 1;
      }
    } catch (const AttackError& e) {
      errors.push_back("layer group " + std::to_string(gi + 1) + ": " + e.what());
      prev_kind = g.kind;
      prev_out = 0;
      prev_width = 0;
    }
  }
  if (!errors.empty()) {
    std::string msg = "architecture reconstruction failed";
    for (const auto& e : errors) msg += "\n  " + e;
    throw AttackError(msg);
  }
  return arch;
}

ExtractedArchitecture run_attack(const std::vector<PowerTrace>& traces, const HwKnowledge& hw,
                                 const AttackParams& params) {
  const auto features = extract_all_features(traces, hw, params);
  return reconstruct_architecture(layer_property_extraction(features, hw), hw, params);
}

std::string format_report(const ExtractedArchitecture& arch) {
  std::ostringstream out;
  out << "# imc-arch v1\n";
  for (const auto& n : arch.notes) out << "# note: " << n << "\n";
  out << "input " << to_string(arch.input) << "  # public dataset shape\n";
  for (const auto& l : arch.layers) {
    NetworkSpec one;
    one.input = arch.input;
    one.layers = {l.spec};
    std::string line = format_network(one);
    line = line.substr(line.find('\n') + 1);
    line.pop_back();
    out << line;
    for (std::size_t i = 0; i < l.provenance.size(); ++i)
      out << (i == 0 ? "  # " : "; ") << l.provenance[i];
    out << "\n";
  }
  return out.str();
}

NetworkSpec parse_report(const std::string& text) { return parse_network(text); }

namespace {

struct WeightedLayer {
  LayerKind kind;
  int out;
  int kernel;
  int pool_before;
};

std::vector<WeightedLayer> weighted_layers(const NetworkSpec& net) {
  std::vector<WeightedLayer> out;
  int pool = 1;
  for (const auto& l : net.layers) {
    if (l.kind == LayerKind::Pool) {
      pool *= l.pool;
      continue;
    }
    out.push_back({l.kind, l.out, l.kernel, pool});
    pool = 1;
  }
  return out;
}

}  // namespace

int MatchReport::mismatches() const {
  return static_cast<int>(std::count_if(fields.begin(), fields.end(), [](const FieldMatch& f) { return !f.match; }));
}

std::string MatchReport::summary() const {
  std::ostringstream out;
  for (const auto& f : fields)
    out << (f.match ? "ok       " : "MISMATCH ") << f.field << " expected=" << f.expected
        << " actual=" << f.actual << "\n";
  out << (all_match() ? "match" : std::to_string(mismatches()) + " mismatch(es)") << "\n";
  return out.str();
}

MatchReport compare(const NetworkSpec& extracted, const NetworkSpec& truth) {
  MatchReport r;
  auto add = [&](std::string field, const std::string& expected, const std::string& actual) {
    r.fields.push_back({std::move(field), expected, actual, expected == actual});
  };
  add("input", to_string(truth.input), to_string(extracted.input));
  const auto t = weighted_layers(truth);
  const auto e = weighted_layers(extracted);
  int convs = 0, fcs = 0;
  for (std::size_t i = 0; i < std::max(t.size(), e.size()); ++i) {
    if (i >= t.size()) {
      add("extra" + std::to_string(i + 1), "absent", std::string(to_string(e[i].kind)));
      continue;
    }
    const WeightedLayer& tl = t[i];
    const std::string name = tl.kind == LayerKind::Conv ? "conv" + std::to_string(++convs)
                                                        : "fc" + std::to_string(++fcs);
    if (i >= e.size()) {
      add(name + ".missing", "present", "absent");
      continue;
    }
    const WeightedLayer& el = e[i];
    if (tl.kind != el.kind) {
      add(name + ".kind", std::string(to_string(tl.kind)), std::string(to_string(el.kind)));
      continue;
    }
    add(name + ".out", std::to_string(tl.out), std::to_string(el.out));
    if (tl.kind == LayerKind::Conv) add(name + ".kernel", std::to_string(tl.kernel), std::to_string(el.kernel));
    add(name + ".pool_before", std::to_string(tl.pool_before), std::to_string(el.pool_before));
  }
  return r;
}

}  // namespace imcsca
