#include "mater/dsp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "mater/errors.hpp"

namespace mater {
namespace {

constexpr double kPi = 3.14159265358979323846;

// r(tau) over the window, normalized so |r| <= 1 (Cauchy-Schwarz).
double norm_autocorr(std::span<const double> x, std::size_t tau) {
  if (tau >= x.size()) return 0.0;
  const std::size_t n = x.size() - tau;
  double num = 0.0, e0 = 0.0, e1 = 0.0;
  for (std::size_t t = 0; t < n; ++t) {
    num += x[t] * x[t + tau];
    e0 += x[t] * x[t];
    e1 += x[t + tau] * x[t + tau];
  }
  const double denom = std::sqrt(e0 * e1);
  if (denom < 1e-30) return 0.0;
  return num / denom;
}

struct PeakFit {
  double lag = 0.0;
  double value = 0.0;
};

// Parabolic refinement of an autocorrelation peak at integer lag l.
PeakFit refine_peak(double rm, double r0, double rp, std::size_t l) {
  const double denom = rm - 2.0 * r0 + rp;
  double delta = 0.0;
  if (std::abs(denom) > 1e-30) delta = 0.5 * (rm - rp) / denom;
  delta = std::clamp(delta, -0.5, 0.5);
  return {double(l) + delta, r0 - 0.25 * (rm - rp) * delta};
}

double mean_of(std::span<const double> v) {
  if (v.empty()) return 0.0;
  return std::accumulate(v.begin(), v.end(), 0.0) / double(v.size());
}

}  // namespace

F0Track estimate_f0(const AudioBuffer& audio, const F0Config& cfg) {
  if (cfg.f0_min <= 0.0 || cfg.f0_max <= cfg.f0_min) {
    throw ValidationError("estimate_f0: need f0_max > f0_min > 0");
  }
  if (audio.sample_rate <= 2.0 * cfg.f0_max) {
    throw ValidationError("estimate_f0: sample rate too low for f0_max");
  }
  const int sr = audio.sample_rate;
  // The window must hold at least two cycles of the lowest pitch.
  const double win_s = std::max(0.025, 2.0 / cfg.f0_min);
  const auto win = std::size_t(std::lround(win_s * sr));
  const auto hop = std::size_t(std::lround(cfg.hop * sr));

  F0Track track;
  track.hop = cfg.hop;
  track.voicing_threshold = cfg.voicing_threshold;
  if (audio.samples.size() < win) return track;

  const std::size_t n_frames = (audio.samples.size() - win) / hop + 1;
  const auto lag_min =
      std::max<std::size_t>(2, std::size_t(std::floor(sr / cfg.f0_max)));
  const auto lag_max = std::min(
      win - 1, std::size_t(std::ceil(sr / cfg.f0_min)));

  track.f0_hz.resize(n_frames, 0.0);
  track.voicing.resize(n_frames, 0.0);
  for (std::size_t t = 0; t < n_frames; ++t) {
    std::span<const double> frame(audio.samples.data() + t * hop, win);
    double energy = 0.0;
    for (double s : frame) energy += s * s;
    if (energy < 1e-12) continue;  // silence stays unvoiced

    // r[j] holds lag lag_min - 1 + j so the best interior lag always has
    // both neighbors available for the parabolic fit.
    std::vector<double> r(lag_max - lag_min + 3, 0.0);
    for (std::size_t j = 0; j < r.size(); ++j) {
      r[j] = norm_autocorr(frame, lag_min - 1 + j);
    }
    std::size_t best = 1;
    for (std::size_t j = 2; j + 1 < r.size(); ++j) {
      if (r[j] > r[best]) best = j;
    }
    // Subharmonic lags of a periodic signal score the same correlation;
    // take the shortest near-equal local maximum instead of the argmax.
    for (std::size_t j = 1; j < best; ++j) {
      if (r[j] >= r[j - 1] && r[j] >= r[j + 1] && r[j] >= r[best] - 0.01) {
        best = j;
        break;
      }
    }
    const std::size_t l = lag_min - 1 + best;
    const PeakFit fit = refine_peak(r[best - 1], r[best], r[best + 1], l);
    const double voicing = std::clamp(fit.value, 0.0, 1.0);
    if (voicing >= cfg.voicing_threshold && fit.lag > 0.0) {
      track.voicing[t] = voicing;
      track.f0_hz[t] = std::clamp(sr / fit.lag, cfg.f0_min, cfg.f0_max);
    } else {
      track.voicing[t] = std::min(voicing, std::nextafter(cfg.voicing_threshold, 0.0));
      track.f0_hz[t] = 0.0;
    }
  }
  return track;
}

PeriodTrack extract_periods(const AudioBuffer& audio, const F0Track& f0) {
  PeriodTrack out;
  const int sr = audio.sample_rate;
  const auto hop = std::size_t(std::lround(f0.hop * sr));
  const std::size_t n = f0.f0_hz.size();

  std::size_t t = 0;
  while (t < n) {
    if (f0.f0_hz[t] == 0.0) {
      ++t;
      continue;
    }
    std::size_t t_end = t;
    while (t_end + 1 < n && f0.f0_hz[t_end + 1] > 0.0) ++t_end;

    const std::size_t s0 = t * hop;
    const std::size_t s1 =
        std::min(audio.samples.size(), (t_end + 1) * hop + std::size_t(0.025 * sr));

    auto local_period = [&](std::size_t sample) {
      std::size_t fi = std::clamp(sample / hop, t, t_end);
      return sr / f0.f0_hz[fi];
    };

    // Seed on the strongest positive excursion of the first ~1.6 cycles.
    double period0 = local_period(s0);
    std::size_t seed_end =
        std::min(s1, s0 + std::size_t(std::lround(1.6 * period0)));
    if (seed_end <= s0) {
      t = t_end + 1;
      continue;
    }
    std::size_t cur = s0;
    for (std::size_t i = s0; i < seed_end; ++i) {
      if (audio.samples[i] > audio.samples[cur]) cur = i;
    }

    while (true) {
      const double period = local_period(cur);
      const std::size_t lo = cur + std::size_t(std::lround(0.4 * period));
      const std::size_t hi =
          std::min(s1, cur + std::size_t(std::lround(1.6 * period)) + 1);
      if (lo >= hi) break;
      std::size_t next = lo;
      for (std::size_t i = lo; i < hi; ++i) {
        if (audio.samples[i] > audio.samples[next]) next = i;
      }
      if (!(audio.samples[next] > 0.0)) break;  // ran past the last pulse
      out.periods.push_back(double(next - cur) / sr);
      out.amplitudes.push_back(std::max(audio.samples[next], 0.0));
      cur = next;
    }
    t = t_end + 1;
  }
  return out;
}

double jitter_local(std::span<const double> periods) {
  if (periods.size() < 2) return 0.0;
  double diff = 0.0;
  for (std::size_t i = 1; i < periods.size(); ++i) {
    diff += std::abs(periods[i] - periods[i - 1]);
  }
  diff /= double(periods.size() - 1);
  const double mean = mean_of(periods);
  return mean > 0.0 ? diff / mean : 0.0;
}

double jitter_ppq5(std::span<const double> periods) {
  if (periods.size() < 5) return 0.0;
  double acc = 0.0;
  for (std::size_t i = 2; i + 2 < periods.size(); ++i) {
    double local = 0.0;
    for (std::size_t k = i - 2; k <= i + 2; ++k) local += periods[k];
    acc += std::abs(periods[i] - local / 5.0);
  }
  acc /= double(periods.size() - 4);
  const double mean = mean_of(periods);
  return mean > 0.0 ? acc / mean : 0.0;
}

double shimmer_local(std::span<const double> amplitudes) {
  return jitter_local(amplitudes);
}

double shimmer_db(std::span<const double> amplitudes) {
  if (amplitudes.size() < 2) return 0.0;
  double acc = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 1; i < amplitudes.size(); ++i) {
    if (amplitudes[i] > 0.0 && amplitudes[i - 1] > 0.0) {
      acc += std::abs(20.0 * std::log10(amplitudes[i] / amplitudes[i - 1]));
      ++count;
    }
  }
  return count > 0 ? acc / double(count) : 0.0;
}

double hnr(std::span<const double> frame, double f0_hz, int sample_rate) {
  if (f0_hz <= 0.0) throw ValidationError("hnr: frame must be voiced");
  const auto l = std::size_t(std::lround(sample_rate / f0_hz));
  if (l < 2 || l + 1 >= frame.size()) return -60.0;
  const double rm = norm_autocorr(frame, l - 1);
  const double r0 = norm_autocorr(frame, l);
  const double rp = norm_autocorr(frame, l + 1);
  double r = std::max({rm, r0, rp, refine_peak(rm, r0, rp, l).value});
  if (r >= 1.0) return 60.0;
  if (r <= 0.0) return -60.0;
  return std::clamp(10.0 * std::log10(r / (1.0 - r)), -60.0, 60.0);
}

double loudness_db(std::span<const double> frame) {
  if (frame.empty()) throw ValidationError("loudness: empty frame");
  double acc = 0.0;
  for (double s : frame) acc += s * s;
  const double rms = std::sqrt(acc / double(frame.size()));
  if (rms <= 0.0) return -80.0;
  return std::max(20.0 * std::log10(rms), -80.0);
}

double alpha_ratio(std::span<const double> frame, int sample_rate) {
  if (sample_rate < 10000) {
    throw ValidationError("alpha_ratio: sample rate below 10 kHz");
  }
  const std::size_t n = frame.size();
  std::vector<double> windowed(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double w = 0.5 - 0.5 * std::cos(2.0 * kPi * i / double(n - 1));
    windowed[i] = frame[i] * w;
  }
  double low = 0.0, high = 0.0;
  const double bin_hz = double(sample_rate) / double(n);
  for (std::size_t k = 1; k <= n / 2; ++k) {
    const double f = k * bin_hz;
    if (f < 50.0 || f > 5000.0) continue;
    double re = 0.0, im = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double phase = -2.0 * kPi * double(k) * double(i) / double(n);
      re += windowed[i] * std::cos(phase);
      im += windowed[i] * std::sin(phase);
    }
    const double power = re * re + im * im;
    if (f <= 1000.0) {
      low += power;
    } else {
      high += power;
    }
  }
  const double eps = std::numeric_limits<double>::epsilon();
  return 10.0 * std::log10(std::max(high, eps) / std::max(low, eps));
}

FrameTrack loudness_track(const AudioBuffer& audio, const FrameSpec& spec) {
  FrameTrack track;
  track.frame_len = spec.frame_len;
  track.hop = spec.hop;
  const std::size_t n = frame_count(audio.samples.size(), audio.sample_rate, spec);
  const auto flen = std::size_t(std::lround(spec.frame_len * audio.sample_rate));
  track.values.reserve(n);
  for (std::size_t t = 0; t < n; ++t) {
    std::span<const double> frame(
        audio.samples.data() + frame_start(t, audio.sample_rate, spec), flen);
    track.values.push_back(loudness_db(frame));
  }
  return track;
}

std::vector<VoicedSegment> segment_voicing(const F0Track& f0,
                                           const FrameTrack& loudness,
                                           const VoicingConfig& cfg) {
  if (f0.f0_hz.size() != loudness.values.size() ||
      std::abs(f0.hop - loudness.hop) > 1e-12) {
    throw ValidationError("segment_voicing: track length/hop mismatch");
  }
  const std::size_t n = f0.f0_hz.size();
  std::vector<SegmentKind> kinds(n);
  for (std::size_t t = 0; t < n; ++t) {
    kinds[t] = f0.f0_hz[t] > 0.0 ? SegmentKind::voiced : SegmentKind::unvoiced;
  }
  // Long-enough quiet runs become pauses; short ones keep the voicing flag.
  std::size_t t = 0;
  while (t < n) {
    if (loudness.values[t] >= cfg.pause_db_threshold) {
      ++t;
      continue;
    }
    std::size_t run_end = t;
    while (run_end + 1 < n && loudness.values[run_end + 1] < cfg.pause_db_threshold) {
      ++run_end;
    }
    if (double(run_end - t + 1) * f0.hop >= cfg.min_pause) {
      for (std::size_t i = t; i <= run_end; ++i) kinds[i] = SegmentKind::pause;
    }
    t = run_end + 1;
  }

  std::vector<VoicedSegment> segments;
  t = 0;
  while (t < n) {
    std::size_t run_end = t;
    while (run_end + 1 < n && kinds[run_end + 1] == kinds[t]) ++run_end;
    segments.push_back({double(t) * f0.hop, double(run_end + 1) * f0.hop, kinds[t]});
    t = run_end + 1;
  }
  return segments;
}

}  // namespace mater
