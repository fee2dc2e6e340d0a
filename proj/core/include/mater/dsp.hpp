#pragma once

#include <span>
#include <vector>

#include "mater/audio.hpp"

namespace mater {

// One value per analysis frame.
struct FrameTrack {
  std::vector<double> values;
  double frame_len = 0.025;
  double hop = 0.010;
  double start_offset = 0.0;

  double frame_time(std::size_t t) const { return start_offset + t * hop; }
};

// Per-frame pitch. f0_hz == 0 encodes unvoiced; voicing holds the peak
// normalized autocorrelation in [0, 1].
struct F0Track {
  std::vector<double> f0_hz;
  std::vector<double> voicing;
  double hop = 0.010;
  double voicing_threshold = 0.45;
};

enum class SegmentKind { voiced, unvoiced, pause };

struct VoicedSegment {
  double start = 0.0;
  double end = 0.0;
  SegmentKind kind = SegmentKind::unvoiced;

  double length() const { return end - start; }
};

struct F0Config {
  double f0_min = 60.0;
  double f0_max = 500.0;
  double voicing_threshold = 0.45;
  double hop = 0.010;
};

// Normalized autocorrelation pitch tracker with parabolic peak refinement.
F0Track estimate_f0(const AudioBuffer& audio, const F0Config& cfg = {});

// Glottal-cycle boundaries from waveform peak-picking inside voiced regions.
struct PeriodTrack {
  std::vector<double> periods;     // seconds, one per cycle
  std::vector<double> amplitudes;  // peak amplitude closing each cycle
};

PeriodTrack extract_periods(const AudioBuffer& audio, const F0Track& f0);

// mean |T_i - T_{i-1}| / mean T_i; 0 when fewer than 2 periods.
double jitter_local(std::span<const double> periods);

// Five-point period perturbation quotient; 0 when fewer than 5 periods.
double jitter_ppq5(std::span<const double> periods);

// mean |A_i - A_{i-1}| / mean A_i; 0 when fewer than 2 amplitudes.
double shimmer_local(std::span<const double> amplitudes);

// mean |20 log10(A_i / A_{i-1})| in dB.
double shimmer_db(std::span<const double> amplitudes);

// Harmonicity of one voiced frame: r = normalized autocorrelation at the
// lag of 1/f0 (parabolically refined), HNR = 10 log10(r / (1 - r)),
// clamped to [-60, 60] dB.
double hnr(std::span<const double> frame, double f0_hz, int sample_rate);

// RMS level in dB, floored at -80.
double loudness_db(std::span<const double> frame);

// 10 log10(E[1-5 kHz] / E[50-1000 Hz]) of the Hann-windowed frame.
double alpha_ratio(std::span<const double> frame, int sample_rate);

FrameTrack loudness_track(const AudioBuffer& audio, const FrameSpec& spec = {});

struct VoicingConfig {
  double pause_db_threshold = -50.0;
  double min_pause = 0.150;  // seconds
};

// Splits the utterance into voiced / unvoiced / pause segments that tile
// [0, n_frames * hop]. Pause = a run below the level threshold lasting at
// least min_pause; everything else follows the per-frame voicing flag.
std::vector<VoicedSegment> segment_voicing(const F0Track& f0,
                                           const FrameTrack& loudness,
                                           const VoicingConfig& cfg = {});

}  // namespace mater
