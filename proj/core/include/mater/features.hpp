#pragma once

#include <Eigen/Core>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mater/audio.hpp"
#include "mater/dsp.hpp"

namespace mater {

struct WordAlignment {
  std::string token;
  double start = 0.0;
  double end = 0.0;
};

constexpr int kProsodyDim = 22;
constexpr int kSyntaxDim = 20;
constexpr int kWordDim = kSyntaxDim + kProsodyDim;
constexpr int kRhythmDim = 34;
constexpr int kDefaultSentimentDim = 517;

// Prosody vector layout (22 slots):
//   0-3   loudness mean / std / max / slope (dB, dB/s)
//   4     jitter (local)
//   5     jitter (ppq5)
//   6     shimmer (local)
//   7     shimmer (dB)
//   8     alpha ratio mean (dB)
//   9-10  HNR mean / std (dB)
//   11-14 F0 mean / std / range / slope (semitones re 27.5 Hz, st/s)
//   15    voiced-frame fraction
//   16    voiced-segment count
//   17    mean voiced-segment duration (s)
//   18    mean unvoiced-segment duration (s)
//   19    word duration (s)
//   20    pre-word pause (s)
//   21    post-word pause (s)
struct WordProsody {
  Eigen::VectorXd values;   // kProsodyDim
  bool degenerate = false;  // span shorter than one analysis frame
};

struct WordContext {
  // Negative = unknown; the corresponding pause slot becomes 0.
  double prev_end = -1.0;
  double next_start = -1.0;
};

WordProsody word_prosody(const AudioBuffer& audio, const WordAlignment& span,
                         const WordContext& ctx = {});

// 17 universal POS one-hot slots + 3 grammatical-person slots (pronouns only).
// A supplied sidecar vector passes through untouched.
Eigen::VectorXd word_syntax(const std::string& token,
                            const std::optional<Eigen::VectorXd>& sidecar = {});

// Rhythm vector layout (34 slots):
//   0-4   loudness mean / std / max / range / slope
//   5-6   jitter mean / std over voiced segments
//   7-8   shimmer mean / std over voiced segments
//   9-10  HNR mean / std over voiced frames
//   11-17 F0 mean / std / range / slope / q20 / q50 / q80 (semitones)
//   18    voiced-frame fraction
//   19-22 voiced-segment count / rate (1/s) / mean dur / std dur
//   23-25 unvoiced-segment count / mean dur / std dur
//   26-30 pause count / rate / mean dur / std dur / total fraction
//   31    speech rate (words/s)
//   32    articulation rate (words per non-pause second)
//   33    utterance duration (s)
Eigen::VectorXd utterance_rhythm(const AudioBuffer& audio,
                                 const std::vector<WordAlignment>& alignments);

struct SentimentConfig {
  int dim = kDefaultSentimentDim;
};

// Lexicon hit-rate fallback, or sidecar pass-through when provided.
Eigen::VectorXd utterance_sentiment(const std::string& transcript,
                                    const std::optional<Eigen::VectorXd>& sidecar,
                                    const SentimentConfig& cfg = {});

struct FeatureBundle {
  Eigen::MatrixXd word_seq;                       // n x 42, syntax || prosody
  Eigen::VectorXd utterance;                      // sentiment || rhythm
  std::map<std::string, Eigen::MatrixXd> embeddings;  // frames x dim
};

struct FeatureConfig {
  SentimentConfig sentiment;
  // Sidecar payloads keyed by sample id (loaded by dataio).
  std::map<std::string, std::vector<Eigen::VectorXd>> syntax_sidecar;
  std::map<std::string, Eigen::VectorXd> sentiment_sidecar;
};

struct Sample;  // dataio

FeatureBundle build_bundle(const Sample& sample, const FeatureConfig& cfg);

// Pads the pitch track with trailing unvoiced frames so it lines up with
// the 25 ms loudness track (the pitch window is longer).
F0Track aligned_f0(const AudioBuffer& audio, std::size_t n_frames);

// 12 log2(f / 27.5), the log-pitch scale used by all F0 statistics.
double hz_to_semitones(double hz);

}  // namespace mater
