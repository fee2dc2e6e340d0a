#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace mater {

// Mono audio, samples normalized to [-1, 1].
struct AudioBuffer {
  std::vector<double> samples;
  int sample_rate = 0;

  double duration() const {
    return static_cast<double>(samples.size()) / sample_rate;
  }
};

// Reads a RIFF WAV file (8/16/24/32-bit integer PCM or 32-bit float),
// downmixing multichannel input to mono by averaging.
AudioBuffer read_wav(const std::string& path);

// 16-bit PCM writer, used by fixtures and round-trip checks.
void write_wav(const std::string& path, const AudioBuffer& audio);

struct FrameSpec {
  double frame_len = 0.025;  // seconds
  double hop = 0.010;        // seconds
};

// Frame boundaries in samples; the last partial window is dropped.
// frame count = floor((len - frame_len) / hop) + 1.
std::size_t frame_count(std::size_t n_samples, int sample_rate,
                        const FrameSpec& spec);

// Start index in samples of frame t.
std::size_t frame_start(std::size_t t, int sample_rate, const FrameSpec& spec);

std::vector<std::vector<double>> frame_signal(const AudioBuffer& audio,
                                              const FrameSpec& spec);

}  // namespace mater
