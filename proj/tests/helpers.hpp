#pragma once

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "mater/audio.hpp"

namespace mater::test {

inline AudioBuffer sine(double freq, double seconds = 1.0, int sr = 16000,
                        double amp = 1.0) {
  AudioBuffer a;
  a.sample_rate = sr;
  a.samples.resize(std::size_t(seconds * sr));
  for (std::size_t i = 0; i < a.samples.size(); ++i) {
    a.samples[i] = amp * std::sin(2.0 * M_PI * freq * double(i) / sr);
  }
  return a;
}

inline AudioBuffer silence(double seconds = 1.0, int sr = 16000) {
  AudioBuffer a;
  a.sample_rate = sr;
  a.samples.assign(std::size_t(seconds * sr), 0.0);
  return a;
}

inline AudioBuffer white_noise(double seconds = 1.0, int sr = 16000,
                               unsigned long long seed = 42) {
  AudioBuffer a;
  a.sample_rate = sr;
  a.samples.resize(std::size_t(seconds * sr));
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (auto& s : a.samples) s = u(rng);
  return a;
}

// Unit impulses at the given sample spacings, repeated over the duration.
inline AudioBuffer impulse_train(const std::vector<int>& spacings,
                                 double seconds = 1.0, int sr = 16000) {
  AudioBuffer a = silence(seconds, sr);
  std::size_t pos = 0, k = 0;
  while (pos < a.samples.size()) {
    a.samples[pos] = 1.0;
    pos += std::size_t(spacings[k % spacings.size()]);
    ++k;
  }
  return a;
}

// Fresh scratch directory under the system temp root, removed on destruction.
struct TempDir {
  std::filesystem::path path;

  explicit TempDir(const std::string& tag) {
    path = std::filesystem::temp_directory_path() /
           (tag + "-" + std::to_string(std::random_device{}()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  std::string file(const std::string& name) const {
    return (path / name).string();
  }
};

}  // namespace mater::test
