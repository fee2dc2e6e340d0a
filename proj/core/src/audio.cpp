#include "mater/audio.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "mater/errors.hpp"

namespace mater {
namespace {

uint32_t read_u32(const uint8_t* p) {
  return uint32_t(p[0]) | uint32_t(p[1]) << 8 | uint32_t(p[2]) << 16 |
         uint32_t(p[3]) << 24;
}

uint16_t read_u16(const uint8_t* p) {
  return uint16_t(p[0]) | uint16_t(p[1]) << 8;
}

}  // namespace

AudioBuffer read_wav(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw RuntimeFailure("cannot open wav file: " + path);
  std::vector<uint8_t> raw((std::istreambuf_iterator<char>(in)),
                           std::istreambuf_iterator<char>());
  if (raw.size() < 12 || std::memcmp(raw.data(), "RIFF", 4) != 0 ||
      std::memcmp(raw.data() + 8, "WAVE", 4) != 0) {
    throw ValidationError("not a RIFF/WAVE file: " + path);
  }

  uint16_t format = 0, channels = 0, bits = 0;
  uint32_t rate = 0;
  const uint8_t* data = nullptr;
  uint32_t data_len = 0;

  std::size_t pos = 12;
  while (pos + 8 <= raw.size()) {
    const uint8_t* hdr = raw.data() + pos;
    uint32_t chunk_len = read_u32(hdr + 4);
    const uint8_t* body = hdr + 8;
    if (pos + 8 + chunk_len > raw.size()) {
      throw ValidationError("truncated chunk in wav file: " + path);
    }
    if (std::memcmp(hdr, "fmt ", 4) == 0) {
      if (chunk_len < 16) throw ValidationError("bad fmt chunk: " + path);
      format = read_u16(body);
      channels = read_u16(body + 2);
      rate = read_u32(body + 4);
      bits = read_u16(body + 14);
      if (format == 0xFFFE && chunk_len >= 40) {
        // WAVE_FORMAT_EXTENSIBLE: first two bytes of the SubFormat GUID.
        format = read_u16(body + 24);
      }
    } else if (std::memcmp(hdr, "data", 4) == 0) {
      data = body;
      data_len = chunk_len;
    }
    pos += 8 + chunk_len + (chunk_len & 1);  // chunks are word-aligned
  }

  if (rate == 0 || channels == 0) {
    throw ValidationError("missing fmt chunk: " + path);
  }
  if (format != 1 && format != 3) {
    throw ValidationError("unsupported wav codec (need PCM or float): " + path);
  }
  if ((format == 1 && bits != 8 && bits != 16 && bits != 24 && bits != 32) ||
      (format == 3 && bits != 32)) {
    throw ValidationError("unsupported wav bit depth: " + path);
  }
  if (data == nullptr || data_len == 0) {
    throw ValidationError("zero-length audio: " + path);
  }

  const std::size_t bytes_per = bits / 8;
  const std::size_t n_frames = data_len / (bytes_per * channels);
  if (n_frames == 0) throw ValidationError("zero-length audio: " + path);

  AudioBuffer out;
  out.sample_rate = static_cast<int>(rate);
  out.samples.resize(n_frames);
  for (std::size_t i = 0; i < n_frames; ++i) {
    double acc = 0.0;
    for (uint16_t c = 0; c < channels; ++c) {
      const uint8_t* p = data + (i * channels + c) * bytes_per;
      double v = 0.0;
      if (format == 3) {
        uint32_t u = read_u32(p);
        float f;
        std::memcpy(&f, &u, 4);
        v = f;
      } else if (bits == 8) {
        v = (int(p[0]) - 128) / 128.0;
      } else if (bits == 16) {
        v = int16_t(read_u16(p)) / 32768.0;
      } else if (bits == 24) {
        int32_t s = int32_t(p[0]) | int32_t(p[1]) << 8 | int32_t(p[2]) << 16;
        if (s & 0x800000) s |= ~0xFFFFFF;
        v = s / 8388608.0;
      } else {
        v = int32_t(read_u32(p)) / 2147483648.0;
      }
      acc += v;
    }
    out.samples[i] = acc / channels;
  }
  return out;
}

void write_wav(const std::string& path, const AudioBuffer& audio) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeFailure("cannot write wav file: " + path);
  auto put_u32 = [&](uint32_t v) {
    uint8_t b[4] = {uint8_t(v), uint8_t(v >> 8), uint8_t(v >> 16),
                    uint8_t(v >> 24)};
    out.write(reinterpret_cast<char*>(b), 4);
  };
  auto put_u16 = [&](uint16_t v) {
    uint8_t b[2] = {uint8_t(v), uint8_t(v >> 8)};
    out.write(reinterpret_cast<char*>(b), 2);
  };
  const uint32_t data_len = uint32_t(audio.samples.size() * 2);
  out.write("RIFF", 4);
  put_u32(36 + data_len);
  out.write("WAVE", 4);
  out.write("fmt ", 4);
  put_u32(16);
  put_u16(1);  // PCM
  put_u16(1);  // mono
  put_u32(uint32_t(audio.sample_rate));
  put_u32(uint32_t(audio.sample_rate) * 2);
  put_u16(2);
  put_u16(16);
  out.write("data", 4);
  put_u32(data_len);
  for (double s : audio.samples) {
    double clamped = std::clamp(s, -1.0, 1.0);
    auto v = int16_t(std::lround(clamped * 32767.0));
    put_u16(uint16_t(v));
  }
}

std::size_t frame_count(std::size_t n_samples, int sample_rate,
                        const FrameSpec& spec) {
  const auto flen = std::size_t(std::lround(spec.frame_len * sample_rate));
  const auto hop = std::size_t(std::lround(spec.hop * sample_rate));
  if (hop == 0 || flen < hop) {
    throw ValidationError("frame spec must satisfy frame_len >= hop > 0");
  }
  if (n_samples < flen) return 0;
  return (n_samples - flen) / hop + 1;
}

std::size_t frame_start(std::size_t t, int sample_rate, const FrameSpec& spec) {
  return t * std::size_t(std::lround(spec.hop * sample_rate));
}

std::vector<std::vector<double>> frame_signal(const AudioBuffer& audio,
                                              const FrameSpec& spec) {
  const std::size_t n = frame_count(audio.samples.size(), audio.sample_rate, spec);
  if (n == 0) throw ValidationError("audio shorter than one frame");
  const auto flen = std::size_t(std::lround(spec.frame_len * audio.sample_rate));
  std::vector<std::vector<double>> frames(n);
  for (std::size_t t = 0; t < n; ++t) {
    const std::size_t s = frame_start(t, audio.sample_rate, spec);
    frames[t].assign(audio.samples.begin() + s, audio.samples.begin() + s + flen);
  }
  return frames;
}

}  // namespace mater
