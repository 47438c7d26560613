#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace cppap {

struct WavData {
  std::uint32_t sample_rate = 0;
  // One vector per channel, samples normalized to [-1,1].
  std::vector<std::vector<double>> channels;
};

// 16/24-bit PCM only.
WavData read_wav(const std::string& path);
void write_wav16(const std::string& path, const WavData& data);

}  // namespace cppap
