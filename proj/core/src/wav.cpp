#include "cppap/wav.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "cppap/errors.hpp"

namespace cppap {

namespace {

std::uint32_t rd_u32(const unsigned char* p) {
  return std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 | std::uint32_t(p[2]) << 16 |
         std::uint32_t(p[3]) << 24;
}
std::uint16_t rd_u16(const unsigned char* p) {
  return std::uint16_t(p[0] | p[1] << 8);
}

}  // namespace

WavData read_wav(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open WAV file: " + path);
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)),
                                 std::istreambuf_iterator<char>());
  if (buf.size() < 44 || std::memcmp(buf.data(), "RIFF", 4) != 0 ||
      std::memcmp(buf.data() + 8, "WAVE", 4) != 0)
    throw FormatError("not a RIFF/WAVE file: " + path);

  std::uint16_t format = 0, num_channels = 0, bits = 0;
  std::uint32_t sample_rate = 0;
  const unsigned char* data = nullptr;
  std::size_t data_len = 0;

  std::size_t pos = 12;
  while (pos + 8 <= buf.size()) {
    std::uint32_t chunk_len = rd_u32(&buf[pos + 4]);
    if (pos + 8 + chunk_len > buf.size())
      throw FormatError("truncated WAV chunk in " + path);
    if (std::memcmp(&buf[pos], "fmt ", 4) == 0 && chunk_len >= 16) {
      format = rd_u16(&buf[pos + 8]);
      num_channels = rd_u16(&buf[pos + 10]);
      sample_rate = rd_u32(&buf[pos + 12]);
      bits = rd_u16(&buf[pos + 22]);
    } else if (std::memcmp(&buf[pos], "data", 4) == 0) {
      data = &buf[pos + 8];
      data_len = chunk_len;
    }
    pos += 8 + chunk_len + (chunk_len & 1);
  }
  if (format != 1 || (bits != 16 && bits != 24))
    throw FormatError("unsupported WAV encoding (need 16/24-bit PCM): " + path);
  if (!data || num_channels == 0) throw FormatError("WAV file has no sample data: " + path);

  std::size_t bytes_per = bits / 8;
  std::size_t frames = data_len / (bytes_per * num_channels);
  WavData out;
  out.sample_rate = sample_rate;
  out.channels.assign(num_channels, std::vector<double>(frames));
  double norm = bits == 16 ? 32768.0 : 8388608.0;
  for (std::size_t f = 0; f < frames; ++f) {
    for (std::size_t c = 0; c < num_channels; ++c) {
      const unsigned char* p = data + (f * num_channels + c) * bytes_per;
      std::int32_t v;
      if (bits == 16) {
        v = std::int16_t(p[0] | p[1] << 8);
      } else {
        v = std::int32_t(std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 |
                         std::uint32_t(p[2]) << 16);
        if (v & 0x800000) v |= ~0xFFFFFF;  // sign-extend
      }
      out.channels[c][f] = double(v) / norm;
    }
  }
  return out;
}

void write_wav16(const std::string& path, const WavData& data) {
  if (data.channels.empty()) throw ValidationError("write_wav16: no channels");
  std::size_t frames = data.channels[0].size();
  std::uint16_t nch = std::uint16_t(data.channels.size());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open WAV file for writing: " + path);
  std::uint32_t data_len = std::uint32_t(frames * nch * 2);
  std::uint32_t riff_len = 36 + data_len;
  std::uint32_t byte_rate = data.sample_rate * nch * 2;
  std::uint16_t block_align = nch * 2;
  std::uint16_t fmt = 1, bits = 16;
  std::uint32_t fmt_len = 16;
  auto w = [&](const void* p, std::size_t n) { out.write(static_cast<const char*>(p), std::streamsize(n)); };
  w("RIFF", 4); w(&riff_len, 4); w("WAVE", 4);
  w("fmt ", 4); w(&fmt_len, 4); w(&fmt, 2); w(&nch, 2);
  w(&data.sample_rate, 4); w(&byte_rate, 4); w(&block_align, 2); w(&bits, 2);
  w("data", 4); w(&data_len, 4);
  for (std::size_t f = 0; f < frames; ++f)
    for (std::size_t c = 0; c < nch; ++c) {
      double x = std::clamp(data.channels[c][f], -1.0, 1.0);
      std::int16_t v = std::int16_t(std::lround(x * 32767.0));
      w(&v, 2);
    }
}

}  // namespace cppap
