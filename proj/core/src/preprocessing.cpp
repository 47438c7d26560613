#include "cppap/preprocessing.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <fstream>
#include <numbers>
#include <sstream>

#include "json.hpp"

namespace cppap {

using nlohmann::json;

namespace {

// In-place iterative radix-2 FFT; n must be a power of two.
void fft(std::vector<std::complex<double>>& a) {
  std::size_t n = a.size();
  if (n == 0 || (n & (n - 1)) != 0) throw DimensionError("fft: size must be a power of two");
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    double ang = -2.0 * std::numbers::pi / double(len);
    std::complex<double> wl(std::cos(ang), std::sin(ang));
    for (std::size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0);
      for (std::size_t k = 0; k < len / 2; ++k) {
        auto u = a[i + k];
        auto v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
        w *= wl;
      }
    }
  }
}

// Triangular filters on the HTK mel scale; weights[band][fft_bin].
std::vector<std::vector<double>> mel_filterbank(const LogMelParams& p) {
  std::size_t bins = p.frame_size / 2 + 1;
  double nyquist = double(p.sample_rate) / 2.0;
  std::size_t nb = p.mel_bands;
  std::vector<double> edges(nb + 2);
  double mel_max = hz_to_mel(nyquist);
  for (std::size_t i = 0; i < nb + 2; ++i)
    edges[i] = mel_to_hz(mel_max * double(i) / double(nb + 1));
  std::vector<std::vector<double>> fb(nb, std::vector<double>(bins, 0.0));
  for (std::size_t b = 0; b < nb; ++b) {
    double lo = edges[b], mid = edges[b + 1], hi = edges[b + 2];
    for (std::size_t k = 0; k < bins; ++k) {
      double f = double(k) * double(p.sample_rate) / double(p.frame_size);
      if (f > lo && f < mid) fb[b][k] = (f - lo) / (mid - lo);
      else if (f >= mid && f < hi) fb[b][k] = (hi - f) / (hi - mid);
    }
  }
  return fb;
}

}  // namespace

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

std::vector<double> mel_band_centers(const LogMelParams& p) {
  double mel_max = hz_to_mel(double(p.sample_rate) / 2.0);
  std::vector<double> centers(p.mel_bands);
  for (std::size_t b = 0; b < p.mel_bands; ++b)
    centers[b] = mel_to_hz(mel_max * double(b + 1) / double(p.mel_bands + 1));
  return centers;
}

Tensor log_mel_spectrogram(const std::vector<std::vector<double>>& channels,
                           const LogMelParams& p) {
  if (channels.empty() || channels[0].empty())
    throw ValidationError("log_mel_spectrogram: empty audio");
  std::size_t len = channels[0].size();
  for (const auto& c : channels) {
    if (c.size() != len) throw ValidationError("log_mel_spectrogram: ragged channels");
  }
  if (len < p.frame_size)
    throw ValidationError("log_mel_spectrogram: audio shorter than one frame");

  std::size_t n_frames = 1 + (len - p.frame_size) / p.hop_size;
  std::size_t C = channels.size(), F = p.mel_bands, T = p.target_frames;

  std::vector<double> window(p.frame_size);
  for (std::size_t i = 0; i < p.frame_size; ++i)
    window[i] = 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * double(i) / double(p.frame_size)));

  auto fb = mel_filterbank(p);
  std::size_t bins = p.frame_size / 2 + 1;
  double silence = std::log(p.log_offset);

  // Center-crop when longer than T; pad the tail with silence frames if short.
  std::size_t start = n_frames > T ? (n_frames - T) / 2 : 0;
  std::size_t used = std::min(n_frames, T);

  Tensor out = Tensor::full({T, F, C}, silence);
  std::vector<std::complex<double>> buf(p.frame_size);
  std::vector<double> mag(bins);
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t t = 0; t < used; ++t) {
      std::size_t off = (start + t) * p.hop_size;
      for (std::size_t i = 0; i < p.frame_size; ++i)
        buf[i] = channels[c][off + i] * window[i];
      fft(buf);
      for (std::size_t k = 0; k < bins; ++k) mag[k] = std::abs(buf[k]);
      for (std::size_t b = 0; b < F; ++b) {
        double acc = 0;
        for (std::size_t k = 0; k < bins; ++k) acc += fb[b][k] * mag[k];
        out[(t * F + b) * C + c] = std::log(acc + p.log_offset);
      }
    }
  }
  out.check_finite("log-mel spectrogram");
  return out;
}

Tensor downsample_image(const Tensor& img, std::size_t out_h, std::size_t out_w) {
  if (img.rank() != 3) throw ValidationError("downsample_image expects [H,W,C]");
  std::size_t h0 = img.dim(0), w0 = img.dim(1), c = img.dim(2);
  if (h0 < 2 || w0 < 2) throw ValidationError("downsample_image: degenerate input dims");
  Tensor out({out_h, out_w, c});
  double sy = out_h > 1 ? double(h0 - 1) / double(out_h - 1) : 0.0;
  double sx = out_w > 1 ? double(w0 - 1) / double(out_w - 1) : 0.0;
  for (std::size_t i = 0; i < out_h; ++i) {
    double fy = double(i) * sy;
    std::size_t y0 = std::min(std::size_t(fy), h0 - 2);
    double wy = fy - double(y0);
    for (std::size_t j = 0; j < out_w; ++j) {
      double fx = double(j) * sx;
      std::size_t x0 = std::min(std::size_t(fx), w0 - 2);
      double wx = fx - double(x0);
      for (std::size_t ch = 0; ch < c; ++ch) {
        double v00 = img[(y0 * w0 + x0) * c + ch];
        double v01 = img[(y0 * w0 + x0 + 1) * c + ch];
        double v10 = img[((y0 + 1) * w0 + x0) * c + ch];
        double v11 = img[((y0 + 1) * w0 + x0 + 1) * c + ch];
        out[(i * out_w + j) * c + ch] =
            (1 - wy) * ((1 - wx) * v00 + wx * v01) + wy * ((1 - wx) * v10 + wx * v11);
      }
    }
  }
  return out;
}

std::size_t PiqVariable::encoded_width() const {
  return kind == Kind::Continuous ? 1 : levels.size();
}

std::size_t PiqSchema::encoded_width() const {
  std::size_t w = 0;
  for (const auto& v : variables) w += v.encoded_width();
  return w;
}

void PiqSchema::validate() const {
  if (variables.empty()) throw ValidationError("PIQ schema has no variables");
  for (const auto& v : variables) {
    if (v.name.empty()) throw ValidationError("PIQ variable with empty name");
    if (v.kind == PiqVariable::Kind::Continuous) {
      if (!(v.min < v.max))
        throw ValidationError("PIQ variable '" + v.name + "': need min < max");
    } else if (v.levels.size() < 2) {
      throw ValidationError("PIQ variable '" + v.name + "': need >= 2 levels");
    }
  }
}

std::string PiqSchema::to_json() const {
  json arr = json::array();
  for (const auto& v : variables) {
    if (v.kind == PiqVariable::Kind::Continuous) {
      arr.push_back({{"name", v.name}, {"kind", "continuous"}, {"min", v.min}, {"max", v.max}});
    } else {
      arr.push_back({{"name", v.name}, {"kind", "categorical"}, {"levels", v.levels}});
    }
  }
  return json{{"variables", arr}}.dump(2);
}

PiqSchema PiqSchema::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw FormatError(std::string("bad PIQ schema JSON: ") + e.what());
  }
  PiqSchema schema;
  try {
    for (const auto& item : j.at("variables")) {
      PiqVariable v;
      v.name = item.at("name").get<std::string>();
      std::string kind = item.at("kind").get<std::string>();
      if (kind == "continuous") {
        v.kind = PiqVariable::Kind::Continuous;
        v.min = item.at("min").get<double>();
        v.max = item.at("max").get<double>();
      } else if (kind == "categorical") {
        v.kind = PiqVariable::Kind::Categorical;
        v.levels = item.at("levels").get<std::vector<std::string>>();
      } else {
        throw FormatError("unknown PIQ variable kind '" + kind + "'");
      }
      schema.variables.push_back(std::move(v));
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("incomplete PIQ schema JSON: ") + e.what());
  }
  schema.validate();
  return schema;
}

PiqSchema PiqSchema::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open PIQ schema: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str());
}

Tensor encode_participant(const std::vector<std::string>& answers,
                          const PiqSchema& schema) {
  schema.validate();
  if (answers.size() != schema.variables.size())
    throw ValidationError("expected " + std::to_string(schema.variables.size()) +
                          " PIQ answers, got " + std::to_string(answers.size()));
  Tensor out({schema.encoded_width()});
  std::size_t off = 0;
  for (std::size_t i = 0; i < schema.variables.size(); ++i) {
    const PiqVariable& v = schema.variables[i];
    const std::string& a = answers[i];
    if (v.kind == PiqVariable::Kind::Continuous) {
      double x;
      try {
        x = std::stod(a);
      } catch (const std::exception&) {
        throw ValidationError("PIQ variable '" + v.name + "': non-numeric answer '" + a + "'");
      }
      if (x < v.min || x > v.max)
        throw ValidationError("PIQ variable '" + v.name + "': answer " + a +
                              " outside [" + std::to_string(v.min) + "," +
                              std::to_string(v.max) + "]");
      out[off] = (x - v.min) / (v.max - v.min);
      off += 1;
    } else {
      auto it = std::find(v.levels.begin(), v.levels.end(), a);
      if (it == v.levels.end())
        throw ValidationError("PIQ variable '" + v.name + "': unknown level '" + a + "'");
      out[off + std::size_t(it - v.levels.begin())] = 1.0;
      off += v.levels.size();
    }
  }
  return out;
}

double effective_gain(bool masker_is_silent, double gamma,
                      const std::optional<GainStats>& stats, std::mt19937_64& rng) {
  if (!masker_is_silent) return gamma;
  if (!stats) throw ConfigError("silent masker requires gain stats from the training folds");
  if (stats->zeta < 0) throw ConfigError("gain stats: negative standard deviation");
  if (stats->zeta == 0) return stats->nu;
  std::normal_distribution<double> dist(stats->nu, stats->zeta);
  return dist(rng);
}

}  // namespace cppap
