#pragma once

#include <optional>
#include <random>
#include <string>
#include <vector>

#include "cppap/tensor.hpp"

namespace cppap {

struct LogMelParams {
  std::size_t sample_rate = 44100;
  std::size_t frame_size = 4096;
  std::size_t hop_size = 2048;
  std::size_t mel_bands = 64;
  std::size_t target_frames = 644;  // center-crop / pad to this T
  double log_offset = 1e-10;
};

// Per-channel magnitude STFT (Hann) -> HTK mel triangles -> log(x + offset).
// Output is [T, F, C].
Tensor log_mel_spectrogram(const std::vector<std::vector<double>>& channels,
                           const LogMelParams& params = {});

// HTK mel scale helpers, exposed for band-placement tests.
double hz_to_mel(double hz);
double mel_to_hz(double mel);
// Band center frequencies (Hz) of the constructed filterbank.
std::vector<double> mel_band_centers(const LogMelParams& params);

// Corner-aligned bilinear resampling of an [H0,W0,C] image.
Tensor downsample_image(const Tensor& img, std::size_t out_h = 240,
                        std::size_t out_w = 135);

struct PiqVariable {
  enum class Kind { Continuous, Categorical };
  std::string name;
  Kind kind = Kind::Continuous;
  double min = 0, max = 1;              // continuous
  std::vector<std::string> levels;      // categorical, >= 2 entries
  std::size_t encoded_width() const;
};

struct PiqSchema {
  std::vector<PiqVariable> variables;
  std::size_t encoded_width() const;  // == M
  std::string to_json() const;
  static PiqSchema from_json(const std::string& text);
  static PiqSchema load(const std::string& path);
  void validate() const;
};

// Continuous answers parse as numbers and map to [0,1]; categorical answers
// match a level string and one-hot encode. Returns a length-M vector.
Tensor encode_participant(const std::vector<std::string>& answers,
                          const PiqSchema& schema);

struct GainStats {
  double nu = 0;    // mean of training-fold non-silent log-gains
  double zeta = 0;  // their standard deviation
};

// Non-silent maskers keep their calibrated gamma and never touch the rng.
double effective_gain(bool masker_is_silent, double gamma,
                      const std::optional<GainStats>& stats, std::mt19937_64& rng);

}  // namespace cppap
