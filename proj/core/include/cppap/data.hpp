#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cppap/model.hpp"
#include "cppap/preprocessing.hpp"

namespace cppap {

struct Sample {
  std::string id;
  Tensor soundscape;   // [T,F,Cs]
  Tensor masker;       // [T,F,1]
  double gamma = 0;    // log-gain
  Tensor participant;  // [M]
  Tensor image;        // [H,W,3]
  double label = 0;    // in [-1,1]
  int fold = 0;        // 0..4
  bool silent = false;
};

struct ManifestRow {
  std::string id;
  std::string soundscape_path;
  std::string masker_path;
  std::string image_path;
  double gamma = 0;
  bool silent = false;
  std::vector<std::string> piq_answers;
  double label = 0;
  int fold = 0;
};

struct Manifest {
  std::string dir;  // base for relative paths
  std::vector<ManifestRow> rows;
};

// CSV columns: id,soundscape_path,masker_path,image_path,gamma,silent,
// piq_1..piq_k,label,fold. Throws ValidationError listing every bad row.
Manifest load_manifest(const std::string& path);
void save_manifest(const Manifest& manifest, const std::string& path);

// Audio via .wav (log-mel) or .ten (precomputed tensor); images via
// .png/.ppm (bilinear-downsampled) or .ten.
struct LoaderConfig {
  LogMelParams mel;
  std::size_t image_h = 240;
  std::size_t image_w = 135;
  PiqSchema schema;
};
Sample load_sample(const Manifest& manifest, const ManifestRow& row,
                   const LoaderConfig& loader);
std::vector<Sample> load_samples(const Manifest& manifest, const LoaderConfig& loader);

// Returns (train rows, validation rows) as indices into manifest.rows.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> kfold_split(
    const Manifest& manifest, int val_fold);

// Split for already-materialized samples.
std::pair<std::vector<Sample>, std::vector<Sample>> kfold_split_samples(
    const std::vector<Sample>& samples, int val_fold);

// Planted label function for desk-scale verification:
//   g = 1.6*(sigmoid(4*(p0-0.5)) - 0.5) + 0.35*gamma_eff + 0.8*mean(s)
//       + 0.5*(mean(b) - 0.5),   y = clamp(g, -1, 1)
// where gamma_eff = 0 for silent maskers. Monotone in p[0] and gamma.
double planted_label(double mean_s, double gamma_eff, double p0, double mean_b);

struct SyntheticDataset {
  std::vector<Sample> samples;
  PiqSchema schema;  // participant_dim continuous [0,1] variables
};

SyntheticDataset generate_synthetic_dataset(std::size_t n, std::uint64_t seed,
                                            const ModelConfig& cfg);

// Writes manifest.csv, piq_schema.json, and per-sample .ten files under dir.
void write_synthetic_dataset(const SyntheticDataset& ds, const std::string& dir);

// Gain stats over the non-silent training rows; nullopt when none exist.
std::optional<GainStats> compute_gain_stats(const std::vector<Sample>& train);

}  // namespace cppap
