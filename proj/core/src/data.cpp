#include "cppap/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "cppap/image_io.hpp"
#include "cppap/wav.hpp"

namespace cppap {

namespace fs = std::filesystem;

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::stringstream ss(line);
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.push_back("");
  return out;
}

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

Manifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open manifest: " + path);
  Manifest m;
  m.dir = fs::path(path).parent_path().string();
  if (m.dir.empty()) m.dir = ".";

  std::string line;
  if (!std::getline(in, line)) throw ValidationError("empty manifest: " + path);
  auto header = split_csv_line(line);
  std::size_t ncols = header.size();
  if (ncols < 9 || header[0] != "id" || header[1] != "soundscape_path" ||
      header[2] != "masker_path" || header[3] != "image_path" || header[4] != "gamma" ||
      header[5] != "silent" || header[ncols - 2] != "label" || header[ncols - 1] != "fold")
    throw ValidationError("bad manifest header in " + path);
  std::size_t n_piq = ncols - 8;

  std::vector<std::string> errors;
  std::set<std::string> seen_ids;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto f = split_csv_line(line);
    auto err = [&](const std::string& msg) {
      errors.push_back("row " + std::to_string(lineno) + ": " + msg);
    };
    if (f.size() != ncols) {
      err("expected " + std::to_string(ncols) + " columns, got " + std::to_string(f.size()));
      continue;
    }
    ManifestRow r;
    r.id = f[0];
    r.soundscape_path = f[1];
    r.masker_path = f[2];
    r.image_path = f[3];
    if (!seen_ids.insert(r.id).second) err("duplicate sample id '" + r.id + "'");
    try {
      r.gamma = std::stod(f[4]);
    } catch (const std::exception&) {
      err("bad gamma '" + f[4] + "'");
    }
    if (f[5] == "0") r.silent = false;
    else if (f[5] == "1") r.silent = true;
    else err("bad silent flag '" + f[5] + "'");
    for (std::size_t i = 0; i < n_piq; ++i) r.piq_answers.push_back(f[6 + i]);
    try {
      r.label = std::stod(f[ncols - 2]);
      if (r.label < -1.0 || r.label > 1.0)
        err("label " + f[ncols - 2] + " outside [-1,1]");
    } catch (const std::exception&) {
      err("bad label '" + f[ncols - 2] + "'");
    }
    try {
      r.fold = std::stoi(f[ncols - 1]);
      if (r.fold < 0 || r.fold > 4) err("fold " + f[ncols - 1] + " outside 0..4");
    } catch (const std::exception&) {
      err("bad fold '" + f[ncols - 1] + "'");
    }
    for (const std::string* p : {&r.soundscape_path, &r.masker_path, &r.image_path}) {
      if (!fs::exists(fs::path(m.dir) / *p)) err("missing file '" + *p + "'");
    }
    m.rows.push_back(std::move(r));
  }
  if (!errors.empty()) {
    std::string msg = "manifest validation failed:\n";
    for (const auto& e : errors) msg += "  " + e + "\n";
    throw ValidationError(msg);
  }
  if (m.rows.empty()) throw ValidationError("manifest has no rows: " + path);
  return m;
}

void save_manifest(const Manifest& manifest, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write manifest: " + path);
  std::size_t n_piq = manifest.rows.empty() ? 0 : manifest.rows[0].piq_answers.size();
  out << "id,soundscape_path,masker_path,image_path,gamma,silent";
  for (std::size_t i = 0; i < n_piq; ++i) out << ",piq_" << i + 1;
  out << ",label,fold\n";
  for (const auto& r : manifest.rows) {
    out << r.id << "," << r.soundscape_path << "," << r.masker_path << ","
        << r.image_path << "," << fmt_double(r.gamma) << "," << (r.silent ? 1 : 0);
    for (const auto& a : r.piq_answers) out << "," << a;
    out << "," << fmt_double(r.label) << "," << r.fold << "\n";
  }
}

namespace {

Tensor load_audio_tensor(const std::string& path, const LogMelParams& mel,
                         std::size_t expected_channels) {
  if (path.ends_with(".ten")) {
    Tensor t = load_tensor(path);
    if (t.rank() != 3 || t.dim(0) != mel.target_frames || t.dim(1) != mel.mel_bands ||
        t.dim(2) != expected_channels)
      throw ValidationError("audio tensor " + path + " has shape " +
                            Tensor::shape_str(t.shape()) + ", expected (" +
                            std::to_string(mel.target_frames) + "," +
                            std::to_string(mel.mel_bands) + "," +
                            std::to_string(expected_channels) + ")");
    return t;
  }
  if (path.ends_with(".wav")) {
    WavData wav = read_wav(path);
    if (wav.channels.size() != expected_channels)
      throw ValidationError("audio " + path + " has " +
                            std::to_string(wav.channels.size()) + " channels, expected " +
                            std::to_string(expected_channels));
    return log_mel_spectrogram(wav.channels, mel);
  }
  throw ValidationError("unsupported audio format (want .wav or .ten): " + path);
}

Tensor load_image_tensor(const std::string& path, std::size_t h, std::size_t w) {
  if (path.ends_with(".ten")) {
    Tensor t = load_tensor(path);
    if (t.rank() != 3 || t.dim(0) != h || t.dim(1) != w || t.dim(2) != 3)
      throw ValidationError("image tensor " + path + " has shape " +
                            Tensor::shape_str(t.shape()));
    return t;
  }
  Tensor img = read_image(path);
  if (img.dim(0) == h && img.dim(1) == w) return img;
  return downsample_image(img, h, w);
}

}  // namespace

Sample load_sample(const Manifest& manifest, const ManifestRow& row,
                   const LoaderConfig& loader) {
  auto resolve = [&](const std::string& p) { return (fs::path(manifest.dir) / p).string(); };
  Sample s;
  s.id = row.id;
  s.soundscape = load_audio_tensor(resolve(row.soundscape_path), loader.mel, 2);
  s.masker = load_audio_tensor(resolve(row.masker_path), loader.mel, 1);
  s.gamma = row.gamma;
  s.participant = encode_participant(row.piq_answers, loader.schema);
  s.image = load_image_tensor(resolve(row.image_path), loader.image_h, loader.image_w);
  s.label = row.label;
  s.fold = row.fold;
  s.silent = row.silent;
  return s;
}

std::vector<Sample> load_samples(const Manifest& manifest, const LoaderConfig& loader) {
  std::vector<Sample> out;
  out.reserve(manifest.rows.size());
  for (const auto& row : manifest.rows) out.push_back(load_sample(manifest, row, loader));
  return out;
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> kfold_split(
    const Manifest& manifest, int val_fold) {
  if (val_fold < 0 || val_fold > 4) throw ConfigError("val_fold must be in 0..4");
  std::vector<std::size_t> train, val;
  for (std::size_t i = 0; i < manifest.rows.size(); ++i) {
    (manifest.rows[i].fold == val_fold ? val : train).push_back(i);
  }
  if (val.empty()) throw ConfigError("fold " + std::to_string(val_fold) + " is empty");
  if (train.empty()) throw ConfigError("no training rows outside fold " + std::to_string(val_fold));
  return {train, val};
}

std::pair<std::vector<Sample>, std::vector<Sample>> kfold_split_samples(
    const std::vector<Sample>& samples, int val_fold) {
  if (val_fold < 0 || val_fold > 4) throw ConfigError("val_fold must be in 0..4");
  std::vector<Sample> train, val;
  for (const auto& s : samples) (s.fold == val_fold ? val : train).push_back(s);
  if (val.empty()) throw ConfigError("fold " + std::to_string(val_fold) + " is empty");
  if (train.empty()) throw ConfigError("no training rows outside fold " + std::to_string(val_fold));
  return {train, val};
}

double planted_label(double mean_s, double gamma_eff, double p0, double mean_b) {
  double sig = 1.0 / (1.0 + std::exp(-4.0 * (p0 - 0.5)));
  double g = 1.6 * (sig - 0.5) + 0.35 * gamma_eff + 0.8 * mean_s + 0.5 * (mean_b - 0.5);
  return std::clamp(g, -1.0, 1.0);
}

SyntheticDataset generate_synthetic_dataset(std::size_t n, std::uint64_t seed,
                                            const ModelConfig& cfg) {
  if (n < 10) throw ConfigError("synthetic dataset needs n >= 10");
  cfg.validate();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  SyntheticDataset ds;
  for (std::size_t i = 0; i < cfg.participant_dim; ++i) {
    PiqVariable v;
    v.name = "piq_" + std::to_string(i + 1);
    v.kind = PiqVariable::Kind::Continuous;
    v.min = 0;
    v.max = 1;
    ds.schema.variables.push_back(v);
  }

  for (std::size_t i = 0; i < n; ++i) {
    Sample s;
    s.id = "syn" + std::to_string(i);
    s.fold = int(i % 5);
    s.silent = unit(rng) < 0.1;

    double mean_s = unit(rng) * 0.8 - 0.4;
    s.soundscape = Tensor({cfg.audio_t, cfg.audio_f, cfg.audio_channels});
    for (double& x : s.soundscape.vec()) x = mean_s + (unit(rng) - 0.5) * 0.6;

    s.masker = Tensor({cfg.audio_t, cfg.audio_f, 1});
    if (s.silent) {
      for (double& x : s.masker.vec()) x = -1.0;
      s.gamma = 0.0;  // placeholder; redrawn from gain stats at train time
    } else {
      double mean_m = unit(rng) * 0.8 - 0.4;
      for (double& x : s.masker.vec()) x = mean_m + (unit(rng) - 0.5) * 0.6;
      s.gamma = unit(rng) - 0.5;
    }

    s.participant = Tensor({cfg.participant_dim});
    for (double& x : s.participant.vec()) x = unit(rng);

    double mean_b = 0.2 + unit(rng) * 0.6;
    s.image = Tensor({cfg.image_h, cfg.image_w, 3});
    for (double& x : s.image.vec())
      x = std::clamp(mean_b + (unit(rng) - 0.5) * 0.3, 0.0, 1.0);

    double ms = 0, mb = 0;
    for (double x : s.soundscape.vec()) ms += x;
    ms /= double(s.soundscape.size());
    for (double x : s.image.vec()) mb += x;
    mb /= double(s.image.size());
    s.label = planted_label(ms, s.silent ? 0.0 : s.gamma, s.participant[0], mb);
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

void write_synthetic_dataset(const SyntheticDataset& ds, const std::string& dir) {
  fs::create_directories(dir);
  std::ofstream schema_out(fs::path(dir) / "piq_schema.json");
  schema_out << ds.schema.to_json() << "\n";
  schema_out.close();

  Manifest m;
  m.dir = dir;
  for (const auto& s : ds.samples) {
    ManifestRow r;
    r.id = s.id;
    r.soundscape_path = s.id + "_s.ten";
    r.masker_path = s.id + "_m.ten";
    r.image_path = s.id + "_b.ten";
    r.gamma = s.gamma;
    r.silent = s.silent;
    for (std::size_t i = 0; i < s.participant.size(); ++i)
      r.piq_answers.push_back(fmt_double(s.participant[i]));
    r.label = s.label;
    r.fold = s.fold;
    save_tensor((fs::path(dir) / r.soundscape_path).string(), s.soundscape);
    save_tensor((fs::path(dir) / r.masker_path).string(), s.masker);
    save_tensor((fs::path(dir) / r.image_path).string(), s.image);
    m.rows.push_back(std::move(r));
  }
  save_manifest(m, (fs::path(dir) / "manifest.csv").string());
}

std::optional<GainStats> compute_gain_stats(const std::vector<Sample>& train) {
  std::vector<double> gains;
  for (const auto& s : train) {
    if (!s.silent) gains.push_back(s.gamma);
  }
  if (gains.empty()) return std::nullopt;
  double mean = 0;
  for (double g : gains) mean += g;
  mean /= double(gains.size());
  double var = 0;
  for (double g : gains) var += (g - mean) * (g - mean);
  var /= double(gains.size());
  return GainStats{mean, std::sqrt(var)};
}

}  // namespace cppap
