#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "cppap/data.hpp"
#include "cppap/image_io.hpp"
#include "cppap/wav.hpp"

using namespace cppap;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

LoaderConfig miniature_loader(const ModelConfig& cfg) {
  LoaderConfig lc;
  lc.mel.target_frames = cfg.audio_t;
  lc.mel.mel_bands = cfg.audio_f;
  lc.image_h = cfg.image_h;
  lc.image_w = cfg.image_w;
  for (std::size_t i = 0; i < cfg.participant_dim; ++i)
    lc.schema.variables.push_back(
        {"piq_" + std::to_string(i + 1), PiqVariable::Kind::Continuous, 0, 1, {}});
  return lc;
}

}  // namespace

TEST_CASE("tensor file round-trip") {
  fs::path dir = temp_dir("cppap_ten_test");
  std::mt19937_64 rng(1);
  Tensor t = Tensor::uniform({3, 4, 2}, -2, 2, rng);
  std::string path = (dir / "x.ten").string();
  save_tensor(path, t);
  Tensor rt = load_tensor(path);
  CHECK(rt.shape() == t.shape());
  for (std::size_t i = 0; i < t.size(); ++i) CHECK(rt[i] == t[i]);

  std::ofstream bad(dir / "bad.ten", std::ios::binary);
  bad << "junk";
  bad.close();
  CHECK_THROWS_AS(load_tensor((dir / "bad.ten").string()), FormatError);
}

TEST_CASE("wav round-trip and ppm round-trip") {
  fs::path dir = temp_dir("cppap_io_test");
  WavData wav;
  wav.sample_rate = 8000;
  wav.channels.resize(2);
  for (int i = 0; i < 800; ++i) {
    wav.channels[0].push_back(0.5 * std::sin(0.01 * i));
    wav.channels[1].push_back(0.25 * std::cos(0.02 * i));
  }
  std::string wpath = (dir / "a.wav").string();
  write_wav16(wpath, wav);
  WavData rt = read_wav(wpath);
  CHECK(rt.sample_rate == 8000);
  REQUIRE(rt.channels.size() == 2);
  REQUIRE(rt.channels[0].size() == 800);
  for (int i = 0; i < 800; ++i) {
    CHECK(std::abs(rt.channels[0][i] - wav.channels[0][i]) < 1.0 / 32000.0);
    CHECK(std::abs(rt.channels[1][i] - wav.channels[1][i]) < 1.0 / 32000.0);
  }
  CHECK_THROWS_AS(read_wav((dir / "missing.wav").string()), FormatError);

  std::mt19937_64 rng(2);
  Tensor img = Tensor::uniform({6, 5, 3}, 0, 1, rng);
  std::string ppath = (dir / "i.ppm").string();
  write_ppm(ppath, img);
  Tensor irt = read_image(ppath);
  CHECK(irt.shape() == img.shape());
  for (std::size_t i = 0; i < img.size(); ++i)
    CHECK(std::abs(irt[i] - img[i]) < 1.0 / 255.0 + 1e-9);
}

TEST_CASE("synthetic dataset determinism and label range") {
  ModelConfig cfg = ModelConfig::miniature();
  auto a = generate_synthetic_dataset(50, 7, cfg);
  auto b = generate_synthetic_dataset(50, 7, cfg);
  REQUIRE(a.samples.size() == 50);
  for (std::size_t i = 0; i < 50; ++i) {
    CHECK(a.samples[i].label == b.samples[i].label);
    CHECK(a.samples[i].gamma == b.samples[i].gamma);
    CHECK(a.samples[i].label >= -1.0);
    CHECK(a.samples[i].label <= 1.0);
    for (std::size_t j = 0; j < a.samples[i].soundscape.size(); ++j)
      CHECK(a.samples[i].soundscape[j] == b.samples[i].soundscape[j]);
  }
  auto c = generate_synthetic_dataset(50, 8, cfg);
  bool differs = false;
  for (std::size_t i = 0; i < 50 && !differs; ++i)
    differs = a.samples[i].label != c.samples[i].label;
  CHECK(differs);

  CHECK_THROWS_AS(generate_synthetic_dataset(5, 1, cfg), ConfigError);
}

TEST_CASE("planted label correlates with participant dimension 0") {
  ModelConfig cfg = ModelConfig::miniature();
  auto ds = generate_synthetic_dataset(500, 11, cfg);
  double my = 0, mp = 0;
  for (const auto& s : ds.samples) {
    my += s.label;
    mp += s.participant[0];
  }
  my /= 500;
  mp /= 500;
  double cyy = 0, cpp = 0, cyp = 0;
  for (const auto& s : ds.samples) {
    cyy += (s.label - my) * (s.label - my);
    cpp += (s.participant[0] - mp) * (s.participant[0] - mp);
    cyp += (s.label - my) * (s.participant[0] - mp);
  }
  double rho = cyp / std::sqrt(cyy * cpp);
  CHECK(rho > 0.3);
}

TEST_CASE("linear probe on p0 degrades when p0 is shuffled") {
  // The planted g depends on p[0]; a least-squares fit of y on p[0] must
  // beat the same fit with p[0] shuffled across samples.
  ModelConfig cfg = ModelConfig::miniature();
  auto ds = generate_synthetic_dataset(300, 13, cfg);
  auto probe_loss = [&](const std::vector<double>& x) {
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    std::size_t n = ds.samples.size();
    for (std::size_t i = 0; i < n; ++i) {
      sx += x[i];
      sy += ds.samples[i].label;
      sxx += x[i] * x[i];
      sxy += x[i] * ds.samples[i].label;
    }
    double denom = double(n) * sxx - sx * sx;
    double a = (double(n) * sxy - sx * sy) / denom;
    double b = (sy - a * sx) / double(n);
    double loss = 0;
    for (std::size_t i = 0; i < n; ++i) {
      double e = ds.samples[i].label - (a * x[i] + b);
      loss += e * e;
    }
    return loss / double(n);
  };
  std::vector<double> p0;
  for (const auto& s : ds.samples) p0.push_back(s.participant[0]);
  double fitted = probe_loss(p0);
  std::mt19937_64 rng(99);
  std::vector<double> shuffled = p0;
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  double broken = probe_loss(shuffled);
  CHECK(fitted < broken);
}

TEST_CASE("synthetic dataset round-trips through the manifest loader") {
  ModelConfig cfg = ModelConfig::miniature();
  fs::path dir = temp_dir("cppap_synth_test");
  auto ds = generate_synthetic_dataset(20, 3, cfg);
  write_synthetic_dataset(ds, dir.string());

  Manifest m = load_manifest((dir / "manifest.csv").string());
  CHECK(m.rows.size() == 20);
  LoaderConfig lc = miniature_loader(cfg);
  auto samples = load_samples(m, lc);
  REQUIRE(samples.size() == 20);
  for (std::size_t i = 0; i < 20; ++i) {
    CHECK(samples[i].id == ds.samples[i].id);
    CHECK(samples[i].label == ds.samples[i].label);
    CHECK(samples[i].fold == ds.samples[i].fold);
    CHECK(samples[i].silent == ds.samples[i].silent);
    for (std::size_t j = 0; j < samples[i].participant.size(); ++j)
      CHECK(samples[i].participant[j] ==
            doctest::Approx(ds.samples[i].participant[j]).epsilon(1e-12));
    for (std::size_t j = 0; j < samples[i].soundscape.size(); ++j)
      CHECK(samples[i].soundscape[j] == ds.samples[i].soundscape[j]);
  }

  // Loading twice yields identical sequences.
  auto again = load_samples(m, lc);
  for (std::size_t i = 0; i < 20; ++i)
    CHECK(again[i].soundscape[0] == samples[i].soundscape[0]);
}

TEST_CASE("manifest validation itemizes bad rows") {
  ModelConfig cfg = ModelConfig::miniature();
  fs::path dir = temp_dir("cppap_manifest_test");
  auto ds = generate_synthetic_dataset(10, 5, cfg);
  write_synthetic_dataset(ds, dir.string());
  std::string path = (dir / "manifest.csv").string();

  auto rewrite = [&](auto mutate) {
    Manifest m = load_manifest(path);
    mutate(m);
    std::string p2 = (dir / "mutated.csv").string();
    save_manifest(m, p2);
    return p2;
  };

  SUBCASE("label out of range") {
    std::string p = rewrite([](Manifest& m) { m.rows[3].label = 1.5; });
    try {
      load_manifest(p);
      FAIL("expected ValidationError");
    } catch (const ValidationError& e) {
      CHECK(std::string(e.what()).find("row 5") != std::string::npos);
      CHECK(std::string(e.what()).find("label") != std::string::npos);
    }
  }
  SUBCASE("duplicate id") {
    std::string p = rewrite([](Manifest& m) { m.rows[2].id = m.rows[1].id; });
    CHECK_THROWS_AS(load_manifest(p), ValidationError);
  }
  SUBCASE("missing file") {
    std::string p = rewrite([](Manifest& m) { m.rows[0].soundscape_path = "nope.ten"; });
    try {
      load_manifest(p);
      FAIL("expected ValidationError");
    } catch (const ValidationError& e) {
      CHECK(std::string(e.what()).find("nope.ten") != std::string::npos);
    }
  }
  SUBCASE("bad fold") {
    std::string p = rewrite([](Manifest& m) { m.rows[4].fold = 7; });
    CHECK_THROWS_AS(load_manifest(p), ValidationError);
  }
  SUBCASE("bad header") {
    std::ofstream out(dir / "hdr.csv");
    out << "wrong,header\nrow\n";
    out.close();
    CHECK_THROWS_AS(load_manifest((dir / "hdr.csv").string()), ValidationError);
  }
}

TEST_CASE("kfold split partitions the manifest") {
  ModelConfig cfg = ModelConfig::miniature();
  fs::path dir = temp_dir("cppap_fold_test");
  auto ds = generate_synthetic_dataset(20, 17, cfg);  // folds cycle 0..4, 4 each
  write_synthetic_dataset(ds, dir.string());
  Manifest m = load_manifest((dir / "manifest.csv").string());

  auto [train, val] = kfold_split(m, 2);
  CHECK(train.size() == 16);
  CHECK(val.size() == 4);
  std::set<std::size_t> all(train.begin(), train.end());
  for (std::size_t i : val) CHECK(all.insert(i).second);  // disjoint
  CHECK(all.size() == 20);                                // exhaustive
  for (std::size_t i : val) CHECK(m.rows[i].fold == 2);

  auto [t2, v2] = kfold_split(m, 2);
  CHECK(t2 == train);
  CHECK(v2 == val);
  CHECK_THROWS_AS(kfold_split(m, 9), ConfigError);
}

TEST_CASE("gain stats from the training fold") {
  std::vector<Sample> train(4);
  train[0].gamma = -0.2;
  train[1].gamma = -0.4;
  train[2].gamma = 0.0;
  train[3].silent = true;
  train[3].gamma = 99.0;  // must be ignored
  auto stats = compute_gain_stats(train);
  REQUIRE(stats.has_value());
  CHECK(stats->nu == doctest::Approx(-0.2).epsilon(1e-12));
  CHECK(stats->zeta == doctest::Approx(std::sqrt(0.08 / 3.0)).epsilon(1e-12));

  std::vector<Sample> all_silent(2);
  all_silent[0].silent = all_silent[1].silent = true;
  CHECK_FALSE(compute_gain_stats(all_silent).has_value());
}
