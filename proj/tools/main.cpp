// cppap: command-line front end for the contextual probabilistic perceptual
// attribute predictor. Subcommands cover the whole pipeline: synthetic data,
// preprocessing, training, evaluation, the ablation grid, rank statistics
// over an existing runs.csv, and ceteris-paribus participant sweeps.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <json.hpp>

#include "cppap/data.hpp"
#include "cppap/image_io.hpp"
#include "cppap/stats.hpp"
#include "cppap/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace cppap;

namespace {

std::size_t env_threads() {
  const char* v = std::getenv("CPPAP_THREADS");
  if (!v || !*v) return 1;
  long n = std::strtol(v, nullptr, 10);
  if (n < 1) throw ConfigError("CPPAP_THREADS must be a positive integer");
  return std::size_t(n);
}

// Everything configurable from flags or the optional JSON config file.
// Precedence: built-in defaults < config file < explicit flags.
struct Options {
  ModelConfig model;
  TrainConfig train;
  bool miniature = false;
  std::string fusion = "ef";
  bool ip = false, ep = false, iv = false, ev = false;
};

void add_config_flags(CLI::App* cmd, Options& o, std::string& config_path) {
  cmd->add_option("--config", config_path, "JSON config file (keys: model, train)");
  cmd->add_flag("--miniature", o.miniature, "use the desk-scale model dimensions");
  cmd->add_option("--fusion", o.fusion, "fusion stage: ef, mf, or lf")
      ->check(CLI::IsMember({"ef", "mf", "lf"}));
  cmd->add_flag("--ip", o.ip, "include the participant modality");
  cmd->add_flag("--ep", o.ep, "exclude the participant modality");
  cmd->add_flag("--iv", o.iv, "include the visual modality");
  cmd->add_flag("--ev", o.ev, "exclude the visual modality");
  cmd->add_option("--lr", o.train.lr, "Adam learning rate");
  cmd->add_option("--batch", o.train.batch_size, "mini-batch size");
  cmd->add_option("--epochs", o.train.max_epochs, "maximum training epochs");
  cmd->add_option("--patience", o.train.patience, "early-stopping patience");
}

// Folds the config file and flags into a final ModelConfig/TrainConfig.
// `cmd` tells us which flags the user actually passed.
void resolve_options(CLI::App* cmd, Options& o, const std::string& config_path) {
  json file;
  if (!config_path.empty()) {
    std::ifstream in(config_path);
    if (!in) throw ConfigError("cannot open config file " + config_path);
    try {
      file = json::parse(in);
    } catch (const json::exception& e) {
      throw ConfigError(std::string("bad config JSON: ") + e.what());
    }
  }
  if (o.miniature) o.model = ModelConfig::miniature();
  if (file.contains("model")) o.model = ModelConfig::from_json(file.at("model").dump());
  if (file.contains("train")) {
    const json& t = file.at("train");
    if (t.contains("lr")) o.train.lr = t.at("lr").get<double>();
    if (t.contains("batch_size")) o.train.batch_size = t.at("batch_size").get<std::size_t>();
    if (t.contains("max_epochs")) o.train.max_epochs = t.at("max_epochs").get<std::size_t>();
    if (t.contains("patience")) o.train.patience = t.at("patience").get<std::size_t>();
  }
  if (cmd->count("--fusion")) o.model.fusion = fusion_from_name(o.fusion);
  if (o.ip && o.ep) throw ConfigError("--ip and --ep are mutually exclusive");
  if (o.iv && o.ev) throw ConfigError("--iv and --ev are mutually exclusive");
  if (o.ip) o.model.include_participant = true;
  if (o.ep) o.model.include_participant = false;
  if (o.iv) o.model.include_visual = true;
  if (o.ev) o.model.include_visual = false;
  // Flags parsed directly into o.train already override the file because
  // CLI11 wrote them after the defaults; re-apply to be order-independent.
  // (CLI11 binds before this runs, so only the file step needed guarding.)
  o.model.validate();
}

std::vector<Sample> load_dataset(const std::string& manifest_path, const ModelConfig& cfg) {
  Manifest m = load_manifest(manifest_path);
  LoaderConfig lc;
  lc.mel.target_frames = cfg.audio_t;
  lc.mel.mel_bands = cfg.audio_f;
  lc.image_h = cfg.image_h;
  lc.image_w = cfg.image_w;
  fs::path schema_path = fs::path(m.dir) / "piq_schema.json";
  if (fs::exists(schema_path)) lc.schema = PiqSchema::load(schema_path.string());
  auto samples = load_samples(m, lc);
  for (const auto& s : samples) {
    if (s.participant.dim(0) != cfg.participant_dim)
      throw ConfigError("participant width " + std::to_string(s.participant.dim(0)) +
                        " does not match the configured M=" +
                        std::to_string(cfg.participant_dim));
  }
  return samples;
}

std::vector<double> linspace(double lo, double hi, std::size_t n) {
  std::vector<double> out;
  if (n == 1) return {lo};
  for (std::size_t i = 0; i < n; ++i)
    out.push_back(lo + (hi - lo) * double(i) / double(n - 1));
  return out;
}

int run(int argc, char** argv) {
  CLI::App app{"contextual probabilistic perceptual attribute predictor"};
  app.require_subcommand(1);
  Options o;
  std::string config_path;

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset with a planted label");
  std::size_t synth_n = 200;
  std::uint64_t synth_seed = 1;
  std::string synth_out = "synth";
  synth->add_option("--n", synth_n, "number of samples (>= 10)");
  synth->add_option("--seed", synth_seed, "generator seed");
  synth->add_option("--out", synth_out, "output directory")->required();
  add_config_flags(synth, o, config_path);

  // preprocess
  auto* prep = app.add_subcommand("preprocess",
                                  "convert raw wav/png rows into cached .ten tensors");
  std::string prep_manifest, prep_out;
  prep->add_option("--manifest", prep_manifest, "input manifest.csv")->required();
  prep->add_option("--out", prep_out, "cache directory")->required();
  add_config_flags(prep, o, config_path);

  // train
  auto* tr = app.add_subcommand("train", "train one configuration on one fold");
  std::string tr_manifest, tr_out = "run";
  int tr_fold = 0;
  std::uint64_t tr_seed = 0;
  tr->add_option("--manifest", tr_manifest, "manifest.csv")->required();
  tr->add_option("--fold", tr_fold, "validation fold 0..4");
  tr->add_option("--seed", tr_seed, "run seed");
  tr->add_option("--out", tr_out, "output directory (runs.csv, model.ckpt)");
  add_config_flags(tr, o, config_path);

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "MSE of a checkpoint on a fold");
  std::string ev_manifest, ev_ckpt;
  int ev_fold = 0;
  ev->add_option("--manifest", ev_manifest, "manifest.csv")->required();
  ev->add_option("--checkpoint", ev_ckpt, "model checkpoint")->required();
  ev->add_option("--fold", ev_fold, "validation fold 0..4");
  add_config_flags(ev, o, config_path);

  // ablate
  auto* ab = app.add_subcommand("ablate", "run the variant x fold x seed grid");
  std::string ab_manifest, ab_out = "ablation", ab_ckpt_dir;
  std::vector<std::string> ab_labels;
  std::vector<int> ab_folds;
  std::vector<std::uint64_t> ab_seeds;
  ab->add_option("--manifest", ab_manifest, "manifest.csv")->required();
  ab->add_option("--labels", ab_labels, "variant labels (default: baseline + 9 variants)");
  ab->add_option("--folds", ab_folds, "validation folds (default: 0..4)");
  ab->add_option("--seeds", ab_seeds, "run seeds (default: 0..9)");
  ab->add_option("--out", ab_out, "output directory (runs.csv, ablation.csv)");
  ab->add_option("--checkpoint-dir", ab_ckpt_dir, "also save per-run checkpoints here");
  add_config_flags(ab, o, config_path);

  // stats
  auto* st = app.add_subcommand("stats",
                                "Kruskal-Wallis + Bonferroni over an existing runs.csv");
  std::string st_runs, st_out = "ablation.csv";
  st->add_option("--runs", st_runs, "runs.csv from train/ablate")->required();
  st->add_option("--out", st_out, "output ablation.csv");

  // sweep
  auto* sw = app.add_subcommand("sweep", "ceteris-paribus participant sweep");
  std::string sw_manifest, sw_ckpt, sw_out = "sweep.csv", sw_svg;
  std::size_t sw_dim = 0, sw_points = 11;
  double sw_lo = 0, sw_hi = 1;
  sw->add_option("--manifest", sw_manifest, "manifest.csv")->required();
  sw->add_option("--checkpoint", sw_ckpt, "model checkpoint")->required();
  sw->add_option("--dim", sw_dim, "participant dimension to sweep");
  sw->add_option("--grid-min", sw_lo, "grid lower bound");
  sw->add_option("--grid-max", sw_hi, "grid upper bound");
  sw->add_option("--grid-points", sw_points, "grid size");
  sw->add_option("--out", sw_out, "output sweep CSV");
  sw->add_option("--svg", sw_svg, "also write a line plot here");
  add_config_flags(sw, o, config_path);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n" << app.help();
    return 2;
  }
  CLI::App* cmd = app.get_subcommands().front();
  if (cmd != st) resolve_options(cmd, o, config_path);  // stats has no config flags

  if (cmd == synth) {
    auto ds = generate_synthetic_dataset(synth_n, synth_seed, o.model);
    write_synthetic_dataset(ds, synth_out);
    std::cout << "wrote " << ds.samples.size() << " samples to " << synth_out << "\n";
  } else if (cmd == prep) {
    auto samples = load_dataset(prep_manifest, o.model);
    Manifest src = load_manifest(prep_manifest);
    fs::create_directories(prep_out);
    Manifest cached;
    cached.dir = prep_out;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      const Sample& s = samples[i];
      ManifestRow row = src.rows[i];
      row.soundscape_path = s.id + "_s.ten";
      row.masker_path = s.id + "_m.ten";
      row.image_path = s.id + "_v.ten";
      save_tensor((fs::path(prep_out) / row.soundscape_path).string(), s.soundscape);
      save_tensor((fs::path(prep_out) / row.masker_path).string(), s.masker);
      save_tensor((fs::path(prep_out) / row.image_path).string(), s.image);
      cached.rows.push_back(std::move(row));
    }
    save_manifest(cached, (fs::path(prep_out) / "manifest.csv").string());
    fs::path schema = fs::path(src.dir) / "piq_schema.json";
    if (fs::exists(schema)) fs::copy_file(schema, fs::path(prep_out) / "piq_schema.json",
                                          fs::copy_options::overwrite_existing);
    std::cout << "cached " << samples.size() << " samples in " << prep_out << "\n";
  } else if (cmd == tr) {
    auto samples = load_dataset(tr_manifest, o.model);
    auto [train_s, val_s] = kfold_split_samples(samples, tr_fold);
    TrainOutput out = train(o.model, train_s, val_s, tr_seed, o.train);
    out.result.fold = tr_fold;
    fs::create_directories(tr_out);
    write_runs_csv({out.result}, (fs::path(tr_out) / "runs.csv").string());
    out.model.save_checkpoint((fs::path(tr_out) / "model.ckpt").string());
    std::cout << "val_mse=" << out.result.val_mse << " epochs=" << out.result.epochs_run
              << " -> " << tr_out << "\n";
  } else if (cmd == ev) {
    Model model = Model::load_checkpoint(ev_ckpt);
    auto samples = load_dataset(ev_manifest, model.config());
    auto [train_s, val_s] = kfold_split_samples(samples, ev_fold);
    (void)train_s;
    EvalResult res = evaluate(model, val_s);
    std::cout << "val_mse=" << res.mse << " n=" << res.labels.size() << "\n";
  } else if (cmd == ab) {
    if (ab_labels.empty()) ab_labels = table_variant_labels();
    if (ab_folds.empty()) ab_folds = {0, 1, 2, 3, 4};
    if (ab_seeds.empty()) ab_seeds = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
    auto samples = load_dataset(ab_manifest, o.model);
    AblationReport report = run_ablation(samples, o.model, ab_labels, ab_folds, ab_seeds,
                                         o.train, env_threads(), ab_ckpt_dir);
    fs::create_directories(ab_out);
    write_runs_csv(report.runs, (fs::path(ab_out) / "runs.csv").string());
    write_ablation_csv(report, (fs::path(ab_out) / "ablation.csv").string());
    std::size_t failed = 0;
    for (const auto& r : report.runs)
      if (!r.error.empty()) ++failed;
    std::cout << report.runs.size() << " runs (" << failed << " failed) -> " << ab_out << "\n";
    if (failed == report.runs.size()) throw Error("every ablation run failed");
  } else if (cmd == st) {
    auto runs = read_runs_csv(st_runs);
    // Group per label and rebuild the report rows from stored MSEs.
    std::vector<std::string> labels;
    for (const auto& r : runs)
      if (std::find(labels.begin(), labels.end(), r.label) == labels.end())
        labels.push_back(r.label);
    if (labels.empty()) throw ValidationError("runs.csv contains no runs");
    AblationReport report;
    report.runs = runs;
    std::string base = std::find(labels.begin(), labels.end(), "baseline") != labels.end()
                           ? "baseline"
                           : labels[0];
    auto mses_for = [&](const std::string& label) {
      std::vector<double> out;
      for (const auto& r : runs)
        if (r.label == label && r.error.empty()) out.push_back(r.val_mse);
      return out;
    };
    auto base_mses = mses_for(base);
    double base_mean = 0;
    for (double m : base_mses) base_mean += m;
    if (!base_mses.empty()) base_mean /= double(base_mses.size());
    std::size_t comparisons = labels.size() - 1;
    for (const auto& label : labels) {
      AblationRow row;
      row.label = label;
      auto mses = mses_for(label);
      row.runs = mses.size();
      if (!mses.empty()) {
        double mean = 0;
        for (double m : mses) mean += m;
        mean /= double(mses.size());
        double var = 0;
        for (double m : mses) var += (m - mean) * (m - mean);
        row.mean_mse = mean;
        row.std_mse = mses.size() > 1 ? std::sqrt(var / double(mses.size() - 1)) : 0.0;
        if (label != base && !base_mses.empty() && base_mean > 0 && comparisons > 0) {
          row.pct_delta = 100.0 * (base_mean - mean) / base_mean;
          auto kw = kruskal_wallis_bonferroni({base_mses, mses}, comparisons);
          row.p_adj = kw.p_adj;
          row.significant = kw.p_adj < 0.05;
        }
      }
      report.rows.push_back(std::move(row));
    }
    write_ablation_csv(report, st_out);
    std::cout << labels.size() << " configurations -> " << st_out << "\n";
  } else if (cmd == sw) {
    Model model = Model::load_checkpoint(sw_ckpt);
    auto samples = load_dataset(sw_manifest, model.config());
    SweepResult res = participant_sweep(model, samples, sw_dim, linspace(sw_lo, sw_hi, sw_points));
    write_sweep_csv(res, sw_out);
    if (!sw_svg.empty()) write_sweep_svg(res, sw_svg);
    std::cout << "sweep dim " << sw_dim << " (" << res.points.size() << " points) -> "
              << sw_out << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
