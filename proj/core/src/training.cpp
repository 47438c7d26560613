#include "cppap/training.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

#include "cppap/adam.hpp"

namespace cppap {

namespace {

Model::BatchInput make_batch(const ModelConfig& cfg, const std::vector<Sample>& samples,
                             const std::vector<std::size_t>& idx,
                             const std::vector<double>& gammas) {
  std::size_t b = idx.size();
  Model::BatchInput in;
  in.soundscape = Tensor({b, cfg.audio_t, cfg.audio_f, cfg.audio_channels});
  in.masker = Tensor({b, cfg.audio_t, cfg.audio_f, cfg.masker_channels});
  in.gamma = Tensor({b});
  in.participant = Tensor({b, cfg.participant_dim});
  in.image = Tensor({b, cfg.image_h, cfg.image_w, cfg.image_channels});
  auto copy_into = [](Tensor& dst, std::size_t slot, const Tensor& src) {
    std::size_t n = src.size();
    std::copy(src.data(), src.data() + n, dst.data() + slot * n);
  };
  for (std::size_t i = 0; i < b; ++i) {
    const Sample& s = samples[idx[i]];
    copy_into(in.soundscape, i, s.soundscape);
    copy_into(in.masker, i, s.masker);
    in.gamma[i] = gammas[idx[i]];
    copy_into(in.participant, i, s.participant);
    copy_into(in.image, i, s.image);
  }
  return in;
}

Tensor batch_labels(const std::vector<Sample>& samples, const std::vector<std::size_t>& idx) {
  Tensor y({idx.size()});
  for (std::size_t i = 0; i < idx.size(); ++i) y[i] = samples[idx[i]].label;
  return y;
}

std::vector<std::vector<std::size_t>> chunk_batches(std::vector<std::size_t> order,
                                                    std::size_t batch_size) {
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t i = 0; i < order.size(); i += batch_size) {
    std::size_t end = std::min(order.size(), i + batch_size);
    batches.emplace_back(order.begin() + std::ptrdiff_t(i), order.begin() + std::ptrdiff_t(end));
  }
  // A trailing singleton cannot be batch-normalized; fold it into the
  // previous batch.
  if (batches.size() > 1 && batches.back().size() == 1) {
    batches[batches.size() - 2].push_back(batches.back()[0]);
    batches.pop_back();
  }
  return batches;
}

double eval_loss(Model& model, const std::vector<Sample>& samples,
                 const std::vector<double>& gammas) {
  std::mt19937_64 unused(0);
  const std::size_t bs = 64;
  double acc = 0;
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < samples.size(); i += bs) {
    idx.clear();
    for (std::size_t j = i; j < std::min(samples.size(), i + bs); ++j) idx.push_back(j);
    auto in = make_batch(model.config(), samples, idx, gammas);
    auto res = model.forward_batch(in, /*train=*/false, unused);
    Var j = ag::gaussian_nll(res.mu, res.log_sigma, batch_labels(samples, idx));
    acc += j->value.item() * double(idx.size());
  }
  return acc / double(samples.size());
}

}  // namespace

TrainOutput train(const ModelConfig& cfg, const std::vector<Sample>& train_samples,
                  const std::vector<Sample>& val_samples, std::uint64_t seed,
                  const TrainConfig& tc) {
  if (train_samples.empty() || val_samples.empty())
    throw ConfigError("train: empty split");
  if (train_samples.size() < 2)
    throw ConfigError("train: need >= 2 training samples for batch normalization");
  cfg.validate();

  Model model(cfg, seed);
  std::mt19937_64 rng(seed);
  auto stats = compute_gain_stats(train_samples);

  std::map<std::string, AdamState> adam;
  for (Parameter* p : model.parameters())
    adam.emplace(p->name, AdamState::init(p->value.shape(), tc.lr));

  // Validation gammas are the stored manifest values; only the training-side
  // silent maskers get per-epoch redraws (augmentation).
  std::vector<double> val_gammas;
  for (const auto& s : val_samples) val_gammas.push_back(s.gamma);

  RunResult result;
  result.label = config_label(cfg);
  result.seed = seed;

  double best_val_j = std::numeric_limits<double>::infinity();
  std::vector<Tensor> best_state = model.state_snapshot();
  std::size_t epochs_since_best = 0;

  std::vector<std::size_t> order(train_samples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (std::size_t epoch = 1; epoch <= tc.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<double> train_gammas(train_samples.size());
    for (std::size_t i = 0; i < train_samples.size(); ++i) {
      const Sample& s = train_samples[i];
      train_gammas[i] = effective_gain(s.silent, s.gamma, stats, rng);
    }

    double epoch_j = 0;
    for (const auto& batch_idx : chunk_batches(order, tc.batch_size)) {
      auto in = make_batch(cfg, train_samples, batch_idx, train_gammas);
      Model::ForwardResult res;
      Var j;
      try {
        res = model.forward_batch(in, /*train=*/true, rng);
        j = ag::gaussian_nll(res.mu, res.log_sigma, batch_labels(train_samples, batch_idx));
        ag::backward(j);
      } catch (const NumericError& e) {
        throw NumericError("training diverged at epoch " + std::to_string(epoch) + ": " +
                           e.what());
      }
      model.zero_grads();
      Model::accumulate_grads(res);
      for (Parameter* p : model.parameters()) adam_step(*p, adam.at(p->name));
      epoch_j += j->value.item() * double(batch_idx.size());
    }
    epoch_j /= double(train_samples.size());

    double val_j = eval_loss(model, val_samples, val_gammas);
    result.curve.push_back({epoch, epoch_j, val_j});
    result.epochs_run = epoch;

    if (val_j < best_val_j) {
      best_val_j = val_j;
      best_state = model.state_snapshot();
      epochs_since_best = 0;
    } else if (++epochs_since_best >= tc.patience) {
      break;
    }
  }

  model.restore_state(best_state);
  EvalResult ev = evaluate(model, val_samples);
  result.val_mse = ev.mse;
  return TrainOutput{std::move(result), std::move(model)};
}

EvalResult evaluate(Model& model, const std::vector<Sample>& samples) {
  if (samples.empty()) throw ConfigError("evaluate: no samples");
  std::mt19937_64 unused(0);
  const std::size_t bs = 64;
  EvalResult out;
  std::vector<double> gammas;
  for (const auto& s : samples) gammas.push_back(s.gamma);
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < samples.size(); i += bs) {
    idx.clear();
    for (std::size_t j = i; j < std::min(samples.size(), i + bs); ++j) idx.push_back(j);
    auto in = make_batch(model.config(), samples, idx, gammas);
    auto res = model.forward_batch(in, /*train=*/false, unused);
    for (std::size_t k = 0; k < idx.size(); ++k) {
      out.labels.push_back(samples[idx[k]].label);
      out.predictions.push_back({res.mu->value[k], res.log_sigma->value[k]});
    }
  }
  Batch b{out.predictions, out.labels};
  out.mse = mse(b);
  return out;
}

AblationReport run_ablation(const std::vector<Sample>& samples,
                            const ModelConfig& base_cfg,
                            const std::vector<std::string>& labels,
                            const std::vector<int>& folds,
                            const std::vector<std::uint64_t>& seeds,
                            const TrainConfig& tc, std::size_t threads,
                            const std::string& checkpoint_dir) {
  if (labels.empty() || folds.empty() || seeds.empty())
    throw ConfigError("run_ablation: empty grid");

  struct Task {
    std::string label;
    int fold;
    std::uint64_t seed;
  };
  std::vector<Task> tasks;
  for (const auto& label : labels)
    for (int fold : folds)
      for (std::uint64_t seed : seeds) tasks.push_back({label, fold, seed});

  std::vector<RunResult> results(tasks.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (;;) {
      std::size_t t = next.fetch_add(1);
      if (t >= tasks.size()) return;
      const Task& task = tasks[t];
      RunResult& r = results[t];
      r.label = task.label;
      r.fold = task.fold;
      r.seed = task.seed;
      try {
        ModelConfig cfg = base_cfg;
        apply_variant(cfg, task.label);
        auto [tr, va] = kfold_split_samples(samples, task.fold);
        TrainOutput out = train(cfg, tr, va, task.seed, tc);
        r = out.result;
        r.label = task.label;
        r.fold = task.fold;
        if (!checkpoint_dir.empty()) {
          std::filesystem::create_directories(checkpoint_dir);
          out.model.save_checkpoint(
              (std::filesystem::path(checkpoint_dir) /
               (task.label + "_f" + std::to_string(task.fold) + "_s" +
                std::to_string(task.seed) + ".ckpt"))
                  .string());
        }
      } catch (const std::exception& e) {
        r.error = e.what();
      }
    }
  };
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t i = 0; i < threads; ++i) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  AblationReport report;
  report.runs = std::move(results);

  auto mses_for = [&](const std::string& label) {
    std::vector<double> out;
    for (const auto& r : report.runs)
      if (r.label == label && r.error.empty()) out.push_back(r.val_mse);
    return out;
  };
  std::string base_label =
      std::find(labels.begin(), labels.end(), "baseline") != labels.end() ? "baseline"
                                                                          : labels[0];
  std::vector<double> base_mses = mses_for(base_label);
  double base_mean = 0;
  for (double m : base_mses) base_mean += m;
  if (!base_mses.empty()) base_mean /= double(base_mses.size());

  std::size_t num_comparisons = labels.size() - 1;
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
      if (label != base_label && !base_mses.empty() && base_mean > 0) {
        row.pct_delta = 100.0 * (base_mean - mean) / base_mean;
        if (num_comparisons > 0) {
          auto kw = kruskal_wallis_bonferroni({base_mses, mses}, num_comparisons);
          row.p_adj = kw.p_adj;
          row.significant = kw.p_adj < 0.05;
        }
      }
    }
    report.rows.push_back(std::move(row));
  }
  return report;
}

void write_runs_csv(const std::vector<RunResult>& runs, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path);
  out << "label,fold,seed,val_mse,epochs_run,error\n";
  out.precision(17);
  for (const auto& r : runs) {
    out << r.label << "," << r.fold << "," << r.seed << "," << r.val_mse << ","
        << r.epochs_run << "," << r.error << "\n";
  }
}

std::vector<RunResult> read_runs_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line) || !line.starts_with("label,fold,seed,val_mse"))
    throw ValidationError("bad runs.csv header in " + path);
  std::vector<RunResult> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string f;
    RunResult r;
    std::getline(ss, r.label, ',');
    std::getline(ss, f, ',');
    r.fold = std::stoi(f);
    std::getline(ss, f, ',');
    r.seed = std::stoull(f);
    std::getline(ss, f, ',');
    r.val_mse = std::stod(f);
    std::getline(ss, f, ',');
    r.epochs_run = std::stoul(f);
    std::getline(ss, r.error, ',');
    out.push_back(std::move(r));
  }
  return out;
}

void write_ablation_csv(const AblationReport& report, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path);
  out << "label,runs,mean_mse,std_mse,pct_delta,p_adj,significant\n";
  out.precision(17);
  for (const auto& row : report.rows) {
    out << row.label << "," << row.runs << "," << row.mean_mse << "," << row.std_mse << ","
        << row.pct_delta << ",";
    if (row.p_adj) out << *row.p_adj;
    out << "," << (row.significant ? 1 : 0) << "\n";
  }
}

SweepResult participant_sweep(Model& model, const std::vector<Sample>& samples,
                              std::size_t dim, const std::vector<double>& grid) {
  const ModelConfig& cfg = model.config();
  if (!cfg.include_participant)
    throw ConfigError(
        "participant sweep rejected: this checkpoint excludes the participant "
        "modality, so its output is provably constant in p");
  if (dim >= cfg.participant_dim) throw ConfigError("sweep dim out of range");
  if (samples.empty() || grid.empty()) throw ConfigError("sweep: empty dataset or grid");

  std::vector<double> means(cfg.participant_dim, 0.0);
  for (const auto& s : samples)
    for (std::size_t i = 0; i < cfg.participant_dim; ++i) means[i] += s.participant[i];
  for (double& m : means) m /= double(samples.size());

  SweepResult out;
  out.dim = dim;
  out.training_mean = means[dim];
  for (double g : grid) {
    Tensor p({cfg.participant_dim});
    for (std::size_t i = 0; i < cfg.participant_dim; ++i) p[i] = means[i];
    p[dim] = g;
    double acc = 0;
    for (const auto& s : samples) {
      auto pred = model.predict(s.soundscape, s.masker, s.gamma, p, s.image);
      acc += pred.mu;
    }
    out.points.push_back({g, acc / double(samples.size())});
  }
  return out;
}

void write_sweep_csv(const SweepResult& sweep, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path);
  out << "grid_value,mean_prediction,training_mean\n";
  out.precision(17);
  for (const auto& p : sweep.points)
    out << p.grid_value << "," << p.mean_prediction << "," << sweep.training_mean << "\n";
}

void write_sweep_svg(const SweepResult& sweep, const std::string& path) {
  if (sweep.points.empty()) throw ConfigError("sweep has no points");
  double xmin = sweep.points.front().grid_value, xmax = sweep.points.back().grid_value;
  double ymin = sweep.points[0].mean_prediction, ymax = ymin;
  for (const auto& p : sweep.points) {
    ymin = std::min(ymin, p.mean_prediction);
    ymax = std::max(ymax, p.mean_prediction);
  }
  if (xmax == xmin) xmax = xmin + 1;
  if (ymax == ymin) ymax = ymin + 1;
  const double w = 640, h = 400, pad = 50;
  auto sx = [&](double x) { return pad + (x - xmin) / (xmax - xmin) * (w - 2 * pad); };
  auto sy = [&](double y) { return h - pad - (y - ymin) / (ymax - ymin) * (h - 2 * pad); };
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path);
  out << "<svg xmlns='http://www.w3.org/2000/svg' width='" << w << "' height='" << h << "'>\n";
  out << "<rect width='100%' height='100%' fill='white'/>\n";
  double mx = sx(std::clamp(sweep.training_mean, xmin, xmax));
  out << "<line x1='" << mx << "' y1='" << pad << "' x2='" << mx << "' y2='" << h - pad
      << "' stroke='#bbbbbb' stroke-dasharray='4'/>\n";
  out << "<polyline fill='none' stroke='#1f77b4' stroke-width='2' points='";
  for (const auto& p : sweep.points) out << sx(p.grid_value) << "," << sy(p.mean_prediction) << " ";
  out << "'/>\n";
  out << "<text x='" << w / 2 << "' y='" << h - 12 << "' text-anchor='middle' font-size='13'>"
      << "participant dimension " << sweep.dim << "</text>\n";
  out << "<text x='14' y='" << h / 2 << "' font-size='13' transform='rotate(-90 14 " << h / 2
      << ")' text-anchor='middle'>mean prediction</text>\n";
  out << "</svg>\n";
}

}  // namespace cppap
