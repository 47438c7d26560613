#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "cppap/layers.hpp"

namespace cppap {

enum class Fusion { EF, MF, LF };

std::string fusion_name(Fusion f);
Fusion fusion_from_name(const std::string& s);

// Structural hyperparameters. Defaults reproduce the full-size predictor;
// miniature() shrinks every dimension so tests run in seconds.
struct ModelConfig {
  Fusion fusion = Fusion::EF;
  bool include_participant = false;  // IP vs EP
  bool include_visual = false;       // IV vs EV

  std::size_t audio_t = 644;
  std::size_t audio_f = 64;
  std::size_t audio_channels = 2;
  std::size_t masker_channels = 1;
  std::size_t image_h = 240;
  std::size_t image_w = 135;
  std::size_t image_channels = 3;
  std::size_t participant_dim = 5;
  std::size_t embed_dim = 128;

  std::vector<std::size_t> audio_filters{16, 32, 48, 64, 64};
  std::vector<std::pair<std::size_t, std::size_t>> audio_pools{
      {2, 2}, {2, 2}, {2, 2}, {2, 2}, {2, 2}};
  std::vector<std::size_t> visual_filters{16, 32, 48, 64, 64};
  std::vector<std::size_t> visual_pools{2, 2, 2, 3, 5};
  double dropout_rate = 0.1;

  std::size_t adapter_hidden() const;  // 2^(floor(log2 M)+1)
  std::size_t audio_n() const;         // compressed time frames after pooling
  std::size_t stack_channels() const { return fusion == Fusion::EF ? 5 : 3; }
  std::size_t output_block_input() const;

  // Throws DimensionError/ConfigError if the pool schedule floors any axis
  // to zero or the flattened extractor widths disagree with embed_dim.
  void validate() const;

  static ModelConfig miniature();

  std::string to_json() const;
  static ModelConfig from_json(const std::string& text);

  bool same_structure(const ModelConfig& other) const;
};

// Ablation variant labels: "baseline" or "<ip|ep>-<iv|ev>-<ef|mf|lf>".
std::string config_label(const ModelConfig& cfg);
void apply_variant(ModelConfig& cfg, const std::string& label);
std::vector<std::string> table_variant_labels();  // baseline + 9 variants

struct PredictedDistribution {
  double mu = 0;
  double log_sigma = 0;
};

class Model {
 public:
  Model(ModelConfig cfg, std::uint64_t init_seed);

  const ModelConfig& config() const { return cfg_; }
  std::vector<Parameter*> parameters();
  Parameter& param(const std::string& name);
  void zero_grads();

  struct BatchInput {
    Tensor soundscape;   // [B,T,F,Cs]
    Tensor masker;       // [B,T,F,1]
    Tensor gamma;        // [B]
    Tensor participant;  // [B,M]
    Tensor image;        // [B,H,W,Cv]
  };

  struct ForwardResult {
    Var output;     // [B,2] = (mu, log sigma) columns
    Var mu;         // [B]
    Var log_sigma;  // [B]
    // Pre-adapter trunk outputs; identical to mu/log_sigma unless LF.
    Var trunk_mu;
    Var trunk_log_sigma;
    Var keys, queries, values, context;  // k,q,v,z intermediates
    Var participant_embed, visual_embed;  // h,r (zero tensors under EP/EV)
    // Parameter leaves used in this graph; feeds accumulate_grads().
    std::vector<std::pair<Parameter*, Var>> bindings;
  };

  ForwardResult forward_batch(const BatchInput& in, bool train, std::mt19937_64& rng);

  // Copies graph-side parameter adjoints into Parameter::grad after backward().
  static void accumulate_grads(const ForwardResult& result);

  // Single-sample eval-mode convenience.
  PredictedDistribution predict(const Tensor& soundscape, const Tensor& masker,
                                double gamma, const Tensor& participant,
                                const Tensor& image);

  // Full mutable state (parameters + batch-norm running stats) as plain
  // tensors, in a stable order; used for best-epoch retention.
  std::vector<Tensor> state_snapshot() const;
  void restore_state(const std::vector<Tensor>& snapshot);

  void save_checkpoint(const std::string& path) const;
  static Model load_checkpoint(const std::string& path);
  // Errors when the stored config's structure differs from `expected`.
  static Model load_checkpoint(const std::string& path, const ModelConfig& expected);

 private:
  struct Binder;

  void build_parameters(std::uint64_t seed);
  Var conv_stack(Binder& bind, const std::string& prefix, const Var& x,
                 const std::vector<std::size_t>& filters,
                 const std::vector<std::pair<std::size_t, std::size_t>>& pools,
                 bool train, std::mt19937_64& rng);

  ModelConfig cfg_;
  std::vector<std::unique_ptr<Parameter>> params_;
  std::map<std::string, Parameter*> by_name_;
  std::map<std::string, ag::BatchNormState> bn_states_;
};

}  // namespace cppap
