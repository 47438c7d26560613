#include "cppap/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "json.hpp"

namespace cppap {

using nlohmann::json;

std::string fusion_name(Fusion f) {
  switch (f) {
    case Fusion::EF: return "ef";
    case Fusion::MF: return "mf";
    case Fusion::LF: return "lf";
  }
  return "ef";
}

Fusion fusion_from_name(const std::string& s) {
  if (s == "ef" || s == "EF") return Fusion::EF;
  if (s == "mf" || s == "MF") return Fusion::MF;
  if (s == "lf" || s == "LF") return Fusion::LF;
  throw ConfigError("unknown fusion mode '" + s + "'");
}

std::size_t ModelConfig::adapter_hidden() const {
  std::size_t p = 1;
  while ((std::size_t(1) << (p + 1)) <= participant_dim) ++p;
  return std::size_t(1) << (p + 1);
}

std::size_t ModelConfig::audio_n() const {
  std::size_t t = audio_t;
  for (const auto& [ph, pw] : audio_pools) {
    (void)pw;
    t /= ph;
  }
  return t;
}

std::size_t ModelConfig::output_block_input() const {
  return fusion == Fusion::MF ? 3 * embed_dim : embed_dim;
}

void ModelConfig::validate() const {
  if (audio_filters.size() != audio_pools.size() || audio_filters.empty())
    throw ConfigError("audio filter/pool schedules must be non-empty and equal length");
  if (visual_filters.size() != visual_pools.size() || visual_filters.empty())
    throw ConfigError("visual filter/pool schedules must be non-empty and equal length");
  std::size_t t = audio_t, f = audio_f;
  for (const auto& [ph, pw] : audio_pools) {
    t /= ph;
    f /= pw;
    if (t < 1 || f < 1)
      throw DimensionError("audio shape floors to zero under the pool schedule");
  }
  if (f * audio_filters.back() != embed_dim)
    throw ConfigError("audio extractor output width " + std::to_string(f * audio_filters.back()) +
                      " != embed_dim " + std::to_string(embed_dim));
  std::size_t h = image_h, w = image_w;
  for (std::size_t p : visual_pools) {
    h /= p;
    w /= p;
    if (h < 1 || w < 1)
      throw DimensionError("image shape floors to zero under the pool schedule");
  }
  if (h * w * visual_filters.back() != embed_dim)
    throw ConfigError("visual extractor output width " +
                      std::to_string(h * w * visual_filters.back()) + " != embed_dim " +
                      std::to_string(embed_dim));
  if (participant_dim < 1) throw ConfigError("participant_dim must be >= 1");
  if (dropout_rate < 0 || dropout_rate >= 1) throw ConfigError("dropout_rate must be in [0,1)");
}

ModelConfig ModelConfig::miniature() {
  ModelConfig c;
  c.audio_t = 64;
  c.audio_f = 8;
  c.image_h = 48;
  c.image_w = 27;
  c.embed_dim = 8;
  c.audio_filters = {4, 4, 4, 4, 8};
  c.audio_pools = {{2, 2}, {2, 2}, {2, 2}, {2, 1}, {2, 1}};
  c.visual_filters = {4, 4, 4, 4, 4};
  c.visual_pools = {2, 2, 2, 3, 1};
  return c;
}

std::string ModelConfig::to_json() const {
  json pools = json::array();
  for (const auto& [ph, pw] : audio_pools) pools.push_back({ph, pw});
  json j{{"fusion", fusion_name(fusion)},
         {"include_participant", include_participant},
         {"include_visual", include_visual},
         {"audio_t", audio_t},
         {"audio_f", audio_f},
         {"audio_channels", audio_channels},
         {"masker_channels", masker_channels},
         {"image_h", image_h},
         {"image_w", image_w},
         {"image_channels", image_channels},
         {"participant_dim", participant_dim},
         {"embed_dim", embed_dim},
         {"audio_filters", audio_filters},
         {"audio_pools", pools},
         {"visual_filters", visual_filters},
         {"visual_pools", visual_pools},
         {"dropout_rate", dropout_rate}};
  return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw FormatError(std::string("bad model config JSON: ") + e.what());
  }
  ModelConfig c;
  try {
    c.fusion = fusion_from_name(j.at("fusion").get<std::string>());
    c.include_participant = j.at("include_participant").get<bool>();
    c.include_visual = j.at("include_visual").get<bool>();
    c.audio_t = j.at("audio_t").get<std::size_t>();
    c.audio_f = j.at("audio_f").get<std::size_t>();
    c.audio_channels = j.at("audio_channels").get<std::size_t>();
    c.masker_channels = j.at("masker_channels").get<std::size_t>();
    c.image_h = j.at("image_h").get<std::size_t>();
    c.image_w = j.at("image_w").get<std::size_t>();
    c.image_channels = j.at("image_channels").get<std::size_t>();
    c.participant_dim = j.at("participant_dim").get<std::size_t>();
    c.embed_dim = j.at("embed_dim").get<std::size_t>();
    c.audio_filters = j.at("audio_filters").get<std::vector<std::size_t>>();
    c.audio_pools.clear();
    for (const auto& p : j.at("audio_pools"))
      c.audio_pools.emplace_back(p.at(0).get<std::size_t>(), p.at(1).get<std::size_t>());
    c.visual_filters = j.at("visual_filters").get<std::vector<std::size_t>>();
    c.visual_pools = j.at("visual_pools").get<std::vector<std::size_t>>();
    c.dropout_rate = j.at("dropout_rate").get<double>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("incomplete model config JSON: ") + e.what());
  }
  return c;
}

bool ModelConfig::same_structure(const ModelConfig& other) const {
  return to_json() == other.to_json();
}

std::string config_label(const ModelConfig& cfg) {
  if (!cfg.include_participant && !cfg.include_visual) return "baseline";
  std::string s;
  s += cfg.include_participant ? "ip" : "ep";
  s += cfg.include_visual ? "-iv-" : "-ev-";
  s += fusion_name(cfg.fusion);
  return s;
}

void apply_variant(ModelConfig& cfg, const std::string& label) {
  if (label == "baseline") {
    // The audio-only predictor: both context embeddings zeroed. Realized on
    // the EF architecture, where the zero planes are exact no-ops.
    cfg.fusion = Fusion::EF;
    cfg.include_participant = false;
    cfg.include_visual = false;
    return;
  }
  if (label.size() != 8 || label[2] != '-' || label[5] != '-')
    throw ConfigError("bad variant label '" + label + "' (want e.g. ip-ev-lf or baseline)");
  std::string p = label.substr(0, 2), v = label.substr(3, 2), f = label.substr(6, 2);
  if (p == "ip") cfg.include_participant = true;
  else if (p == "ep") cfg.include_participant = false;
  else throw ConfigError("bad participant switch in '" + label + "'");
  if (v == "iv") cfg.include_visual = true;
  else if (v == "ev") cfg.include_visual = false;
  else throw ConfigError("bad visual switch in '" + label + "'");
  cfg.fusion = fusion_from_name(f);
  if (!cfg.include_participant && !cfg.include_visual)
    throw ConfigError("ep-ev variant is the baseline; use label 'baseline'");
}

std::vector<std::string> table_variant_labels() {
  std::vector<std::string> out{"baseline"};
  for (const char* pv : {"ip-ev", "ep-iv", "ip-iv"})
    for (const char* f : {"ef", "mf", "lf"}) out.push_back(std::string(pv) + "-" + f);
  return out;
}

// ---------------------------------------------------------------------------

struct Model::Binder {
  std::vector<std::pair<Parameter*, Var>> binds;
  Var operator()(Parameter& p) {
    Var v = ag::leaf(p.value);
    binds.emplace_back(&p, v);
    return v;
  }
};

Model::Model(ModelConfig cfg, std::uint64_t init_seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  build_parameters(init_seed);
}

namespace {
std::vector<std::size_t> bn_shape(std::size_t c) { return {c}; }
}  // namespace

void Model::build_parameters(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto add = [&](const std::string& name, Tensor value) {
    auto p = std::make_unique<Parameter>(name, std::move(value));
    by_name_[name] = p.get();
    params_.push_back(std::move(p));
  };
  auto add_conv_stack = [&](const std::string& prefix, std::size_t in_ch,
                            const std::vector<std::size_t>& filters) {
    std::size_t c = in_ch;
    for (std::size_t i = 0; i < filters.size(); ++i) {
      std::string b = prefix + ".block" + std::to_string(i);
      std::size_t co = filters[i];
      add(b + ".conv.kernel", Tensor::glorot({3, 3, c, co}, 9 * c, 9 * co, rng));
      add(b + ".conv.bias", Tensor::zeros({co}));
      add(b + ".bn.gamma", Tensor::full(bn_shape(co), 1.0));
      add(b + ".bn.beta", Tensor::zeros(bn_shape(co)));
      bn_states_[b + ".bn"] = ag::BatchNormState{Tensor::zeros(bn_shape(co)),
                                                 Tensor::full(bn_shape(co), 1.0)};
      c = co;
    }
  };
  auto add_dense = [&](const std::string& name, std::size_t din, std::size_t dout) {
    add(name + ".kernel", Tensor::glorot({din, dout}, din, dout, rng));
    add(name + ".bias", Tensor::zeros({dout}));
  };

  std::size_t d = cfg_.embed_dim;
  add_conv_stack("f_s", cfg_.audio_channels, cfg_.audio_filters);
  add_conv_stack("f_m", cfg_.masker_channels, cfg_.audio_filters);
  if (cfg_.include_visual) add_conv_stack("f_v", cfg_.image_channels, cfg_.visual_filters);
  if (cfg_.include_participant) add_dense("f_p.dense", cfg_.participant_dim, d);

  std::size_t s = cfg_.stack_channels();
  add("f_g.conv.kernel", Tensor::glorot({s}, s, 1, rng));
  add("f_g.conv.bias", Tensor::zeros({1}));
  add_dense("f_g.dense", d, d);

  add_dense("f_o.dense0", cfg_.output_block_input(), d);
  add_dense("f_o.dense1", d, d);
  add_dense("f_o.dense2", d, 2);

  if (cfg_.fusion == Fusion::LF) {
    std::size_t a = cfg_.adapter_hidden();
    add_dense("a_o.dense0", 2 + 2 * d, a);
    add_dense("a_o.dense1", a, a);
    add_dense("a_o.dense2", a, 2);
  }
}

std::vector<Parameter*> Model::parameters() {
  std::vector<Parameter*> out;
  out.reserve(params_.size());
  for (auto& p : params_) out.push_back(p.get());
  return out;
}

Parameter& Model::param(const std::string& name) {
  auto it = by_name_.find(name);
  if (it == by_name_.end()) throw ConfigError("no parameter named '" + name + "'");
  return *it->second;
}

void Model::zero_grads() {
  for (auto& p : params_)
    std::fill(p->grad.vec().begin(), p->grad.vec().end(), 0.0);
}

Var Model::conv_stack(Binder& bind, const std::string& prefix, const Var& x,
                      const std::vector<std::size_t>& filters,
                      const std::vector<std::pair<std::size_t, std::size_t>>& pools,
                      bool train, std::mt19937_64& rng) {
  Var y = x;
  for (std::size_t i = 0; i < filters.size(); ++i) {
    std::string b = prefix + ".block" + std::to_string(i);
    ConvBlockSpec spec;
    spec.filters = filters[i];
    spec.pool_h = pools[i].first;
    spec.pool_w = pools[i].second;
    spec.dropout_rate = cfg_.dropout_rate;
    y = layers::conv_block(y, bind(param(b + ".conv.kernel")), bind(param(b + ".conv.bias")),
                           bind(param(b + ".bn.gamma")), bind(param(b + ".bn.beta")),
                           bn_states_.at(b + ".bn"), spec, train, rng);
  }
  return y;
}

Model::ForwardResult Model::forward_batch(const BatchInput& in, bool train,
                                          std::mt19937_64& rng) {
  std::size_t bsz = in.soundscape.dim(0);
  auto expect = [&](const Tensor& t, std::vector<std::size_t> shape, const char* what) {
    if (t.shape() != shape)
      throw DimensionError(std::string(what) + " shape " + Tensor::shape_str(t.shape()) +
                           " != expected " + Tensor::shape_str(shape));
  };
  expect(in.soundscape, {bsz, cfg_.audio_t, cfg_.audio_f, cfg_.audio_channels}, "soundscape");
  expect(in.masker, {bsz, cfg_.audio_t, cfg_.audio_f, cfg_.masker_channels}, "masker");
  expect(in.gamma, {bsz}, "gamma");
  expect(in.participant, {bsz, cfg_.participant_dim}, "participant");
  expect(in.image, {bsz, cfg_.image_h, cfg_.image_w, cfg_.image_channels}, "image");

  Binder bind;
  std::size_t n = cfg_.audio_n(), d = cfg_.embed_dim;

  std::vector<std::pair<std::size_t, std::size_t>> vpools;
  for (std::size_t p : cfg_.visual_pools) vpools.emplace_back(p, p);

  Var k4 = conv_stack(bind, "f_s", ag::leaf(in.soundscape), cfg_.audio_filters,
                      cfg_.audio_pools, train, rng);
  Var k = ag::reshape(k4, {bsz, n, d});
  Var q4 = conv_stack(bind, "f_m", ag::leaf(in.masker), cfg_.audio_filters,
                      cfg_.audio_pools, train, rng);
  Var q = ag::reshape(q4, {bsz, n, d});

  Var h = cfg_.include_participant
              ? layers::dense(ag::leaf(in.participant), bind(param("f_p.dense.kernel")),
                              bind(param("f_p.dense.bias")), Activation::Swish)
              : ag::leaf(Tensor::zeros({bsz, d}));
  Var r;
  if (cfg_.include_visual) {
    Var r4 = conv_stack(bind, "f_v", ag::leaf(in.image), cfg_.visual_filters, vpools,
                        train, rng);
    r = ag::reshape(r4, {bsz, d});
  } else {
    r = ag::leaf(Tensor::zeros({bsz, d}));
  }

  // Feature augmentation: channel-stack, compress the stacked axis, dense.
  std::vector<Var> stacked{k, q, ag::broadcast_plane(ag::leaf(in.gamma), n, d)};
  if (cfg_.fusion == Fusion::EF) {
    stacked.push_back(ag::broadcast_rows(h, n));
    stacked.push_back(ag::broadcast_rows(r, n));
  }
  Var compressed = ag::channel_compress(ag::stack_last(stacked),
                                        bind(param("f_g.conv.kernel")),
                                        bind(param("f_g.conv.bias")));
  Var v = layers::dense(compressed, bind(param("f_g.dense.kernel")),
                        bind(param("f_g.dense.bias")), Activation::Linear);

  Var z = layers::dot_product_attention(q, k, v);

  Var z_in = cfg_.fusion == Fusion::MF ? ag::concat_last({z, h, r}) : z;
  Var o = layers::dense(z_in, bind(param("f_o.dense0.kernel")),
                        bind(param("f_o.dense0.bias")), Activation::Swish);
  o = layers::dense(o, bind(param("f_o.dense1.kernel")), bind(param("f_o.dense1.bias")),
                    Activation::Swish);
  o = layers::dense(o, bind(param("f_o.dense2.kernel")), bind(param("f_o.dense2.bias")),
                    Activation::Linear);

  ForwardResult res;
  res.trunk_mu = ag::slice_last(o, 0);
  res.trunk_log_sigma = ag::slice_last(o, 1);
  if (cfg_.fusion == Fusion::LF) {
    Var a = ag::concat_last({o, h, r});
    a = layers::dense(a, bind(param("a_o.dense0.kernel")), bind(param("a_o.dense0.bias")),
                      Activation::Swish);
    a = layers::dense(a, bind(param("a_o.dense1.kernel")), bind(param("a_o.dense1.bias")),
                      Activation::Swish);
    a = layers::dense(a, bind(param("a_o.dense2.kernel")), bind(param("a_o.dense2.bias")),
                      Activation::Linear);
    res.output = a;
  } else {
    res.output = o;
  }
  res.output->value.check_finite("model output");
  res.mu = ag::slice_last(res.output, 0);
  res.log_sigma = ag::slice_last(res.output, 1);
  res.keys = k;
  res.queries = q;
  res.values = v;
  res.context = z;
  res.participant_embed = h;
  res.visual_embed = r;
  res.bindings = std::move(bind.binds);
  return res;
}

void Model::accumulate_grads(const ForwardResult& result) {
  for (const auto& [param, var] : result.bindings) {
    for (std::size_t i = 0; i < param->grad.size(); ++i) param->grad[i] += var->grad[i];
  }
}

PredictedDistribution Model::predict(const Tensor& soundscape, const Tensor& masker,
                                     double gamma, const Tensor& participant,
                                     const Tensor& image) {
  BatchInput in;
  auto with_batch = [](const Tensor& t) {
    std::vector<std::size_t> s{1};
    for (std::size_t d : t.shape()) s.push_back(d);
    return t.reshaped(s);
  };
  in.soundscape = with_batch(soundscape);
  in.masker = with_batch(masker);
  in.gamma = Tensor({1}, {gamma});
  in.participant = with_batch(participant);
  in.image = with_batch(image);
  std::mt19937_64 rng(0);  // unused in eval mode
  ForwardResult res = forward_batch(in, /*train=*/false, rng);
  return {res.mu->value[0], res.log_sigma->value[0]};
}

std::vector<Tensor> Model::state_snapshot() const {
  std::vector<Tensor> out;
  for (const auto& p : params_) out.push_back(p->value);
  for (const auto& [name, st] : bn_states_) {
    (void)name;
    out.push_back(st.running_mean);
    out.push_back(st.running_var);
  }
  return out;
}

void Model::restore_state(const std::vector<Tensor>& snapshot) {
  if (snapshot.size() != params_.size() + 2 * bn_states_.size())
    throw DimensionError("restore_state: snapshot entry count mismatch");
  std::size_t i = 0;
  for (auto& p : params_) p->value = snapshot[i++];
  for (auto& [name, st] : bn_states_) {
    (void)name;
    st.running_mean = snapshot[i++];
    st.running_var = snapshot[i++];
  }
}

// Checkpoint layout: "CPPAP1\0", u64 LE header length, JSON header
// {config, manifest: [{name, shape, offset}]}, then contiguous LE float64
// blobs in manifest order. Offsets are relative to the blob section.
namespace {
constexpr char kMagic[7] = {'C', 'P', 'P', 'A', 'P', '1', '\0'};
}

void Model::save_checkpoint(const std::string& path) const {
  json manifest = json::array();
  std::vector<const Tensor*> blobs;
  std::size_t offset = 0;
  auto add_entry = [&](const std::string& name, const Tensor& t) {
    manifest.push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}});
    blobs.push_back(&t);
    offset += t.size() * sizeof(double);
  };
  for (const auto& p : params_) add_entry(p->name, p->value);
  for (const auto& [name, st] : bn_states_) {
    add_entry(name + ".running_mean", st.running_mean);
    add_entry(name + ".running_var", st.running_var);
  }
  json header{{"config", json::parse(cfg_.to_json())}, {"manifest", manifest}};
  std::string htext = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open checkpoint for writing: " + path);
  out.write(kMagic, sizeof(kMagic));
  std::uint64_t hlen = htext.size();
  out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
  out.write(htext.data(), std::streamsize(htext.size()));
  for (const Tensor* t : blobs)
    out.write(reinterpret_cast<const char*>(t->data()),
              std::streamsize(t->size() * sizeof(double)));
  if (!out) throw FormatError("checkpoint write failed: " + path);
}

Model Model::load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint: " + path);
  char magic[sizeof(kMagic)];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw FormatError("bad checkpoint magic in " + path);
  std::uint64_t hlen = 0;
  if (!in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen)))
    throw FormatError("truncated checkpoint header in " + path);
  std::string htext(hlen, '\0');
  if (!in.read(htext.data(), std::streamsize(hlen)))
    throw FormatError("truncated checkpoint header in " + path);
  json header;
  try {
    header = json::parse(htext);
  } catch (const json::exception& e) {
    throw FormatError(std::string("bad checkpoint header JSON: ") + e.what());
  }

  Model model(ModelConfig::from_json(header.at("config").dump()), /*init_seed=*/0);

  std::size_t consumed = 0;
  for (const auto& entry : header.at("manifest")) {
    std::string name = entry.at("name").get<std::string>();
    auto shape = entry.at("shape").get<std::vector<std::size_t>>();
    std::uint64_t off = entry.at("offset").get<std::uint64_t>();
    if (off != consumed) throw FormatError("non-contiguous blob offsets in " + path);
    Tensor* target = nullptr;
    if (auto it = model.by_name_.find(name); it != model.by_name_.end()) {
      target = &it->second->value;
    } else if (name.ends_with(".running_mean") || name.ends_with(".running_var")) {
      std::string base = name.substr(0, name.rfind('.'));
      auto st = model.bn_states_.find(base);
      if (st != model.bn_states_.end())
        target = name.ends_with(".running_mean") ? &st->second.running_mean
                                                 : &st->second.running_var;
    }
    if (!target)
      throw FormatError("checkpoint entry '" + name + "' does not exist in the stored config");
    if (target->shape() != shape)
      throw FormatError("checkpoint entry '" + name + "' shape mismatch");
    if (!in.read(reinterpret_cast<char*>(target->data()),
                 std::streamsize(target->size() * sizeof(double))))
      throw FormatError("truncated checkpoint blob for '" + name + "' in " + path);
    consumed += target->size() * sizeof(double);
  }
  std::size_t expected_entries = model.params_.size() + 2 * model.bn_states_.size();
  if (header.at("manifest").size() != expected_entries)
    throw FormatError("checkpoint manifest is incomplete: expected " +
                      std::to_string(expected_entries) + " entries, found " +
                      std::to_string(header.at("manifest").size()));
  return model;
}

Model Model::load_checkpoint(const std::string& path, const ModelConfig& expected) {
  Model m = load_checkpoint(path);
  if (!m.config().same_structure(expected)) {
    throw ConfigError("checkpoint config (" + config_label(m.config()) +
                      ") does not match the requested config (" + config_label(expected) + ")");
  }
  return m;
}

}  // namespace cppap
