// SPDX-License-Identifier: Apache-2.0
#pragma once

// Long-term anticipation model: per-clip fused tokens -> transformer
// aggregator over input clips -> Z step queries cross-attending to the
// aggregated clips -> verb and noun logits per future step.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "vclip/autodiff.hpp"
#include "vclip/clip_aggregate.hpp"
#include "vclip/error.hpp"
#include "vclip/featurestore.hpp"
#include "vclip/io.hpp"
#include "vclip/metrics.hpp"
#include "vclip/taxonomy.hpp"
#include "vclip/tensor.hpp"

namespace vclip {

enum class Variant { baseline, clip_img_only, img_plus_clip, img_plus_clip_text, clip_attention };

inline constexpr std::array<Variant, 5> kAllVariants = {Variant::baseline, Variant::clip_img_only,
                                                       Variant::img_plus_clip, Variant::img_plus_clip_text,
                                                       Variant::clip_attention};

inline const char* variant_name(Variant v) {
  switch (v) {
    case Variant::baseline: return "baseline";
    case Variant::clip_img_only: return "clip_img_only";
    case Variant::img_plus_clip: return "img_plus_clip";
    case Variant::img_plus_clip_text: return "img_plus_clip_text";
    case Variant::clip_attention: return "clip_attention";
  }
  return "?";
}

// Row label used in results tables.
inline const char* variant_method_label(Variant v) {
  switch (v) {
    case Variant::baseline: return "Baseline";
    case Variant::clip_img_only: return "CLIP_img";
    case Variant::img_plus_clip: return "Baseline + CLIP_img";
    case Variant::img_plus_clip_text: return "Baseline + CLIP_img + CLIP_text";
    case Variant::clip_attention: return "Baseline + CLIP attention";
  }
  return "?";
}

inline Variant parse_variant(std::string_view s) {
  for (auto v : kAllVariants) {
    if (s == variant_name(v)) return v;
  }
  throw ValidationError("unknown variant \"" + std::string(s) + "\"");
}

inline bool variant_uses_video(Variant v) { return v != Variant::clip_img_only; }

struct LtaModelConfig {
  Variant variant = Variant::img_plus_clip;
  int n_input_clips = 2;
  int z = 20;
  int c = kDefaultClipWidth;
  int d_video = kDefaultVideoWidth;
  int d_model = 0;  // 0: derived from the variant's token width
  int n_layers = 6;
  int n_heads_agg = 8;
  int ffn_mult = 4;
  int n_verbs = 0;
  int n_nouns = 0;
  // clip_attention only
  int attn_heads = 8;
  int d_attn = 0;  // 0: c
  bool learned_query = false;
  std::string query_prompt = kDefaultQueryPrompt;

  int d_clip() const {
    switch (variant) {
      case Variant::baseline: return 0;
      case Variant::img_plus_clip_text: return 5 * c;
      default: return c;
    }
  }

  int token_width() const { return (variant_uses_video(variant) ? d_video : 0) + d_clip(); }
  int attn_width() const { return d_attn > 0 ? d_attn : c; }

  void validate() const {
    auto need = [](bool ok, const std::string& msg) {
      if (!ok) throw ValidationError("model config: " + msg);
    };
    need(z >= 1, "Z must be >= 1");
    need(n_input_clips >= 1, "n_input_clips must be >= 1");
    need(n_layers >= 1, "n_layers must be >= 1");
    need(n_verbs >= 1 && n_nouns >= 1, "class counts must be >= 1");
    need(ffn_mult >= 1, "ffn_mult must be >= 1");
    need(variant == Variant::baseline || c >= 1, "c must be >= 1");
    need(!variant_uses_video(variant) || d_video >= 1, "d_video must be >= 1");
    need(d_model == 0 || d_model == token_width(),
         "d_model " + std::to_string(d_model) + " does not match token width " + std::to_string(token_width()) +
             " for variant " + variant_name(variant));
    need(n_heads_agg >= 1 && token_width() % n_heads_agg == 0,
         "token width " + std::to_string(token_width()) + " not divisible by n_heads_agg " +
             std::to_string(n_heads_agg));
    if (variant == Variant::clip_attention) {
      need(attn_heads >= 1 && attn_width() % attn_heads == 0, "d_attn not divisible by attn_heads");
    }
  }

  json to_json() const {
    return json{{"variant", variant_name(variant)},
                {"n_input_clips", n_input_clips},
                {"Z", z},
                {"c", c},
                {"d_video", d_video},
                {"d_model", token_width()},
                {"n_layers", n_layers},
                {"n_heads_agg", n_heads_agg},
                {"ffn_mult", ffn_mult},
                {"n_verbs", n_verbs},
                {"n_nouns", n_nouns},
                {"attn_heads", attn_heads},
                {"d_attn", attn_width()},
                {"learned_query", learned_query},
                {"query_prompt", query_prompt}};
  }

  static LtaModelConfig from_json(const json& j) { return from_json(j, LtaModelConfig()); }

  static LtaModelConfig from_json(const json& j, LtaModelConfig base) {
    const std::string where = "model config";
    LtaModelConfig m = base;
    if (j.contains("variant")) m.variant = parse_variant(get_field<std::string>(j, "variant", where));
    m.n_input_clips = get_field_or(j, "n_input_clips", m.n_input_clips, where);
    m.z = get_field_or(j, "Z", m.z, where);
    m.c = get_field_or(j, "c", m.c, where);
    m.d_video = get_field_or(j, "d_video", m.d_video, where);
    m.d_model = get_field_or(j, "d_model", m.d_model, where);
    m.n_layers = get_field_or(j, "n_layers", m.n_layers, where);
    m.n_heads_agg = get_field_or(j, "n_heads_agg", m.n_heads_agg, where);
    m.ffn_mult = get_field_or(j, "ffn_mult", m.ffn_mult, where);
    m.n_verbs = get_field_or(j, "n_verbs", m.n_verbs, where);
    m.n_nouns = get_field_or(j, "n_nouns", m.n_nouns, where);
    m.attn_heads = get_field_or(j, "attn_heads", m.attn_heads, where);
    m.d_attn = get_field_or(j, "d_attn", m.d_attn, where);
    m.learned_query = get_field_or(j, "learned_query", m.learned_query, where);
    m.query_prompt = get_field_or(j, "query_prompt", m.query_prompt, where);
    return m;
  }
};

template <class T>
struct Parameter {
  std::string name;
  Mat<T> value;
  Mat<T> grad;
  bool trainable = true;
};

template <class T>
class ParameterSet {
 public:
  int add(std::string name, Mat<T> init, bool trainable = true) {
    if (index_.count(name)) throw ValidationError("duplicate parameter " + name);
    const int id = static_cast<int>(items_.size());
    index_.emplace(name, id);
    Mat<T> g = Mat<T>::Zero(init.rows(), init.cols());
    items_.push_back(Parameter<T>{std::move(name), std::move(init), std::move(g), trainable});
    return id;
  }

  Parameter<T>& operator[](int id) { return items_[static_cast<std::size_t>(id)]; }
  const Parameter<T>& operator[](int id) const { return items_[static_cast<std::size_t>(id)]; }
  std::size_t size() const { return items_.size(); }

  std::optional<int> find(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  void zero_grad() {
    for (auto& p : items_) p.grad.setZero();
  }

  std::vector<Parameter<T>>& items() { return items_; }
  const std::vector<Parameter<T>>& items() const { return items_; }

 private:
  std::vector<Parameter<T>> items_;
  std::unordered_map<std::string, int> index_;
};

template <class T>
struct StepLogits {
  Mat<T> verb;  // Z x n_verbs
  Mat<T> noun;  // Z x n_nouns
};

template <class T>
struct ClipInput {
  Mat<T> video;      // 1 x d_video (ignored by clip_img_only)
  Mat<T> clip_desc;  // 1 x d_clip, for variants with a parameter-free descriptor
  Mat<T> frames;     // N x c, for clip_attention
};

template <class T>
struct ExampleInput {
  std::vector<ClipInput<T>> clips;
};

// Token layout: [video || clip descriptor], either part dropped when the
// variant does not use it.
template <class T>
Mat<T> fuse(const Mat<T>& video, const Mat<T>& clip_desc, const LtaModelConfig& cfg) {
  const bool use_video = variant_uses_video(cfg.variant);
  const int dv = use_video ? cfg.d_video : 0;
  const int dc = cfg.d_clip();
  if (use_video && (video.rows() != 1 || video.cols() != dv)) {
    throw ShapeError("fuse: video descriptor width " + std::to_string(video.cols()) + " != " + std::to_string(dv));
  }
  if (dc > 0 && (clip_desc.rows() != 1 || clip_desc.cols() != dc)) {
    throw ShapeError("fuse: clip descriptor width " + std::to_string(clip_desc.cols()) + " != " +
                     std::to_string(dc) + " for variant " + variant_name(cfg.variant));
  }
  Mat<T> out(1, dv + dc);
  if (dv > 0) out.leftCols(dv) = video;
  if (dc > 0) out.rightCols(dc) = clip_desc;
  return out;
}

template <class T>
class LtaModel {
 public:
  using Var = ad::Var<T>;

  struct Binding {
    std::vector<Var> vars;  // parallel to params()
    Var operator[](int id) const { return vars[static_cast<std::size_t>(id)]; }
  };

  struct LogitVars {
    Var verb;
    Var noun;
  };

  LtaModel(LtaModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)), seed_(seed) {
    cfg_.validate();
    Rng rng(seed);
    const int d = cfg_.token_width();
    const int hidden = d * cfg_.ffn_mult;
    auto weight = [&](const std::string& name, int in, int out) {
      return params_.add(name, uniform(rng, in, out, T(1) / std::sqrt(static_cast<T>(in))));
    };
    auto bias = [&](const std::string& name, int n) { return params_.add(name, Mat<T>::Zero(1, n)); };
    auto norm = [&](const std::string& prefix) {
      return LayerNormIds{params_.add(prefix + ".g", Mat<T>::Ones(1, d)), bias(prefix + ".b", d)};
    };
    auto attention = [&](const std::string& prefix) {
      return AttentionIds{weight(prefix + ".w_q", d, d), bias(prefix + ".b_q", d), weight(prefix + ".w_k", d, d),
                          bias(prefix + ".b_k", d),      weight(prefix + ".w_v", d, d), bias(prefix + ".b_v", d),
                          weight(prefix + ".w_o", d, d), bias(prefix + ".b_o", d)};
    };
    auto ffn = [&](const std::string& prefix) {
      return FfnIds{weight(prefix + ".w1", d, hidden), bias(prefix + ".b1", hidden), weight(prefix + ".w2", hidden, d),
                    bias(prefix + ".b2", d)};
    };

    if (cfg_.variant == Variant::clip_attention) {
      const int c = cfg_.c;
      const int da = cfg_.attn_width();
      clip_attn_.w_q = weight("clip_attn.w_q", c, da);
      clip_attn_.w_k = weight("clip_attn.w_k", c, da);
      clip_attn_.w_v = weight("clip_attn.w_v", c, da);
      clip_attn_.w_o = weight("clip_attn.w_o", da, c);
      // Frozen prompt embedding unless the query is learned.
      Mat<T> q = stub_embed(seed, cfg_.query_prompt, std::max(c, 2)).template cast<T>().leftCols(c);
      clip_attn_.query = params_.add("clip_attn.query", std::move(q), cfg_.learned_query);
    }
    pos_ = params_.add("agg.pos", uniform(rng, cfg_.n_input_clips, d, T(1) / std::sqrt(static_cast<T>(d))));
    for (int l = 0; l < cfg_.n_layers; ++l) {
      const std::string p = "agg.L" + std::to_string(l);
      EncoderLayerIds e;
      e.ln1 = norm(p + ".ln1");
      e.attn = attention(p + ".attn");
      e.ln2 = norm(p + ".ln2");
      e.ffn = ffn(p + ".ffn");
      layers_.push_back(e);
    }
    enc_ln_ = norm("agg.ln_f");
    dec_.queries = params_.add("dec.queries", uniform(rng, cfg_.z, d, T(1)));
    dec_.ln_q = norm("dec.ln_q");
    dec_.attn = attention("dec.attn");
    dec_.ln2 = norm("dec.ln2");
    dec_.ffn = ffn("dec.ffn");
    dec_.ln_f = norm("dec.ln_f");
    verb_w_ = weight("head.verb.w", d, cfg_.n_verbs);
    verb_b_ = bias("head.verb.b", cfg_.n_verbs);
    noun_w_ = weight("head.noun.w", d, cfg_.n_nouns);
    noun_b_ = bias("head.noun.b", cfg_.n_nouns);
  }

  const LtaModelConfig& config() const { return cfg_; }
  std::uint64_t seed() const { return seed_; }
  ParameterSet<T>& params() { return params_; }
  const ParameterSet<T>& params() const { return params_; }

  void set_prompt_query(const Mat<T>& q) {
    if (cfg_.variant != Variant::clip_attention) return;
    auto& p = params_[clip_attn_.query];
    if (q.rows() != 1 || q.cols() != p.value.cols()) throw ShapeError("prompt query width mismatch");
    p.value = q;
  }

  // Leaves for every parameter; trainable ones record gradients when train.
  Binding bind(ad::Tape<T>& tape, bool train) const {
    Binding b;
    b.vars.reserve(params_.size());
    for (const auto& p : params_.items()) {
      b.vars.push_back(train && p.trainable ? tape.variable(p.value) : tape.constant(p.value));
    }
    return b;
  }

  void accumulate_grads(const ad::Tape<T>& tape, const Binding& b, T weight = T(1)) {
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& p = params_.items()[i];
      if (!p.trainable) continue;
      p.grad += tape.grad(b.vars[i]) * weight;
    }
  }

  // One fused token per clip; clip_attention computes its descriptor in-graph.
  Var clip_token(ad::Tape<T>& tape, const Binding& b, const ClipInput<T>& clip) const {
    if (cfg_.variant != Variant::clip_attention) return tape.constant(fuse(clip.video, clip.clip_desc, cfg_));
    if (clip.frames.cols() != cfg_.c || clip.frames.rows() < 1) {
      throw ShapeError("clip_attention input frames must be N x " + std::to_string(cfg_.c));
    }
    if (clip.video.rows() != 1 || clip.video.cols() != cfg_.d_video) throw ShapeError("video descriptor width mismatch");
    auto desc = cross_attention_graph(b[clip_attn_.query], tape.constant(clip.frames), b[clip_attn_.w_q],
                                      b[clip_attn_.w_k], b[clip_attn_.w_v], b[clip_attn_.w_o], cfg_.attn_heads);
    return ad::concat_cols<T>({tape.constant(clip.video), desc});
  }

  LogitVars forward_example(ad::Tape<T>& tape, const Binding& b, const ExampleInput<T>& ex) const {
    if (static_cast<int>(ex.clips.size()) != cfg_.n_input_clips) {
      throw ShapeError("expected " + std::to_string(cfg_.n_input_clips) + " input clips, got " +
                       std::to_string(ex.clips.size()));
    }
    std::vector<Var> tokens;
    for (const auto& c : ex.clips) tokens.push_back(clip_token(tape, b, c));
    return forward_tokens(b, ad::concat_rows(tokens));
  }

  // tokens: n_input_clips x d_model.
  LogitVars forward_tokens(const Binding& b, Var tokens) const {
    const int d = cfg_.token_width();
    if (tokens.rows() != cfg_.n_input_clips || tokens.cols() != d) {
      throw ShapeError("forward: expected " + std::to_string(cfg_.n_input_clips) + " x " + std::to_string(d) +
                       " tokens, got " + std::to_string(tokens.rows()) + " x " + std::to_string(tokens.cols()));
    }
    Var x = ad::add(tokens, b[pos_]);
    for (const auto& layer : layers_) {
      Var h = norm(b, layer.ln1, x);
      x = ad::add(x, self_attention(b, layer.attn, h, h));
      x = ad::add(x, feed_forward(b, layer.ffn, norm(b, layer.ln2, x)));
    }
    Var enc = norm(b, enc_ln_, x);

    Var q0 = b[dec_.queries];
    Var y = ad::add(q0, self_attention(b, dec_.attn, norm(b, dec_.ln_q, q0), enc));
    y = ad::add(y, feed_forward(b, dec_.ffn, norm(b, dec_.ln2, y)));
    Var out = norm(b, dec_.ln_f, y);
    return LogitVars{ad::linear(out, b[verb_w_], b[verb_b_]), ad::linear(out, b[noun_w_], b[noun_b_])};
  }

  StepLogits<T> forward(const std::vector<Mat<T>>& tokens) const {
    check_finite();
    if (static_cast<int>(tokens.size()) != cfg_.n_input_clips) {
      throw ShapeError("forward: expected " + std::to_string(cfg_.n_input_clips) + " tokens");
    }
    ad::Tape<T> tape;
    auto b = bind(tape, false);
    std::vector<Var> rows;
    for (const auto& t : tokens) rows.push_back(tape.constant(t));
    auto out = forward_tokens(b, ad::concat_rows(rows));
    return StepLogits<T>{out.verb.value(), out.noun.value()};
  }

  StepLogits<T> forward(const ExampleInput<T>& ex) const {
    check_finite();
    ad::Tape<T> tape;
    auto b = bind(tape, false);
    auto out = forward_example(tape, b, ex);
    return StepLogits<T>{out.verb.value(), out.noun.value()};
  }

  void check_finite() const {
    for (const auto& p : params_.items()) {
      if (!all_finite(p.value)) throw NumericError("parameter " + p.name + " is non-finite");
    }
  }

 private:
  struct LayerNormIds {
    int g = -1, b = -1;
  };
  struct AttentionIds {
    int w_q, b_q, w_k, b_k, w_v, b_v, w_o, b_o;
  };
  struct FfnIds {
    int w1, b1, w2, b2;
  };
  struct EncoderLayerIds {
    LayerNormIds ln1, ln2;
    AttentionIds attn{};
    FfnIds ffn{};
  };
  struct DecoderIds {
    int queries = -1;
    LayerNormIds ln_q, ln2, ln_f;
    AttentionIds attn{};
    FfnIds ffn{};
  };
  struct ClipAttentionIds {
    int w_q = -1, w_k = -1, w_v = -1, w_o = -1, query = -1;
  };

  static Mat<T> uniform(Rng& rng, int rows, int cols, T bound) {
    Mat<T> m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(rng.uniform(-1.0, 1.0)) * bound;
    return m;
  }

  Var norm(const Binding& b, const LayerNormIds& ids, Var x) const { return ad::layer_norm(x, b[ids.g], b[ids.b]); }

  Var self_attention(const Binding& b, const AttentionIds& a, Var query_rows, Var kv_rows) const {
    Var q = ad::linear(query_rows, b[a.w_q], b[a.b_q]);
    Var k = ad::linear(kv_rows, b[a.w_k], b[a.b_k]);
    Var v = ad::linear(kv_rows, b[a.w_v], b[a.b_v]);
    return ad::linear(multi_head_attend(q, k, v, cfg_.n_heads_agg), b[a.w_o], b[a.b_o]);
  }

  Var feed_forward(const Binding& b, const FfnIds& f, Var x) const {
    return ad::linear(ad::gelu(ad::linear(x, b[f.w1], b[f.b1])), b[f.w2], b[f.b2]);
  }

  LtaModelConfig cfg_;
  std::uint64_t seed_;
  ParameterSet<T> params_;
  ClipAttentionIds clip_attn_;
  int pos_ = -1;
  std::vector<EncoderLayerIds> layers_;
  LayerNormIds enc_ln_;
  DecoderIds dec_;
  int verb_w_ = -1, verb_b_ = -1, noun_w_ = -1, noun_b_ = -1;
};

inline std::pair<std::vector<int>, std::vector<int>> split_targets(const GroundTruthSequence& gt, int n_verbs,
                                                                   int n_nouns) {
  std::vector<int> v, n;
  for (const auto& a : gt.actions) {
    if (a.verb_id < 0 || a.verb_id >= n_verbs || a.noun_id < 0 || a.noun_id >= n_nouns) {
      throw LookupError("ground truth " + gt.example_id + ": class id out of range");
    }
    v.push_back(a.verb_id);
    n.push_back(a.noun_id);
  }
  return {std::move(v), std::move(n)};
}

// Mean over steps of verb + noun cross-entropy, as a graph node.
template <class T>
ad::Var<T> anticipation_loss_graph(ad::Var<T> verb_logits, ad::Var<T> noun_logits, const GroundTruthSequence& gt) {
  const auto z = verb_logits.rows();
  if (static_cast<Eigen::Index>(gt.actions.size()) != z || noun_logits.rows() != z) {
    throw ShapeError("anticipation_loss: ground truth length differs from Z");
  }
  auto [v, n] = split_targets(gt, static_cast<int>(verb_logits.cols()), static_cast<int>(noun_logits.cols()));
  auto total = ad::add(ad::cross_entropy_sum(verb_logits, std::move(v)), ad::cross_entropy_sum(noun_logits, std::move(n)));
  return ad::scale(total, T(1) / static_cast<T>(z));
}

template <class T>
double anticipation_loss(const StepLogits<T>& logits, const GroundTruthSequence& gt) {
  ad::Tape<T> tape;
  return static_cast<double>(
      anticipation_loss_graph(tape.constant(logits.verb), tape.constant(logits.noun), gt).value()(0, 0));
}

namespace detail {

template <class T>
std::vector<int> argmax_rows(const Mat<T>& logits) {
  std::vector<int> out;
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    Eigen::Index best = 0;
    for (Eigen::Index j = 1; j < logits.cols(); ++j) {
      if (logits(r, j) > logits(r, best)) best = j;
    }
    out.push_back(static_cast<int>(best));
  }
  return out;
}

template <class T>
std::vector<int> sample_rows(const Mat<T>& logits, double temperature, Rng& rng) {
  std::vector<int> out;
  std::vector<double> p(static_cast<std::size_t>(logits.cols()));
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    double m = -std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < logits.cols(); ++j) m = std::max(m, static_cast<double>(logits(r, j)) / temperature);
    double s = 0.0;
    for (Eigen::Index j = 0; j < logits.cols(); ++j) {
      p[static_cast<std::size_t>(j)] = std::exp(static_cast<double>(logits(r, j)) / temperature - m);
      s += p[static_cast<std::size_t>(j)];
    }
    const double u = rng.uniform() * s;
    double acc = 0.0;
    int pick = static_cast<int>(logits.cols()) - 1;
    for (Eigen::Index j = 0; j < logits.cols(); ++j) {
      acc += p[static_cast<std::size_t>(j)];
      if (u < acc) {
        pick = static_cast<int>(j);
        break;
      }
    }
    // Never land on a zero-probability class through rounding at the tail.
    while (pick > 0 && p[static_cast<std::size_t>(pick)] == 0.0) --pick;
    out.push_back(pick);
  }
  return out;
}

}  // namespace detail

// Candidate 0 is the per-step argmax; the rest are independent per-step
// samples from softmax(logits / temperature).
template <class T>
PredictionSet sample_candidates(const StepLogits<T>& logits, int k, double temperature, std::uint64_t seed,
                                std::string example_id = {}) {
  if (k < 1) throw ParameterError("sample_candidates: K must be >= 1");
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw ParameterError("sample_candidates: temperature must be positive");
  }
  if (!all_finite(logits.verb) || !all_finite(logits.noun)) throw NumericError("sample_candidates: non-finite logits");
  PredictionSet out{std::move(example_id), {}, {}};
  out.verb_seqs.push_back(detail::argmax_rows(logits.verb));
  out.noun_seqs.push_back(detail::argmax_rows(logits.noun));
  Rng rng(seed);
  for (int i = 1; i < k; ++i) {
    out.verb_seqs.push_back(detail::sample_rows(logits.verb, temperature, rng));
    out.noun_seqs.push_back(detail::sample_rows(logits.noun, temperature, rng));
  }
  return out;
}

// Named float32 tensors in a directory: <manifest>.json maps
// name -> {"shape": [rows, cols], "file": relative path}.
inline void save_tensor_set(const fs::path& dir, const std::string& manifest_name, const std::string& subdir,
                            const std::vector<std::pair<std::string, MatF>>& tensors) {
  fs::create_directories(dir / subdir);
  json manifest = json::object();
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const auto& [name, m] = tensors[i];
    const std::string file = subdir + "/" + std::to_string(i) + ".f32";
    write_f32le(dir / file, std::span<const float>(m.data(), static_cast<std::size_t>(m.size())));
    manifest[name] = {{"shape", {m.rows(), m.cols()}}, {"file", file}};
  }
  write_json(dir / manifest_name, manifest);
}

inline std::map<std::string, MatF> load_tensor_set(const fs::path& dir, const std::string& manifest_name) {
  const json manifest = read_json(dir / manifest_name);
  std::map<std::string, MatF> out;
  for (const auto& [name, e] : manifest.items()) {
    const auto shape = get_field<std::vector<Eigen::Index>>(e, "shape", manifest_name);
    if (shape.size() != 2) throw SchemaError(manifest_name + ": shape of " + name + " must have two entries");
    const auto data = read_f32le(dir / get_field<std::string>(e, "file", manifest_name),
                                 static_cast<std::size_t>(shape[0] * shape[1]));
    MatF m(shape[0], shape[1]);
    std::copy(data.begin(), data.end(), m.data());
    out.emplace(name, std::move(m));
  }
  return out;
}

// Checkpoint layout: config.json (model config, seed and caller metadata),
// params.json + params/*.f32.
inline void save_model(const LtaModel<float>& model, const fs::path& dir, const json& extra = json::object()) {
  fs::create_directories(dir);
  json cfg = extra;
  cfg["model"] = model.config().to_json();
  cfg["variant"] = variant_name(model.config().variant);
  cfg["seeds"]["init"] = model.seed();
  write_json(dir / "config.json", cfg);
  std::vector<std::pair<std::string, MatF>> tensors;
  for (const auto& p : model.params().items()) tensors.emplace_back(p.name, p.value);
  save_tensor_set(dir, "params.json", "params", tensors);
}

inline LtaModel<float> load_model(const fs::path& dir) {
  const json cfg = read_json(dir / "config.json");
  if (!cfg.contains("model")) throw SchemaError("checkpoint config.json has no model section");
  const auto mcfg = LtaModelConfig::from_json(cfg.at("model"));
  const auto seed = cfg.at("seeds").at("init").get<std::uint64_t>();
  LtaModel<float> model(mcfg, seed);
  auto tensors = load_tensor_set(dir, "params.json");
  for (auto& p : model.params().items()) {
    auto it = tensors.find(p.name);
    if (it == tensors.end()) throw CorruptionError("checkpoint is missing parameter " + p.name);
    if (it->second.rows() != p.value.rows() || it->second.cols() != p.value.cols()) {
      throw CorruptionError("checkpoint parameter " + p.name + " has the wrong shape");
    }
    p.value = it->second;
  }
  if (tensors.size() != model.params().size()) throw CorruptionError("checkpoint has unexpected parameters");
  return model;
}

}  // namespace vclip
