// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <chrono>
#include <cmath>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "vclip/clip_aggregate.hpp"
#include "vclip/error.hpp"
#include "vclip/featurestore.hpp"
#include "vclip/io.hpp"
#include "vclip/lta_model.hpp"
#include "vclip/metrics.hpp"
#include "vclip/taxonomy.hpp"

namespace vclip {

struct TrainConfig {
  Variant variant = Variant::img_plus_clip;
  int epochs = 30;
  int batch_size = 8;
  double base_lr = 0.05;
  double momentum = 0.9;
  double weight_decay = 0.0;
  double grad_clip = 1.0;  // global L2 norm, 0 disables
  std::uint64_t seed = 0;
  fs::path store;
  fs::path gt_train;
  fs::path gt_val;  // optional
  fs::path taxonomy;
  fs::path out_dir;
  std::optional<fs::path> resume_from;
  int eval_every = 0;  // 0: evaluate only after the last epoch
  // Ends this run early while keeping the schedule of the full `epochs` run.
  int stop_after_epoch = 0;  // 0: run to `epochs`
  double temperature = 1.0;
  int k = 5;
  std::uint64_t eval_seed = 0;
  // Architecture knobs; data-dependent sizes (widths, Z, class counts,
  // input clips) come from the store and ground truth.
  LtaModelConfig model = desk_model();

  static LtaModelConfig desk_model() {
    LtaModelConfig m;
    m.n_layers = 2;
    m.n_heads_agg = 4;
    m.ffn_mult = 2;
    m.attn_heads = 4;
    return m;
  }

  // Desk-scale profile: small batch and shallow aggregator.
  static TrainConfig desk_profile() { return TrainConfig{}; }

  // Reference recipe: batch 64, 30 epochs, base LR 1e-4, 6-layer aggregator.
  static TrainConfig full_profile() {
    TrainConfig t;
    t.batch_size = 64;
    t.base_lr = 1e-4;
    t.epochs = 30;
    t.model = LtaModelConfig{};
    return t;
  }

  void validate() const {
    if (epochs < 1) throw ValidationError("train config: epochs must be >= 1");
    if (batch_size < 1) throw ValidationError("train config: batch_size must be >= 1");
    if (!(base_lr > 0.0) || !std::isfinite(base_lr)) throw ValidationError("train config: base_lr must be > 0");
    if (momentum < 0.0 || momentum >= 1.0) throw ValidationError("train config: momentum must be in [0, 1)");
    if (weight_decay < 0.0 || grad_clip < 0.0) throw ValidationError("train config: weight_decay/grad_clip must be >= 0");
    if (eval_every < 0) throw ValidationError("train config: eval_every must be >= 0");
    if (stop_after_epoch < 0) throw ValidationError("train config: stop_after_epoch must be >= 0");
    if (k < 1) throw ValidationError("train config: K must be >= 1");
    if (!(temperature > 0.0)) throw ValidationError("train config: temperature must be > 0");
  }

  json to_json() const {
    json j{{"variant", variant_name(variant)},
           {"epochs", epochs},
           {"batch_size", batch_size},
           {"base_lr", base_lr},
           {"momentum", momentum},
           {"weight_decay", weight_decay},
           {"grad_clip", grad_clip},
           {"seed", seed},
           {"store", store.string()},
           {"gt_train", gt_train.string()},
           {"gt_val", gt_val.string()},
           {"taxonomy", taxonomy.string()},
           {"out_dir", out_dir.string()},
           {"eval_every", eval_every},
           {"stop_after_epoch", stop_after_epoch},
           {"temperature", temperature},
           {"K", k},
           {"eval_seed", eval_seed},
           {"model",
            {{"n_layers", model.n_layers},
             {"n_heads_agg", model.n_heads_agg},
             {"ffn_mult", model.ffn_mult},
             {"attn_heads", model.attn_heads},
             {"d_attn", model.d_attn},
             {"learned_query", model.learned_query},
             {"n_input_clips", model.n_input_clips},
             {"query_prompt", model.query_prompt}}}};
    if (resume_from) j["resume_from"] = resume_from->string();
    return j;
  }

  static TrainConfig from_json(const json& j) {
    const std::string where = "train config";
    const std::string profile = get_field_or<std::string>(j, "profile", "desk", where);
    TrainConfig t;
    if (profile == "full") {
      t = full_profile();
    } else if (profile != "desk") {
      throw ValidationError("train config: unknown profile \"" + profile + "\"");
    }
    if (j.contains("variant")) t.variant = parse_variant(get_field<std::string>(j, "variant", where));
    t.epochs = get_field_or(j, "epochs", t.epochs, where);
    t.batch_size = get_field_or(j, "batch_size", t.batch_size, where);
    t.base_lr = get_field_or(j, "base_lr", t.base_lr, where);
    t.momentum = get_field_or(j, "momentum", t.momentum, where);
    t.weight_decay = get_field_or(j, "weight_decay", t.weight_decay, where);
    t.grad_clip = get_field_or(j, "grad_clip", t.grad_clip, where);
    t.seed = get_field_or(j, "seed", t.seed, where);
    t.store = get_field_or<std::string>(j, "store", t.store.string(), where);
    t.gt_train = get_field_or<std::string>(j, "gt_train", t.gt_train.string(), where);
    t.gt_val = get_field_or<std::string>(j, "gt_val", t.gt_val.string(), where);
    t.taxonomy = get_field_or<std::string>(j, "taxonomy", t.taxonomy.string(), where);
    t.out_dir = get_field_or<std::string>(j, "out_dir", t.out_dir.string(), where);
    if (j.contains("resume_from") && !j.at("resume_from").is_null()) {
      t.resume_from = get_field<std::string>(j, "resume_from", where);
    }
    t.eval_every = get_field_or(j, "eval_every", t.eval_every, where);
    t.stop_after_epoch = get_field_or(j, "stop_after_epoch", t.stop_after_epoch, where);
    t.temperature = get_field_or(j, "temperature", t.temperature, where);
    t.k = get_field_or(j, "K", t.k, where);
    t.eval_seed = get_field_or(j, "eval_seed", t.eval_seed, where);
    if (j.contains("model")) t.model = LtaModelConfig::from_json(j.at("model"), t.model);
    return t;
  }
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  std::optional<double> val_verb_ed;
  std::optional<double> val_noun_ed;
  double wall_time = 0.0;

  json to_json() const {
    json j{{"epoch", epoch}, {"train_loss", train_loss}, {"wall_time", wall_time}};
    if (val_verb_ed) j["val_verb_ed"] = *val_verb_ed;
    if (val_noun_ed) j["val_noun_ed"] = *val_noun_ed;
    return j;
  }
};

struct RunLog {
  std::vector<EpochRecord> epochs;
  fs::path checkpoint;
  std::optional<EvalReport> final_eval;

  std::string to_jsonl() const {
    std::string out;
    for (const auto& e : epochs) out += e.to_json().dump() + "\n";
    return out;
  }
};

struct Dataset {
  std::vector<std::string> ids;
  std::vector<ExampleInput<float>> inputs;
  std::vector<GroundTruthSequence> targets;

  std::size_t size() const { return ids.size(); }
};

inline int infer_input_clips(const FeatureStore& store, const std::string& example_id) {
  int n = 0;
  while (store.has_clip(example_id + "_c" + std::to_string(n))) ++n;
  return n;
}

// Builds per-example model inputs. Clip j of example e is stored as
// "<e>_c<j>".
inline Dataset load_dataset(const FeatureStore& store, const GroundTruthFile& gt, const LtaModelConfig& cfg,
                            const TextTables* tables) {
  Dataset ds;
  for (const auto& [id, seq] : gt.examples) {
    ExampleInput<float> ex;
    for (int j = 0; j < cfg.n_input_clips; ++j) {
      const std::string cid = id + "_c" + std::to_string(j);
      if (!store.has_clip(cid)) throw LookupError("feature store has no clip \"" + cid + "\" for example " + id);
      auto [frames, video] = store.read_clip(cid);
      ClipInput<float> clip;
      clip.video = std::move(video.vector);
      switch (cfg.variant) {
        case Variant::baseline:
          break;
        case Variant::clip_img_only:
        case Variant::img_plus_clip:
          clip.clip_desc = mean_pool(frames.frames);
          break;
        case Variant::img_plus_clip_text:
          clip.clip_desc = img_text_concat(frames.frames, *tables);
          break;
        case Variant::clip_attention:
          clip.frames = std::move(frames.frames);
          break;
      }
      ex.clips.push_back(std::move(clip));
    }
    ds.ids.push_back(id);
    ds.inputs.push_back(std::move(ex));
    ds.targets.push_back(seq);
  }
  return ds;
}

inline TextTables checked_text_tables(const FeatureStore& store, const Taxonomy& taxonomy) {
  TextTables tables = store.text_tables();
  for (auto cat : kAllCategories) {
    if (!tables.has(cat)) throw ValidationError(std::string("store has no ") + category_name(cat) + " text table");
    if (static_cast<std::size_t>(tables.at(cat).rows()) != taxonomy.size(cat)) {
      throw ValidationError(std::string(category_name(cat)) + " text table rows do not match the taxonomy");
    }
  }
  return tables;
}

// Fills data-dependent sizes of the model config and checks consistency.
inline LtaModelConfig resolve_model_config(LtaModelConfig m, Variant variant, const FeatureStore& store,
                                           const GroundTruthFile& gt, const Taxonomy& taxonomy) {
  m.variant = variant;
  m.c = store.c();
  m.d_video = store.d_video();
  m.z = gt.z;
  m.n_verbs = static_cast<int>(taxonomy.verbs().size());
  m.n_nouns = static_cast<int>(taxonomy.nouns().size());
  m.d_model = 0;
  if (gt.examples.empty()) throw ValidationError("ground truth has no examples");
  const int found = infer_input_clips(store, gt.examples.begin()->first);
  if (m.n_input_clips <= 0) m.n_input_clips = found;
  if (found < m.n_input_clips) {
    throw ValidationError("store holds " + std::to_string(found) + " clips per example, config needs " +
                          std::to_string(m.n_input_clips));
  }
  m.validate();
  return m;
}

namespace detail {

inline std::uint64_t example_seed(std::uint64_t seed, const std::string& id) { return hash_combine(seed, fnv1a64(id)); }

inline PredictionFile predict(const LtaModel<float>& model, const Dataset& ds, int k, double temperature,
                              std::uint64_t seed, const std::string& taxonomy_hash) {
  PredictionFile pf{1, model.config().z, k, taxonomy_hash, {}};
  for (std::size_t i = 0; i < ds.size(); ++i) {
    auto logits = model.forward(ds.inputs[i]);
    pf.predictions.emplace(ds.ids[i], sample_candidates(logits, k, temperature, example_seed(seed, ds.ids[i]), ds.ids[i]));
  }
  return pf;
}

inline void save_optimizer(const fs::path& dir, const LtaModel<float>& model, const std::vector<MatF>& velocity) {
  std::vector<std::pair<std::string, MatF>> tensors;
  for (std::size_t i = 0; i < velocity.size(); ++i) tensors.emplace_back(model.params()[static_cast<int>(i)].name, velocity[i]);
  save_tensor_set(dir, "optim.json", "optim", tensors);
}

}  // namespace detail

struct EvalConfig {
  int k = 5;
  double temperature = 1.0;
  std::uint64_t seed = 0;
  fs::path out_dir;  // predictions.json and eval_report.json; empty: do not write
  EvalOptions metric;
};

struct EvalResult {
  PredictionFile predictions;
  EvalReport report;
};

inline EvalResult run_eval(const LtaModel<float>& model, const FeatureStore& store, const GroundTruthFile& gt,
                           const Taxonomy& taxonomy, const EvalConfig& cfg) {
  if (cfg.k < 1) throw ValidationError("eval: K must be >= 1");
  const auto& m = model.config();
  if (store.c() != m.c || store.d_video() != m.d_video) throw ValidationError("eval: store widths differ from checkpoint");
  if (gt.z != m.z) throw ValidationError("eval: ground-truth Z differs from checkpoint");
  if (gt.taxonomy_sha256 != taxonomy.sha256()) throw ValidationError("ground-truth taxonomy hash does not match taxonomy");
  std::optional<TextTables> tables;
  if (m.variant == Variant::img_plus_clip_text) tables = checked_text_tables(store, taxonomy);
  const auto ds = load_dataset(store, gt, m, tables ? &*tables : nullptr);
  EvalResult r;
  r.predictions = detail::predict(model, ds, cfg.k, cfg.temperature, cfg.seed, taxonomy.sha256());
  r.report = evaluate(r.predictions, gt, taxonomy, cfg.metric);
  if (!cfg.out_dir.empty()) {
    save_predictions(r.predictions, cfg.out_dir / "predictions.json");
    write_json(cfg.out_dir / "eval_report.json", r.report.to_json());
  }
  return r;
}

inline EvalResult run_eval(const fs::path& checkpoint, const fs::path& store_dir, const fs::path& gt_file,
                           const EvalConfig& cfg) {
  const auto model = load_model(checkpoint);
  const auto taxonomy = load_taxonomy(checkpoint / "taxonomy.json");
  return run_eval(model, FeatureStore::open(store_dir), load_ground_truth(gt_file), taxonomy, cfg);
}

struct TrainResult {
  fs::path checkpoint;
  RunLog log;
};

// Single-threaded reference training loop: SGD with momentum, cosine decay
// from base_lr over all steps, optional global-norm clipping.
inline TrainResult train(const TrainConfig& cfg) {
  cfg.validate();
  const Taxonomy taxonomy = load_taxonomy(cfg.taxonomy);
  const FeatureStore store = FeatureStore::open(cfg.store);
  const GroundTruthFile gt_train = load_ground_truth(cfg.gt_train);
  if (gt_train.taxonomy_sha256 != taxonomy.sha256()) throw ValidationError("training ground truth taxonomy hash mismatch");
  std::optional<GroundTruthFile> gt_val;
  if (!cfg.gt_val.empty()) {
    gt_val = load_ground_truth(cfg.gt_val);
    if (gt_val->z != gt_train.z) throw ValidationError("train and val Z differ");
  }

  int epochs_done = 0;
  std::optional<LtaModel<float>> model;
  std::vector<MatF> velocity;
  if (cfg.resume_from) {
    model.emplace(load_model(*cfg.resume_from));
    const json ck = read_json(*cfg.resume_from / "config.json");
    epochs_done = get_field_or(ck, "epochs_done", 0, "checkpoint config");
    if (model->config().variant != cfg.variant) throw ValidationError("resume: checkpoint variant differs from config");
    if (load_taxonomy(*cfg.resume_from / "taxonomy.json") != taxonomy) throw ValidationError("resume: taxonomy differs");
    const auto opt = fs::exists(*cfg.resume_from / "optim.json") ? load_tensor_set(*cfg.resume_from, "optim.json")
                                                                  : std::map<std::string, MatF>{};
    for (const auto& p : model->params().items()) {
      auto it = opt.find(p.name);
      velocity.push_back(it != opt.end() ? it->second : MatF::Zero(p.value.rows(), p.value.cols()));
    }
  } else {
    const auto mcfg = resolve_model_config(cfg.model, cfg.variant, store, gt_train, taxonomy);
    model.emplace(mcfg, hash_combine(cfg.seed, fnv1a64("init")));
    if (mcfg.variant == Variant::clip_attention && !mcfg.learned_query) {
      auto q = store.prompt_query();
      if (!q) throw ValidationError("clip_attention needs a prompt_query in the store (or learned_query)");
      model->set_prompt_query(q->second);
    }
    for (const auto& p : model->params().items()) velocity.push_back(MatF::Zero(p.value.rows(), p.value.cols()));
  }
  const auto& mcfg = model->config();
  if (store.c() != mcfg.c || store.d_video() != mcfg.d_video || gt_train.z != mcfg.z) {
    throw ValidationError("store/ground truth shapes differ from the model config");
  }

  std::optional<TextTables> tables;
  if (mcfg.variant == Variant::img_plus_clip_text) tables = checked_text_tables(store, taxonomy);
  const Dataset train_ds = load_dataset(store, gt_train, mcfg, tables ? &*tables : nullptr);
  std::optional<Dataset> val_ds;
  if (gt_val) val_ds = load_dataset(store, *gt_val, mcfg, tables ? &*tables : nullptr);

  const auto n = train_ds.size();
  const auto batch = static_cast<std::size_t>(cfg.batch_size);
  const std::size_t steps_per_epoch = (n + batch - 1) / batch;
  const double total_steps = static_cast<double>(steps_per_epoch) * cfg.epochs;
  auto& params = model->params();

  RunLog log;
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<std::size_t> order(n);
  const int last_epoch = cfg.stop_after_epoch > 0 ? std::min(cfg.epochs, cfg.stop_after_epoch) : cfg.epochs;
  for (int epoch = epochs_done + 1; epoch <= last_epoch; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle_rng(hash_combine(cfg.seed, static_cast<std::uint64_t>(epoch)));
    shuffle_rng.shuffle(order.begin(), order.end());
    double epoch_loss = 0.0;
    for (std::size_t s = 0; s < steps_per_epoch; ++s) {
      const std::size_t lo = s * batch;
      const std::size_t hi = std::min(n, lo + batch);
      const float w = 1.0f / static_cast<float>(hi - lo);
      params.zero_grad();
      double batch_loss = 0.0;
      for (std::size_t i = lo; i < hi; ++i) {
        const auto idx = order[i];
        ad::Tape<float> tape;
        auto b = model->bind(tape, true);
        auto logits = model->forward_example(tape, b, train_ds.inputs[idx]);
        auto loss = anticipation_loss_graph(logits.verb, logits.noun, train_ds.targets[idx]);
        const double lv = loss.value()(0, 0);
        if (!std::isfinite(lv)) {
          throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + " batch " + std::to_string(s) +
                             " (example " + train_ds.ids[idx] + ")");
        }
        tape.backward(loss);
        model->accumulate_grads(tape, b, w);
        batch_loss += lv;
      }
      epoch_loss += batch_loss;

      const double step = static_cast<double>((epoch - 1) * static_cast<int>(steps_per_epoch)) + static_cast<double>(s);
      const double lr = 0.5 * cfg.base_lr * (1.0 + std::cos(3.14159265358979323846 * step / total_steps));
      if (cfg.weight_decay > 0.0) {
        for (auto& p : params.items()) {
          if (p.trainable) p.grad += p.value * static_cast<float>(cfg.weight_decay);
        }
      }
      if (cfg.grad_clip > 0.0) {
        double norm2 = 0.0;
        for (const auto& p : params.items()) {
          if (p.trainable) norm2 += static_cast<double>(p.grad.squaredNorm());
        }
        const double norm = std::sqrt(norm2);
        if (!std::isfinite(norm)) {
          throw NumericError("non-finite gradient at epoch " + std::to_string(epoch) + " batch " + std::to_string(s));
        }
        if (norm > cfg.grad_clip) {
          const auto f = static_cast<float>(cfg.grad_clip / norm);
          for (auto& p : params.items()) p.grad *= f;
        }
      }
      for (std::size_t i = 0; i < params.size(); ++i) {
        auto& p = params.items()[i];
        if (!p.trainable) continue;
        velocity[i] = velocity[i] * static_cast<float>(cfg.momentum) + p.grad;
        p.value -= velocity[i] * static_cast<float>(lr);
      }
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = epoch_loss / static_cast<double>(n);
    const bool last = epoch == last_epoch;
    if (val_ds && ((cfg.eval_every > 0 && epoch % cfg.eval_every == 0) || last)) {
      auto pf = detail::predict(*model, *val_ds, cfg.k, cfg.temperature, cfg.eval_seed, taxonomy.sha256());
      auto rep = evaluate(pf, *gt_val, taxonomy);
      rec.val_verb_ed = rep.verb_ed;
      rec.val_noun_ed = rep.noun_ed;
    }
    rec.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    log.epochs.push_back(rec);
    epochs_done = epoch;
  }

  const fs::path ckpt = cfg.out_dir / "checkpoint";
  json extra{{"train", cfg.to_json()}, {"epochs_done", epochs_done}, {"taxonomy_sha256", taxonomy.sha256()}};
  save_model(*model, ckpt, extra);
  save_taxonomy(taxonomy, ckpt / "taxonomy.json");
  detail::save_optimizer(ckpt, *model, velocity);
  log.checkpoint = ckpt;
  write_text(cfg.out_dir / "runlog.jsonl", log.to_jsonl());

  if (gt_val) {
    EvalConfig ec{cfg.k, cfg.temperature, cfg.eval_seed, cfg.out_dir, {}};
    log.final_eval = run_eval(*model, store, *gt_val, taxonomy, ec).report;
  }
  return TrainResult{ckpt, std::move(log)};
}

// Results table over finished runs: each run directory holds
// checkpoint/config.json and eval_report.json.
inline std::vector<MethodRow> collect_runs(const std::vector<fs::path>& runs) {
  std::vector<MethodRow> rows;
  for (const auto& dir : runs) {
    const json ck = read_json(dir / "checkpoint" / "config.json");
    const auto variant = parse_variant(get_field<std::string>(ck, "variant", "checkpoint config"));
    const auto rep = EvalReport::from_json(read_json(dir / "eval_report.json"));
    rows.push_back(MethodRow{variant_method_label(variant), rep.verb_ed, rep.noun_ed});
  }
  return rows;
}

}  // namespace vclip
