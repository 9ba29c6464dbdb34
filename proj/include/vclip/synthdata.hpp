// SPDX-License-Identifier: Apache-2.0
#pragma once

// Desk-scale synthetic benchmark. Each example has a latent class z; the
// future action sequence is a fixed hash of (z, step), frame embeddings and
// video descriptors carry class prototypes under isotropic Gaussian noise.
//
// Noise is scaled per coordinate by noise_std / sqrt(width), so noise_std is
// the expected noise norm relative to the unit-norm prototypes.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "vclip/error.hpp"
#include "vclip/featurestore.hpp"
#include "vclip/io.hpp"
#include "vclip/metrics.hpp"
#include "vclip/taxonomy.hpp"
#include "vclip/tensor.hpp"

namespace vclip {

enum class SignalMode { dense, single_frame };

inline const char* signal_mode_name(SignalMode m) { return m == SignalMode::dense ? "dense" : "single_frame"; }

inline SignalMode parse_signal_mode(std::string_view s) {
  if (s == "dense") return SignalMode::dense;
  if (s == "single_frame") return SignalMode::single_frame;
  throw ValidationError("unknown signal_mode \"" + std::string(s) + "\"");
}

struct SynthConfig {
  int n_train = 200;
  int n_val = 100;
  int n_input_clips = 2;
  int n_frames = 4;
  int c = 32;
  int d_video = 32;
  int z = 4;
  int n_verbs = 8;
  int n_nouns = 8;
  SignalMode signal_mode = SignalMode::dense;
  double noise_std = 0.1;
  std::uint64_t seed = 0;
  int n_latent = 8;
  // Prototype scale inside video descriptors.
  double video_strength = 0.25;
  // Independent verb and noun latents: verbs are visible only in the video
  // descriptor, nouns only in the frame embeddings.
  bool factorized = false;
  int n_scenarios = 4;
  int n_places = 4;

  void validate() const {
    auto need = [](bool ok, const std::string& msg) {
      if (!ok) throw ValidationError("synth config: " + msg);
    };
    need(n_train >= 1 && n_val >= 1, "example counts must be >= 1");
    need(n_input_clips >= 1, "n_input_clips must be >= 1");
    need(n_frames >= 1, "N must be >= 1");
    need(c >= 2 && d_video >= 2, "widths must be >= 2");
    need(z >= 1, "Z must be >= 1");
    need(n_verbs >= 1 && n_nouns >= 1, "class counts must be >= 1");
    need(n_latent >= 1, "n_latent must be >= 1");
    need(n_scenarios >= 1 && n_places >= 1, "scenario/place counts must be >= 1");
    need(std::isfinite(noise_std) && noise_std >= 0.0, "noise_std must be >= 0");
    need(std::isfinite(video_strength) && video_strength >= 0.0, "video_strength must be >= 0");
  }

  json to_json() const {
    return json{{"n_train", n_train},       {"n_val", n_val},
                {"n_input_clips", n_input_clips}, {"N", n_frames},
                {"c", c},                   {"d_video", d_video},
                {"Z", z},                   {"n_verbs", n_verbs},
                {"n_nouns", n_nouns},       {"signal_mode", signal_mode_name(signal_mode)},
                {"noise_std", noise_std},   {"seed", seed},
                {"n_latent", n_latent},     {"video_strength", video_strength},
                {"factorized", factorized}, {"n_scenarios", n_scenarios},
                {"n_places", n_places}};
  }

  static SynthConfig from_json(const json& j) {
    const std::string where = "synth config";
    SynthConfig s;
    s.n_train = get_field_or(j, "n_train", s.n_train, where);
    s.n_val = get_field_or(j, "n_val", s.n_val, where);
    s.n_input_clips = get_field_or(j, "n_input_clips", s.n_input_clips, where);
    s.n_frames = get_field_or(j, "N", s.n_frames, where);
    s.c = get_field_or(j, "c", s.c, where);
    s.d_video = get_field_or(j, "d_video", s.d_video, where);
    s.z = get_field_or(j, "Z", s.z, where);
    s.n_verbs = get_field_or(j, "n_verbs", s.n_verbs, where);
    s.n_nouns = get_field_or(j, "n_nouns", s.n_nouns, where);
    if (j.contains("signal_mode")) s.signal_mode = parse_signal_mode(get_field<std::string>(j, "signal_mode", where));
    s.noise_std = get_field_or(j, "noise_std", s.noise_std, where);
    s.seed = get_field_or(j, "seed", s.seed, where);
    s.n_latent = get_field_or(j, "n_latent", s.n_latent, where);
    s.video_strength = get_field_or(j, "video_strength", s.video_strength, where);
    s.factorized = get_field_or(j, "factorized", s.factorized, where);
    s.n_scenarios = get_field_or(j, "n_scenarios", s.n_scenarios, where);
    s.n_places = get_field_or(j, "n_places", s.n_places, where);
    s.validate();
    return s;
  }
};

enum class Split { train, val };

struct SynthClip {
  FrameEmbeddingSequence frames;
  VideoDescriptor video;
  int signal_frame = -1;  // single_frame mode only
};

struct SynthExample {
  std::string example_id;
  int latent_verb = 0;  // equals latent_noun unless factorized
  int latent_noun = 0;
  std::vector<SynthClip> clips;
  GroundTruthSequence gt;
};

inline std::string synth_example_id(Split split, int index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s_%05d", split == Split::train ? "train" : "val", index);
  return buf;
}

inline std::string synth_clip_id(const std::string& example_id, int clip) {
  return example_id + "_c" + std::to_string(clip);
}

inline MatF frame_prototype(const SynthConfig& cfg, int latent) {
  return stub_embed(cfg.seed, "synth/frame/" + std::to_string(latent), cfg.c);
}

inline MatF video_prototype(const SynthConfig& cfg, int latent) {
  return stub_embed(cfg.seed, "synth/video/" + std::to_string(latent), cfg.d_video);
}

// Future label at step t for latent z: hash(seed, z, t) mod class count.
inline int synth_label(const SynthConfig& cfg, bool verb, int latent, int step) {
  const std::uint64_t tag = verb ? 0x7665726Bull : 0x6E6F756Eull;
  const std::uint64_t h =
      hash_combine(hash_combine(hash_combine(cfg.seed, tag), static_cast<std::uint64_t>(latent)),
                   static_cast<std::uint64_t>(step));
  return static_cast<int>(h % static_cast<std::uint64_t>(verb ? cfg.n_verbs : cfg.n_nouns));
}

inline Taxonomy synth_taxonomy(const SynthConfig& cfg) {
  auto names = [](const char* prefix, int n) {
    std::vector<std::string> v;
    for (int i = 0; i < n; ++i) v.push_back(std::string(prefix) + "_" + std::to_string(i));
    return v;
  };
  return Taxonomy(names("verb", cfg.n_verbs), names("noun", cfg.n_nouns), names("scenario", cfg.n_scenarios),
                  names("place", cfg.n_places));
}

inline std::uint64_t synth_text_seed(const SynthConfig& cfg) { return hash_combine(cfg.seed, fnv1a64("synth/text")); }

// Pure function of (cfg, split, index).
inline SynthExample synth_example(const SynthConfig& cfg, Split split, int index) {
  Rng rng(hash_combine(hash_combine(cfg.seed, split == Split::train ? 1u : 2u), static_cast<std::uint64_t>(index)));
  SynthExample ex;
  ex.example_id = synth_example_id(split, index);
  ex.latent_noun = static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.n_latent)));
  ex.latent_verb = cfg.factorized ? static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.n_latent))) : ex.latent_noun;

  const MatF fproto = frame_prototype(cfg, ex.latent_noun);
  const MatF vproto = video_prototype(cfg, ex.latent_verb);
  const double frame_sigma = cfg.noise_std / std::sqrt(static_cast<double>(cfg.c));
  const double video_sigma = cfg.noise_std / std::sqrt(static_cast<double>(cfg.d_video));
  auto noise = [&rng](MatF& m, double sigma) {
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] += static_cast<float>(sigma * rng.normal());
  };

  for (int k = 0; k < cfg.n_input_clips; ++k) {
    SynthClip clip;
    const std::string cid = synth_clip_id(ex.example_id, k);
    MatF frames = MatF::Zero(cfg.n_frames, cfg.c);
    if (cfg.signal_mode == SignalMode::dense) {
      for (int r = 0; r < cfg.n_frames; ++r) frames.row(r) = fproto;
    } else {
      clip.signal_frame = static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.n_frames)));
      frames.row(clip.signal_frame) = fproto;
    }
    if (cfg.noise_std > 0.0) noise(frames, frame_sigma);
    MatF video = vproto * static_cast<float>(cfg.factorized ? 1.0 : cfg.video_strength);
    if (cfg.noise_std > 0.0) noise(video, video_sigma);
    clip.frames = FrameEmbeddingSequence{cid, std::move(frames)};
    clip.video = VideoDescriptor{cid, std::move(video)};
    ex.clips.push_back(std::move(clip));
  }

  ex.gt.example_id = ex.example_id;
  for (int t = 0; t < cfg.z; ++t) {
    ex.gt.actions.push_back(ActionLabel{synth_label(cfg, true, ex.latent_verb, t), synth_label(cfg, false, ex.latent_noun, t)});
  }
  return ex;
}

struct SynthOutput {
  fs::path root;
  fs::path store_dir;
  fs::path taxonomy_file;
  fs::path gt_train_file;
  fs::path gt_val_file;
  Taxonomy taxonomy;
  GroundTruthFile gt_train;
  GroundTruthFile gt_val;
};

// Writes <out>/store, <out>/taxonomy.json, <out>/gt_train.json,
// <out>/gt_val.json and <out>/synth_config.json.
inline SynthOutput generate(const SynthConfig& cfg, const fs::path& out) {
  cfg.validate();
  Taxonomy taxonomy = synth_taxonomy(cfg);
  const auto hash = taxonomy.sha256();
  SynthOutput result{out, out / "store", out / "taxonomy.json", out / "gt_train.json", out / "gt_val.json",
                     taxonomy, GroundTruthFile{1, cfg.z, hash, {}}, GroundTruthFile{1, cfg.z, hash, {}}};
  if (fs::exists(result.store_dir)) fs::remove_all(result.store_dir);
  {
    FeatureStoreWriter writer(result.store_dir);
    for (auto split : {Split::train, Split::val}) {
      const int n = split == Split::train ? cfg.n_train : cfg.n_val;
      auto& gt = split == Split::train ? result.gt_train : result.gt_val;
      for (int i = 0; i < n; ++i) {
        auto ex = synth_example(cfg, split, i);
        for (const auto& clip : ex.clips) writer.write_clip(clip.frames, clip.video);
        gt.examples.emplace(ex.example_id, std::move(ex.gt));
      }
    }
    const auto encoder = stub_text_encoder(synth_text_seed(cfg), cfg.c);
    for (const auto& [cat, tmpl] : default_prompt_templates()) {
      writer.write_text_table(build_text_table(taxonomy, cat, tmpl, encoder));
    }
    writer.write_prompt_query(kDefaultQueryPrompt, encoder(kDefaultQueryPrompt));
    writer.seal();
  }
  save_taxonomy(taxonomy, result.taxonomy_file);
  save_ground_truth(result.gt_train, result.gt_train_file);
  save_ground_truth(result.gt_val, result.gt_val_file);
  write_json(out / "synth_config.json", cfg.to_json());
  return result;
}

}  // namespace vclip
