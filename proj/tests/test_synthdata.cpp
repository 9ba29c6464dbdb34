// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include "test_util.hpp"

using namespace vclip;
using vclip::testing::TempDir;

namespace {

double cosine(const MatF& a, const MatF& b) {
  const auto x = a.cast<double>(), y = b.cast<double>();
  return (x * y.transpose())(0, 0) / (x.norm() * y.norm());
}

std::map<std::string, std::string> snapshot(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) files[fs::relative(e.path(), root).string()] = read_text(e.path());
  }
  return files;
}

SynthConfig small() {
  SynthConfig c;
  c.n_train = 12;
  c.n_val = 5;
  c.c = 16;
  c.d_video = 12;
  c.z = 5;
  c.n_verbs = 6;
  c.n_nouns = 7;
  c.seed = 3;
  return c;
}

}  // namespace

TEST(Synth, SameConfigGivesByteIdenticalOutput) {
  TempDir a("synth"), b("synth");
  generate(small(), a.path());
  generate(small(), b.path());
  const auto sa = snapshot(a.path()), sb = snapshot(b.path());
  EXPECT_EQ(sa, sb);
  EXPECT_TRUE(sa.count("store/manifest.json"));
  EXPECT_TRUE(sa.count("gt_train.json"));
  EXPECT_TRUE(sa.count("gt_val.json"));
  EXPECT_TRUE(sa.count("taxonomy.json"));
  auto other = small();
  other.seed = 4;
  TempDir c("synth");
  generate(other, c.path());
  EXPECT_NE(snapshot(c.path()).at("store/clips/0.frames.f32"), sa.at("store/clips/0.frames.f32"));
}

TEST(Synth, ExamplesArePureFunctionsOfSeedAndIndex) {
  const auto cfg = small();
  const auto a = synth_example(cfg, Split::train, 7);
  synth_example(cfg, Split::train, 3);
  const auto b = synth_example(cfg, Split::train, 7);
  EXPECT_EQ(a.clips[1].frames.frames, b.clips[1].frames.frames);
  EXPECT_EQ(a.example_id, "train_00007");
  EXPECT_EQ(a.clips[1].frames.clip_id, "train_00007_c1");
}

TEST(Synth, ZeroNoiseDenseFramesEqualPrototype) {
  auto cfg = small();
  cfg.noise_std = 0.0;
  for (int i = 0; i < 20; ++i) {
    const auto ex = synth_example(cfg, Split::val, i);
    const MatF proto = frame_prototype(cfg, ex.latent_noun);
    for (const auto& clip : ex.clips) {
      for (Eigen::Index r = 0; r < clip.frames.frames.rows(); ++r) EXPECT_EQ(MatF(clip.frames.frames.row(r)), proto);
      EXPECT_EQ(clip.video.vector, MatF(video_prototype(cfg, ex.latent_verb) * static_cast<float>(cfg.video_strength)));
    }
  }
}

TEST(Synth, ZeroNoiseSingleFrameHasOneSignalRow) {
  auto cfg = small();
  cfg.noise_std = 0.0;
  cfg.signal_mode = SignalMode::single_frame;
  cfg.n_frames = 6;
  for (int i = 0; i < 20; ++i) {
    const auto ex = synth_example(cfg, Split::train, i);
    for (const auto& clip : ex.clips) {
      ASSERT_GE(clip.signal_frame, 0);
      for (Eigen::Index r = 0; r < 6; ++r) {
        if (r == clip.signal_frame) {
          EXPECT_EQ(MatF(clip.frames.frames.row(r)), frame_prototype(cfg, ex.latent_noun));
        } else {
          EXPECT_EQ(clip.frames.frames.row(r).squaredNorm(), 0.0f);
        }
      }
    }
  }
}

TEST(Synth, LabelsAreAFixedFunctionOfTheLatent) {
  const auto cfg = small();
  for (int i = 0; i < 30; ++i) {
    const auto ex = synth_example(cfg, Split::train, i);
    ASSERT_EQ(static_cast<int>(ex.gt.actions.size()), cfg.z);
    for (int t = 0; t < cfg.z; ++t) {
      const auto& a = ex.gt.actions[static_cast<std::size_t>(t)];
      EXPECT_EQ(a.verb_id, synth_label(cfg, true, ex.latent_verb, t));
      EXPECT_EQ(a.noun_id, synth_label(cfg, false, ex.latent_noun, t));
      EXPECT_TRUE(a.verb_id >= 0 && a.verb_id < cfg.n_verbs);
      EXPECT_TRUE(a.noun_id >= 0 && a.noun_id < cfg.n_nouns);
    }
  }
}

TEST(Synth, GeneratedFilesAreConsistent) {
  TempDir dir("synth");
  const auto cfg = small();
  const auto out = generate(cfg, dir.path());
  const auto taxonomy = load_taxonomy(out.taxonomy_file);
  EXPECT_EQ(static_cast<int>(taxonomy.verbs().size()), cfg.n_verbs);
  EXPECT_EQ(static_cast<int>(taxonomy.nouns().size()), cfg.n_nouns);
  const auto gt = load_ground_truth(out.gt_train_file);
  EXPECT_EQ(gt.taxonomy_sha256, taxonomy.sha256());
  EXPECT_EQ(gt.z, cfg.z);
  EXPECT_EQ(static_cast<int>(gt.examples.size()), cfg.n_train);
  EXPECT_EQ(static_cast<int>(load_ground_truth(out.gt_val_file).examples.size()), cfg.n_val);
  const auto store = FeatureStore::open(out.store_dir);
  EXPECT_EQ(store.c(), cfg.c);
  EXPECT_EQ(store.d_video(), cfg.d_video);
  EXPECT_EQ(static_cast<int>(store.clip_ids().size()), (cfg.n_train + cfg.n_val) * cfg.n_input_clips);
  for (auto cat : kAllCategories) {
    ASSERT_TRUE(store.has_text_table(cat));
    EXPECT_EQ(static_cast<std::size_t>(store.text_table(cat).rows()), taxonomy.size(cat));
  }
  EXPECT_TRUE(store.prompt_query());
  EXPECT_EQ(SynthConfig::from_json(read_json(dir / "synth_config.json")).to_json(), cfg.to_json());
}

TEST(Synth, InvalidConfigIsValidationError) {
  auto cfg = small();
  cfg.noise_std = -0.1;
  EXPECT_THROW(cfg.validate(), ValidationError);
  cfg = small();
  cfg.n_train = 0;
  EXPECT_THROW(cfg.validate(), ValidationError);
  cfg = small();
  cfg.z = 0;
  EXPECT_THROW(cfg.validate(), ValidationError);
  EXPECT_THROW(SynthConfig::from_json(json{{"signal_mode", "sparse"}}), ValidationError);
}

TEST(Synth, NearestPrototypeOfMeanPoolIsAccurateInDenseMode) {
  SynthConfig cfg;
  cfg.c = 64;
  cfg.noise_std = 0.1;
  cfg.seed = 17;
  std::vector<MatF> protos;
  for (int z = 0; z < cfg.n_latent; ++z) protos.push_back(frame_prototype(cfg, z));
  int correct = 0;
  for (int i = 0; i < 500; ++i) {
    const auto ex = synth_example(cfg, Split::train, i);
    const MatF pooled = mean_pool(ex.clips[0].frames.frames);
    int best = 0;
    for (int z = 1; z < cfg.n_latent; ++z) {
      if ((pooled - protos[z]).squaredNorm() < (pooled - protos[best]).squaredNorm()) best = z;
    }
    correct += best == ex.latent_noun;
  }
  EXPECT_GE(correct, 495);
}

TEST(Synth, SingleFrameSignalDilutesWithMoreFrames) {
  std::vector<double> mean_cos;
  for (int n : {2, 8, 32}) {
    SynthConfig cfg;
    cfg.signal_mode = SignalMode::single_frame;
    cfg.n_frames = n;
    cfg.noise_std = 0.5;
    cfg.c = 64;
    double sum = 0.0;
    for (int i = 0; i < 200; ++i) {
      const auto ex = synth_example(cfg, Split::train, i);
      sum += cosine(mean_pool(ex.clips[0].frames.frames), frame_prototype(cfg, ex.latent_noun));
    }
    mean_cos.push_back(sum / 200.0);
  }
  EXPECT_GT(mean_cos[0], mean_cos[1]);
  EXPECT_GT(mean_cos[1], mean_cos[2]);
}

TEST(Synth, FactorizedLatentsSplitAcrossEncoders) {
  auto cfg = small();
  cfg.factorized = true;
  cfg.noise_std = 0.0;
  int differing = 0;
  for (int i = 0; i < 40; ++i) {
    const auto ex = synth_example(cfg, Split::train, i);
    differing += ex.latent_verb != ex.latent_noun;
    EXPECT_EQ(MatF(ex.clips[0].frames.frames.row(0)), frame_prototype(cfg, ex.latent_noun));
    EXPECT_EQ(ex.clips[0].video.vector, video_prototype(cfg, ex.latent_verb));
  }
  EXPECT_GT(differing, 20);
}
