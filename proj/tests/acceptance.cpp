// SPDX-License-Identifier: Apache-2.0
//
// Acceptance run: one PASS/FAIL line per criterion. Exit status is 0 only if
// every criterion passes.

#include <chrono>
#include <cstdio>
#include <cstring>
#include <functional>
#include <iostream>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>
#include <unistd.h>

#include "gradcheck.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace vclip;
namespace vt = vclip::testing;

namespace {

// Tolerances and budgets.
constexpr double kOracleBudgetSeconds = 30.0;
constexpr int kOracleRandomPairs = 500;
constexpr int kMonotonicitySets = 200;
constexpr double kInvarianceTol = 1e-6;
constexpr double kWeightSumTol = 1e-6;
constexpr double kGradTol = vt::kGradTolerance;  // relative, double precision
constexpr int kGradInstances = 20;
constexpr double kGradBudgetSeconds = 120.0;
constexpr double kSmokeThreshold = 0.30;
constexpr int kSmokeEpochs = 30;
constexpr double kSmokeBudgetSeconds = 300.0;  // per run
constexpr double kOrderingBudgetSeconds = 900.0;
constexpr int kOrderingEpochs = 100;
constexpr double kOrderingLr = 0.1;
constexpr double kOrderingVideoStrength = 0.1;
constexpr int kProbeFrames = 100;
constexpr double kProbeNoise = 0.01;

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, x);
  return buf;
}

int g_failures = 0;

void criterion(const std::string& name, const std::function<Outcome()>& body) {
  const auto t0 = Clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  if (!o.pass) ++g_failures;
  std::cout << (o.pass ? "PASS" : "FAIL") << "  " << name << "  [" << o.detail << "; " << fmt("%.1f", seconds_since(t0))
            << " s]" << std::endl;
}

fs::path g_root;

vt::Seq random_seq(Rng& rng, std::size_t max_len, int alphabet) {
  vt::Seq s(rng.below(max_len + 1));
  for (auto& x : s) x = static_cast<int>(rng.below(static_cast<std::uint64_t>(alphabet)));
  return s;
}

Outcome edit_distance_oracle() {
  const auto t0 = Clock::now();
  const auto seqs = vt::all_sequences(4, 3);
  std::size_t pairs = 0, mismatches = 0;
  for (const auto& a : seqs) {
    const auto dist = vt::bfs_all(a, {0, 1, 2}, 6);
    for (const auto& b : seqs) {
      ++pairs;
      mismatches += static_cast<int>(damerau_levenshtein(a, b)) != dist.at(b);
    }
  }
  Rng rng(20240601);
  for (int i = 0; i < kOracleRandomPairs; ++i) {
    const int alphabet = 2 + static_cast<int>(rng.below(4));
    const auto a = random_seq(rng, 6, alphabet);
    const auto b = random_seq(rng, 6, alphabet);
    ++pairs;
    mismatches += static_cast<int>(damerau_levenshtein(a, b)) != vt::brute_force_edit_distance(a, b);
  }
  const double t = seconds_since(t0);
  return {mismatches == 0 && t < kOracleBudgetSeconds,
          std::to_string(pairs) + " pairs, " + std::to_string(mismatches) + " mismatches, " + fmt("%.1f", t) +
              " s < 30 s"};
}

GroundTruthSequence gt_of(const vt::Seq& v, const vt::Seq& n) {
  GroundTruthSequence g{"x", {}};
  for (std::size_t i = 0; i < v.size(); ++i) g.actions.push_back({v[i], n[i]});
  return g;
}

Outcome metric_protocol() {
  bool ok = true;
  std::string notes;
  const auto g = gt_of({0, 1, 2, 3}, {0, 1, 2, 3});
  const double exact = ed_at_zk(PredictionSet{"x", {{5, 5, 5, 5}, {0, 1, 2, 3}}, {{0, 1, 2, 3}, {5, 5, 5, 5}}}, g).verb;
  const double all_sub = ed_at_zk(PredictionSet{"x", {{9, 8, 7, 6}}, {{0, 1, 2, 3}}}, g).verb;
  const double min_k =
      ed_at_zk(PredictionSet{"x", {{0, 1, 2, 3}, {9, 9, 9, 9}}, {{0, 0, 0, 0}, {0, 0, 0, 0}}}, gt_of({0, 1, 2, 9}, {0, 0, 0, 0}))
          .verb;
  ok = exact == 0.0 && all_sub == 1.0 && min_k == 0.25;
  notes = "examples " + fmt("%.2f", exact) + "/" + fmt("%.2f", all_sub) + "/" + fmt("%.2f", min_k) + " (want 0/1/0.25)";

  Rng rng(77);
  int violations = 0;
  for (int s = 0; s < kMonotonicitySets; ++s) {
    const int z = 1 + static_cast<int>(rng.below(20));
    auto draw = [&] {
      vt::Seq q(static_cast<std::size_t>(z));
      for (auto& x : q) x = static_cast<int>(rng.below(6));
      return q;
    };
    const auto gt = gt_of(draw(), draw());
    PredictionSet p{"x", {}, {}};
    FieldScores prev{2.0, 2.0};
    for (int k = 0; k < 8; ++k) {
      p.verb_seqs.push_back(draw());
      p.noun_seqs.push_back(draw());
      const auto sc = ed_at_zk(p, gt);
      if (sc.verb > prev.verb || sc.noun > prev.noun) ++violations;
      if (sc.verb < 0 || sc.verb > 1 || sc.noun < 0 || sc.noun > 1) ++violations;
      prev = sc;
    }
  }
  ok = ok && violations == 0;
  notes += ", " + std::to_string(kMonotonicitySets) + " sets, " + std::to_string(violations) + " monotonicity/range violations";
  return {ok, notes};
}

template <class M>
M permute_rows(const M& m, Rng& rng) {
  std::vector<int> perm(static_cast<std::size_t>(m.rows()));
  std::iota(perm.begin(), perm.end(), 0);
  rng.shuffle(perm.begin(), perm.end());
  M out(m.rows(), m.cols());
  for (std::size_t i = 0; i < perm.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(perm[i]);
  return out;
}

Outcome aggregation_invariants() {
  Rng rng(31);
  double worst_pool = 0.0, worst_attn = 0.0, worst_sum = 0.0;
  bool widths_ok = true, selection_ok = true;
  std::vector<std::string> verbs, nouns;
  for (int i = 0; i < 20; ++i) verbs.push_back("v" + std::to_string(i));
  for (int i = 0; i < 50; ++i) nouns.push_back("n" + std::to_string(i));
  const Taxonomy tax(verbs, nouns, {"s0", "s1", "s2", "s3"}, {"p0", "p1", "p2"});
  for (int trial = 0; trial < 100; ++trial) {
    const int c = 2 + static_cast<int>(rng.below(15));
    const int heads = 1 + static_cast<int>(rng.below(4));
    const int d = heads * (1 + static_cast<int>(rng.below(4)));
    const int n = 1 + static_cast<int>(rng.below(16));
    const MatD frames = vt::random_matrix(rng, n, c);
    const MatD permuted = permute_rows(frames, rng);
    worst_pool = std::max(worst_pool, (mean_pool(frames) - mean_pool(permuted)).cwiseAbs().maxCoeff());
    CrossAttentionParams<double> p{vt::random_matrix(rng, c, d), vt::random_matrix(rng, c, d),
                                   vt::random_matrix(rng, c, d), vt::random_matrix(rng, d, c), heads};
    const MatD q = vt::random_matrix(rng, 1, c);
    const auto a = cross_attention_aggregate(p, q, frames);
    const auto b = cross_attention_aggregate(p, q, permuted);
    worst_attn = std::max(worst_attn, (a.descriptor - b.descriptor).cwiseAbs().maxCoeff());
    for (const auto& w : a.weights) {
      worst_sum = std::max(worst_sum, std::abs(w.sum() - 1.0));
      if (w.minCoeff() < 0.0) worst_sum = std::numeric_limits<double>::infinity();
    }
    widths_ok = widths_ok && mean_pool(frames).cols() == c && a.descriptor.cols() == c;

    const auto tables = build_text_tables(tax, default_prompt_templates(), stub_text_encoder(trial, c));
    const MatF ff = frames.cast<float>();
    const auto base = img_text_select(ff, tables);
    widths_ok = widths_ok && base.descriptor.cols() == 5 * c;
    const float s = static_cast<float>(rng.uniform(0.05, 20.0));
    TextTables scaled_tables = tables;
    for (auto& [cat, t] : scaled_tables.by_category) {
      for (Eigen::Index r = 0; r < t.embeddings.rows(); ++r) t.embeddings.row(r) *= static_cast<float>(rng.uniform(0.05, 20.0));
    }
    selection_ok = selection_ok && img_text_select(MatF(ff * s), tables).selected == base.selected &&
                   img_text_select(ff, scaled_tables).selected == base.selected;
  }
  const bool ok = worst_pool <= kInvarianceTol && worst_attn <= kInvarianceTol && worst_sum <= kWeightSumTol &&
                  widths_ok && selection_ok;
  return {ok, "100 instances; perm drift pool " + fmt("%.1e", worst_pool) + ", attn " + fmt("%.1e", worst_attn) +
                  " (<= 1e-6); |sum w - 1| " + fmt("%.1e", worst_sum) + " (<= 1e-6); scale-invariant top-1 " +
                  (selection_ok ? "yes" : "NO") + "; widths c/c/5c " + (widths_ok ? "yes" : "NO")};
}

Outcome gradient_correctness() {
  const auto t0 = Clock::now();
  double worst_attn = 0.0, worst_model = 0.0;
  std::size_t checked = 0;
  std::string where;
  for (int i = 0; i < kGradInstances; ++i) {
    Rng shape(static_cast<std::uint64_t>(i) + 1000);
    const int heads = 1 + static_cast<int>(shape.below(3));
    const int d = heads * (1 + static_cast<int>(shape.below(3)));
    const int c = 2 + static_cast<int>(shape.below(5));
    const int n = 1 + static_cast<int>(shape.below(6));
    const auto r = vt::attention_gradcheck(static_cast<std::uint64_t>(i), c, d, heads, n);
    checked += r.n_checked;
    if (r.max_rel_error > worst_attn) {
      worst_attn = r.max_rel_error;
      where = "attention " + r.worst;
    }
  }
  for (int i = 0; i < kGradInstances; ++i) {
    const auto r = vt::model_gradcheck(Variant::clip_attention, static_cast<std::uint64_t>(i) + 500);
    checked += r.n_checked;
    if (r.max_rel_error > worst_model) {
      worst_model = r.max_rel_error;
      if (worst_model > worst_attn) where = "model " + r.worst;
    }
  }
  const double t = seconds_since(t0);
  return {worst_attn <= kGradTol && worst_model <= kGradTol && t < kGradBudgetSeconds,
          std::to_string(kGradInstances) + "+" + std::to_string(kGradInstances) + " instances, " +
              std::to_string(checked) + " entries; max rel err attention " + fmt("%.1e", worst_attn) + ", clip_attention model " +
              fmt("%.1e", worst_model) + " (<= 1e-4, worst at " + where + "); " + fmt("%.1f", t) + " s < 120 s"};
}

struct RunResult {
  EvalReport report;
  double seconds = 0.0;
};

RunResult train_and_eval(const SynthOutput& data, Variant v, std::uint64_t seed, const fs::path& out,
                         int epochs = kSmokeEpochs, double lr = 0.05) {
  TrainConfig cfg;
  cfg.variant = v;
  cfg.epochs = epochs;
  cfg.base_lr = lr;
  cfg.seed = seed;
  cfg.eval_seed = seed;
  cfg.store = data.store_dir;
  cfg.gt_train = data.gt_train_file;
  cfg.gt_val = data.gt_val_file;
  cfg.taxonomy = data.taxonomy_file;
  cfg.out_dir = out;
  const auto t0 = Clock::now();
  const auto res = train(cfg);
  return {*res.log.final_eval, seconds_since(t0)};
}

SynthConfig smoke_synth(std::uint64_t seed) {
  SynthConfig s;
  s.n_train = 200;
  s.n_val = 100;
  s.c = 32;
  s.d_video = 32;
  s.z = 4;
  s.n_verbs = 8;
  s.n_nouns = 8;
  s.n_frames = 4;
  s.seed = seed;
  return s;
}

Outcome learning_smoke() {
  bool ok = true;
  std::ostringstream os;
  os << "img_plus_clip, dense, " << kSmokeEpochs << " epochs; val verb/noun:";
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const auto dir = g_root / ("smoke_" + std::to_string(seed));
    const auto data = generate(smoke_synth(seed), dir / "data");
    const auto r = train_and_eval(data, Variant::img_plus_clip, seed, dir / "run");
    ok = ok && r.report.verb_ed < kSmokeThreshold && r.report.noun_ed < kSmokeThreshold && r.seconds < kSmokeBudgetSeconds;
    os << " " << fmt("%.3f", r.report.verb_ed) << "/" << fmt("%.3f", r.report.noun_ed) << " (" << fmt("%.1f", r.seconds)
       << " s)";
    fs::remove_all(dir);
  }
  os << "; all < 0.30 and < 300 s each, chance 0.875";
  return {ok, os.str()};
}

Outcome variant_ordering() {
  const auto t0 = Clock::now();
  int wins = 0;
  std::ostringstream os;
  os << "single_frame N=16 noise 0.5; noun_ed attention vs mean-pool:";
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    auto s = smoke_synth(seed);
    s.signal_mode = SignalMode::single_frame;
    s.n_frames = 16;
    s.noise_std = 0.5;
    s.video_strength = kOrderingVideoStrength;
    const auto dir = g_root / ("order_" + std::to_string(seed));
    const auto data = generate(s, dir / "data");
    const auto attn = train_and_eval(data, Variant::clip_attention, seed, dir / "attn", kOrderingEpochs, kOrderingLr);
    const auto pool = train_and_eval(data, Variant::img_plus_clip, seed, dir / "pool", kOrderingEpochs, kOrderingLr);
    wins += attn.report.noun_ed <= pool.report.noun_ed;
    os << " " << fmt("%.4f", attn.report.noun_ed) << " vs " << fmt("%.4f", pool.report.noun_ed);
    fs::remove_all(dir);
  }
  const double t = seconds_since(t0);
  os << "; attention <= mean-pool in " << wins << "/3 (need 2); " << fmt("%.0f", t) << " s < 900 s";
  return {wins >= 2 && t < kOrderingBudgetSeconds, os.str()};
}

Outcome fusion_complementarity() {
  int wins = 0;
  std::ostringstream os;
  os << "factorized; verb+noun baseline / clip_img / fused:";
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    auto s = smoke_synth(seed);
    s.factorized = true;
    const auto dir = g_root / ("fusion_" + std::to_string(seed));
    const auto data = generate(s, dir / "data");
    auto sum = [](const RunResult& r) { return r.report.verb_ed + r.report.noun_ed; };
    const double base = sum(train_and_eval(data, Variant::baseline, seed, dir / "baseline"));
    const double clip = sum(train_and_eval(data, Variant::clip_img_only, seed, dir / "clip"));
    const double fused = sum(train_and_eval(data, Variant::img_plus_clip, seed, dir / "fused"));
    wins += fused < base && fused < clip;
    os << " " << fmt("%.3f", base) << "/" << fmt("%.3f", clip) << "/" << fmt("%.3f", fused);
    fs::remove_all(dir);
  }
  os << "; fused best in " << wins << "/3 (need 2)";
  return {wins >= 2, os.str()};
}

// Structural schema for one probe JSON line.
std::string probe_schema_violation(const json& j, const Taxonomy& t) {
  static const std::set<std::string> keys{"frame", "place", "scenario", "verbs", "nouns", "names"};
  if (!j.is_object()) return "not an object";
  for (const auto& [k, v] : j.items()) {
    if (!keys.count(k)) return "unexpected key " + k;
  }
  for (const auto& k : keys) {
    if (!j.contains(k)) return "missing key " + k;
  }
  if (!j.at("frame").is_number_integer()) return "frame not an integer";
  auto pair_ok = [](const json& p, std::size_t limit) {
    return p.is_array() && p.size() == 2 && p[0].is_number_integer() && p[0].get<long>() >= 0 &&
           static_cast<std::size_t>(p[0].get<long>()) < limit && p[1].is_number() && p[1].get<double>() >= -1.0 - 1e-9 &&
           p[1].get<double>() <= 1.0 + 1e-9;
  };
  if (!pair_ok(j.at("place"), t.places().size())) return "bad place";
  if (!pair_ok(j.at("scenario"), t.scenarios().size())) return "bad scenario";
  for (const auto& [key, cat] : {std::pair{"verbs", Category::verb}, std::pair{"nouns", Category::noun}}) {
    const auto& list = j.at(key);
    if (!list.is_array() || list.size() != 3) return std::string("bad ") + key;
    for (std::size_t i = 0; i < 3; ++i) {
      if (!pair_ok(list[i], t.size(cat))) return std::string("bad entry in ") + key;
      if (i > 0 && list[i][1].get<double>() > list[i - 1][1].get<double>()) return std::string(key) + " not sorted";
    }
    const auto& names = j.at("names").at(key);
    if (!names.is_array() || names.size() != 3) return std::string("bad names.") + key;
    for (std::size_t i = 0; i < 3; ++i) {
      if (names[i] != t.name_of(cat, list[i][0].get<int>())) return std::string("names.") + key + " mismatch";
    }
  }
  const auto& names = j.at("names");
  if (names.size() != 4) return "names has extra keys";
  if (names.at("place") != t.name_of(Category::place, j.at("place")[0].get<int>())) return "names.place mismatch";
  if (names.at("scenario") != t.name_of(Category::scenario, j.at("scenario")[0].get<int>())) return "names.scenario mismatch";
  return {};
}

Outcome zero_shot_probe_fixture() {
  std::vector<std::string> verbs, nouns;
  for (int i = 0; i < 24; ++i) verbs.push_back("verb_" + std::to_string(i));
  for (int i = 0; i < 64; ++i) nouns.push_back("noun_" + std::to_string(i));
  const Taxonomy tax(verbs, nouns, {"cooking", "cleaning", "gardening"}, {"kitchen", "yard", "garage", "office"});
  const int c = kDefaultClipWidth;
  const auto tables = build_text_tables(tax, default_prompt_templates(), stub_text_encoder(42, c));
  Rng rng(4242);
  int correct = 0;
  std::string violation;
  for (int i = 0; i < kProbeFrames; ++i) {
    const int noun = static_cast<int>(rng.below(tax.nouns().size()));
    MatF frame = tables.at(Category::noun).embeddings.row(noun);
    for (int k = 0; k < c; ++k) frame(0, k) += static_cast<float>(kProbeNoise * rng.normal());
    const auto report = zero_shot_probe(frame, tables);
    correct += report.top3_nouns.front().id == noun;
    const auto line = json::parse(report.to_json(i, tax).dump());
    if (violation.empty()) violation = probe_schema_violation(line, tax);
  }
  return {correct == kProbeFrames && violation.empty(),
          std::to_string(correct) + "/" + std::to_string(kProbeFrames) + " top-1 nouns at c=512, noise 0.01 per dim; schema " +
              (violation.empty() ? "valid" : violation)};
}

bool bits_equal(const MatF& a, const MatF& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         std::memcmp(a.data(), b.data(), sizeof(float) * static_cast<std::size_t>(a.size())) == 0;
}

Outcome determinism_round_trips() {
  const auto dir = g_root / "determinism";
  auto s = smoke_synth(9);
  s.n_train = 40;
  s.n_val = 20;
  const auto data = generate(s, dir / "data");
  bool preds_ok = true;
  for (auto v : {Variant::img_plus_clip, Variant::clip_attention}) {
    const std::string name = variant_name(v);
    train_and_eval(data, v, 9, dir / (name + "_a"), 3);
    train_and_eval(data, v, 9, dir / (name + "_b"), 3);
    preds_ok = preds_ok && read_text(dir / (name + "_a") / "predictions.json") ==
                               read_text(dir / (name + "_b") / "predictions.json");
  }

  Rng rng(5);
  MatF frames = vt::random_matrix_f(rng, 6, 16);
  frames(0, 0) = std::numeric_limits<float>::denorm_min();
  frames(0, 1) = -0.0f;
  frames(1, 2) = std::numeric_limits<float>::max();
  frames(1, 3) = -std::numeric_limits<float>::min();
  const MatF video = vt::random_matrix_f(rng, 1, 9);
  {
    FeatureStoreWriter w(dir / "store");
    w.write_clip({"clip", frames}, {"clip", video});
  }
  const auto [f, v] = FeatureStore::open(dir / "store").read_clip("clip");
  const bool store_ok = bits_equal(f.frames, frames) && bits_equal(v.vector, video);

  bool ckpt_ok = true;
  for (auto variant : kAllVariants) {
    auto cfg = vt::tiny_model_config(variant);
    cfg.learned_query = false;
    LtaModel<float> model(cfg, 77);
    for (auto& p : model.params().items()) p.value.array() += static_cast<float>(rng.uniform(-0.5, 0.5));
    const auto path = dir / ("ckpt_" + std::string(variant_name(variant)));
    save_model(model, path);
    const auto back = load_model(path);
    const auto dex = vt::random_example(rng, cfg);
    ExampleInput<float> ex;
    for (const auto& c : dex.clips) ex.clips.push_back({c.video.cast<float>(), c.clip_desc.cast<float>(), c.frames.cast<float>()});
    ckpt_ok = ckpt_ok && bits_equal(back.forward(ex).verb, model.forward(ex).verb) &&
              bits_equal(back.forward(ex).noun, model.forward(ex).noun);
    for (std::size_t i = 0; i < model.params().size(); ++i) {
      ckpt_ok = ckpt_ok && bits_equal(back.params().items()[i].value, model.params().items()[i].value);
    }
  }
  fs::remove_all(dir);
  return {preds_ok && store_ok && ckpt_ok, std::string("prediction files byte-identical ") + (preds_ok ? "yes" : "NO") +
                                               "; store bit-exact " + (store_ok ? "yes" : "NO") +
                                               "; checkpoint bit-exact (5 variants) " + (ckpt_ok ? "yes" : "NO")};
}

}  // namespace

int main() {
  g_root = fs::temp_directory_path() / ("vclip_acceptance_" + std::to_string(::getpid()));
  fs::remove_all(g_root);
  fs::create_directories(g_root);

  criterion("edit-distance oracle", edit_distance_oracle);
  criterion("metric protocol", metric_protocol);
  criterion("aggregation invariants", aggregation_invariants);
  criterion("gradient correctness", gradient_correctness);
  criterion("learning smoke test", learning_smoke);
  criterion("variant ordering", variant_ordering);
  criterion("fusion complementarity", fusion_complementarity);
  criterion("zero-shot probe", zero_shot_probe_fixture);
  criterion("determinism and round-trips", determinism_round_trips);

  fs::remove_all(g_root);
  std::cout << (g_failures == 0 ? "ALL PASS" : std::to_string(g_failures) + " FAILED") << std::endl;
  return g_failures == 0 ? 0 : 1;
}
