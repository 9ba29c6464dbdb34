// SPDX-License-Identifier: Apache-2.0
//
// vclip: synthetic data generation, training, evaluation, zero-shot
// probing and result tables.
//
// Exit codes: 0 success, 2 validation error, 3 runtime/numeric error.

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "vclip/vclip.hpp"

namespace {

using vclip::json;
namespace fs = std::filesystem;

// Flags that mirror config keys; a set flag overrides the key.
template <class V>
struct Override {
  std::string key;
  std::optional<V> value;

  void apply(json& j) const {
    if (value) j[key] = *value;
  }
};

json load_config(const std::string& path) {
  if (path.empty()) return json::object();
  return vclip::read_json(path);
}

int run_gen_synth(const std::string& config, const std::string& out,
                  const std::vector<Override<int>>& ints, const std::vector<Override<double>>& reals,
                  const std::vector<Override<std::string>>& strings) {
  json j = load_config(config);
  for (const auto& o : ints) o.apply(j);
  for (const auto& o : reals) o.apply(j);
  for (const auto& o : strings) o.apply(j);
  const auto cfg = vclip::SynthConfig::from_json(j);
  const auto res = vclip::generate(cfg, out);
  std::cout << json{{"store", res.store_dir.string()},
                    {"taxonomy", res.taxonomy_file.string()},
                    {"gt_train", res.gt_train_file.string()},
                    {"gt_val", res.gt_val_file.string()},
                    {"n_train", cfg.n_train},
                    {"n_val", cfg.n_val}}
                   .dump()
            << "\n";
  return 0;
}

int run_train(const std::string& config, const std::vector<Override<int>>& ints,
              const std::vector<Override<double>>& reals, const std::vector<Override<std::string>>& strings) {
  json j = load_config(config);
  for (const auto& o : ints) o.apply(j);
  for (const auto& o : reals) o.apply(j);
  for (const auto& o : strings) o.apply(j);
  const auto cfg = vclip::TrainConfig::from_json(j);
  if (cfg.out_dir.empty()) throw vclip::ValidationError("train: out_dir is required");
  const auto res = vclip::train(cfg);
  for (const auto& e : res.log.epochs) std::cerr << e.to_json().dump() << "\n";
  json summary{{"checkpoint", res.checkpoint.string()}};
  if (res.log.final_eval) {
    summary["verb_ed"] = res.log.final_eval->verb_ed;
    summary["noun_ed"] = res.log.final_eval->noun_ed;
  }
  std::cout << summary.dump() << "\n";
  return 0;
}

int run_eval_cmd(const std::string& checkpoint, const std::string& store, const std::string& gt, int k,
                 std::uint64_t seed, double temperature, const std::string& out, bool levenshtein, bool joint,
                 unsigned threads) {
  vclip::EvalConfig cfg;
  cfg.k = k;
  cfg.seed = seed;
  cfg.temperature = temperature;
  cfg.out_dir = out;
  cfg.metric.kind = levenshtein ? vclip::EditDistanceKind::levenshtein : vclip::EditDistanceKind::damerau_levenshtein;
  cfg.metric.min_mode = joint ? vclip::MinOverK::joint : vclip::MinOverK::per_field;
  cfg.metric.threads = threads;
  const auto res = vclip::run_eval(checkpoint, store, gt, cfg);
  json j = res.report.to_json();
  if (out.empty()) {
    std::cout << j.dump(2) << "\n";
  } else {
    j.erase("per_example");
    std::cout << j.dump() << "\n";
  }
  return 0;
}

int run_probe(const std::string& store_dir, const std::string& taxonomy_file, const std::string& clip) {
  const auto store = vclip::FeatureStore::open(store_dir);
  const auto taxonomy = vclip::load_taxonomy(taxonomy_file);
  const auto tables = vclip::checked_text_tables(store, taxonomy);
  const auto [frames, video] = store.read_clip(clip);
  for (Eigen::Index r = 0; r < frames.frames.rows(); ++r) {
    const vclip::MatF row = frames.frames.row(r);
    std::cout << vclip::zero_shot_probe(row, tables).to_json(static_cast<int>(r), taxonomy).dump() << "\n";
  }
  return 0;
}

int run_report(const std::vector<std::string>& runs, bool as_json) {
  std::vector<fs::path> dirs(runs.begin(), runs.end());
  const auto rows = vclip::collect_runs(dirs);
  if (as_json) {
    json out = json::array();
    for (std::size_t i = 0; i < rows.size(); ++i) {
      out.push_back({{"run", runs[i]}, {"method", rows[i].method}, {"verb_ed", rows[i].verb_ed}, {"noun_ed", rows[i].noun_ed}});
    }
    std::cout << out.dump(2) << "\n";
  } else {
    std::cout << vclip::format_results_table(rows);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Video + CLIP long-term action anticipation toolkit"};
  app.require_subcommand(1);

  // gen-synth
  auto* gen = app.add_subcommand("gen-synth", "Generate a synthetic feature store and ground truth");
  std::string gen_config, gen_out;
  std::vector<Override<int>> gen_ints{{"seed", {}}, {"n_train", {}}, {"n_val", {}}, {"N", {}}, {"c", {}},
                                      {"d_video", {}}, {"Z", {}}, {"n_verbs", {}}, {"n_nouns", {}},
                                      {"n_input_clips", {}}, {"n_latent", {}}};
  std::vector<Override<double>> gen_reals{{"noise_std", {}}, {"video_strength", {}}};
  std::vector<Override<std::string>> gen_strings{{"signal_mode", {}}};
  gen->add_option("--config", gen_config, "Synth config JSON");
  gen->add_option("--out", gen_out, "Output directory")->required();
  for (auto& o : gen_ints) gen->add_option("--" + o.key, o.value);
  for (auto& o : gen_reals) gen->add_option("--" + o.key, o.value);
  for (auto& o : gen_strings) gen->add_option("--" + o.key, o.value);

  // train
  auto* tr = app.add_subcommand("train", "Train a model");
  std::string tr_config;
  std::vector<Override<int>> tr_ints{{"epochs", {}},     {"batch_size", {}}, {"seed", {}},
                                     {"eval_every", {}}, {"stop_after_epoch", {}}, {"K", {}},
                                     {"eval_seed", {}}};
  std::vector<Override<double>> tr_reals{{"base_lr", {}}, {"momentum", {}}, {"temperature", {}},
                                         {"weight_decay", {}}, {"grad_clip", {}}};
  std::vector<Override<std::string>> tr_strings{{"variant", {}}, {"profile", {}}, {"store", {}}, {"gt_train", {}},
                                                {"gt_val", {}}, {"taxonomy", {}}, {"out_dir", {}},
                                                {"resume_from", {}}};
  tr->add_option("--config", tr_config, "Train config JSON")->required();
  for (auto& o : tr_ints) tr->add_option("--" + o.key, o.value);
  for (auto& o : tr_reals) tr->add_option("--" + o.key, o.value);
  for (auto& o : tr_strings) tr->add_option("--" + o.key, o.value);

  // eval
  auto* ev = app.add_subcommand("eval", "Predict with a checkpoint and score ED@(Z,K)");
  std::string ev_ckpt, ev_store, ev_gt, ev_out;
  int ev_k = 5;
  std::uint64_t ev_seed = 0;
  double ev_temp = 1.0;
  bool ev_lev = false, ev_joint = false;
  unsigned ev_threads = 1;
  ev->add_option("--checkpoint", ev_ckpt)->required();
  ev->add_option("--store", ev_store)->required();
  ev->add_option("--gt", ev_gt)->required();
  ev->add_option("--k", ev_k);
  ev->add_option("--seed", ev_seed);
  ev->add_option("--temperature", ev_temp);
  ev->add_option("--out", ev_out, "Directory for predictions.json and eval_report.json");
  ev->add_flag("--levenshtein", ev_lev, "Score with plain Levenshtein distance");
  ev->add_flag("--joint", ev_joint, "Take min over K jointly for verbs and nouns");
  ev->add_option("--threads", ev_threads);

  // probe
  auto* pr = app.add_subcommand("probe", "Zero-shot label ranking for every frame of a clip");
  std::string pr_store, pr_tax, pr_clip;
  pr->add_option("--store", pr_store)->required();
  pr->add_option("--taxonomy", pr_tax)->required();
  pr->add_option("--clip", pr_clip)->required();

  // report
  auto* rp = app.add_subcommand("report", "Results table over run directories");
  std::vector<std::string> rp_runs;
  bool rp_json = false;
  rp->add_option("--runs", rp_runs)->required();
  rp->add_flag("--json", rp_json);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*gen) return run_gen_synth(gen_config, gen_out, gen_ints, gen_reals, gen_strings);
    if (*tr) return run_train(tr_config, tr_ints, tr_reals, tr_strings);
    if (*ev) return run_eval_cmd(ev_ckpt, ev_store, ev_gt, ev_k, ev_seed, ev_temp, ev_out, ev_lev, ev_joint, ev_threads);
    if (*pr) return run_probe(pr_store, pr_tax, pr_clip);
    if (*rp) return run_report(rp_runs, rp_json);
  } catch (const vclip::ValidationError& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
