// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstdio>
#include <future>
#include <map>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "vclip/error.hpp"
#include "vclip/io.hpp"
#include "vclip/taxonomy.hpp"

namespace vclip {

enum class EditDistanceKind { damerau_levenshtein, levenshtein };

// Unrestricted Damerau-Levenshtein (Lowrance-Wagner): unit insert, delete,
// substitute and adjacent transposition, with further edits allowed between
// transposed symbols. Unlike the optimal-string-alignment variant this is a
// true metric.
inline std::size_t damerau_levenshtein(std::span<const int> a, std::span<const int> b) {
  const std::size_t la = a.size();
  const std::size_t lb = b.size();
  const std::size_t inf = la + lb;
  const std::size_t w = lb + 2;
  std::vector<std::size_t> d((la + 2) * w);
  auto at = [&](std::size_t i, std::size_t j) -> std::size_t& { return d[i * w + j]; };
  at(0, 0) = inf;
  for (std::size_t i = 0; i <= la; ++i) {
    at(i + 1, 0) = inf;
    at(i + 1, 1) = i;
  }
  for (std::size_t j = 0; j <= lb; ++j) {
    at(0, j + 1) = inf;
    at(1, j + 1) = j;
  }
  std::unordered_map<int, std::size_t> last_row;
  for (std::size_t i = 1; i <= la; ++i) {
    std::size_t last_col = 0;
    for (std::size_t j = 1; j <= lb; ++j) {
      auto it = last_row.find(b[j - 1]);
      const std::size_t i1 = it == last_row.end() ? 0 : it->second;
      const std::size_t j1 = last_col;
      std::size_t cost = 1;
      if (a[i - 1] == b[j - 1]) {
        cost = 0;
        last_col = j;
      }
      at(i + 1, j + 1) = std::min({at(i, j) + cost, at(i + 1, j) + 1, at(i, j + 1) + 1,
                                   at(i1, j1) + (i - i1 - 1) + 1 + (j - j1 - 1)});
    }
    last_row[a[i - 1]] = i;
  }
  return at(la + 1, lb + 1);
}

inline std::size_t levenshtein(std::span<const int> a, std::span<const int> b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

inline std::size_t edit_distance(std::span<const int> a, std::span<const int> b,
                                 EditDistanceKind kind = EditDistanceKind::damerau_levenshtein) {
  return kind == EditDistanceKind::levenshtein ? levenshtein(a, b) : damerau_levenshtein(a, b);
}

struct PredictionSet {
  std::string example_id;
  std::vector<std::vector<int>> verb_seqs;  // K x Z
  std::vector<std::vector<int>> noun_seqs;  // K x Z

  std::size_t k() const { return verb_seqs.size(); }
};

enum class MinOverK {
  per_field,  // verb and noun minima may come from different candidates
  joint,      // one candidate index minimizing verb + noun distance
};

struct EvalOptions {
  EditDistanceKind kind = EditDistanceKind::damerau_levenshtein;
  MinOverK min_mode = MinOverK::per_field;
  unsigned threads = 1;
};

struct FieldScores {
  double verb = 0.0;
  double noun = 0.0;
};

inline FieldScores ed_at_zk(const PredictionSet& pred, const GroundTruthSequence& gt, const EvalOptions& opts = {}) {
  const std::size_t z = gt.actions.size();
  if (z == 0) throw ShapeError("ed_at_zk: empty ground truth for " + gt.example_id);
  if (pred.verb_seqs.empty() || pred.verb_seqs.size() != pred.noun_seqs.size()) {
    throw ShapeError("ed_at_zk: prediction for " + pred.example_id + " needs K >= 1 verb and noun candidates");
  }
  std::vector<int> gt_verbs, gt_nouns;
  for (const auto& a : gt.actions) {
    gt_verbs.push_back(a.verb_id);
    gt_nouns.push_back(a.noun_id);
  }
  std::size_t best_v = z, best_n = z, best_joint = 2 * z + 1;
  FieldScores joint{};
  for (std::size_t k = 0; k < pred.verb_seqs.size(); ++k) {
    if (pred.verb_seqs[k].size() != z || pred.noun_seqs[k].size() != z) {
      throw ShapeError("ed_at_zk: candidate " + std::to_string(k) + " of " + pred.example_id +
                       " has length != Z=" + std::to_string(z));
    }
    const auto dv = edit_distance(pred.verb_seqs[k], gt_verbs, opts.kind);
    const auto dn = edit_distance(pred.noun_seqs[k], gt_nouns, opts.kind);
    best_v = std::min(best_v, dv);
    best_n = std::min(best_n, dn);
    if (dv + dn < best_joint) {
      best_joint = dv + dn;
      joint = FieldScores{static_cast<double>(dv) / static_cast<double>(z), static_cast<double>(dn) / static_cast<double>(z)};
    }
  }
  if (opts.min_mode == MinOverK::joint) return joint;
  return FieldScores{static_cast<double>(best_v) / static_cast<double>(z),
                     static_cast<double>(best_n) / static_cast<double>(z)};
}

struct PredictionFile {
  int version = 1;
  int z = 0;
  int k = 0;
  std::string taxonomy_sha256;
  std::map<std::string, PredictionSet> predictions;

  json to_json() const {
    json preds = json::object();
    for (const auto& [id, p] : predictions) preds[id] = {{"verb", p.verb_seqs}, {"noun", p.noun_seqs}};
    return json{{"version", version}, {"Z", z}, {"K", k}, {"taxonomy_sha256", taxonomy_sha256}, {"predictions", preds}};
  }

  static PredictionFile from_json(const json& j) {
    const std::string where = "prediction file";
    PredictionFile f;
    f.version = get_field<int>(j, "version", where);
    if (f.version != 1) throw SchemaError("prediction file: unsupported version " + std::to_string(f.version));
    f.z = get_field<int>(j, "Z", where);
    f.k = get_field<int>(j, "K", where);
    f.taxonomy_sha256 = get_field<std::string>(j, "taxonomy_sha256", where);
    const auto& preds = j.at("predictions");
    if (!preds.is_object()) throw SchemaError("prediction file: predictions must be an object");
    for (const auto& [id, p] : preds.items()) {
      PredictionSet s{id, get_field<std::vector<std::vector<int>>>(p, "verb", where + " " + id),
                      get_field<std::vector<std::vector<int>>>(p, "noun", where + " " + id)};
      f.predictions.emplace(id, std::move(s));
    }
    return f;
  }
};

struct GroundTruthFile {
  int version = 1;
  int z = 0;
  std::string taxonomy_sha256;
  std::map<std::string, GroundTruthSequence> examples;

  json to_json() const {
    json ex = json::object();
    for (const auto& [id, g] : examples) {
      std::vector<int> v, n;
      for (const auto& a : g.actions) {
        v.push_back(a.verb_id);
        n.push_back(a.noun_id);
      }
      ex[id] = {{"verb", v}, {"noun", n}};
    }
    return json{{"version", version}, {"Z", z}, {"taxonomy_sha256", taxonomy_sha256}, {"examples", ex}};
  }

  static GroundTruthFile from_json(const json& j) {
    const std::string where = "ground-truth file";
    GroundTruthFile f;
    f.version = get_field<int>(j, "version", where);
    if (f.version != 1) throw SchemaError("ground-truth file: unsupported version " + std::to_string(f.version));
    f.z = get_field<int>(j, "Z", where);
    f.taxonomy_sha256 = get_field<std::string>(j, "taxonomy_sha256", where);
    const auto& ex = j.at("examples");
    if (!ex.is_object()) throw SchemaError("ground-truth file: examples must be an object");
    for (const auto& [id, e] : ex.items()) {
      const auto v = get_field<std::vector<int>>(e, "verb", where + " " + id);
      const auto n = get_field<std::vector<int>>(e, "noun", where + " " + id);
      if (v.size() != n.size() || static_cast<int>(v.size()) != f.z) {
        throw ShapeError("ground truth " + id + ": sequences must have length Z=" + std::to_string(f.z));
      }
      GroundTruthSequence g{id, {}};
      for (std::size_t i = 0; i < v.size(); ++i) g.actions.push_back(ActionLabel{v[i], n[i]});
      f.examples.emplace(id, std::move(g));
    }
    return f;
  }
};

inline PredictionFile load_predictions(const fs::path& p) { return PredictionFile::from_json(read_json(p)); }
inline GroundTruthFile load_ground_truth(const fs::path& p) { return GroundTruthFile::from_json(read_json(p)); }
// Compact form: byte-identical for identical content.
inline void save_predictions(const PredictionFile& f, const fs::path& p) { write_text(p, f.to_json().dump() + "\n"); }
inline void save_ground_truth(const GroundTruthFile& f, const fs::path& p) { write_text(p, f.to_json().dump() + "\n"); }

struct ExampleScore {
  std::string example_id;
  double verb_ed = 0.0;
  double noun_ed = 0.0;
};

struct EvalReport {
  double verb_ed = 0.0;
  double noun_ed = 0.0;
  std::size_t n_examples = 0;
  int z = 0;
  int k = 0;
  std::vector<ExampleScore> per_example;  // ordered by example_id

  json to_json() const {
    json per = json::array();
    for (const auto& e : per_example) per.push_back({{"id", e.example_id}, {"verb_ed", e.verb_ed}, {"noun_ed", e.noun_ed}});
    return json{{"verb_ed", verb_ed}, {"noun_ed", noun_ed}, {"n_examples", n_examples},
                {"Z", z},             {"K", k},             {"per_example", per}};
  }

  static EvalReport from_json(const json& j) {
    const std::string where = "eval report";
    EvalReport r;
    r.verb_ed = get_field<double>(j, "verb_ed", where);
    r.noun_ed = get_field<double>(j, "noun_ed", where);
    r.n_examples = get_field<std::size_t>(j, "n_examples", where);
    r.z = get_field<int>(j, "Z", where);
    r.k = get_field<int>(j, "K", where);
    if (j.contains("per_example")) {
      for (const auto& e : j.at("per_example")) {
        r.per_example.push_back(ExampleScore{get_field<std::string>(e, "id", where), get_field<double>(e, "verb_ed", where),
                                             get_field<double>(e, "noun_ed", where)});
      }
    }
    return r;
  }
};

namespace detail {

inline void check_ids(const std::vector<int>& seq, std::size_t limit, const std::string& what) {
  for (int id : seq) {
    if (id < 0 || static_cast<std::size_t>(id) >= limit) {
      throw LookupError(what + ": id " + std::to_string(id) + " out of range [0, " + std::to_string(limit) + ")");
    }
  }
}

}  // namespace detail

inline EvalReport evaluate(const PredictionFile& pred, const GroundTruthFile& gt, const Taxonomy& taxonomy,
                           const EvalOptions& opts = {}) {
  const auto hash = taxonomy.sha256();
  if (gt.taxonomy_sha256 != hash) throw ValidationError("ground-truth taxonomy hash does not match taxonomy");
  if (pred.taxonomy_sha256 != hash) throw ValidationError("prediction taxonomy hash does not match taxonomy");
  if (pred.z != gt.z) {
    throw ShapeError("Z mismatch: predictions " + std::to_string(pred.z) + ", ground truth " + std::to_string(gt.z));
  }
  if (pred.k < 1) throw ShapeError("prediction file K must be >= 1");
  if (gt.examples.empty()) throw ValidationError("ground truth has no examples");

  std::vector<std::pair<const PredictionSet*, const GroundTruthSequence*>> jobs;
  for (const auto& [id, g] : gt.examples) {
    auto it = pred.predictions.find(id);
    if (it == pred.predictions.end()) throw LookupError("prediction file is missing example \"" + id + "\"");
    const auto& p = it->second;
    if (static_cast<int>(p.verb_seqs.size()) != pred.k || static_cast<int>(p.noun_seqs.size()) != pred.k) {
      throw ShapeError("example " + id + ": expected K=" + std::to_string(pred.k) + " candidates");
    }
    for (const auto& s : p.verb_seqs) detail::check_ids(s, taxonomy.verbs().size(), "example " + id + " verb");
    for (const auto& s : p.noun_seqs) detail::check_ids(s, taxonomy.nouns().size(), "example " + id + " noun");
    for (const auto& a : g.actions) {
      if (!taxonomy.valid(a)) throw LookupError("ground truth " + id + ": action id out of range");
    }
    jobs.emplace_back(&p, &g);
  }

  std::vector<FieldScores> scores(jobs.size());
  const unsigned threads = std::max(1u, opts.threads);
  if (threads == 1) {
    for (std::size_t i = 0; i < jobs.size(); ++i) scores[i] = ed_at_zk(*jobs[i].first, *jobs[i].second, opts);
  } else {
    std::vector<std::future<void>> workers;
    for (unsigned t = 0; t < threads; ++t) {
      workers.push_back(std::async(std::launch::async, [&, t] {
        for (std::size_t i = t; i < jobs.size(); i += threads) scores[i] = ed_at_zk(*jobs[i].first, *jobs[i].second, opts);
      }));
    }
    for (auto& w : workers) w.get();
  }

  EvalReport r;
  r.n_examples = jobs.size();
  r.z = gt.z;
  r.k = pred.k;
  double sv = 0.0, sn = 0.0;
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    r.per_example.push_back(ExampleScore{jobs[i].second->example_id, scores[i].verb, scores[i].noun});
    sv += scores[i].verb;
    sn += scores[i].noun;
  }
  r.verb_ed = sv / static_cast<double>(jobs.size());
  r.noun_ed = sn / static_cast<double>(jobs.size());
  return r;
}

inline EvalReport evaluate(const fs::path& pred_file, const fs::path& gt_file, const Taxonomy& taxonomy,
                           const EvalOptions& opts = {}) {
  return evaluate(load_predictions(pred_file), load_ground_truth(gt_file), taxonomy, opts);
}

struct MethodRow {
  std::string method;
  double verb_ed = 0.0;
  double noun_ed = 0.0;
};

// Plain-text results table: method, verb, noun (lower is better).
inline std::string format_results_table(const std::vector<MethodRow>& rows) {
  std::size_t w = 6;
  for (const auto& r : rows) w = std::max(w, r.method.size());
  std::ostringstream os;
  auto line = [&] { os << '+' << std::string(w + 2, '-') << '+' << std::string(8, '-') << '+' << std::string(8, '-') << "+\n"; };
  auto cell = [&](const std::string& s) { os << "| " << s << std::string(w - s.size(), ' ') << ' '; };
  line();
  cell("Method");
  os << "|  Verb  |  Noun  |\n";
  line();
  for (const auto& r : rows) {
    cell(r.method);
    char buf[64];
    std::snprintf(buf, sizeof buf, "| %.4f | %.4f |\n", r.verb_ed, r.noun_ed);
    os << buf;
  }
  line();
  return os.str();
}

}  // namespace vclip
