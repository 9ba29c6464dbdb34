// SPDX-License-Identifier: Apache-2.0
#pragma once

// Frame-sequence -> clip descriptor aggregation: mean pooling, mean pooling
// plus top-1 text embeddings, and single-query multi-head cross-attention.

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "vclip/autodiff.hpp"
#include "vclip/error.hpp"
#include "vclip/featurestore.hpp"
#include "vclip/taxonomy.hpp"
#include "vclip/tensor.hpp"

namespace vclip {

template <class T>
Mat<T> mean_pool(const Mat<T>& frames) {
  if (frames.rows() < 1) throw ShapeError("mean_pool: empty frame sequence");
  Mat<T> out = frames.colwise().sum();
  out /= static_cast<T>(frames.rows());
  return out;
}

struct RankedLabel {
  int id = 0;
  double score = 0.0;

  friend bool operator==(const RankedLabel&, const RankedLabel&) = default;
};

// Cosine similarity of query against every table row, best k first. Equal
// scores order by lower id.
template <class T>
std::vector<RankedLabel> rank_labels(const Mat<T>& query, const TextEmbeddingTable& table, int k) {
  if (query.rows() != 1) throw ShapeError("rank_labels: query must be a row vector");
  if (query.cols() != table.width()) {
    throw ShapeError("rank_labels: query width " + std::to_string(query.cols()) + " != table width " +
                     std::to_string(table.width()));
  }
  if (k < 1 || k > table.rows()) {
    throw ParameterError("rank_labels: k=" + std::to_string(k) + " outside [1, " + std::to_string(table.rows()) + "]");
  }
  const Eigen::RowVectorXd q = query.row(0).template cast<double>();
  const double qn = q.norm();
  if (!(qn > 0.0)) throw ParameterError("rank_labels: query vector is zero");
  std::vector<RankedLabel> all;
  all.reserve(static_cast<std::size_t>(table.rows()));
  for (Eigen::Index i = 0; i < table.rows(); ++i) {
    const Eigen::RowVectorXd r = table.embeddings.row(i).cast<double>();
    const double rn = r.norm();
    if (!(rn > 0.0)) throw NumericError("rank_labels: table row " + std::to_string(i) + " is zero");
    all.push_back(RankedLabel{static_cast<int>(i), q.dot(r) / (qn * rn)});
  }
  std::stable_sort(all.begin(), all.end(), [](const RankedLabel& a, const RankedLabel& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.id < b.id;
  });
  all.resize(static_cast<std::size_t>(k));
  return all;
}

// Concatenation order of the text blocks after the image descriptor.
inline constexpr std::array<Category, 4> kTextBlockOrder = {Category::noun, Category::verb, Category::scenario,
                                                           Category::place};

struct ImgTextDescriptor {
  MatF descriptor;                // 1 x 5c
  std::array<int, 4> selected{};  // top-1 ids in kTextBlockOrder
};

inline ImgTextDescriptor img_text_select(const MatF& frames, const TextTables& tables) {
  for (auto cat : kTextBlockOrder) {
    if (!tables.has(cat)) throw LookupError(std::string("img_text_concat: missing ") + category_name(cat) + " table");
    if (tables.at(cat).width() != frames.cols()) {
      throw ShapeError(std::string("img_text_concat: ") + category_name(cat) + " table width differs from frames");
    }
  }
  const MatF image = mean_pool(frames);
  const auto c = frames.cols();
  ImgTextDescriptor out;
  out.descriptor.resize(1, 5 * c);
  out.descriptor.leftCols(c) = image;
  for (std::size_t b = 0; b < kTextBlockOrder.size(); ++b) {
    const auto& table = tables.at(kTextBlockOrder[b]);
    const int id = rank_labels(image, table, 1).front().id;
    out.selected[b] = id;
    Eigen::RowVectorXd row = table.embeddings.row(id).cast<double>();
    row /= row.norm();
    out.descriptor.middleCols(static_cast<Eigen::Index>(b + 1) * c, c) = row.cast<float>();
  }
  return out;
}

inline MatF img_text_concat(const MatF& frames, const TextTables& tables) {
  return img_text_select(frames, tables).descriptor;
}

template <class T>
struct CrossAttentionParams {
  Mat<T> w_q;  // c x d_attn
  Mat<T> w_k;  // c x d_attn
  Mat<T> w_v;  // c x d_attn
  Mat<T> w_o;  // d_attn x c
  int n_heads = 8;

  Eigen::Index width() const { return w_q.rows(); }
  Eigen::Index d_attn() const { return w_q.cols(); }

  void validate() const {
    const auto c = w_q.rows();
    const auto d = w_q.cols();
    if (n_heads < 1 || d % n_heads != 0) {
      throw ShapeError("cross attention: d_attn " + std::to_string(d) + " not divisible by n_heads " +
                       std::to_string(n_heads));
    }
    if (w_k.rows() != c || w_k.cols() != d || w_v.rows() != c || w_v.cols() != d || w_o.rows() != d ||
        w_o.cols() != c) {
      throw ShapeError("cross attention: projection shapes are inconsistent");
    }
    if (!all_finite(w_q) || !all_finite(w_k) || !all_finite(w_v) || !all_finite(w_o)) {
      throw NumericError("cross attention: non-finite parameters");
    }
  }
};

// Multi-head attention of query rows (Lq x dq) over key/value rows, all
// given already projected (Lq x d, Lk x d). Returns concatenated head
// outputs (Lq x d) before the output projection.
template <class T>
ad::Var<T> multi_head_attend(ad::Var<T> q, ad::Var<T> k, ad::Var<T> v, int n_heads,
                             std::vector<ad::Var<T>>* weights = nullptr) {
  const auto d = q.cols();
  if (n_heads < 1 || d % n_heads != 0) throw ShapeError("attention width not divisible by head count");
  const auto dh = d / n_heads;
  const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(dh));
  std::vector<ad::Var<T>> heads;
  heads.reserve(static_cast<std::size_t>(n_heads));
  for (int h = 0; h < n_heads; ++h) {
    auto qh = ad::slice_cols(q, h * dh, dh);
    auto kh = ad::slice_cols(k, h * dh, dh);
    auto vh = ad::slice_cols(v, h * dh, dh);
    auto alpha = ad::softmax_rows(ad::scale(ad::matmul(qh, ad::transpose(kh)), inv_sqrt));
    if (weights) weights->push_back(alpha);
    heads.push_back(ad::matmul(alpha, vh));
  }
  return n_heads == 1 ? heads.front() : ad::concat_cols(heads);
}

// Graph form of the clip-level cross-attention: query (1 x c) and frames
// (N x c) -> descriptor (1 x c). No positional term, so frame order does
// not matter.
template <class T>
ad::Var<T> cross_attention_graph(ad::Var<T> query, ad::Var<T> frames, ad::Var<T> w_q, ad::Var<T> w_k,
                                 ad::Var<T> w_v, ad::Var<T> w_o, int n_heads,
                                 std::vector<ad::Var<T>>* weights = nullptr) {
  if (query.rows() != 1 || query.cols() != w_q.rows()) throw ShapeError("cross attention: query width mismatch");
  if (frames.rows() < 1) throw ShapeError("cross attention: empty frame sequence");
  if (frames.cols() != w_k.rows()) throw ShapeError("cross attention: frame width mismatch");
  auto q = ad::matmul(query, w_q);
  auto k = ad::matmul(frames, w_k);
  auto v = ad::matmul(frames, w_v);
  return ad::matmul(multi_head_attend(q, k, v, n_heads, weights), w_o);
}

template <class T>
struct AttentionResult {
  Mat<T> descriptor;              // 1 x c
  std::vector<Mat<T>> weights;    // per head, 1 x N
};

template <class T>
AttentionResult<T> cross_attention_aggregate(const CrossAttentionParams<T>& params, const Mat<T>& query,
                                             const Mat<T>& frames) {
  params.validate();
  if (query.rows() != 1 || query.cols() != params.width()) throw ShapeError("cross attention: query width mismatch");
  if (frames.rows() < 1) throw ShapeError("cross attention: empty frame sequence");
  if (frames.cols() != params.width()) throw ShapeError("cross attention: frame width mismatch");
  ad::Tape<T> tape;
  std::vector<ad::Var<T>> w;
  auto out = cross_attention_graph(tape.constant(query), tape.constant(frames), tape.constant(params.w_q),
                                   tape.constant(params.w_k), tape.constant(params.w_v), tape.constant(params.w_o),
                                   params.n_heads, &w);
  AttentionResult<T> r{out.value(), {}};
  for (const auto& a : w) r.weights.push_back(a.value());
  return r;
}

struct ProbeReport {
  RankedLabel top1_place;
  RankedLabel top1_scenario;
  std::vector<RankedLabel> top3_verbs;
  std::vector<RankedLabel> top3_nouns;

  json to_json(int frame_index, const Taxonomy& taxonomy) const {
    auto pair = [](const RankedLabel& r) { return json::array({r.id, r.score}); };
    auto list = [&](const std::vector<RankedLabel>& v) {
      json a = json::array();
      for (const auto& r : v) a.push_back(pair(r));
      return a;
    };
    auto names = [&](Category c, const std::vector<RankedLabel>& v) {
      json a = json::array();
      for (const auto& r : v) a.push_back(taxonomy.name_of(c, r.id));
      return a;
    };
    return json{{"frame", frame_index},
                {"place", pair(top1_place)},
                {"scenario", pair(top1_scenario)},
                {"verbs", list(top3_verbs)},
                {"nouns", list(top3_nouns)},
                {"names",
                 {{"place", taxonomy.name_of(Category::place, top1_place.id)},
                  {"scenario", taxonomy.name_of(Category::scenario, top1_scenario.id)},
                  {"verbs", names(Category::verb, top3_verbs)},
                  {"nouns", names(Category::noun, top3_nouns)}}}};
  }
};

inline ProbeReport zero_shot_probe(const MatF& frame, const TextTables& tables) {
  for (auto cat : {Category::verb, Category::noun}) {
    if (tables.at(cat).rows() < 3) {
      throw ParameterError(std::string("zero_shot_probe: ") + category_name(cat) +
                           " vocabulary too small for top-3 (" + std::to_string(tables.at(cat).rows()) + " rows)");
    }
  }
  ProbeReport r;
  r.top1_place = rank_labels(frame, tables.at(Category::place), 1).front();
  r.top1_scenario = rank_labels(frame, tables.at(Category::scenario), 1).front();
  r.top3_verbs = rank_labels(frame, tables.at(Category::verb), 3);
  r.top3_nouns = rank_labels(frame, tables.at(Category::noun), 3);
  return r;
}

}  // namespace vclip
