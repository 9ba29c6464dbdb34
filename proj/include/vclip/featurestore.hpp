// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "vclip/error.hpp"
#include "vclip/io.hpp"
#include "vclip/taxonomy.hpp"
#include "vclip/tensor.hpp"

namespace vclip {

inline constexpr int kDefaultClipWidth = 512;
inline constexpr int kDefaultVideoWidth = 2048;
// Frame sampling used by the offline extractor: 32 frames, 4 apart.
inline constexpr int kDefaultFramesPerClip = 32;
inline constexpr int kDefaultFrameStride = 4;

struct FrameEmbeddingSequence {
  std::string clip_id;
  MatF frames;  // N x c

  Eigen::Index n_frames() const { return frames.rows(); }
  Eigen::Index width() const { return frames.cols(); }
};

struct VideoDescriptor {
  std::string clip_id;
  MatF vector;  // 1 x d_video
};

struct TextEmbeddingTable {
  Category category = Category::noun;
  MatF embeddings;  // |vocab| x c, row i aligned with taxonomy id i
  std::string prompt_template;

  Eigen::Index rows() const { return embeddings.rows(); }
  Eigen::Index width() const { return embeddings.cols(); }
};

// Deterministic stand-in for a CLIP encoder: a unit-norm Gaussian direction
// keyed by (seed, token, width).
inline MatF stub_embed(std::uint64_t seed, std::string_view token, int c) {
  if (c < 2) throw ParameterError("stub_embed: width must be >= 2, got " + std::to_string(c));
  Rng rng(hash_combine(hash_combine(seed, fnv1a64(token)), static_cast<std::uint64_t>(c)));
  std::vector<double> v(static_cast<std::size_t>(c));
  double norm2 = 0.0;
  for (auto& x : v) {
    x = rng.normal();
    norm2 += x * x;
  }
  const double inv = 1.0 / std::sqrt(norm2);
  MatF out(1, c);
  for (int j = 0; j < c; ++j) out(0, j) = static_cast<float>(v[static_cast<std::size_t>(j)] * inv);
  return out;
}

using TextEncoder = std::function<MatF(std::string_view)>;

inline TextEncoder stub_text_encoder(std::uint64_t seed, int c) {
  return [seed, c](std::string_view s) { return stub_embed(seed, s, c); };
}

inline std::string format_prompt(std::string_view prompt_template, std::string_view token) {
  const auto pos = prompt_template.find("{}");
  if (pos == std::string_view::npos || prompt_template.find("{}", pos + 2) != std::string_view::npos) {
    throw SchemaError("prompt template must contain exactly one \"{}\" placeholder: \"" +
                      std::string(prompt_template) + "\"");
  }
  std::string out(prompt_template.substr(0, pos));
  out += token;
  out += prompt_template.substr(pos + 2);
  return out;
}

inline TextEmbeddingTable build_text_table(const Taxonomy& taxonomy, Category category,
                                           std::string_view prompt_template, const TextEncoder& encoder) {
  const auto& vocab = taxonomy.list(category);
  // Validate once up front so an empty vocabulary still reports a bad template.
  format_prompt(prompt_template, "");
  TextEmbeddingTable table{category, MatF(), std::string(prompt_template)};
  for (std::size_t i = 0; i < vocab.size(); ++i) {
    MatF row = encoder(format_prompt(prompt_template, vocab[i]));
    if (row.rows() != 1) throw ShapeError("text encoder must return a row vector");
    if (i == 0) table.embeddings.resize(static_cast<Eigen::Index>(vocab.size()), row.cols());
    if (row.cols() != table.embeddings.cols()) throw ShapeError("text encoder returned inconsistent widths");
    if (!all_finite(row) || row.norm() == 0.0f) {
      throw NumericError("text embedding for \"" + vocab[i] + "\" is zero or non-finite");
    }
    table.embeddings.row(static_cast<Eigen::Index>(i)) = row;
  }
  return table;
}

struct TextTables {
  std::map<Category, TextEmbeddingTable> by_category;

  bool has(Category c) const { return by_category.count(c) != 0; }

  const TextEmbeddingTable& at(Category c) const {
    auto it = by_category.find(c);
    if (it == by_category.end()) throw LookupError(std::string("missing text table for category ") + category_name(c));
    return it->second;
  }

  void put(TextEmbeddingTable t) { by_category.insert_or_assign(t.category, std::move(t)); }
};

inline TextTables build_text_tables(const Taxonomy& taxonomy, const std::map<Category, std::string>& templates,
                                    const TextEncoder& encoder) {
  TextTables out;
  for (const auto& [cat, tmpl] : templates) out.put(build_text_table(taxonomy, cat, tmpl, encoder));
  return out;
}

inline std::map<Category, std::string> default_prompt_templates() {
  return {{Category::verb, "a photo of a person who is going to {}"},
          {Category::noun, "a photo of a {}"},
          {Category::scenario, "a photo of a person {}"},
          {Category::place, "a photo of the {}"}};
}

inline const char* kDefaultQueryPrompt = "a video of a person performing an action";

struct ClipEntry {
  std::string id;
  int n_frames = 0;
  std::string frames_file;
  std::string video_file;
};

struct StoreManifest {
  int c = 0;
  int d_video = 0;
  std::vector<ClipEntry> clips;
  // Optional extensions; absent keys mean the store has no text side.
  struct TableEntry {
    std::string file;
    int rows = 0;
    std::string prompt_template;
  };
  std::map<Category, TableEntry> text_tables;
  std::optional<std::pair<std::string, std::string>> prompt_query;  // (prompt, file)

  json to_json() const {
    json clips_json = json::array();
    for (const auto& e : clips) {
      clips_json.push_back(
          {{"id", e.id}, {"n_frames", e.n_frames}, {"frames_file", e.frames_file}, {"video_file", e.video_file}});
    }
    json j = {{"c", c}, {"d_video", d_video}, {"dtype", "f32le"}, {"clips", clips_json}};
    if (!text_tables.empty()) {
      json tt = json::object();
      for (const auto& [cat, e] : text_tables) {
        tt[category_name(cat)] = {{"file", e.file}, {"rows", e.rows}, {"prompt_template", e.prompt_template}};
      }
      j["text_tables"] = tt;
    }
    if (prompt_query) j["prompt_query"] = {{"prompt", prompt_query->first}, {"file", prompt_query->second}};
    return j;
  }

  static StoreManifest from_json(const json& j) {
    const std::string where = "manifest.json";
    StoreManifest m;
    m.c = get_field<int>(j, "c", where);
    m.d_video = get_field<int>(j, "d_video", where);
    if (get_field<std::string>(j, "dtype", where) != "f32le") throw SchemaError("manifest dtype must be f32le");
    if (!j.at("clips").is_array()) throw SchemaError("manifest clips must be an array");
    for (const auto& e : j.at("clips")) {
      m.clips.push_back(ClipEntry{get_field<std::string>(e, "id", where), get_field<int>(e, "n_frames", where),
                                  get_field<std::string>(e, "frames_file", where),
                                  get_field<std::string>(e, "video_file", where)});
    }
    if (j.contains("text_tables")) {
      for (const auto& [key, e] : j.at("text_tables").items()) {
        m.text_tables[parse_category(key)] =
            TableEntry{get_field<std::string>(e, "file", where), get_field<int>(e, "rows", where),
                       get_field<std::string>(e, "prompt_template", where)};
      }
    }
    if (j.contains("prompt_query")) {
      const auto& q = j.at("prompt_query");
      m.prompt_query = std::make_pair(get_field<std::string>(q, "prompt", where), get_field<std::string>(q, "file", where));
    }
    return m;
  }
};

namespace detail {

inline std::vector<float> flatten(const MatF& m) {
  return std::vector<float>(m.data(), m.data() + m.size());
}

inline MatF unflatten(const std::vector<float>& v, Eigen::Index rows, Eigen::Index cols) {
  MatF m(rows, cols);
  std::copy(v.begin(), v.end(), m.data());
  return m;
}

}  // namespace detail

// Single-writer builder. The manifest is written on seal() (or destruction);
// readers must only open a sealed store.
class FeatureStoreWriter {
 public:
  explicit FeatureStoreWriter(fs::path root) : root_(std::move(root)) {
    fs::create_directories(root_ / "clips");
    const auto manifest_path = root_ / "manifest.json";
    if (fs::exists(manifest_path)) manifest_ = StoreManifest::from_json(read_json(manifest_path));
    for (const auto& e : manifest_.clips) ids_.emplace(e.id, true);
  }

  FeatureStoreWriter(const FeatureStoreWriter&) = delete;
  FeatureStoreWriter& operator=(const FeatureStoreWriter&) = delete;

  ~FeatureStoreWriter() {
    try {
      if (!sealed_) seal();
    } catch (...) {
    }
  }

  void write_clip(const FrameEmbeddingSequence& frames, const VideoDescriptor& video) {
    if (sealed_) throw StoreError("store is sealed");
    if (frames.clip_id.empty()) throw StoreError("clip id must be non-empty");
    if (video.clip_id != frames.clip_id) throw StoreError("frame and video clip ids differ");
    if (frames.n_frames() < 1) throw ShapeError("clip " + frames.clip_id + " has no frames");
    if (video.vector.rows() != 1) throw ShapeError("video descriptor must be a row vector");
    if (ids_.count(frames.clip_id)) throw StoreError("duplicate clip id \"" + frames.clip_id + "\"");
    adopt_width(manifest_.c, static_cast<int>(frames.width()), "frame embedding width");
    adopt_width(manifest_.d_video, static_cast<int>(video.vector.cols()), "video descriptor width");
    if (!all_finite(frames.frames) || !all_finite(video.vector)) {
      throw NumericError("clip " + frames.clip_id + " has non-finite values");
    }
    const auto index = manifest_.clips.size();
    ClipEntry e{frames.clip_id, static_cast<int>(frames.n_frames()), "clips/" + std::to_string(index) + ".frames.f32",
                "clips/" + std::to_string(index) + ".video.f32"};
    write_f32le(root_ / e.frames_file, detail::flatten(frames.frames));
    write_f32le(root_ / e.video_file, detail::flatten(video.vector));
    manifest_.clips.push_back(std::move(e));
    ids_.emplace(frames.clip_id, true);
  }

  void write_text_table(const TextEmbeddingTable& table) {
    if (sealed_) throw StoreError("store is sealed");
    adopt_width(manifest_.c, static_cast<int>(table.width()), "text embedding width");
    fs::create_directories(root_ / "text");
    StoreManifest::TableEntry e{std::string("text/") + category_name(table.category) + ".f32",
                                static_cast<int>(table.rows()), table.prompt_template};
    write_f32le(root_ / e.file, detail::flatten(table.embeddings));
    manifest_.text_tables[table.category] = std::move(e);
  }

  void write_prompt_query(const std::string& prompt, const MatF& embedding) {
    if (sealed_) throw StoreError("store is sealed");
    if (embedding.rows() != 1) throw ShapeError("prompt embedding must be a row vector");
    adopt_width(manifest_.c, static_cast<int>(embedding.cols()), "prompt embedding width");
    fs::create_directories(root_ / "text");
    write_f32le(root_ / "text/prompt_query.f32", detail::flatten(embedding));
    manifest_.prompt_query = std::make_pair(prompt, std::string("text/prompt_query.f32"));
  }

  void seal() {
    write_json(root_ / "manifest.json", manifest_.to_json());
    sealed_ = true;
  }

  const StoreManifest& manifest() const { return manifest_; }

 private:
  static void adopt_width(int& slot, int width, const char* what) {
    if (slot == 0) {
      slot = width;
    } else if (slot != width) {
      throw ShapeError(std::string(what) + " mismatch: store has " + std::to_string(slot) + ", got " +
                       std::to_string(width));
    }
  }

  fs::path root_;
  StoreManifest manifest_;
  std::unordered_map<std::string, bool> ids_;
  bool sealed_ = false;
};

// Read side of a sealed store. Reads are const and safe to run concurrently.
class FeatureStore {
 public:
  static FeatureStore open(const fs::path& root) {
    const auto manifest_path = root / "manifest.json";
    if (!fs::exists(manifest_path)) throw IoError("feature store has no manifest: " + root.string());
    FeatureStore s;
    s.root_ = root;
    s.manifest_ = StoreManifest::from_json(read_json(manifest_path));
    for (std::size_t i = 0; i < s.manifest_.clips.size(); ++i) {
      if (!s.index_.emplace(s.manifest_.clips[i].id, i).second) {
        throw CorruptionError("manifest lists clip \"" + s.manifest_.clips[i].id + "\" twice");
      }
    }
    return s;
  }

  int c() const { return manifest_.c; }
  int d_video() const { return manifest_.d_video; }
  const StoreManifest& manifest() const { return manifest_; }
  const fs::path& root() const { return root_; }

  bool has_clip(const std::string& id) const { return index_.count(id) != 0; }

  std::vector<std::string> clip_ids() const {
    std::vector<std::string> ids;
    for (const auto& e : manifest_.clips) ids.push_back(e.id);
    return ids;
  }

  std::pair<FrameEmbeddingSequence, VideoDescriptor> read_clip(const std::string& clip_id) const {
    auto it = index_.find(clip_id);
    if (it == index_.end()) throw LookupError("unknown clip \"" + clip_id + "\"");
    const auto& e = manifest_.clips[it->second];
    auto frames = read_f32le(root_ / e.frames_file, static_cast<std::size_t>(e.n_frames) * manifest_.c);
    auto video = read_f32le(root_ / e.video_file, static_cast<std::size_t>(manifest_.d_video));
    FrameEmbeddingSequence f{clip_id, detail::unflatten(frames, e.n_frames, manifest_.c)};
    VideoDescriptor v{clip_id, detail::unflatten(video, 1, manifest_.d_video)};
    if (!all_finite(f.frames) || !all_finite(v.vector)) throw CorruptionError("clip " + clip_id + " has non-finite values");
    return {std::move(f), std::move(v)};
  }

  bool has_text_table(Category c) const { return manifest_.text_tables.count(c) != 0; }

  TextEmbeddingTable text_table(Category c) const {
    auto it = manifest_.text_tables.find(c);
    if (it == manifest_.text_tables.end()) {
      throw LookupError(std::string("store has no text table for ") + category_name(c));
    }
    auto data = read_f32le(root_ / it->second.file, static_cast<std::size_t>(it->second.rows) * manifest_.c);
    return TextEmbeddingTable{c, detail::unflatten(data, it->second.rows, manifest_.c), it->second.prompt_template};
  }

  TextTables text_tables() const {
    TextTables out;
    for (const auto& [cat, e] : manifest_.text_tables) out.put(text_table(cat));
    return out;
  }

  std::optional<std::pair<std::string, MatF>> prompt_query() const {
    if (!manifest_.prompt_query) return std::nullopt;
    auto data = read_f32le(root_ / manifest_.prompt_query->second, static_cast<std::size_t>(manifest_.c));
    return std::make_pair(manifest_.prompt_query->first, detail::unflatten(data, 1, manifest_.c));
  }

 private:
  fs::path root_;
  StoreManifest manifest_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace vclip
