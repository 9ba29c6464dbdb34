// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "vclip/error.hpp"
#include "vclip/io.hpp"

namespace vclip {

enum class Category { verb, noun, scenario, place };

inline constexpr std::array<Category, 4> kAllCategories = {Category::verb, Category::noun,
                                                           Category::scenario, Category::place};

inline const char* category_key(Category c) {
  switch (c) {
    case Category::verb: return "verbs";
    case Category::noun: return "nouns";
    case Category::scenario: return "scenarios";
    case Category::place: return "places";
  }
  return "?";
}

inline const char* category_name(Category c) {
  switch (c) {
    case Category::verb: return "verb";
    case Category::noun: return "noun";
    case Category::scenario: return "scenario";
    case Category::place: return "place";
  }
  return "?";
}

inline Category parse_category(std::string_view s) {
  for (auto c : kAllCategories) {
    if (s == category_name(c) || s == category_key(c)) return c;
  }
  throw SchemaError("unknown category: " + std::string(s));
}

struct ActionLabel {
  int verb_id = 0;
  int noun_id = 0;

  friend bool operator==(const ActionLabel&, const ActionLabel&) = default;
};

struct GroundTruthSequence {
  std::string example_id;
  std::vector<ActionLabel> actions;
};

// Immutable label spaces. An entry's id is its 0-based position in the file.
class Taxonomy {
 public:
  Taxonomy(std::vector<std::string> verbs, std::vector<std::string> nouns,
           std::vector<std::string> scenarios, std::vector<std::string> places)
      : lists_{std::move(verbs), std::move(nouns), std::move(scenarios), std::move(places)} {
    for (auto c : kAllCategories) {
      const auto& list = lists_[index(c)];
      if (list.empty()) throw SchemaError(std::string("taxonomy list \"") + category_key(c) + "\" is empty");
      auto& lookup = lookup_[index(c)];
      for (std::size_t i = 0; i < list.size(); ++i) {
        if (list[i].find_first_not_of(" \t\r\n") == std::string::npos) {
          throw SchemaError(std::string("taxonomy list \"") + category_key(c) + "\" has a blank entry at " +
                            std::to_string(i));
        }
        if (!lookup.emplace(list[i], static_cast<int>(i)).second) {
          throw SchemaError(std::string("taxonomy list \"") + category_key(c) + "\" has duplicate entry \"" +
                            list[i] + "\"");
        }
      }
    }
  }

  const std::vector<std::string>& list(Category c) const { return lists_[index(c)]; }
  const std::vector<std::string>& verbs() const { return list(Category::verb); }
  const std::vector<std::string>& nouns() const { return list(Category::noun); }
  const std::vector<std::string>& scenarios() const { return list(Category::scenario); }
  const std::vector<std::string>& places() const { return list(Category::place); }

  std::size_t size(Category c) const { return list(c).size(); }

  int id_of(Category c, std::string_view token) const {
    const auto& lookup = lookup_[index(c)];
    auto it = lookup.find(std::string(token));
    if (it == lookup.end()) {
      throw LookupError(std::string("unknown ") + category_name(c) + " \"" + std::string(token) + "\"");
    }
    return it->second;
  }

  const std::string& name_of(Category c, int id) const {
    const auto& l = list(c);
    if (id < 0 || static_cast<std::size_t>(id) >= l.size()) {
      throw LookupError(std::string(category_name(c)) + " id " + std::to_string(id) + " out of range");
    }
    return l[static_cast<std::size_t>(id)];
  }

  bool valid(const ActionLabel& a) const {
    return a.verb_id >= 0 && static_cast<std::size_t>(a.verb_id) < verbs().size() && a.noun_id >= 0 &&
           static_cast<std::size_t>(a.noun_id) < nouns().size();
  }

  json to_json() const {
    json j = json::object();
    for (auto c : kAllCategories) j[category_key(c)] = list(c);
    return j;
  }

  static Taxonomy from_json(const json& j) {
    if (!j.is_object()) throw SchemaError("taxonomy must be a JSON object");
    std::array<std::vector<std::string>, 4> lists;
    for (auto c : kAllCategories) {
      const char* key = category_key(c);
      if (!j.contains(key)) throw SchemaError(std::string("taxonomy is missing list \"") + key + "\"");
      const auto& arr = j.at(key);
      if (!arr.is_array()) throw SchemaError(std::string("taxonomy list \"") + key + "\" is not an array");
      for (const auto& e : arr) {
        if (!e.is_string()) throw SchemaError(std::string("taxonomy list \"") + key + "\" has a non-string entry");
        lists[index(c)].push_back(e.get<std::string>());
      }
    }
    return Taxonomy(std::move(lists[0]), std::move(lists[1]), std::move(lists[2]), std::move(lists[3]));
  }

  // Hash over the canonical compact JSON form, so formatting differences in
  // the source file do not change it.
  std::string sha256() const { return sha256_hex(to_json().dump()); }

  friend bool operator==(const Taxonomy& a, const Taxonomy& b) { return a.lists_ == b.lists_; }

 private:
  static std::size_t index(Category c) { return static_cast<std::size_t>(c); }

  std::array<std::vector<std::string>, 4> lists_;
  std::array<std::unordered_map<std::string, int>, 4> lookup_;
};

inline Taxonomy load_taxonomy(const fs::path& path) {
  if (!fs::exists(path)) throw IoError("taxonomy file not found: " + path.string());
  return Taxonomy::from_json(read_json(path));
}

inline void save_taxonomy(const Taxonomy& t, const fs::path& path) { write_json(path, t.to_json()); }

inline ActionLabel encode_action(const Taxonomy& t, std::string_view verb, std::string_view noun) {
  return ActionLabel{t.id_of(Category::verb, verb), t.id_of(Category::noun, noun)};
}

inline std::pair<std::string, std::string> decode_action(const Taxonomy& t, const ActionLabel& a) {
  return {t.name_of(Category::verb, a.verb_id), t.name_of(Category::noun, a.noun_id)};
}

}  // namespace vclip
