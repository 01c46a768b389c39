#pragma once

#include <string>
#include <vector>

#include "ntt/attention.hpp"

namespace ntt {

/// A caption token: a textual word id, or a grounded slot naming a region
/// together with the sub-category word and plurality that fill it.
struct Token {
  enum class Kind { Text, Slot };

  Kind kind = Kind::Text;
  int id = 0;      // textual word id (Text)
  int region = 0;  // region index (Slot)
  int subcat = 0;  // sub-category word id (Slot)
  int plural = 0;  // 0 singular, 1 plural (Slot)

  static Token text(int word) { return {Kind::Text, word, 0, 0, 0}; }
  static Token slot(int region, int subcat, int plural) { return {Kind::Slot, 0, region, subcat, plural}; }

  bool is_text() const { return kind == Kind::Text; }
  bool is_slot() const { return kind == Kind::Slot; }

  bool operator==(const Token& o) const {
    if (kind != o.kind) return false;
    return is_text() ? id == o.id : (region == o.region && subcat == o.subcat && plural == o.plural);
  }
};

enum class Split { Train, Val, Test };

inline const char* split_name(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "?";
}

inline Split parse_split(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "val") return Split::Val;
  if (s == "test") return Split::Test;
  throw Error("unknown split '" + s + "' (expected train, val or test)");
}

/// 80/10/10 split by position in the dataset.
inline Split split_for_index(std::size_t index, std::size_t total) {
  if (index < total * 8 / 10) return Split::Train;
  if (index < total * 9 / 10) return Split::Val;
  return Split::Test;
}

struct Example {
  RegionSet regions;
  std::vector<Token> tokens;
  Split split = Split::Train;

  bool operator==(const Example&) const = default;
};

struct Dataset {
  std::vector<Example> examples;

  std::vector<const Example*> select(Split s) const {
    std::vector<const Example*> out;
    for (const auto& e : examples) {
      if (e.split == s) out.push_back(&e);
    }
    return out;
  }
  std::vector<const Example*> all() const {
    std::vector<const Example*> out;
    for (const auto& e : examples) out.push_back(&e);
    return out;
  }

  /// Re-derives split tags from positions.
  void assign_splits() {
    for (std::size_t i = 0; i < examples.size(); ++i) examples[i].split = split_for_index(i, examples.size());
  }

  bool operator==(const Dataset&) const = default;
};

}  // namespace ntt
