#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "ntt/caption.hpp"
#include "ntt/rng.hpp"

namespace ntt {

/// Textual word list. Ids 0 and 1 are the BOS and EOS markers.
class Vocabulary {
 public:
  static constexpr int kBos = 0;
  static constexpr int kEos = 1;

  Vocabulary() : words_{"<bos>", "<eos>"} {}
  explicit Vocabulary(std::vector<std::string> words) : words_(std::move(words)) {
    if (words_.size() < 2 || words_[kBos] != "<bos>" || words_[kEos] != "<eos>") {
      throw Error("vocabulary: must start with <bos>, <eos>");
    }
    for (std::size_t i = 0; i < words_.size(); ++i) index_[words_[i]] = static_cast<int>(i);
  }

  int add(const std::string& word) {
    if (auto it = index_.find(word); it != index_.end()) return it->second;
    words_.push_back(word);
    const int id = static_cast<int>(words_.size() - 1);
    index_[word] = id;
    return id;
  }

  int id(const std::string& word) const {
    auto it = index_.find(word);
    if (it == index_.end()) throw Error("vocabulary: unknown word '" + word + "'");
    return it->second;
  }
  const std::string& word(int id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= words_.size()) {
      throw Error("vocabulary: word id " + std::to_string(id) + " out of range");
    }
    return words_[static_cast<std::size_t>(id)];
  }
  std::size_t size() const { return words_.size(); }
  const std::vector<std::string>& words() const { return words_; }

 private:
  std::vector<std::string> words_;
  std::map<std::string, int> index_{{"<bos>", kBos}, {"<eos>", kEos}};
};

/// Caption grammar. Templates are space-separated words with placeholders:
/// `<slot>` a grounded word, `{d}` determiner and `{be}` copula agreeing with
/// the plurality of the following (or only) slot, `{c}` a connector chosen by
/// the categories of the two surrounding slots.
struct Grammar {
  std::vector<std::string> templates = {
      "there {be} {d} <slot> in the picture",
      "{d} <slot> {c} {d} <slot>",
      "{d} <slot> {c} {d} <slot> and {d} <slot>",
  };
  std::vector<std::string> connectors = {"next to", "on", "near", "behind", "in front of", "close to", "under",
                                         "beside"};
  std::string det_singular = "a";
  std::string det_plural = "two";
  std::string be_singular = "is";
  std::string be_plural = "are";

  static std::vector<std::string> split_words(const std::string& s) {
    std::istringstream in(s);
    std::vector<std::string> out;
    for (std::string w; in >> w;) out.push_back(w);
    return out;
  }

  static std::size_t slot_count(const std::string& tmpl) {
    const auto words = split_words(tmpl);
    return static_cast<std::size_t>(std::count(words.begin(), words.end(), "<slot>"));
  }

  /// Text vocabulary implied by the grammar, in first-appearance order.
  Vocabulary vocabulary() const {
    Vocabulary v;
    for (const auto& w : {det_singular, det_plural, be_singular, be_plural}) v.add(w);
    for (const auto& t : templates) {
      for (const auto& w : split_words(t)) {
        if (w != "<slot>" && w != "{d}" && w != "{be}" && w != "{c}") v.add(w);
      }
    }
    for (const auto& c : connectors) {
      for (const auto& w : split_words(c)) v.add(w);
    }
    return v;
  }
};

/// Categories, their sub-category words with singular/plural surface forms,
/// and the feature prototypes regions are sampled around.
class CategoryBank {
 public:
  struct Subcategory {
    int category = 0;
    std::string singular;
    std::string plural;
  };

  CategoryBank() = default;

  /// Names only (no prototypes); enough for surface realization.
  static CategoryBank names(std::size_t categories, std::size_t subcats_per_category) {
    static const std::vector<std::vector<std::pair<const char*, const char*>>> kNouns = {
        {{"cat", "cats"}, {"dog", "dogs"}, {"horse", "horses"}, {"sheep", "sheep"}},
        {{"car", "cars"}, {"bus", "buses"}, {"truck", "trucks"}, {"bike", "bikes"}},
        {{"chair", "chairs"}, {"couch", "couches"}, {"table", "tables"}, {"bed", "beds"}},
        {{"pizza", "pizzas"}, {"apple", "apples"}, {"sandwich", "sandwiches"}, {"cake", "cakes"}},
        {{"man", "men"}, {"woman", "women"}, {"child", "children"}, {"person", "people"}},
        {{"cup", "cups"}, {"bottle", "bottles"}, {"bowl", "bowls"}, {"knife", "knives"}},
        {{"ball", "balls"}, {"racket", "rackets"}, {"kite", "kites"}, {"skateboard", "skateboards"}},
        {{"laptop", "laptops"}, {"phone", "phones"}, {"tv", "tvs"}, {"keyboard", "keyboards"}},
    };
    if (categories < 1 || subcats_per_category < 1) throw Error("category bank: sizes must be positive");
    CategoryBank bank;
    bank.categories_ = categories;
    for (std::size_t k = 0; k < categories; ++k) {
      std::vector<int> ids;
      for (std::size_t j = 0; j < subcats_per_category; ++j) {
        Subcategory sc;
        sc.category = static_cast<int>(k);
        if (k < kNouns.size() && j < kNouns[k].size()) {
          sc.singular = kNouns[k][j].first;
          sc.plural = kNouns[k][j].second;
        } else {
          sc.singular = "thing" + std::to_string(k) + "x" + std::to_string(j);
          sc.plural = sc.singular + "s";
        }
        ids.push_back(static_cast<int>(bank.subcats_.size()));
        bank.subcats_.push_back(std::move(sc));
      }
      bank.members_.push_back(std::move(ids));
    }
    return bank;
  }

  /// Names plus random unit-norm prototypes. Category prototypes are
  /// redrawn until every pair is further apart than 4 × noise_scale.
  static CategoryBank generate(std::size_t categories, std::size_t subcats_per_category, std::size_t d_v,
                               std::size_t d_c, double noise_scale, Rng& rng) {
    CategoryBank bank = names(categories, subcats_per_category);
    auto unit = [&](std::size_t n, double length) {
      std::vector<double> v(n);
      double norm = 0.0;
      for (double& x : v) {
        x = rng.normal();
        norm += x * x;
      }
      norm = std::sqrt(norm);
      for (double& x : v) x *= length / norm;
      return v;
    };
    const double min_gap = 4.0 * noise_scale;
    bool separated = false;
    for (int attempt = 0; attempt < 1000 && !separated; ++attempt) {
      bank.proto_v_.clear();
      for (std::size_t k = 0; k < categories; ++k) bank.proto_v_.push_back(unit(d_v, 1.0));
      separated = bank.min_prototype_distance() > min_gap;
    }
    if (!separated) throw Error("category bank: could not separate prototypes; lower noise_scale or raise d_v");
    for (std::size_t k = 0; k < categories; ++k) bank.proto_c_.push_back(unit(d_c, 1.0));
    for (std::size_t s = 0; s < bank.subcats_.size(); ++s) bank.offset_sub_.push_back(unit(d_v, 0.5));
    bank.plural_axis_ = unit(d_v, 0.5);
    return bank;
  }

  std::size_t categories() const { return categories_; }
  std::size_t subcategory_count() const { return subcats_.size(); }
  const std::vector<int>& members(int category) const { return members_.at(static_cast<std::size_t>(category)); }
  const Subcategory& subcategory(int id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= subcats_.size()) {
      throw Error("category bank: unknown sub-category id " + std::to_string(id));
    }
    return subcats_[static_cast<std::size_t>(id)];
  }
  bool has_prototypes() const { return !proto_v_.empty(); }

  double min_prototype_distance() const {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t a = 0; a < proto_v_.size(); ++a) {
      for (std::size_t b = a + 1; b < proto_v_.size(); ++b) {
        double s = 0.0;
        for (std::size_t i = 0; i < proto_v_[a].size(); ++i) {
          const double diff = proto_v_[a][i] - proto_v_[b][i];
          s += diff * diff;
        }
        best = std::min(best, std::sqrt(s));
      }
    }
    return best;
  }

  /// Noise-free region feature for a label; background regions are damped.
  std::vector<double> feature_prototype(const RegionLabel& label, bool salient) const {
    const double gain = salient ? 1.0 : kBackgroundGain;
    const auto& base = proto_v_.at(static_cast<std::size_t>(label.category));
    const auto& sub = offset_sub_.at(static_cast<std::size_t>(label.subcat));
    const double sign = label.plural ? 1.0 : -1.0;
    std::vector<double> out(base.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = gain * (base[i] + sub[i] + sign * plural_axis_[i]);
    return out;
  }
  std::vector<double> conv_prototype(const RegionLabel& label, bool salient) const {
    const double gain = salient ? 1.0 : kBackgroundGain;
    std::vector<double> out = proto_c_.at(static_cast<std::size_t>(label.category));
    for (double& x : out) x *= gain;
    return out;
  }

  static constexpr double kBackgroundGain = 0.4;

 private:
  std::size_t categories_ = 0;
  std::vector<Subcategory> subcats_;
  std::vector<std::vector<int>> members_;
  std::vector<std::vector<double>> proto_v_;
  std::vector<std::vector<double>> proto_c_;
  std::vector<std::vector<double>> offset_sub_;
  std::vector<double> plural_axis_;
};

struct TaskConfig {
  std::size_t categories = 6;
  std::size_t subcats_per_category = 3;
  std::size_t n_examples = 100;
  std::size_t d_v = 16;
  std::size_t d_c = 16;
  std::size_t min_regions = 2;
  std::size_t max_regions = 6;
  double noise_scale = 0.1;
  Grammar grammar;

  void validate() const {
    if (categories < 2) throw Error("task config: need at least 2 categories");
    if (n_examples < 1) throw Error("task config: need at least 1 example");
    if (subcats_per_category < 1) throw Error("task config: need at least 1 sub-category per category");
    if (min_regions < 1 || min_regions > max_regions) throw Error("task config: invalid region count range");
    if (noise_scale < 0.0) throw Error("task config: negative noise scale");
    if (grammar.templates.empty()) throw Error("task config: grammar has no templates");
    if (grammar.connectors.empty()) throw Error("task config: grammar has no connectors");
    for (const auto& t : grammar.templates) {
      const std::size_t slots = Grammar::slot_count(t);
      if (slots == 0) throw Error("task config: template '" + t + "' has no slot");
      if (slots > max_regions) {
        throw Error("task config: template '" + t + "' references " + std::to_string(slots) +
                    " slots but scenes have at most " + std::to_string(max_regions) + " regions");
      }
    }
    if (usable_templates().empty()) {
      throw Error("task config: every template needs more distinct categories than the " +
                  std::to_string(categories) + " available");
    }
  }

  /// Templates whose slots can be filled by distinct categories.
  std::vector<std::string> usable_templates() const {
    std::vector<std::string> out;
    for (const auto& t : grammar.templates) {
      if (Grammar::slot_count(t) <= categories) out.push_back(t);
    }
    return out;
  }
};

struct GeneratedTask {
  Dataset dataset;
  CategoryBank bank;
  Vocabulary vocab;
};

namespace detail {

inline std::vector<Token> render_caption(const Grammar& g, const Vocabulary& vocab, const std::string& tmpl,
                                         const std::vector<int>& slot_regions,
                                         const std::vector<RegionLabel>& labels) {
  const auto words = Grammar::split_words(tmpl);
  std::vector<Token> out{Token::text(Vocabulary::kBos)};
  std::size_t next_slot = 0;
  auto plural_of = [&](std::size_t slot) {
    return labels[static_cast<std::size_t>(slot_regions[std::min(slot, slot_regions.size() - 1)])].plural;
  };
  for (const auto& w : words) {
    if (w == "<slot>") {
      const int r = slot_regions[next_slot++];
      const auto& l = labels[static_cast<std::size_t>(r)];
      out.push_back(Token::slot(r, l.subcat, l.plural));
    } else if (w == "{d}") {
      out.push_back(Token::text(vocab.id(plural_of(next_slot) ? g.det_plural : g.det_singular)));
    } else if (w == "{be}") {
      out.push_back(Token::text(vocab.id(plural_of(next_slot) ? g.be_plural : g.be_singular)));
    } else if (w == "{c}") {
      if (next_slot == 0 || next_slot >= slot_regions.size()) throw Error("grammar: connector must sit between slots");
      const int a = labels[static_cast<std::size_t>(slot_regions[next_slot - 1])].category;
      const int b = labels[static_cast<std::size_t>(slot_regions[next_slot])].category;
      const auto& conn = g.connectors[static_cast<std::size_t>(a + b) % g.connectors.size()];
      for (const auto& cw : Grammar::split_words(conn)) out.push_back(Token::text(vocab.id(cw)));
    } else {
      out.push_back(Token::text(vocab.id(w)));
    }
  }
  out.push_back(Token::text(Vocabulary::kEos));
  return out;
}

}  // namespace detail

/// Deterministic scene/caption generator. Each scene has R regions; the
/// template's slots name distinct-category "salient" regions, listed in
/// ascending category order. Other regions are damped background clutter.
inline GeneratedTask generate(std::uint64_t seed, const TaskConfig& cfg) {
  cfg.validate();
  Rng rng(seed);
  GeneratedTask task;
  task.bank = CategoryBank::generate(cfg.categories, cfg.subcats_per_category, cfg.d_v, cfg.d_c, cfg.noise_scale, rng);
  task.vocab = cfg.grammar.vocabulary();

  const auto templates = cfg.usable_templates();
  for (std::size_t n = 0; n < cfg.n_examples; ++n) {
    const std::string& tmpl = templates[rng.below(templates.size())];
    const std::size_t slots = Grammar::slot_count(tmpl);
    const std::size_t lo = std::max(cfg.min_regions, slots);
    const std::size_t r = lo + rng.below(cfg.max_regions - lo + 1);

    // Distinct categories for the salient regions (partial Fisher-Yates).
    std::vector<int> cats(cfg.categories);
    std::iota(cats.begin(), cats.end(), 0);
    for (std::size_t i = 0; i < slots; ++i) std::swap(cats[i], cats[i + rng.below(cats.size() - i)]);
    std::vector<int> salient_cats(cats.begin(), cats.begin() + static_cast<std::ptrdiff_t>(slots));
    std::sort(salient_cats.begin(), salient_cats.end());

    struct Draft {
      RegionLabel label;
      bool salient;
      int slot_order;
    };
    std::vector<Draft> drafts;
    for (std::size_t i = 0; i < r; ++i) {
      Draft d;
      d.salient = i < slots;
      d.slot_order = d.salient ? static_cast<int>(i) : -1;
      d.label.category = d.salient ? salient_cats[i] : static_cast<int>(rng.below(cfg.categories));
      const auto& members = task.bank.members(d.label.category);
      d.label.subcat = members[rng.below(members.size())];
      d.label.plural = rng.bernoulli(0.5) ? 1 : 0;
      drafts.push_back(d);
    }
    for (std::size_t i = r; i-- > 1;) std::swap(drafts[i], drafts[rng.below(i + 1)]);

    Example ex;
    ex.regions.V = Tensor({r, cfg.d_v});
    ex.regions.Vbar = Tensor({r, cfg.d_c});
    std::vector<int> slot_regions(slots);
    for (std::size_t i = 0; i < r; ++i) {
      const Draft& d = drafts[i];
      ex.regions.labels.push_back(d.label);
      if (d.salient) slot_regions[static_cast<std::size_t>(d.slot_order)] = static_cast<int>(i);
      const auto fv = task.bank.feature_prototype(d.label, d.salient);
      const auto fc = task.bank.conv_prototype(d.label, d.salient);
      for (std::size_t j = 0; j < cfg.d_v; ++j) ex.regions.V.at(i, j) = fv[j] + cfg.noise_scale * rng.normal();
      for (std::size_t j = 0; j < cfg.d_c; ++j) ex.regions.Vbar.at(i, j) = fc[j] + cfg.noise_scale * rng.normal();
    }
    ex.tokens = detail::render_caption(cfg.grammar, task.vocab, tmpl, slot_regions, ex.regions.labels);
    task.dataset.examples.push_back(std::move(ex));
  }
  task.dataset.assign_splits();
  return task;
}

/// Checks the structural invariants of an example: BOS/EOS framing, slot
/// regions in range, slot labels matching their region.
inline void validate_example(const Example& ex, const CategoryBank* bank = nullptr) {
  ex.regions.validate();
  if (ex.tokens.size() < 2) throw Error("example: caption shorter than BOS/EOS");
  if (!ex.tokens.front().is_text() || ex.tokens.front().id != Vocabulary::kBos) throw Error("example: missing BOS");
  if (!ex.tokens.back().is_text() || ex.tokens.back().id != Vocabulary::kEos) throw Error("example: missing EOS");
  for (const Token& t : ex.tokens) {
    if (!t.is_slot()) continue;
    if (t.region < 0 || static_cast<std::size_t>(t.region) >= ex.regions.count()) {
      throw Error("example: slot region " + std::to_string(t.region) + " out of range");
    }
    if (!ex.regions.labels.empty()) {
      const auto& l = ex.regions.labels[static_cast<std::size_t>(t.region)];
      if (l.subcat != t.subcat || l.plural != t.plural) throw Error("example: slot disagrees with region label");
      if (bank && bank->subcategory(t.subcat).category != l.category) {
        throw Error("example: slot sub-category outside its region's category");
      }
    }
  }
}

// ---------------------------------------------------------------------------
// JSONL

inline nlohmann::ordered_json example_to_json(const Example& ex) {
  nlohmann::ordered_json regions = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < ex.regions.count(); ++i) {
    const auto fv = ex.regions.V.row(i);
    const auto fc = ex.regions.Vbar.row(i);
    const RegionLabel l = ex.regions.labels.empty() ? RegionLabel{} : ex.regions.labels[i];
    regions.push_back({{"feat", std::vector<double>(fv.begin(), fv.end())},
                       {"conv_feat", std::vector<double>(fc.begin(), fc.end())},
                       {"category", l.category},
                       {"subcat", l.subcat},
                       {"plural", l.plural}});
  }
  nlohmann::ordered_json tokens = nlohmann::ordered_json::array();
  for (const Token& t : ex.tokens) {
    if (t.is_text()) {
      tokens.push_back({{"t", "text"}, {"id", t.id}});
    } else {
      tokens.push_back({{"t", "slot"}, {"region", t.region}, {"subcat", t.subcat}, {"plural", t.plural}});
    }
  }
  return {{"regions", std::move(regions)}, {"tokens", std::move(tokens)}};
}

namespace detail {

struct LineError {
  std::size_t line;
  [[noreturn]] void fail(const std::string& field, const std::string& what) const {
    throw Error("line " + std::to_string(line) + ": field '" + field + "': " + what);
  }
  const nlohmann::json& get(const nlohmann::json& obj, const char* field) const {
    if (!obj.is_object() || !obj.contains(field)) fail(field, "missing");
    return obj.at(field);
  }
  int get_int(const nlohmann::json& obj, const char* field) const {
    const auto& v = get(obj, field);
    if (!v.is_number_integer()) fail(field, "expected integer");
    return v.get<int>();
  }
  std::vector<double> get_reals(const nlohmann::json& obj, const char* field) const {
    const auto& v = get(obj, field);
    if (!v.is_array() || v.empty()) fail(field, "expected non-empty array of numbers");
    std::vector<double> out;
    for (const auto& x : v) {
      if (!x.is_number()) fail(field, "expected number");
      out.push_back(x.get<double>());
    }
    return out;
  }
};

}  // namespace detail

inline Example example_from_json(const nlohmann::json& j, std::size_t line) {
  const detail::LineError err{line};
  const auto& regions = err.get(j, "regions");
  if (!regions.is_array() || regions.empty()) err.fail("regions", "expected non-empty array");
  Example ex;
  std::vector<std::vector<double>> feats, convs;
  for (const auto& r : regions) {
    feats.push_back(err.get_reals(r, "feat"));
    convs.push_back(err.get_reals(r, "conv_feat"));
    RegionLabel l{err.get_int(r, "category"), err.get_int(r, "subcat"), err.get_int(r, "plural")};
    if (l.plural != 0 && l.plural != 1) err.fail("plural", "expected 0 or 1");
    ex.regions.labels.push_back(l);
    if (feats.back().size() != feats.front().size()) err.fail("feat", "inconsistent width");
    if (convs.back().size() != convs.front().size()) err.fail("conv_feat", "inconsistent width");
  }
  const std::size_t r = feats.size();
  ex.regions.V = Tensor({r, feats.front().size()});
  ex.regions.Vbar = Tensor({r, convs.front().size()});
  for (std::size_t i = 0; i < r; ++i) {
    std::copy(feats[i].begin(), feats[i].end(), ex.regions.V.row(i).begin());
    std::copy(convs[i].begin(), convs[i].end(), ex.regions.Vbar.row(i).begin());
  }
  const auto& tokens = err.get(j, "tokens");
  if (!tokens.is_array()) err.fail("tokens", "expected array");
  for (const auto& t : tokens) {
    const auto& kind = err.get(t, "t");
    if (kind == "text") {
      ex.tokens.push_back(Token::text(err.get_int(t, "id")));
    } else if (kind == "slot") {
      Token tok = Token::slot(err.get_int(t, "region"), err.get_int(t, "subcat"), err.get_int(t, "plural"));
      if (tok.region < 0 || static_cast<std::size_t>(tok.region) >= r) err.fail("region", "out of range");
      if (tok.plural != 0 && tok.plural != 1) err.fail("plural", "expected 0 or 1");
      ex.tokens.push_back(tok);
    } else {
      err.fail("t", "expected \"text\" or \"slot\"");
    }
  }
  return ex;
}

inline void write_jsonl(std::ostream& out, const Dataset& ds) {
  for (const auto& ex : ds.examples) out << example_to_json(ex).dump() << '\n';
}

inline Dataset read_jsonl(std::istream& in) {
  Dataset ds;
  std::string line;
  for (std::size_t n = 1; std::getline(in, line); ++n) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw Error("line " + std::to_string(n) + ": field '<line>': malformed JSON (" + e.what() + ")");
    }
    ds.examples.push_back(example_from_json(j, n));
  }
  ds.assign_splits();
  return ds;
}

inline void save_jsonl(const std::string& path, const Dataset& ds) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  write_jsonl(out, ds);
}

inline Dataset load_jsonl(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open dataset '" + path + "'");
  return read_jsonl(in);
}

}  // namespace ntt
