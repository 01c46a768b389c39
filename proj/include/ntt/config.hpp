#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "ntt/model.hpp"
#include "ntt/taskgen.hpp"
#include "ntt/training.hpp"

namespace ntt {

/// Every knob of an experiment, loadable from a flat `key = value` file.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  TaskConfig task;
  std::size_t beam = 3;
  std::size_t seeds = 5;  // compare runs
  std::string data;
  std::string ckpt;
  std::string out;
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& text) {
  T value{};
  const char* first = text.data();
  const char* last = first + text.size();
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last) throw Error("cannot parse '" + text + "'");
  return value;
}

inline std::string format_double(double v) {
  std::ostringstream s;
  s.precision(17);
  s << v;
  return s.str();
}

struct Field {
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename T>
Field number_field(T& (*ref)(RunConfig&)) {
  return {[ref](RunConfig& c, const std::string& v) { ref(c) = parse_number<T>(v); },
          [ref](const RunConfig& c) {
            const T& x = ref(const_cast<RunConfig&>(c));
            if constexpr (std::is_floating_point_v<T>) {
              return format_double(x);
            } else {
              return std::to_string(x);
            }
          }};
}

inline Field string_field(std::string& (*ref)(RunConfig&)) {
  return {[ref](RunConfig& c, const std::string& v) { ref(c) = v; },
          [ref](const RunConfig& c) { return ref(const_cast<RunConfig&>(c)); }};
}

#define NTT_NUM(T, expr) number_field<T>(+[](RunConfig& c) -> T& { return expr; })
#define NTT_STR(expr) string_field(+[](RunConfig& c) -> std::string& { return expr; })

inline const std::map<std::string, Field>& config_fields() {
  static const std::map<std::string, Field> fields = [] {
    std::map<std::string, Field> f;
    f["model"] = {[](RunConfig& c, const std::string& v) { c.model.kind = parse_model_kind(v); },
                  [](const RunConfig& c) { return std::string(model_kind_name(c.model.kind)); }};
    f["attention_feed"] = {[](RunConfig& c, const std::string& v) {
                             if (v == "attended") {
                               c.model.dims.feed = AttentionFeed::Attended;
                             } else if (v == "raw_alpha") {
                               c.model.dims.feed = AttentionFeed::RawAlpha;
                             } else {
                               throw Error("expected attended or raw_alpha");
                             }
                           },
                           [](const RunConfig& c) {
                             return std::string(c.model.dims.feed == AttentionFeed::Attended ? "attended"
                                                                                             : "raw_alpha");
                           }};
    f["d"] = NTT_NUM(std::size_t, c.model.dims.d);
    f["d_v"] = NTT_NUM(std::size_t, c.model.dims.d_v);
    f["d_c"] = NTT_NUM(std::size_t, c.model.dims.d_c);
    f["d_e"] = NTT_NUM(std::size_t, c.model.dims.d_e);
    f["d_a"] = NTT_NUM(std::size_t, c.model.dims.d_a);
    f["d_r"] = NTT_NUM(std::size_t, c.model.d_r);
    f["d_u"] = NTT_NUM(std::size_t, c.model.d_u);
    f["max_len"] = NTT_NUM(std::size_t, c.model.dims.max_len);
    f["channels"] = NTT_NUM(std::size_t, c.model.channels);
    f["dropout_lang_l"] = NTT_NUM(double, c.model.meta.rate_lang_l);
    f["dropout_lang_r"] = NTT_NUM(double, c.model.meta.rate_lang_r);
    f["dropout_joint"] = NTT_NUM(double, c.model.meta.rate_joint);
    f["dropout_out"] = NTT_NUM(double, c.model.meta.rate_out);
    f["base_lr"] = NTT_NUM(double, c.train.base_lr);
    f["batch_size"] = NTT_NUM(std::size_t, c.train.batch_size);
    f["epochs"] = NTT_NUM(std::size_t, c.train.epochs);
    f["anneal_factor"] = NTT_NUM(double, c.train.anneal_factor);
    f["anneal_every"] = NTT_NUM(std::size_t, c.train.anneal_every);
    f["beta1"] = NTT_NUM(double, c.train.beta1);
    f["beta2"] = NTT_NUM(double, c.train.beta2);
    f["eps"] = NTT_NUM(double, c.train.eps);
    f["clip_norm"] = NTT_NUM(double, c.train.clip_norm);
    f["seed"] = NTT_NUM(std::uint64_t, c.train.seed);
    f["target_accuracy"] = NTT_NUM(double, c.train.target_accuracy);
    f["checkpoint_every"] = NTT_NUM(std::size_t, c.train.checkpoint_every);
    f["categories"] = NTT_NUM(std::size_t, c.task.categories);
    f["subcats_per_category"] = NTT_NUM(std::size_t, c.task.subcats_per_category);
    f["examples"] = NTT_NUM(std::size_t, c.task.n_examples);
    f["min_regions"] = NTT_NUM(std::size_t, c.task.min_regions);
    f["max_regions"] = NTT_NUM(std::size_t, c.task.max_regions);
    f["noise_scale"] = NTT_NUM(double, c.task.noise_scale);
    f["beam"] = NTT_NUM(std::size_t, c.beam);
    f["seeds"] = NTT_NUM(std::size_t, c.seeds);
    f["data"] = NTT_STR(c.data);
    f["ckpt"] = NTT_STR(c.ckpt);
    f["out"] = NTT_STR(c.out);
    return f;
  }();
  return fields;
}

#undef NTT_NUM
#undef NTT_STR

}  // namespace detail

/// Sets one key; unknown keys and unparsable values are errors.
inline void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
  const auto& fields = detail::config_fields();
  auto it = fields.find(key);
  if (it == fields.end()) throw Error("config: unknown key '" + key + "'");
  try {
    it->second.set(cfg, value);
  } catch (const Error& e) {
    throw Error("config: key '" + key + "': " + e.what());
  }
}

inline std::string get_config_value(const RunConfig& cfg, const std::string& key) {
  const auto& fields = detail::config_fields();
  auto it = fields.find(key);
  if (it == fields.end()) throw Error("config: unknown key '" + key + "'");
  return it->second.get(cfg);
}

inline std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& [k, f] : detail::config_fields()) keys.push_back(k);
  return keys;
}

/// Applies `key = value` lines; `#` starts a comment, blank lines are skipped.
inline void apply_config(RunConfig& cfg, std::istream& in) {
  std::string line;
  for (std::size_t n = 1; std::getline(in, line); ++n) {
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw Error("config line " + std::to_string(n) + ": expected 'key = value'");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    try {
      set_config_value(cfg, key, value);
    } catch (const Error& e) {
      throw Error("config line " + std::to_string(n) + ": " + e.what());
    }
  }
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config '" + path + "'");
  RunConfig cfg;
  apply_config(cfg, in);
  return cfg;
}

inline std::string dump_config(const RunConfig& cfg) {
  std::string out;
  for (const auto& key : config_keys()) out += key + " = " + get_config_value(cfg, key) + "\n";
  return out;
}

}  // namespace ntt
