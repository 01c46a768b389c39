#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <memory>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "ntt/model.hpp"
#include "ntt/training.hpp"

namespace ntt {

inline constexpr char kCheckpointMagic[] = "NTTCKPT1";
inline constexpr int kCheckpointVersion = 1;

// ---------------------------------------------------------------------------
// Config serialization.

inline nlohmann::ordered_json model_config_to_json(const ModelConfig& c) {
  nlohmann::ordered_json j;
  j["kind"] = model_kind_name(c.kind);
  j["d_v"] = c.dims.d_v;
  j["d_c"] = c.dims.d_c;
  j["d_e"] = c.dims.d_e;
  j["d"] = c.dims.d;
  j["d_a"] = c.dims.d_a;
  j["attention_feed"] = c.dims.feed == AttentionFeed::Attended ? "attended" : "raw_alpha";
  j["max_regions"] = c.dims.max_regions;
  j["max_len"] = c.dims.max_len;
  j["d_r"] = c.d_r;
  j["d_u"] = c.d_u;
  j["vocab"] = c.vocab;
  j["subcats"] = c.subcats;
  j["channels"] = c.channels;
  j["dropout"] = {c.meta.rate_lang_l, c.meta.rate_lang_r, c.meta.rate_joint, c.meta.rate_out};
  return j;
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.kind = parse_model_kind(j.at("kind").get<std::string>());
  c.dims.d_v = j.at("d_v").get<std::size_t>();
  c.dims.d_c = j.at("d_c").get<std::size_t>();
  c.dims.d_e = j.at("d_e").get<std::size_t>();
  c.dims.d = j.at("d").get<std::size_t>();
  c.dims.d_a = j.at("d_a").get<std::size_t>();
  const auto feed = j.at("attention_feed").get<std::string>();
  if (feed != "attended" && feed != "raw_alpha") throw Error("checkpoint: unknown attention_feed '" + feed + "'");
  c.dims.feed = feed == "attended" ? AttentionFeed::Attended : AttentionFeed::RawAlpha;
  c.dims.max_regions = j.at("max_regions").get<std::size_t>();
  c.dims.max_len = j.at("max_len").get<std::size_t>();
  c.d_r = j.at("d_r").get<std::size_t>();
  c.d_u = j.at("d_u").get<std::size_t>();
  c.vocab = j.at("vocab").get<std::size_t>();
  c.subcats = j.at("subcats").get<std::size_t>();
  c.channels = j.at("channels").get<std::size_t>();
  const auto rates = j.at("dropout").get<std::vector<double>>();
  if (rates.size() != 4) throw Error("checkpoint: dropout needs 4 rates");
  c.meta.rate_lang_l = rates[0];
  c.meta.rate_lang_r = rates[1];
  c.meta.rate_joint = rates[2];
  c.meta.rate_out = rates[3];
  return c;
}

inline nlohmann::ordered_json train_config_to_json(const TrainConfig& c) {
  nlohmann::ordered_json j;
  j["base_lr"] = c.base_lr;
  j["batch_size"] = c.batch_size;
  j["epochs"] = c.epochs;
  j["anneal_factor"] = c.anneal_factor;
  j["anneal_every"] = c.anneal_every;
  j["beta1"] = c.beta1;
  j["beta2"] = c.beta2;
  j["eps"] = c.eps;
  j["clip_norm"] = c.clip_norm;
  j["seed"] = c.seed;
  j["target_accuracy"] = c.target_accuracy;
  j["checkpoint_every"] = c.checkpoint_every;
  return j;
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.base_lr = j.at("base_lr").get<double>();
  c.batch_size = j.at("batch_size").get<std::size_t>();
  c.epochs = j.at("epochs").get<std::size_t>();
  c.anneal_factor = j.at("anneal_factor").get<double>();
  c.anneal_every = j.at("anneal_every").get<std::size_t>();
  c.beta1 = j.at("beta1").get<double>();
  c.beta2 = j.at("beta2").get<double>();
  c.eps = j.at("eps").get<double>();
  c.clip_norm = j.at("clip_norm").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.target_accuracy = j.at("target_accuracy").get<double>();
  c.checkpoint_every = j.at("checkpoint_every").get<std::size_t>();
  return c;
}

// ---------------------------------------------------------------------------
// Checkpoint.

/// Everything needed to rebuild a model and resume its training run.
struct Checkpoint {
  ModelConfig model;
  TrainConfig train;
  std::size_t epoch = 0;
  AdamState adam;
  Rng::State rng{};
  std::map<std::string, Tensor> params;
  nlohmann::ordered_json extra = nlohmann::ordered_json::object();  // task metadata (vocabulary, bank)
};

inline Checkpoint make_checkpoint(const CaptionModel& model, const Trainer* trainer,
                                  nlohmann::ordered_json extra = nlohmann::ordered_json::object()) {
  Checkpoint ck;
  ck.model = model.config();
  ck.params.clear();
  model.params().for_each([&](const Parameter& p) { ck.params.emplace(p.name, p.value); });
  if (trainer) {
    ck.train = trainer->config();
    ck.epoch = trainer->epoch();
    ck.adam = trainer->adam();
    ck.rng = trainer->rng().state();
  }
  ck.extra = std::move(extra);
  return ck;
}

namespace detail {

inline void write_f64(std::ostream& out, const Tensor& t) {
  for (double x : t.data()) {
    std::uint64_t bits = std::bit_cast<std::uint64_t>(x);
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(bits >> (8 * i));
    out.write(reinterpret_cast<const char*>(b), 8);
  }
}

inline void read_f64(std::istream& in, Tensor& t, const std::string& name) {
  for (double& x : t.data()) {
    unsigned char b[8];
    if (!in.read(reinterpret_cast<char*>(b), 8)) throw Error("checkpoint: payload truncated in '" + name + "'");
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    x = std::bit_cast<double>(bits);
  }
}

}  // namespace detail

/// Layout: magic "NTTCKPT1", one line of JSON header, then the tensors of
/// the header directory as little-endian binary64 in directory order.
/// Offsets are byte offsets from the start of the payload.
inline void write_checkpoint(std::ostream& out, const Checkpoint& ck) {
  nlohmann::ordered_json h;
  h["version"] = kCheckpointVersion;
  h["model"] = model_config_to_json(ck.model);
  h["train"] = train_config_to_json(ck.train);
  h["epoch"] = ck.epoch;
  h["adam_step"] = ck.adam.step;
  h["rng"] = ck.rng;
  h["extra"] = ck.extra;

  std::vector<std::pair<std::string, const Tensor*>> order;
  for (const auto& [name, t] : ck.params) order.emplace_back(name, &t);
  for (const auto& [name, t] : ck.adam.m) order.emplace_back("adam.m/" + name, &t);
  for (const auto& [name, t] : ck.adam.v) order.emplace_back("adam.v/" + name, &t);
  nlohmann::ordered_json dir = nlohmann::ordered_json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : order) {
    dir.push_back({{"name", name}, {"shape", t->shape()}, {"offset", offset}});
    offset += 8 * t->size();
  }
  h["tensors"] = dir;

  out.write(kCheckpointMagic, 8);
  out << h.dump() << '\n';
  for (const auto& [name, t] : order) detail::write_f64(out, *t);
  if (!out) throw Error("checkpoint: write failed");
}

inline Checkpoint read_checkpoint(std::istream& in) {
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kCheckpointMagic, 8) != 0) {
    throw Error("checkpoint: bad magic (not an NTTCKPT1 file)");
  }
  std::string line;
  if (!std::getline(in, line)) throw Error("checkpoint: missing header");
  nlohmann::json h;
  try {
    h = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("checkpoint: malformed header: ") + e.what());
  }
  Checkpoint ck;
  try {
    if (h.at("version").get<int>() != kCheckpointVersion) {
      throw Error("checkpoint: unsupported version " + h.at("version").dump());
    }
    ck.model = model_config_from_json(h.at("model"));
    ck.train = train_config_from_json(h.at("train"));
    ck.epoch = h.at("epoch").get<std::size_t>();
    ck.adam.step = h.at("adam_step").get<std::uint64_t>();
    ck.rng = h.at("rng").get<Rng::State>();
    ck.extra = h.at("extra");
    std::uint64_t expected = 0;
    for (const auto& entry : h.at("tensors")) {
      const auto name = entry.at("name").get<std::string>();
      const auto shape = entry.at("shape").get<Shape>();
      if (entry.at("offset").get<std::uint64_t>() != expected) throw Error("checkpoint: bad offset for '" + name + "'");
      Tensor t{Shape(shape)};
      detail::read_f64(in, t, name);
      expected += 8 * t.size();
      if (name.rfind("adam.m/", 0) == 0) {
        ck.adam.m.emplace(name.substr(7), std::move(t));
      } else if (name.rfind("adam.v/", 0) == 0) {
        ck.adam.v.emplace(name.substr(7), std::move(t));
      } else {
        ck.params.emplace(name, std::move(t));
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("checkpoint: header field error: ") + e.what());
  }
  return ck;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  write_checkpoint(out, ck);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint '" + path + "'");
  return read_checkpoint(in);
}

/// Rebuilds a model from a checkpoint; every parameter must be present with
/// its recorded shape.
inline std::unique_ptr<CaptionModel> model_from_checkpoint(const Checkpoint& ck) {
  auto model = std::make_unique<CaptionModel>(ck.model, 0);
  if (model->params().size() != ck.params.size()) {
    throw Error("checkpoint: holds " + std::to_string(ck.params.size()) + " tensors, model expects " +
                std::to_string(model->params().size()));
  }
  model->params().for_each([&](Parameter& p) {
    auto it = ck.params.find(p.name);
    if (it == ck.params.end()) throw Error("checkpoint: missing parameter '" + p.name + "'");
    if (it->second.shape() != p.value.shape()) {
      throw Error("checkpoint: shape mismatch for '" + p.name + "': " + shape_str(it->second.shape()) + " vs " +
                  shape_str(p.value.shape()));
    }
    p.value = it->second;
  });
  return model;
}

/// Restores the optimizer, epoch counter and RNG of a trainer.
inline void resume_trainer(Trainer& trainer, const Checkpoint& ck) {
  Rng rng;
  rng.set_state(ck.rng);
  trainer.restore(ck.epoch, ck.adam, rng);
}

}  // namespace ntt
