#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "ntt/autodiff.hpp"
#include "ntt/caption.hpp"
#include "ntt/heads.hpp"
#include "ntt/twin_decoder.hpp"

namespace ntt {

enum class ModelKind { Ntt, Baseline };

inline const char* model_kind_name(ModelKind k) { return k == ModelKind::Ntt ? "ntt" : "baseline"; }

inline ModelKind parse_model_kind(const std::string& s) {
  if (s == "ntt") return ModelKind::Ntt;
  if (s == "baseline") return ModelKind::Baseline;
  throw Error("unknown model kind '" + s + "' (expected ntt or baseline)");
}

struct ModelConfig {
  ModelKind kind = ModelKind::Ntt;
  DecoderDims dims;
  std::size_t d_r = 0;  // 0 means d
  std::size_t d_u = 16;
  std::size_t vocab = 0;
  std::size_t subcats = 0;
  std::size_t channels = 2;  // NTT only; exactly two are implemented
  MetaConfig meta;

  std::size_t feature_width() const { return d_r == 0 ? dims.d : d_r; }

  void validate() const {
    if (vocab < 2) throw Error("model config: textual vocabulary must hold at least BOS and EOS");
    if (subcats < 1) throw Error("model config: need at least one sub-category");
    if (dims.d == 0 || dims.d_v == 0 || dims.d_c == 0 || dims.d_e == 0 || dims.d_a == 0 || d_u == 0) {
      throw Error("model config: dimensions must be positive");
    }
    if (dims.max_len < 1) throw Error("model config: max_len must be at least 1");
    if (kind == ModelKind::Ntt && channels != 2) {
      throw Error("model config: " + std::to_string(channels) + " attention channels requested; only 2 are supported");
    }
    meta.validate();
  }

  HeadDims head_dims() const {
    return {dims.d_v, dims.d, dims.d_a, feature_width(), d_u, vocab, subcats};
  }
};

/// Regions lifted onto a tape with every time-invariant projection.
struct EncodedRegions {
  AttentionInputs att;
  Var head_proj_v;
};

/// Per-step head outputs on the tape.
struct HeadOutputs {
  Var u;     // pointer logits, R
  Var p_r;   // regions + sentinel, R+1
  Var p_txt; // S
};

/// Embedding table + decoder (twin or baseline) + grounding heads.
class CaptionModel {
 public:
  CaptionModel(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(seed);
    const double bound = 1.0 / std::sqrt(static_cast<double>(cfg_.dims.d_e));
    Tensor table({cfg_.vocab + cfg_.subcats, cfg_.dims.d_e});
    for (double& v : table.data()) v = rng.uniform(-bound, bound);
    embedding_ = &params_.add("embed", std::move(table));
    if (cfg_.kind == ModelKind::Ntt) {
      decoder_ = NttDecoderParams::create(params_, cfg_.dims, rng);
    } else {
      decoder_ = BaselineDecoderParams::create(params_, cfg_.dims, rng);
    }
    heads_ = HeadParams::create(params_, cfg_.head_dims(), rng);
  }

  CaptionModel(const CaptionModel&) = delete;
  CaptionModel& operator=(const CaptionModel&) = delete;

  const ModelConfig& config() const { return cfg_; }
  ModelKind kind() const { return cfg_.kind; }
  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }
  const HeadParams& heads() const { return heads_; }
  const NttDecoderParams& ntt() const { return std::get<NttDecoderParams>(decoder_); }
  const BaselineDecoderParams& baseline() const { return std::get<BaselineDecoderParams>(decoder_); }
  const AttentionParams& attention() const {
    return cfg_.kind == ModelKind::Ntt ? ntt().attention : baseline().attention;
  }

  /// Row of the embedding table fed for a previous token: textual words use
  /// their id, slots use vocab + sub-category id.
  std::size_t input_index(const Token& t) const {
    if (t.is_text()) {
      if (t.id < 0 || static_cast<std::size_t>(t.id) >= cfg_.vocab) {
        throw Error("token: word id " + std::to_string(t.id) + " outside vocabulary of " + std::to_string(cfg_.vocab));
      }
      return static_cast<std::size_t>(t.id);
    }
    if (t.subcat < 0 || static_cast<std::size_t>(t.subcat) >= cfg_.subcats) {
      throw Error("token: sub-category " + std::to_string(t.subcat) + " outside " + std::to_string(cfg_.subcats));
    }
    return cfg_.vocab + static_cast<std::size_t>(t.subcat);
  }

  EncodedRegions encode(Tape& tape, const RegionSet& regions) const {
    if (regions.V.rank() == 2 && regions.V.cols() != cfg_.dims.d_v) {
      throw Error("regions: feature width " + std::to_string(regions.V.cols()) + ", model expects " +
                  std::to_string(cfg_.dims.d_v));
    }
    if (regions.Vbar.rank() == 2 && regions.Vbar.cols() != cfg_.dims.d_c) {
      throw Error("regions: conv feature width " + std::to_string(regions.Vbar.cols()) + ", model expects " +
                  std::to_string(cfg_.dims.d_c));
    }
    EncodedRegions enc;
    enc.att = prepare_attention(tape, regions, attention());
    enc.head_proj_v = project_regions(enc.att.v, heads_);
    return enc;
  }

  DecoderState initial_state(Tape& tape) const { return ntt::initial_state(tape, cfg_.dims.d); }

  StepOutput step(Tape& tape, const EncodedRegions& enc, const DecoderState& state, const Token& prev, bool train,
                  Rng* rng) const {
    Var emb = row(tape.param(*embedding_), input_index(prev));
    if (cfg_.kind == ModelKind::Ntt) {
      MetaConfig meta = cfg_.meta;
      meta.train = train;
      return ntt_step(ntt(), cfg_.dims, state, emb, enc.att, meta, rng);
    }
    return baseline_step(baseline(), cfg_.dims, state, emb, enc.att);
  }

  HeadOutputs heads(const EncodedRegions& enc, const StepOutput& out) const {
    HeadOutputs h;
    h.u = pointing(enc.head_proj_v, out.h_top, heads_);
    h.p_r = region_distribution(h.u, out.sentinel, out.h_top, heads_);
    h.p_txt = textual_distribution(out.mh, heads_);
    return h;
  }

  Var plurality_at(const EncodedRegions& enc, const StepOutput& out, std::size_t region) const {
    return plurality(row(enc.att.v, region), out.h_top, heads_);
  }
  Var subcategory_at(const EncodedRegions& enc, const StepOutput& out, std::size_t region) const {
    return subcategory(row(enc.att.v, region), out.h_top, heads_);
  }

  /// Full joint distribution (all regions' plurality and sub-category heads).
  WordDistribution distribution(const EncodedRegions& enc, const StepOutput& out, const HeadOutputs& h) const {
    std::vector<Tensor> plural, subcat;
    for (std::size_t i = 0; i < enc.att.count; ++i) {
      plural.push_back(plurality_at(enc, out, i).value());
      subcat.push_back(subcategory_at(enc, out, i).value());
    }
    return combined_distribution(h.p_r.value(), h.p_txt.value(), plural, subcat);
  }

  /// Teacher-forced negative log-likelihood averaged over caption steps.
  /// Text targets cost −log p_sentinel − log p_txt(w); slot targets cost
  /// −log p_region(i) − log p_plural(b|i) − log p_subcat(s|i).
  Var sequence_loss(Tape& tape, const Example& ex, bool train, Rng* rng) const {
    if (ex.tokens.size() < 2) throw Error("sequence_loss: caption needs at least two tokens");
    EncodedRegions enc = encode(tape, ex.regions);
    DecoderState state = initial_state(tape);
    const std::size_t r = enc.att.count;
    Var total;
    for (std::size_t t = 1; t < ex.tokens.size(); ++t) {
      StepOutput out = step(tape, enc, state, ex.tokens[t - 1], train, rng);
      HeadOutputs h = heads(enc, out);
      const Token& target = ex.tokens[t];
      Var term;
      if (target.is_text()) {
        term = add(nll_pick(h.p_r, r), nll_pick(h.p_txt, input_index(target)));
      } else {
        if (target.region < 0 || static_cast<std::size_t>(target.region) >= r) {
          throw Error("sequence_loss: slot region " + std::to_string(target.region) + " out of range");
        }
        const auto i = static_cast<std::size_t>(target.region);
        input_index(target);
        term = add({nll_pick(h.p_r, i), nll_pick(plurality_at(enc, out, i), static_cast<std::size_t>(target.plural)),
                    nll_pick(subcategory_at(enc, out, i), static_cast<std::size_t>(target.subcat))});
      }
      total = total.valid() ? add(total, term) : term;
      state = out.state;
    }
    return scale(total, 1.0 / static_cast<double>(ex.tokens.size() - 1));
  }

 private:
  ModelConfig cfg_;
  ParameterSet params_;
  Parameter* embedding_ = nullptr;
  std::variant<NttDecoderParams, BaselineDecoderParams> decoder_;
  HeadParams heads_;
};

/// Copies every parameter value by name (shapes must agree).
inline void copy_parameters(const CaptionModel& from, CaptionModel& to) {
  to.params().for_each([&](Parameter& p) {
    const Parameter& src = from.params().at(p.name);
    if (src.value.shape() != p.value.shape()) throw Error("copy_parameters: shape mismatch for '" + p.name + "'");
    p.value = src.value;
  });
}

}  // namespace ntt
