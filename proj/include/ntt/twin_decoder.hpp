#pragma once

#include <array>
#include <cmath>
#include <string>

#include "ntt/attention.hpp"
#include "ntt/autodiff.hpp"
#include "ntt/lstm.hpp"
#include "ntt/rng.hpp"

namespace ntt {

/// What the attention network hands to the language LSTMs: the attended
/// feature vectors (default) or the raw weights zero-padded to max_regions.
enum class AttentionFeed { Attended, RawAlpha };

struct DecoderDims {
  std::size_t d_v = 16;
  std::size_t d_c = 16;
  std::size_t d_e = 16;
  std::size_t d = 32;
  std::size_t d_a = 32;
  AttentionFeed feed = AttentionFeed::Attended;
  std::size_t max_regions = 6;
  std::size_t max_len = 32;

  std::size_t shared_input() const { return d_e + d_c; }
  std::size_t language_input() const {
    return feed == AttentionFeed::Attended ? d_v + d_c + d : 2 * max_regions + d;
  }
};

/// Dropout rates of the meta hypothesis: language L, language R, joint, output.
struct MetaConfig {
  double rate_lang_l = 0.3;
  double rate_lang_r = 0.7;
  double rate_joint = 0.8;
  double rate_out = 0.5;
  bool train = false;

  void validate() const {
    for (double r : {rate_lang_l, rate_lang_r, rate_joint, rate_out}) {
      if (!(r >= 0.0 && r < 1.0)) throw Error("meta config: dropout rate " + std::to_string(r) + " not in [0,1)");
    }
  }
};

/// Inverted-dropout mask: 1/(1−rate) with probability 1−rate, else 0.
inline Tensor dropout_mask(std::size_t n, double rate, Rng& rng) {
  Tensor mask({n});
  const double keep = 1.0 - rate;
  for (double& m : mask.data()) m = rng.bernoulli(keep) ? 1.0 / keep : 0.0;
  return mask;
}

struct GateParams {
  Parameter* w_a1 = nullptr;  // d × d
  Parameter* w_a2 = nullptr;
  Parameter* w_a3 = nullptr;

  static GateParams create(ParameterSet& params, const std::string& prefix, std::size_t d, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(d));
    auto uniform = [&]() {
      Tensor t({d, d});
      for (double& v : t.data()) v = rng.uniform(-bound, bound);
      return t;
    };
    GateParams g;
    g.w_a1 = &params.add(prefix + ".W_A1", uniform());
    g.w_a2 = &params.add(prefix + ".W_A2", uniform());
    g.w_a3 = &params.add(prefix + ".W_A3", uniform());
    return g;
  }
};

struct SentinelParams {
  Parameter* w_x = nullptr;  // d × (d_e + d_c)
  Parameter* w_h = nullptr;  // d × d

  static SentinelParams create(ParameterSet& params, const std::string& prefix, std::size_t d, std::size_t d_in,
                               Rng& rng) {
    auto uniform = [&](std::size_t cols) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(cols));
      Tensor t({d, cols});
      for (double& v : t.data()) v = rng.uniform(-bound, bound);
      return t;
    };
    SentinelParams s;
    s.w_x = &params.add(prefix + ".W_x", uniform(d_in));
    s.w_h = &params.add(prefix + ".W_h", uniform(d));
    return s;
  }
};

/// Recurrent state of either decoder. Slots 0..4 hold (h¹,c¹)…(h⁵,c⁵); the
/// baseline uses slot 0 (attention LSTM) and slot 1 (language LSTM).
/// h_prev is the previous step's top hypothesis, consumed by the sentinel.
struct DecoderState {
  std::array<LstmState, 5> lstm;
  Var h_prev;
  std::size_t t = 0;
};

/// Tape-independent copy of a DecoderState, used by beam search.
struct StateSnapshot {
  std::array<Tensor, 5> h;
  std::array<Tensor, 5> c;
  Tensor h_prev;
  std::size_t t = 0;

  bool operator==(const StateSnapshot&) const = default;
};

inline DecoderState initial_state(Tape& tape, std::size_t d) {
  DecoderState s;
  for (auto& l : s.lstm) l = zero_lstm_state(tape, d);
  s.h_prev = tape.constant(Tensor({d}));
  return s;
}

inline StateSnapshot snapshot(const DecoderState& s) {
  StateSnapshot out;
  for (std::size_t i = 0; i < 5; ++i) {
    out.h[i] = s.lstm[i].h.value();
    out.c[i] = s.lstm[i].c.value();
  }
  out.h_prev = s.h_prev.value();
  out.t = s.t;
  return out;
}

inline DecoderState restore(Tape& tape, const StateSnapshot& snap) {
  DecoderState s;
  for (std::size_t i = 0; i < 5; ++i) s.lstm[i] = {tape.constant(snap.h[i]), tape.constant(snap.c[i])};
  s.h_prev = tape.constant(snap.h_prev);
  s.t = snap.t;
  return s;
}

/// Region features on a tape plus their time-invariant attention projections.
struct AttentionInputs {
  Var v;
  Var vbar;
  Var proj_v;
  Var proj_vbar;
  std::size_t count = 0;
};

inline AttentionInputs prepare_attention(Tape& tape, const RegionSet& regions, const AttentionParams& params) {
  regions.validate();
  AttentionInputs in;
  in.v = tape.constant(regions.V);
  in.vbar = tape.constant(regions.Vbar);
  in.proj_v = project_features(in.v, *params.w_v);
  in.proj_vbar = project_features(in.vbar, *params.w_vbar);
  in.count = regions.count();
  return in;
}

struct GateCascade {
  Var g1;
  Var g2;
  Var g3;
  Var c2_gated;
  Var c4_gated;
};

/// g₁ = σ(W_A¹(h¹+c¹)); c²←g₁⊙c²; g₂ = σ(W_A²(h³+c³)) + g₁; c⁴←g₂⊙c⁴;
/// g₃ = σ(W_A³(h²+c²+h⁴+c⁴)) + g₂ with the gated contexts.
inline GateCascade cascade_gates(Var h1, Var c1, Var h3, Var c3, Var h2, Var c2, Var h4, Var c4,
                                 const GateParams& params) {
  Tape& tape = h1.tape();
  const Shape& s = h1.shape();
  for (const Var& v : {c1, h3, c3, h2, c2, h4, c4}) {
    if (v.shape() != s) throw Error("cascade_gates: length mismatch " + shape_str(s) + " vs " + shape_str(v.shape()));
  }
  GateCascade out;
  out.g1 = sigmoid(matvec(tape.param(*params.w_a1), add(h1, c1)));
  out.c2_gated = mul(out.g1, c2);
  out.g2 = add(sigmoid(matvec(tape.param(*params.w_a2), add(h3, c3))), out.g1);
  out.c4_gated = mul(out.g2, c4);
  out.g3 = add(sigmoid(matvec(tape.param(*params.w_a3), add({h2, out.c2_gated, h4, out.c4_gated}))), out.g2);
  return out;
}

struct GatedContexts {
  Var c2;
  Var c4;
  Var c5;
};

inline GatedContexts apply_gates(Var c2, Var c4, Var c5, Var g1, Var g2, Var g3) {
  return {mul(g1, c2), mul(g2, c4), mul(g3, c5)};
}

struct JointInputs {
  Var h5;   // h² + h⁴
  Var c5;   // c² + c⁴ (gated contexts)
  Var in3;  // in¹ + in²
};

inline JointInputs joint_assembly(Var h2, Var c2_gated, Var h4, Var c4_gated, Var in1, Var in2) {
  if (in1.shape() != in2.shape()) {
    throw Error("joint_assembly: channel inputs differ " + shape_str(in1.shape()) + " vs " + shape_str(in2.shape()));
  }
  return {add(h2, h4), add(c2_gated, c4_gated), add(in2, in1)};
}

/// sₜ = σ(W_x xₜ + W_h hₜ₋₁) ⊙ tanh(cₜ).
inline Var sentinel(Var x, Var h_prev, Var c, const SentinelParams& params) {
  Tape& tape = x.tape();
  Var gate = sigmoid(add(matvec(tape.param(*params.w_x), x), matvec(tape.param(*params.w_h), h_prev)));
  return mul(gate, tanh(c));
}

/// MH = drop(drop(h²) + drop(h⁴) + drop(h⁵)); plain sum at inference.
inline Var meta_hypothesis(Var h2, Var h4, Var h5, const MetaConfig& cfg, Rng* rng) {
  if (!cfg.train) return add({h2, h4, h5});
  if (rng == nullptr) throw Error("meta_hypothesis: train mode needs a mask generator");
  cfg.validate();
  const std::size_t n = h2.size();
  auto drop = [&](Var v, double rate) { return rate == 0.0 ? v : dropout(v, dropout_mask(n, rate, *rng)); };
  Var a = drop(h2, cfg.rate_lang_l);
  Var b = drop(h4, cfg.rate_lang_r);
  Var c = drop(h5, cfg.rate_joint);
  return drop(add({a, b, c}), cfg.rate_out);
}

struct NttDecoderParams {
  LstmCellParams att_l;
  LstmCellParams att_r;
  LstmCellParams lang_l;
  LstmCellParams lang_r;
  LstmCellParams joint;
  AttentionParams attention;
  GateParams gates;
  SentinelParams sentinel;

  static NttDecoderParams create(ParameterSet& params, const DecoderDims& dims, Rng& rng) {
    NttDecoderParams p;
    p.att_l = LstmCellParams::create(params, "ntt.att_l", dims.shared_input(), dims.d, rng);
    p.att_r = LstmCellParams::create(params, "ntt.att_r", dims.shared_input(), dims.d, rng);
    p.lang_l = LstmCellParams::create(params, "ntt.lang_l", dims.language_input(), dims.d, rng);
    p.lang_r = LstmCellParams::create(params, "ntt.lang_r", dims.language_input(), dims.d, rng);
    p.joint = LstmCellParams::create(params, "ntt.joint", dims.language_input(), dims.d, rng);
    p.attention = AttentionParams::create(params, "att", dims.d_a, dims.d_v, dims.d_c, dims.d, rng);
    p.gates = GateParams::create(params, "gate", dims.d, rng);
    p.sentinel = SentinelParams::create(params, "sentinel", dims.d, dims.shared_input(), rng);
    return p;
  }
};

struct BaselineDecoderParams {
  LstmCellParams att;
  LstmCellParams lang;
  AttentionParams attention;
  SentinelParams sentinel;

  static BaselineDecoderParams create(ParameterSet& params, const DecoderDims& dims, Rng& rng) {
    BaselineDecoderParams p;
    p.att = LstmCellParams::create(params, "base.att", dims.shared_input(), dims.d, rng);
    p.lang = LstmCellParams::create(params, "base.lang", dims.language_input(), dims.d, rng);
    p.attention = AttentionParams::create(params, "att", dims.d_a, dims.d_v, dims.d_c, dims.d, rng);
    p.sentinel = SentinelParams::create(params, "sentinel", dims.d, dims.shared_input(), rng);
    return p;
  }
};

/// One decoder step. `mh` feeds the textual head; `h_top`/`c_top` feed the
/// pointer, plurality and sub-category heads. Gates are unset for the baseline.
struct StepOutput {
  Var x;
  Var mh;
  Var h_top;
  Var c_top;
  Var sentinel;
  Var g1, g2, g3;
  Var in1, in2, in3;
  Attended att_v_l, att_vbar_l, att_v_r, att_vbar_r;
  DecoderState state;
};

namespace detail {

inline Var channel_input(const DecoderDims& dims, const Attended& on_v, const Attended& on_vbar, Var h_att) {
  if (dims.feed == AttentionFeed::Attended) return language_input(on_v.attended, on_vbar.attended, h_att);
  return language_input(pad_to(on_v.alpha, dims.max_regions), pad_to(on_vbar.alpha, dims.max_regions), h_att);
}

inline void check_step(const DecoderDims& dims, const DecoderState& state, Var embedding) {
  if (state.t >= dims.max_len) {
    throw Error("decoder step " + std::to_string(state.t) + " exceeds max length " + std::to_string(dims.max_len));
  }
  if (embedding.shape() != Shape{dims.d_e}) {
    throw Error("decoder step: embedding shape " + shape_str(embedding.shape()) + ", expected " +
                shape_str({dims.d_e}));
  }
}

}  // namespace detail

/// Twin cascaded step. The language LSTMs start from their channel's
/// attention-LSTM (h, c) of the same step; the joint LSTM starts from the
/// assembled (h²+h⁴, g₃⊙(c²'+c⁴')). Only the attention LSTMs and h_prev carry
/// information across steps.
inline StepOutput ntt_step(const NttDecoderParams& p, const DecoderDims& dims, const DecoderState& state,
                           Var embedding, const AttentionInputs& regions, const MetaConfig& meta, Rng* mask_rng) {
  detail::check_step(dims, state, embedding);
  StepOutput out;
  out.x = shared_input(embedding, regions.vbar);

  const LstmState s1 = lstm_step(p.att_l, out.x, state.lstm[0]);
  const LstmState s3 = lstm_step(p.att_r, out.x, state.lstm[2]);

  out.att_v_l = attend(regions.v, regions.proj_v, s1.h, p.attention);
  out.att_vbar_l = attend(regions.vbar, regions.proj_vbar, s1.h, p.attention);
  out.att_v_r = attend(regions.v, regions.proj_v, s3.h, p.attention);
  out.att_vbar_r = attend(regions.vbar, regions.proj_vbar, s3.h, p.attention);

  out.in1 = detail::channel_input(dims, out.att_v_l, out.att_vbar_l, s1.h);
  out.in2 = detail::channel_input(dims, out.att_v_r, out.att_vbar_r, s3.h);

  const LstmState s2 = lstm_step(p.lang_l, out.in1, s1);
  const LstmState s4 = lstm_step(p.lang_r, out.in2, s3);

  GateCascade gates = cascade_gates(s1.h, s1.c, s3.h, s3.c, s2.h, s2.c, s4.h, s4.c, p.gates);
  out.g1 = gates.g1;
  out.g2 = gates.g2;
  out.g3 = gates.g3;

  JointInputs joint = joint_assembly(s2.h, gates.c2_gated, s4.h, gates.c4_gated, out.in1, out.in2);
  out.in3 = joint.in3;
  const LstmState s5 = lstm_step(p.joint, joint.in3, {joint.h5, mul(gates.g3, joint.c5)});

  out.sentinel = sentinel(out.x, state.h_prev, s5.c, p.sentinel);
  out.mh = meta_hypothesis(s2.h, s4.h, s5.h, meta, mask_rng);
  out.h_top = s5.h;
  out.c_top = s5.c;

  out.state.lstm = {s1, LstmState{s2.h, gates.c2_gated}, s3, LstmState{s4.h, gates.c4_gated}, s5};
  out.state.h_prev = s5.h;
  out.state.t = state.t + 1;
  return out;
}

/// Single-channel step: attention LSTM, attention over V and Vbar, language
/// LSTM with its own carried state; the sentinel and all heads read the
/// language LSTM.
inline StepOutput baseline_step(const BaselineDecoderParams& p, const DecoderDims& dims, const DecoderState& state,
                                Var embedding, const AttentionInputs& regions) {
  detail::check_step(dims, state, embedding);
  StepOutput out;
  out.x = shared_input(embedding, regions.vbar);
  const LstmState s1 = lstm_step(p.att, out.x, state.lstm[0]);
  out.att_v_l = attend(regions.v, regions.proj_v, s1.h, p.attention);
  out.att_vbar_l = attend(regions.vbar, regions.proj_vbar, s1.h, p.attention);
  out.in1 = detail::channel_input(dims, out.att_v_l, out.att_vbar_l, s1.h);
  const LstmState s2 = lstm_step(p.lang, out.in1, state.lstm[1]);

  out.sentinel = sentinel(out.x, state.h_prev, s2.c, p.sentinel);
  out.mh = s2.h;
  out.h_top = s2.h;
  out.c_top = s2.c;

  out.state = state;
  out.state.lstm[0] = s1;
  out.state.lstm[1] = s2;
  out.state.h_prev = s2.h;
  out.state.t = state.t + 1;
  return out;
}

}  // namespace ntt
