#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "ntt/autodiff.hpp"
#include "ntt/rng.hpp"

namespace ntt {

struct RegionLabel {
  int category = 0;
  int subcat = 0;
  int plural = 0;

  bool operator==(const RegionLabel&) const = default;
};

/// Detector output for one image: region features V (R×d_v), pooled
/// convolutional features Vbar (R×d_c), and per-region labels (labels are
/// only used to build targets, never fed to the decoder).
struct RegionSet {
  Tensor V;
  Tensor Vbar;
  std::vector<RegionLabel> labels;

  std::size_t count() const { return V.empty() ? 0 : V.rows(); }

  void validate() const {
    if (V.empty() || Vbar.empty()) throw Error("region set: empty");
    if (V.rank() != 2 || Vbar.rank() != 2) throw Error("region set: features must be matrices");
    if (V.rows() != Vbar.rows()) {
      throw Error("region set: V has " + std::to_string(V.rows()) + " rows but Vbar has " +
                  std::to_string(Vbar.rows()));
    }
    if (!labels.empty() && labels.size() != V.rows()) throw Error("region set: label count mismatch");
  }

  bool operator==(const RegionSet&) const = default;
};

/// Additive attention network shared by both channels. W_v and W_vbar
/// project the two feature sets to the common attention width.
struct AttentionParams {
  Parameter* w_beta = nullptr;  // d_a
  Parameter* w_v = nullptr;     // d_a × d_v
  Parameter* w_vbar = nullptr;  // d_a × d_c
  Parameter* w_h = nullptr;     // d_a × d

  static AttentionParams create(ParameterSet& params, const std::string& prefix, std::size_t d_a, std::size_t d_v,
                                std::size_t d_c, std::size_t d, Rng& rng) {
    auto uniform = [&](Shape shape, std::size_t fan_in) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
      Tensor t(std::move(shape));
      for (double& v : t.data()) v = rng.uniform(-bound, bound);
      return t;
    };
    AttentionParams a;
    a.w_beta = &params.add(prefix + ".W_beta", uniform({d_a}, d_a));
    a.w_v = &params.add(prefix + ".W_v", uniform({d_a, d_v}, d_v));
    a.w_vbar = &params.add(prefix + ".W_vbar", uniform({d_a, d_c}, d_c));
    a.w_h = &params.add(prefix + ".W_h", uniform({d_a, d}, d));
    return a;
  }
};

struct Attended {
  Var alpha;     // R, sums to 1
  Var attended;  // alphaᵀ · features
};

/// xₜ = [embedding; mean over regions of Vbar].
inline Var shared_input(Var embedding, Var vbar) {
  if (vbar.shape().size() != 2) throw Error("shared_input: Vbar must be a matrix, got " + shape_str(vbar.shape()));
  return concat({embedding, mean_rows(vbar)});
}

/// Feature rows projected by W (R×d_a); independent of time, so callers
/// compute it once per image.
inline Var project_features(Var features, Parameter& w) { return matmul_nt(features, features.tape().param(w)); }

/// β = tanh(W_f F + (W_h h)1ᵀ) w_β, α = softmax(β), attended = αᵀF.
inline Attended attend(Var features, Var projected, Var h, const AttentionParams& params) {
  Tape& tape = h.tape();
  if (features.shape().size() != 2 || projected.shape().size() != 2 || features.shape()[0] != projected.shape()[0]) {
    throw Error("attend: features " + shape_str(features.shape()) + " and projection " +
                shape_str(projected.shape()) + " disagree");
  }
  Var hidden = matvec(tape.param(*params.w_h), h);
  Var beta = matvec(tanh(add_rows(projected, hidden)), tape.param(*params.w_beta));
  Var alpha = softmax(beta);
  return {alpha, matvec_t(features, alpha)};
}

inline Attended attend(Var features, Parameter& feature_proj, Var h, const AttentionParams& params) {
  return attend(features, project_features(features, feature_proj), h, params);
}

/// [attended_V; attended_Vbar; h_att]. Both channels use this layout, which
/// keeps their element-wise sum meaningful.
inline Var language_input(Var attended_v, Var attended_vbar, Var h_att) {
  return concat({attended_v, attended_vbar, h_att});
}

/// Zero-pads a region-indexed vector to a fixed width (raw-alpha feed).
inline Var pad_to(Var v, std::size_t width) {
  const std::size_t n = v.size();
  if (n > width) {
    throw Error("pad_to: " + std::to_string(n) + " regions exceed the configured maximum of " + std::to_string(width));
  }
  if (n == width) return v;
  return concat({v, v.tape().constant(Tensor({width - n}))});
}

}  // namespace ntt
