#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "ntt/autodiff.hpp"
#include "ntt/rng.hpp"

namespace ntt {

struct HeadDims {
  std::size_t d_v = 16;
  std::size_t d = 32;
  std::size_t d_a = 32;
  std::size_t d_r = 32;   // width of the relu feature nets
  std::size_t d_u = 16;   // sub-category embedding width
  std::size_t vocab = 0;  // textual words S
  std::size_t subcats = 0;
};

struct FeedForward {
  Parameter* w = nullptr;  // d_r × (d_v + d)
  Parameter* b = nullptr;  // d_r
};

struct HeadParams {
  Parameter* w_h = nullptr;   // d_a, shared by region and sentinel logits
  Parameter* w_v = nullptr;   // d_a × d_v
  Parameter* w_z = nullptr;   // d_a × d, shared by region and sentinel logits
  Parameter* w_s = nullptr;   // d_a × d
  Parameter* w_q = nullptr;   // S × d
  Parameter* w_p = nullptr;   // 2 × d_r
  Parameter* w_sc = nullptr;  // d_u × d_r
  Parameter* u = nullptr;     // subcats × d_u, one embedding row per sub-category word
  FeedForward r_b;
  FeedForward r_g;

  static HeadParams create(ParameterSet& params, const HeadDims& dims, Rng& rng) {
    if (dims.vocab == 0 || dims.subcats == 0) throw Error("heads: vocabulary sizes must be positive");
    auto uniform = [&](Shape shape, std::size_t fan_in) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
      Tensor t(std::move(shape));
      for (double& v : t.data()) v = rng.uniform(-bound, bound);
      return t;
    };
    HeadParams h;
    h.w_h = &params.add("head.w_h", uniform({dims.d_a}, dims.d_a));
    h.w_v = &params.add("head.W_v", uniform({dims.d_a, dims.d_v}, dims.d_v));
    h.w_z = &params.add("head.W_z", uniform({dims.d_a, dims.d}, dims.d));
    h.w_s = &params.add("head.W_s", uniform({dims.d_a, dims.d}, dims.d));
    h.w_q = &params.add("head.W_q", uniform({dims.vocab, dims.d}, dims.d));
    h.w_p = &params.add("head.W_p", uniform({2, dims.d_r}, dims.d_r));
    h.w_sc = &params.add("head.W_sc", uniform({dims.d_u, dims.d_r}, dims.d_r));
    h.u = &params.add("head.U", uniform({dims.subcats, dims.d_u}, dims.d_u));
    const std::size_t in = dims.d_v + dims.d;
    h.r_b = {&params.add("head.R_b.W", uniform({dims.d_r, in}, in)), &params.add("head.R_b.b", Tensor({dims.d_r}))};
    h.r_g = {&params.add("head.R_g.W", uniform({dims.d_r, in}, in)), &params.add("head.R_g.b", Tensor({dims.d_r}))};
    return h;
  }
};

/// W_v V for the pointer, computed once per image.
inline Var project_regions(Var v, const HeadParams& p) { return matmul_nt(v, v.tape().param(*p.w_v)); }

/// uᵢ = w_hᵀ tanh(W_v vᵢ + W_z h).
inline Var pointing(Var projected_v, Var h_top, const HeadParams& p) {
  Tape& tape = h_top.tape();
  Var hz = matvec(tape.param(*p.w_z), h_top);
  return matvec(tanh(add_rows(projected_v, hz)), tape.param(*p.w_h));
}

/// Softmax over [u; w_hᵀ tanh(W_s s + W_z h)]; the sentinel is the last entry.
inline Var region_distribution(Var u, Var s, Var h_top, const HeadParams& p) {
  Tape& tape = u.tape();
  Var inner = tanh(add(matvec(tape.param(*p.w_s), s), matvec(tape.param(*p.w_z), h_top)));
  Var logit = sum(mul(inner, tape.param(*p.w_h)));
  return softmax(concat({u, logit}));
}

inline Var textual_distribution(Var mh, const HeadParams& p) { return softmax(matvec(mh.tape().param(*p.w_q), mh)); }

namespace detail {
inline Var feed_forward(Var v_region, Var h_top, const FeedForward& ff) {
  Tape& tape = h_top.tape();
  return relu(add(matvec(tape.param(*ff.w), concat({v_region, h_top})), tape.param(*ff.b)));
}
}  // namespace detail

/// softmax(W_p R_b([v; h])) over {singular, plural}.
inline Var plurality(Var v_region, Var h_top, const HeadParams& p) {
  return softmax(matvec(h_top.tape().param(*p.w_p), detail::feed_forward(v_region, h_top, p.r_b)));
}

/// softmax(Uᵀ W_sc R_g([v; h])) over sub-category words.
inline Var subcategory(Var v_region, Var h_top, const HeadParams& p) {
  Tape& tape = h_top.tape();
  Var projected = matvec(tape.param(*p.w_sc), detail::feed_forward(v_region, h_top, p.r_g));
  return softmax(matvec(tape.param(*p.u), projected));
}

/// Joint next-token distribution over textual words and grounded slots.
/// P(word w) = p_sentinel · p_txt(w);
/// P(slot i, plural b, subcat s) = p_regions(i) · p_plural(b|i) · p_subcat(s|i).
struct WordDistribution {
  std::vector<double> p_regions;
  double p_sentinel = 0.0;
  std::vector<double> p_txt;
  std::vector<std::array<double, 2>> p_plural;  // per region
  std::vector<std::vector<double>> p_subcat;    // per region

  std::size_t regions() const { return p_regions.size(); }

  double text_prob(std::size_t word) const { return p_sentinel * p_txt.at(word); }
  double slot_prob(std::size_t region, int plural, std::size_t subcat) const {
    return p_regions.at(region) * p_plural.at(region).at(static_cast<std::size_t>(plural)) *
           p_subcat.at(region).at(subcat);
  }

  /// Sum over the full joint token space by enumeration.
  double total_mass() const {
    double mass = 0.0;
    for (std::size_t w = 0; w < p_txt.size(); ++w) mass += text_prob(w);
    for (std::size_t i = 0; i < p_regions.size(); ++i) {
      for (int b = 0; b < 2; ++b) {
        for (std::size_t s = 0; s < p_subcat[i].size(); ++s) mass += slot_prob(i, b, s);
      }
    }
    return mass;
  }
};

inline WordDistribution combined_distribution(const Tensor& p_region_sentinel, const Tensor& p_txt,
                                              const std::vector<Tensor>& p_plural,
                                              const std::vector<Tensor>& p_subcat) {
  const std::size_t r = p_region_sentinel.size() - 1;
  if (p_region_sentinel.size() < 2 || p_plural.size() != r || p_subcat.size() != r) {
    throw Error("combined_distribution: expected " + std::to_string(r) + " per-region heads");
  }
  WordDistribution out;
  out.p_regions.assign(p_region_sentinel.data().begin(), p_region_sentinel.data().begin() + r);
  out.p_sentinel = p_region_sentinel[r];
  out.p_txt.assign(p_txt.data().begin(), p_txt.data().end());
  for (std::size_t i = 0; i < r; ++i) {
    if (p_plural[i].size() != 2) throw Error("combined_distribution: plurality head must have 2 classes");
    out.p_plural.push_back({p_plural[i][0], p_plural[i][1]});
    out.p_subcat.emplace_back(p_subcat[i].data().begin(), p_subcat[i].data().end());
  }
  return out;
}

}  // namespace ntt
