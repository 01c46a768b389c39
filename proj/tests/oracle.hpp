#pragma once
// Straight-line reference implementation of the decoder step and heads on
// plain std::vector<double>. Shares nothing with the tape code except the
// parameter values, which it reads by name.

#include <cmath>
#include <string>
#include <vector>

#include "ntt/autodiff.hpp"
#include "ntt/attention.hpp"

namespace oracle {

using Vec = std::vector<double>;

struct Mat {
  std::size_t rows = 0, cols = 0;
  Vec data;
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
};

inline Mat mat(const ntt::Tensor& t) {
  if (t.rank() == 1) return {t.size(), 1, t.values()};
  return {t.shape()[0], t.shape()[1], t.values()};
}

inline Mat param(const ntt::ParameterSet& ps, const std::string& name) { return mat(ps.at(name).value); }

inline Vec mv(const Mat& m, const Vec& x) {
  Vec y(m.rows, 0.0);
  for (std::size_t r = 0; r < m.rows; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < m.cols; ++c) s += m(r, c) * x[c];
    y[r] = s;
  }
  return y;
}

inline Vec plus(const Vec& a, const Vec& b) {
  Vec y(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) y[i] = a[i] + b[i];
  return y;
}

inline Vec times(const Vec& a, const Vec& b) {
  Vec y(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) y[i] = a[i] * b[i];
  return y;
}

inline double sig(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline Vec sig(const Vec& a) {
  Vec y(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) y[i] = sig(a[i]);
  return y;
}

inline Vec th(const Vec& a) {
  Vec y(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) y[i] = std::tanh(a[i]);
  return y;
}

inline Vec softmax(const Vec& a) {
  double m = a[0];
  for (double x : a) m = std::max(m, x);
  Vec y(a.size());
  double z = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) z += (y[i] = std::exp(a[i] - m));
  for (double& x : y) x /= z;
  return y;
}

inline Vec cat(std::initializer_list<Vec> parts) {
  Vec y;
  for (const auto& p : parts) y.insert(y.end(), p.begin(), p.end());
  return y;
}

inline Vec row(const Mat& m, std::size_t r) { return Vec(m.data.begin() + r * m.cols, m.data.begin() + (r + 1) * m.cols); }

struct HC {
  Vec h, c;
};

inline HC lstm(const ntt::ParameterSet& ps, const std::string& prefix, const Vec& x, const HC& prev) {
  const Mat wx = param(ps, prefix + ".W_x"), wh = param(ps, prefix + ".W_h");
  const Vec b = ps.at(prefix + ".b").value.values();
  const std::size_t d = prev.h.size();
  const Vec z = plus(plus(mv(wx, x), mv(wh, prev.h)), b);
  HC out{Vec(d), Vec(d)};
  for (std::size_t k = 0; k < d; ++k) {
    const double i = sig(z[k]), f = sig(z[d + k]), g = std::tanh(z[2 * d + k]), o = sig(z[3 * d + k]);
    out.c[k] = f * prev.c[k] + i * g;
    out.h[k] = o * std::tanh(out.c[k]);
  }
  return out;
}

struct Attn {
  Vec alpha, attended;
};

// beta_i = w_beta . tanh(W_f f_i + W_h h)
inline Attn attend(const ntt::ParameterSet& ps, const Mat& features, const std::string& wf, const Vec& h) {
  const Mat w_f = param(ps, "att." + wf), w_h = param(ps, "att.W_h");
  const Vec w_beta = ps.at("att.W_beta").value.values();
  const Vec hh = mv(w_h, h);
  Vec beta(features.rows);
  for (std::size_t i = 0; i < features.rows; ++i) {
    const Vec pre = th(plus(mv(w_f, row(features, i)), hh));
    double s = 0.0;
    for (std::size_t k = 0; k < pre.size(); ++k) s += w_beta[k] * pre[k];
    beta[i] = s;
  }
  Attn a;
  a.alpha = softmax(beta);
  a.attended.assign(features.cols, 0.0);
  for (std::size_t i = 0; i < features.rows; ++i) {
    for (std::size_t k = 0; k < features.cols; ++k) a.attended[k] += a.alpha[i] * features(i, k);
  }
  return a;
}

inline Vec mean_rows(const Mat& m) {
  Vec y(m.cols, 0.0);
  for (std::size_t i = 0; i < m.rows; ++i) {
    for (std::size_t k = 0; k < m.cols; ++k) y[k] += m(i, k);
  }
  for (double& v : y) v /= static_cast<double>(m.rows);
  return y;
}

struct State {
  HC s[5];
  Vec h_prev;
};

inline State zero_state(std::size_t d) {
  State s;
  for (auto& x : s.s) x = {Vec(d, 0.0), Vec(d, 0.0)};
  s.h_prev = Vec(d, 0.0);
  return s;
}

struct Step {
  Vec x, mh, h_top, c_top, sentinel, g1, g2, g3, in1, in2, in3;
  Vec alpha_v_l, alpha_vbar_l, alpha_v_r, alpha_vbar_r;
  State next;
};

/// Inference-mode twin step.
inline Step ntt_step(const ntt::ParameterSet& ps, const State& st, const Vec& emb, const Mat& V, const Mat& Vbar) {
  Step o;
  o.x = cat({emb, mean_rows(Vbar)});
  const HC s1 = lstm(ps, "ntt.att_l", o.x, st.s[0]);
  const HC s3 = lstm(ps, "ntt.att_r", o.x, st.s[2]);
  const Attn avl = attend(ps, V, "W_v", s1.h), abl = attend(ps, Vbar, "W_vbar", s1.h);
  const Attn avr = attend(ps, V, "W_v", s3.h), abr = attend(ps, Vbar, "W_vbar", s3.h);
  o.alpha_v_l = avl.alpha;
  o.alpha_vbar_l = abl.alpha;
  o.alpha_v_r = avr.alpha;
  o.alpha_vbar_r = abr.alpha;
  o.in1 = cat({avl.attended, abl.attended, s1.h});
  o.in2 = cat({avr.attended, abr.attended, s3.h});
  const HC s2 = lstm(ps, "ntt.lang_l", o.in1, s1);
  const HC s4 = lstm(ps, "ntt.lang_r", o.in2, s3);

  o.g1 = sig(mv(param(ps, "gate.W_A1"), plus(s1.h, s1.c)));
  const Vec c2g = times(o.g1, s2.c);
  o.g2 = plus(sig(mv(param(ps, "gate.W_A2"), plus(s3.h, s3.c))), o.g1);
  const Vec c4g = times(o.g2, s4.c);
  o.g3 = plus(sig(mv(param(ps, "gate.W_A3"), plus(plus(s2.h, c2g), plus(s4.h, c4g)))), o.g2);

  const Vec h5_in = plus(s2.h, s4.h);
  const Vec c5_in = times(o.g3, plus(c2g, c4g));
  o.in3 = plus(o.in2, o.in1);
  const HC s5 = lstm(ps, "ntt.joint", o.in3, {h5_in, c5_in});

  const Vec gate = sig(plus(mv(param(ps, "sentinel.W_x"), o.x), mv(param(ps, "sentinel.W_h"), st.h_prev)));
  o.sentinel = times(gate, th(s5.c));
  o.mh = plus(plus(s2.h, s4.h), s5.h);
  o.h_top = s5.h;
  o.c_top = s5.c;
  o.next.s[0] = s1;
  o.next.s[1] = {s2.h, c2g};
  o.next.s[2] = s3;
  o.next.s[3] = {s4.h, c4g};
  o.next.s[4] = s5;
  o.next.h_prev = s5.h;
  return o;
}

/// Single-channel baseline step.
inline Step baseline_step(const ntt::ParameterSet& ps, const State& st, const Vec& emb, const Mat& V,
                          const Mat& Vbar) {
  Step o;
  o.x = cat({emb, mean_rows(Vbar)});
  const HC s1 = lstm(ps, "base.att", o.x, st.s[0]);
  const Attn av = attend(ps, V, "W_v", s1.h), ab = attend(ps, Vbar, "W_vbar", s1.h);
  o.alpha_v_l = av.alpha;
  o.alpha_vbar_l = ab.alpha;
  o.in1 = cat({av.attended, ab.attended, s1.h});
  const HC s2 = lstm(ps, "base.lang", o.in1, st.s[1]);
  const Vec gate = sig(plus(mv(param(ps, "sentinel.W_x"), o.x), mv(param(ps, "sentinel.W_h"), st.h_prev)));
  o.sentinel = times(gate, th(s2.c));
  o.mh = s2.h;
  o.h_top = s2.h;
  o.c_top = s2.c;
  o.next = st;
  o.next.s[0] = s1;
  o.next.s[1] = s2;
  o.next.h_prev = s2.h;
  return o;
}

struct Heads {
  Vec u, p_r, p_txt;
  std::vector<Vec> p_plural, p_subcat;
};

inline Vec relu_ff(const ntt::ParameterSet& ps, const std::string& prefix, const Vec& in) {
  Vec y = plus(mv(param(ps, prefix + ".W"), in), ps.at(prefix + ".b").value.values());
  for (double& v : y) v = std::max(0.0, v);
  return y;
}

inline Heads heads(const ntt::ParameterSet& ps, const Step& st, const Mat& V) {
  Heads h;
  const Mat w_v = param(ps, "head.W_v"), w_z = param(ps, "head.W_z"), w_s = param(ps, "head.W_s");
  const Vec w_h = ps.at("head.w_h").value.values();
  const Vec zh = mv(w_z, st.h_top);
  auto dot = [](const Vec& a, const Vec& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
  };
  for (std::size_t i = 0; i < V.rows; ++i) h.u.push_back(dot(w_h, th(plus(mv(w_v, row(V, i)), zh))));
  Vec logits = h.u;
  logits.push_back(dot(w_h, th(plus(mv(w_s, st.sentinel), zh))));
  h.p_r = softmax(logits);
  h.p_txt = softmax(mv(param(ps, "head.W_q"), st.mh));
  for (std::size_t i = 0; i < V.rows; ++i) {
    const Vec in = cat({row(V, i), st.h_top});
    h.p_plural.push_back(softmax(mv(param(ps, "head.W_p"), relu_ff(ps, "head.R_b", in))));
    h.p_subcat.push_back(
        softmax(mv(param(ps, "head.U"), mv(param(ps, "head.W_sc"), relu_ff(ps, "head.R_g", in)))));
  }
  return h;
}

}  // namespace oracle
