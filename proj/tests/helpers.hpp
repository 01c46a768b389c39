#pragma once

#include <ostream>
#include <string>
#include <vector>

#include "ntt/model.hpp"
#include "ntt/rng.hpp"
#include "oracle.hpp"

namespace ntt {
inline void PrintTo(ModelKind k, std::ostream* os) { *os << model_kind_name(k); }
}  // namespace ntt

namespace testing_helpers {

inline ntt::ModelConfig tiny_config(ntt::ModelKind kind = ntt::ModelKind::Ntt, std::size_t d = 4) {
  ntt::ModelConfig mc;
  mc.kind = kind;
  mc.dims.d = d;
  mc.dims.d_a = d;
  mc.dims.d_v = 4;
  mc.dims.d_c = 3;
  mc.dims.d_e = 5;
  mc.d_u = 4;
  mc.vocab = 6;
  mc.subcats = 4;
  return mc;
}

inline ntt::RegionSet random_regions(ntt::Rng& rng, std::size_t r, std::size_t d_v, std::size_t d_c,
                                     double scale = 1.0) {
  ntt::RegionSet rs;
  rs.V = ntt::Tensor({r, d_v});
  rs.Vbar = ntt::Tensor({r, d_c});
  for (double& v : rs.V.data()) v = scale * rng.normal();
  for (double& v : rs.Vbar.data()) v = scale * rng.normal();
  return rs;
}

/// Random caption over a model's token space: BOS, `len` random tokens, EOS.
inline std::vector<ntt::Token> random_tokens(ntt::Rng& rng, const ntt::ModelConfig& mc, std::size_t regions,
                                             std::size_t len) {
  std::vector<ntt::Token> out{ntt::Token::text(0)};
  for (std::size_t i = 0; i < len; ++i) {
    if (rng.bernoulli(0.5)) {
      out.push_back(ntt::Token::text(static_cast<int>(2 + rng.below(mc.vocab - 2))));
    } else {
      out.push_back(ntt::Token::slot(static_cast<int>(rng.below(regions)), static_cast<int>(rng.below(mc.subcats)),
                                     static_cast<int>(rng.below(2))));
    }
  }
  out.push_back(ntt::Token::text(1));
  return out;
}

/// Copies the left-channel LSTM weights onto the right channel.
inline void tie_channels(ntt::CaptionModel& m) {
  for (const std::string suffix : {".W_x", ".W_h", ".b"}) {
    m.params().at("ntt.att_r" + suffix).value = m.params().at("ntt.att_l" + suffix).value;
    m.params().at("ntt.lang_r" + suffix).value = m.params().at("ntt.lang_l" + suffix).value;
  }
}

/// Scales every parameter value (larger weights exercise saturation).
inline void scale_params(ntt::CaptionModel& m, double k) {
  m.params().for_each([&](ntt::Parameter& p) {
    for (double& v : p.value.data()) v *= k;
  });
}

inline oracle::Vec embedding_row(const ntt::CaptionModel& m, const ntt::Token& t) {
  const auto e = oracle::param(m.params(), "embed");
  return oracle::row(e, m.input_index(t));
}

inline double max_abs(const oracle::Vec& a, const std::vector<double>& b) {
  if (a.size() != b.size()) return 1e300;
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

}  // namespace testing_helpers
