#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "helpers.hpp"
#include "ntt/gradcheck.hpp"
#include "ntt/model.hpp"
#include "oracle.hpp"

using namespace ntt;
using namespace testing_helpers;

namespace {

void zero_all(CaptionModel& m) {
  m.params().for_each([](Parameter& p) { std::ranges::fill(p.value.data(), 0.0); });
}

}  // namespace

TEST(Heads, ZeroModelIsUniform) {
  ModelConfig mc = tiny_config(ModelKind::Ntt);
  mc.vocab = 10;
  CaptionModel model(mc, 1);
  zero_all(model);
  Rng rng(1);
  const RegionSet regions = random_regions(rng, 2, mc.dims.d_v, mc.dims.d_c);
  Tape tape;
  EncodedRegions enc = model.encode(tape, regions);
  StepOutput out = model.step(tape, enc, model.initial_state(tape), Token::text(0), false, nullptr);
  HeadOutputs h = model.heads(enc, out);
  for (double p : h.p_r.value().values()) EXPECT_DOUBLE_EQ(p, 1.0 / 3.0);
  for (double p : h.p_txt.value().values()) EXPECT_DOUBLE_EQ(p, 0.1);
  const WordDistribution dist = model.distribution(enc, out, h);
  EXPECT_DOUBLE_EQ(dist.p_sentinel, 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(dist.text_prob(4), 1.0 / 30.0);
  EXPECT_DOUBLE_EQ(dist.slot_prob(1, 1, 2), 1.0 / 3.0 * 0.5 * 0.25);
}

TEST(Heads, ZeroModelTextLossIsLogThirty) {
  for (ModelKind kind : {ModelKind::Ntt, ModelKind::Baseline}) {
    ModelConfig mc = tiny_config(kind);
    mc.vocab = 10;
    CaptionModel model(mc, 1);
    zero_all(model);
    Rng rng(1);
    Example ex;
    ex.regions = random_regions(rng, 2, mc.dims.d_v, mc.dims.d_c);
    ex.tokens = {Token::text(0), Token::text(5)};
    Tape tape;
    EXPECT_NEAR(model.sequence_loss(tape, ex, false, nullptr).value()[0], std::log(30.0), 1e-12);
  }
}

TEST(Heads, ZeroModelSlotLoss) {
  ModelConfig mc = tiny_config(ModelKind::Ntt);
  CaptionModel model(mc, 1);
  zero_all(model);
  Rng rng(1);
  Example ex;
  ex.regions = random_regions(rng, 2, mc.dims.d_v, mc.dims.d_c);
  ex.tokens = {Token::text(0), Token::slot(1, 2, 1)};
  Tape tape;
  EXPECT_NEAR(model.sequence_loss(tape, ex, false, nullptr).value()[0], std::log(3.0 * 2.0 * 4.0), 1e-12);
}

class HeadsOracle : public ::testing::TestWithParam<ModelKind> {};

TEST_P(HeadsOracle, MatchReferenceAndConserveMass) {
  Rng rng(19);
  for (int trial = 0; trial < 10; ++trial) {
    ModelConfig mc = tiny_config(GetParam());
    mc.dims.d_a = 3;
    mc.d_r = 5;
    CaptionModel model(mc, 40 + trial);
    scale_params(model, 1.0 + trial * 0.5);
    const std::size_t r = 1 + rng.below(4);
    const RegionSet regions = random_regions(rng, r, mc.dims.d_v, mc.dims.d_c);
    const auto tokens = random_tokens(rng, mc, r, 3);
    Tape tape;
    EncodedRegions enc = model.encode(tape, regions);
    DecoderState state = model.initial_state(tape);
    oracle::State ost = oracle::zero_state(mc.dims.d);
    for (std::size_t t = 0; t + 1 < tokens.size(); ++t) {
      StepOutput out = model.step(tape, enc, state, tokens[t], false, nullptr);
      HeadOutputs h = model.heads(enc, out);
      const oracle::Vec emb = embedding_row(model, tokens[t]);
      const oracle::Mat V = oracle::mat(regions.V), Vbar = oracle::mat(regions.Vbar);
      const oracle::Step o = GetParam() == ModelKind::Ntt ? oracle::ntt_step(model.params(), ost, emb, V, Vbar)
                                                          : oracle::baseline_step(model.params(), ost, emb, V, Vbar);
      const oracle::Heads oh = oracle::heads(model.params(), o, V);
      EXPECT_LE(max_abs(oh.u, h.u.value().values()), 1e-12);
      EXPECT_LE(max_abs(oh.p_r, h.p_r.value().values()), 1e-12);
      EXPECT_LE(max_abs(oh.p_txt, h.p_txt.value().values()), 1e-12);
      for (std::size_t i = 0; i < r; ++i) {
        EXPECT_LE(max_abs(oh.p_plural[i], model.plurality_at(enc, out, i).value().values()), 1e-12);
        EXPECT_LE(max_abs(oh.p_subcat[i], model.subcategory_at(enc, out, i).value().values()), 1e-12);
      }
      const WordDistribution dist = model.distribution(enc, out, h);
      EXPECT_NEAR(dist.total_mass(), 1.0, 1e-9);
      EXPECT_DOUBLE_EQ(dist.p_sentinel, h.p_r.value()[r]);
      state = out.state;
      ost = o.next;
    }
  }
}

INSTANTIATE_TEST_SUITE_P(Models, HeadsOracle, ::testing::Values(ModelKind::Ntt, ModelKind::Baseline),
                         [](const auto& info) { return std::string(model_kind_name(info.param)); });

TEST(Heads, CombinedDistributionByHand) {
  const WordDistribution d =
      combined_distribution(Tensor::vector({0.2, 0.3, 0.5}), Tensor::vector({0.25, 0.75}),
                            {Tensor::vector({0.4, 0.6}), Tensor::vector({1.0, 0.0})},
                            {Tensor::vector({0.5, 0.5, 0.0}), Tensor::vector({0.1, 0.2, 0.7})});
  EXPECT_DOUBLE_EQ(d.p_sentinel, 0.5);
  EXPECT_DOUBLE_EQ(d.text_prob(1), 0.375);
  EXPECT_DOUBLE_EQ(d.slot_prob(0, 1, 0), 0.2 * 0.6 * 0.5);
  EXPECT_DOUBLE_EQ(d.slot_prob(1, 0, 2), 0.3 * 1.0 * 0.7);
  EXPECT_NEAR(d.total_mass(), 1.0, 1e-15);
  EXPECT_THROW(combined_distribution(Tensor::vector({1.0}), Tensor::vector({1.0}), {}, {}), Error);
  EXPECT_THROW(combined_distribution(Tensor::vector({0.5, 0.5}), Tensor::vector({1.0}), {Tensor::vector({1.0})},
                                     {Tensor::vector({1.0})}),
               Error);
}

TEST(Heads, TokenIdsAreValidated) {
  ModelConfig mc = tiny_config(ModelKind::Ntt);
  CaptionModel model(mc, 1);
  EXPECT_EQ(model.input_index(Token::text(3)), 3u);
  EXPECT_EQ(model.input_index(Token::slot(0, 2, 1)), mc.vocab + 2);
  EXPECT_THROW(model.input_index(Token::text(static_cast<int>(mc.vocab))), Error);
  EXPECT_THROW(model.input_index(Token::slot(0, static_cast<int>(mc.subcats), 0)), Error);
  Rng rng(1);
  Example ex;
  ex.regions = random_regions(rng, 2, mc.dims.d_v, mc.dims.d_c);
  ex.tokens = {Token::text(0), Token::slot(2, 0, 0)};
  Tape tape;
  EXPECT_THROW(model.sequence_loss(tape, ex, false, nullptr), Error);
}

TEST(Heads, RegionWidthMismatchIsRejected) {
  ModelConfig mc = tiny_config(ModelKind::Ntt);
  CaptionModel model(mc, 1);
  Rng rng(1);
  Tape tape;
  EXPECT_THROW(model.encode(tape, random_regions(rng, 2, mc.dims.d_v + 1, mc.dims.d_c)), Error);
}

TEST(Heads, LossGradientCheck) {
  ModelConfig mc = tiny_config(ModelKind::Baseline);
  mc.vocab = 5;
  mc.subcats = 3;
  CaptionModel model(mc, 1);
  Rng rng(101);
  Example ex;
  ex.regions = random_regions(rng, 2, mc.dims.d_v, mc.dims.d_c);
  ex.tokens = {Token::text(0), Token::text(2), Token::slot(1, 2, 1), Token::text(1)};
  const GradCheckReport rep = finite_diff_check(
      [&](Tape& tape) { return model.sequence_loss(tape, ex, false, nullptr); }, model.params(), 1e-4);
  EXPECT_LE(rep.max_rel_error, 1e-4) << rep.worst_param << "[" << rep.worst_index << "]";
}

TEST(Heads, TwinLossGradientAcrossSeeds) {
  // Mixed tolerance: entries with |g| near 1e-9 carry roundoff of the
  // central difference itself and cannot meet a pure relative bound.
  ModelConfig mc = tiny_config(ModelKind::Ntt);
  mc.dims.d_v = mc.dims.d_c = mc.dims.d_e = mc.d_u = 4;
  mc.vocab = 5;
  mc.subcats = 3;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    CaptionModel model(mc, seed);
    Rng rng(100 + seed);
    Example ex;
    ex.regions = random_regions(rng, 2, 4, 4);
    ex.tokens = random_tokens(rng, mc, 2, 2);
    auto loss = [&](Tape& tape) {
      Rng masks(7);
      return model.sequence_loss(tape, ex, true, &masks);
    };
    auto value = [&] {
      Tape tape;
      return loss(tape).value()[0];
    };
    model.params().zero_grad();
    {
      Tape tape;
      backprop(tape, loss(tape));
    }
    const double eps = 1e-4;
    model.params().for_each([&](Parameter& p) {
      for (std::size_t i = 0; i < p.value.size(); ++i) {
        const double saved = p.value[i];
        p.value[i] = saved + eps;
        const double plus = value();
        p.value[i] = saved - eps;
        const double minus = value();
        p.value[i] = saved;
        const double numeric = (plus - minus) / (2 * eps);
        ASSERT_LE(std::abs(p.grad[i] - numeric), 1e-9 + 1e-4 * std::abs(numeric))
            << "seed " << seed << " " << p.name << "[" << i << "]";
      }
    });
  }
}
