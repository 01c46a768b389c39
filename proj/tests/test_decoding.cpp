#include <gtest/gtest.h>

#include <cmath>
#include <map>

#include "helpers.hpp"
#include "ntt/bleu.hpp"
#include "ntt/decoding.hpp"

using namespace ntt;
using namespace testing_helpers;

namespace {

// Toy search space over text tokens: a=2, b=3, x=4, y=5, EOS=1.
// Root: a 0.6, b 0.4. After a: x 0.5, y 0.5. After b: x 0.9, y 0.1. Then EOS.
constexpr int kA = 2, kB = 3, kX = 4, kY = 5;

Expansion<int> toy_expand(const Hypothesis<int>& h) {
  auto opt = [](int id, double p) { return ScoredToken{Token::text(id), p, static_cast<std::size_t>(id)}; };
  Expansion<int> e;
  const Token& last = h.tokens.back();
  e.next = h.state + 1;
  if (last.id == Vocabulary::kBos) {
    e.candidates = {opt(kA, 0.6), opt(kB, 0.4)};
  } else if (last.id == kA) {
    e.candidates = {opt(kX, 0.5), opt(kY, 0.5)};
  } else if (last.id == kB) {
    e.candidates = {opt(kX, 0.9), opt(kY, 0.1)};
  } else {
    e.candidates = {opt(Vocabulary::kEos, 1.0)};
  }
  return e;
}

std::vector<int> ids(const std::vector<Token>& tokens) {
  std::vector<int> out;
  for (const Token& t : tokens) out.push_back(t.id);
  return out;
}

struct DecodeCase {
  ModelConfig mc;
  std::unique_ptr<CaptionModel> model;
  RegionSet regions;
};

DecodeCase random_case(std::uint64_t seed, ModelKind kind) {
  Rng rng(seed);
  DecodeCase c;
  c.mc = tiny_config(kind);
  c.mc.dims.max_len = 6;
  c.mc.subcats = 7;
  c.model = std::make_unique<CaptionModel>(c.mc, seed);
  scale_params(*c.model, 2.5);
  c.regions = random_regions(rng, 1 + rng.below(3), c.mc.dims.d_v, c.mc.dims.d_c);
  return c;
}

}  // namespace

TEST(Search, BeamFindsBetterSequenceThanGreedy) {
  const Token bos = Token::text(Vocabulary::kBos);
  const Hypothesis<int> g = greedy_search(0, bos, toy_expand, is_eos, 5);
  EXPECT_EQ(ids(g.tokens), (std::vector<int>{0, kA, kX, 1}));
  EXPECT_NEAR(std::exp(g.log_prob), 0.30, 1e-12);
  const BeamResult<int> b = beam_search(0, bos, toy_expand, is_eos, 2, 5);
  EXPECT_EQ(ids(b.best.tokens), (std::vector<int>{0, kB, kX, 1}));
  EXPECT_NEAR(std::exp(b.best.log_prob), 0.36, 1e-12);
  EXPECT_TRUE(b.best.finished);
  const BeamResult<int> b1 = beam_search(0, bos, toy_expand, is_eos, 1, 5);
  EXPECT_EQ(ids(b1.best.tokens), ids(g.tokens));
}

TEST(Search, TiesBreakTowardLowerIndex) {
  const Token bos = Token::text(Vocabulary::kBos);
  auto expand = [](const Hypothesis<int>& h) {
    Expansion<int> e;
    if (h.tokens.size() == 1) {
      e.candidates = {{Token::text(7), 0.5, 7}, {Token::text(3), 0.5, 3}};
    } else {
      e.candidates = {{Token::text(1), 1.0, 1}};
    }
    return e;
  };
  EXPECT_EQ(greedy_search(0, bos, expand, is_eos, 4).tokens[1].id, 3);
  EXPECT_EQ(beam_search(0, bos, expand, is_eos, 1, 4).best.tokens[1].id, 3);
  const auto two = beam_search(0, bos, expand, is_eos, 2, 4);
  ASSERT_EQ(two.nbest.size(), 2u);
  EXPECT_EQ(two.nbest[0].tokens[1].id, 3);
  EXPECT_EQ(two.nbest[1].tokens[1].id, 7);
}

TEST(Search, RejectsZeroBeamAndLength) {
  const Token bos = Token::text(Vocabulary::kBos);
  EXPECT_THROW(beam_search(0, bos, toy_expand, is_eos, 0, 5), Error);
  EXPECT_THROW(beam_search(0, bos, toy_expand, is_eos, 2, 0), Error);
  EXPECT_THROW(greedy_search(0, bos, toy_expand, is_eos, 0), Error);
}

TEST(Search, MaxLengthTruncatesUnfinished) {
  const BeamResult<int> b = beam_search(0, Token::text(Vocabulary::kBos), toy_expand, is_eos, 2, 2);
  EXPECT_FALSE(b.best.finished);
  EXPECT_EQ(b.best.tokens.size(), 3u);
}

class ModelDecoding : public ::testing::TestWithParam<ModelKind> {};

TEST_P(ModelDecoding, BeamOfOneEqualsGreedy) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    DecodeCase c = random_case(seed, GetParam());
    const auto greedy = greedy_decode(*c.model, c.regions, 6);
    const auto beam = beam_decode(*c.model, c.regions, 1, 6);
    EXPECT_EQ(beam.best.tokens, greedy) << "seed " << seed;
  }
}

TEST_P(ModelDecoding, NBestIsSortedAndScoresAreSums) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    DecodeCase c = random_case(seed, GetParam());
    const auto result = beam_decode(*c.model, c.regions, 4, 6);
    ASSERT_FALSE(result.nbest.empty());
    EXPECT_EQ(result.best.tokens, result.nbest.front().tokens);
    for (std::size_t i = 0; i + 1 < result.nbest.size(); ++i) {
      EXPECT_GE(result.nbest[i].log_prob, result.nbest[i + 1].log_prob);
    }
    for (const auto& h : result.nbest) {
      double s = 0.0;
      for (double lp : h.step_log_probs) s += lp;
      EXPECT_EQ(s, h.log_prob);
      EXPECT_EQ(h.step_log_probs.size() + 1, h.tokens.size());
      EXPECT_LE(h.log_prob, 0.0);
      EXPECT_EQ(h.tokens.front().id, Vocabulary::kBos);
      EXPECT_EQ(h.finished, is_eos(h.tokens.back()));
    }
  }
}

TEST_P(ModelDecoding, StepLogProbsMatchModelDistribution) {
  DecodeCase c = random_case(3, GetParam());
  const auto result = beam_decode(*c.model, c.regions, 3, 6);
  StateSnapshot state = initial_snapshot(*c.model);
  const auto& tokens = result.best.tokens;
  for (std::size_t t = 1; t < tokens.size(); ++t) {
    InferenceStep st = inference_step(*c.model, c.regions, state, tokens[t - 1]);
    const Token& tok = tokens[t];
    const double p = tok.is_text() ? st.dist.text_prob(static_cast<std::size_t>(tok.id))
                                   : st.dist.slot_prob(static_cast<std::size_t>(tok.region), tok.plural,
                                                       static_cast<std::size_t>(tok.subcat));
    EXPECT_NEAR(std::log(p), result.best.step_log_probs[t - 1], 1e-12);
    state = st.next;
  }
}

INSTANTIATE_TEST_SUITE_P(Models, ModelDecoding, ::testing::Values(ModelKind::Ntt, ModelKind::Baseline),
                         [](const auto& info) { return std::string(model_kind_name(info.param)); });

TEST(ModelDecodingLimits, MaxLenIsClampedAndValidated) {
  DecodeCase c = random_case(5, ModelKind::Ntt);
  const auto tokens = greedy_decode(*c.model, c.regions, 1000);
  EXPECT_LE(tokens.size(), c.mc.dims.max_len + 1);
  EXPECT_THROW(greedy_decode(*c.model, c.regions, 0), Error);
  EXPECT_THROW(beam_decode(*c.model, c.regions, 0, 5), Error);
}

TEST(Candidates, SubcategoriesAreCappedPerRegion) {
  WordDistribution d;
  d.p_regions = {0.3, 0.2};
  d.p_sentinel = 0.5;
  d.p_txt = {0.5, 0.5};
  d.p_plural = {{0.5, 0.5}, {1.0, 0.0}};
  d.p_subcat = {{0.05, 0.3, 0.05, 0.2, 0.1, 0.1, 0.2}, {1.0 / 7, 1.0 / 7, 1.0 / 7, 1.0 / 7, 1.0 / 7, 1.0 / 7, 1.0 / 7}};
  const auto c = candidate_tokens(d, 5);
  std::map<std::pair<int, int>, std::vector<int>> per;
  std::size_t text = 0;
  for (const auto& s : c) {
    if (s.token.is_text()) {
      ++text;
    } else {
      per[{s.token.region, s.token.plural}].push_back(s.token.subcat);
    }
    EXPECT_GT(s.prob, 0.0);
  }
  EXPECT_EQ(text, 2u);
  EXPECT_EQ(per[std::make_pair(0, 0)], (std::vector<int>{1, 3, 4, 5, 6}));
  EXPECT_EQ(per[std::make_pair(1, 0)], (std::vector<int>{0, 1, 2, 3, 4}));
  EXPECT_EQ(per.count(std::make_pair(1, 1)), 0u);
  for (std::size_t i = 0; i + 1 < c.size(); ++i) EXPECT_LT(c[i].index, c[i + 1].index);
}

TEST(Candidates, ArgmaxSpansFullSpaceAndBreaksTiesLow) {
  WordDistribution d;
  d.p_regions = {0.5};
  d.p_sentinel = 0.5;
  d.p_txt = {0.0, 0.2, 0.8};
  d.p_plural = {{0.5, 0.5}};
  d.p_subcat = {{0.1, 0.1, 0.1, 0.1, 0.1, 0.1, 0.4}};
  // Best text 0.4 beats best slot 0.5 * 0.5 * 0.4 = 0.1.
  EXPECT_EQ(argmax_token(d).token, Token::text(2));
  d.p_txt = {0.5, 0.5, 0.0};
  d.p_sentinel = 0.2;
  d.p_regions = {0.8};
  const ScoredToken best = argmax_token(d);
  EXPECT_EQ(best.token, Token::slot(0, 6, 0));
  EXPECT_EQ(best.index, token_index(Token::slot(0, 6, 0), 3, 7));
}

TEST(Surface, RealizeSlotUsesPlurality) {
  const CategoryBank bank = CategoryBank::names(3, 3);
  EXPECT_EQ(realize_slot(0, 0, 0, bank), "cat");
  EXPECT_EQ(realize_slot(0, 0, 1, bank), "cats");
  EXPECT_THROW(realize_slot(0, 99, 0, bank), Error);
  EXPECT_THROW(realize_slot(5, 0, 0, bank), Error);
}

TEST(Surface, CaptionWordsSkipsFramingAndBrackets) {
  const CategoryBank bank = CategoryBank::names(3, 3);
  const Vocabulary vocab = Grammar{}.vocabulary();
  RegionSet regions;
  regions.V = Tensor({1, 2});
  regions.Vbar = Tensor({1, 2});
  regions.labels = {{0, 1, 1}};
  const std::vector<Token> tokens{Token::text(0), Token::text(vocab.id("two")), Token::slot(0, 1, 1), Token::text(1)};
  EXPECT_EQ(join_words(caption_words(tokens, regions, vocab, bank, true)), "two [dogs]");
  EXPECT_EQ(join_words(caption_words(tokens, regions, vocab, bank, false)), "two dogs");
}

TEST(Bleu, UnigramPrecision) {
  const std::vector<std::string> cand{"a", "b", "b"}, ref{"a", "b", "c"};
  EXPECT_NEAR(bleu(cand, {ref}, 1), 2.0 / 3.0, 1e-15);
}

TEST(Bleu, IdentityScoresOne) {
  const std::vector<std::string> s{"a", "dog", "next", "to", "a", "cat"};
  EXPECT_DOUBLE_EQ(bleu(s, {s}, 4), 1.0);
  EXPECT_DOUBLE_EQ(bleu(s, {s}, 1), 1.0);
}

TEST(Bleu, BrevityPenalty) {
  const std::vector<std::string> cand{"the", "cat"}, ref{"the", "cat", "sat"};
  EXPECT_NEAR(bleu(cand, {ref}, 1), std::exp(1.0 - 1.5), 1e-15);
  EXPECT_EQ(bleu(std::vector<std::string>{}, {ref}, 1), 0.0);
}

TEST(Bleu, ClippedCounts) {
  const std::vector<std::string> cand{"the", "the", "the"}, ref{"the", "cat", "sat"};
  EXPECT_NEAR(bleu(cand, {ref}, 1), 1.0 / 3.0, 1e-15);
}

TEST(Bleu, CorpusStatsAccumulate) {
  BleuStats<std::string> s(2);
  s.add({"a", "b"}, {{"a", "b"}});
  s.add({"c"}, {{"c", "d"}});
  EXPECT_EQ(s.candidate_length(), 3u);
  EXPECT_EQ(s.reference_length(), 4u);
  EXPECT_EQ(s.matches()[0], 3u);
  EXPECT_EQ(s.totals()[1], 1u);
}
