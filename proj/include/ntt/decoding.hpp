#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "ntt/caption.hpp"
#include "ntt/heads.hpp"
#include "ntt/model.hpp"
#include "ntt/taskgen.hpp"

namespace ntt {

/// A next-token option with its probability and its position in the
/// canonical token order: textual words first, then slots ordered by
/// (region, plurality, sub-category). Ties are broken toward lower index.
struct ScoredToken {
  Token token;
  double prob = 0.0;
  std::size_t index = 0;
};

inline std::size_t token_index(const Token& t, std::size_t vocab, std::size_t subcats) {
  if (t.is_text()) return static_cast<std::size_t>(t.id);
  return vocab + (static_cast<std::size_t>(t.region) * 2 + static_cast<std::size_t>(t.plural)) * subcats +
         static_cast<std::size_t>(t.subcat);
}

/// Sub-category ids of one region sorted by probability (desc), then id.
inline std::vector<std::size_t> ranked_subcats(const std::vector<double>& p) {
  std::vector<std::size_t> order(p.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return p[a] > p[b]; });
  return order;
}

/// Expansion candidates: every textual word plus, per region and plurality,
/// the `subcat_cap` most likely sub-categories. Zero-probability entries are
/// dropped. Returned in canonical index order.
inline std::vector<ScoredToken> candidate_tokens(const WordDistribution& dist, std::size_t subcat_cap) {
  std::vector<ScoredToken> out;
  const std::size_t vocab = dist.p_txt.size();
  for (std::size_t w = 0; w < vocab; ++w) {
    const double p = dist.text_prob(w);
    if (p > 0.0) out.push_back({Token::text(static_cast<int>(w)), p, w});
  }
  for (std::size_t i = 0; i < dist.regions(); ++i) {
    const std::size_t subcats = dist.p_subcat[i].size();
    auto ranked = ranked_subcats(dist.p_subcat[i]);
    ranked.resize(std::min(ranked.size(), subcat_cap));
    std::sort(ranked.begin(), ranked.end());
    for (int b = 0; b < 2; ++b) {
      for (std::size_t s : ranked) {
        const double p = dist.slot_prob(i, b, s);
        if (p <= 0.0) continue;
        Token t = Token::slot(static_cast<int>(i), static_cast<int>(s), b);
        out.push_back({t, p, token_index(t, vocab, subcats)});
      }
    }
  }
  return out;
}

/// Most probable token over the full joint space (lowest index on ties).
inline ScoredToken argmax_token(const WordDistribution& dist) {
  ScoredToken best;
  best.prob = -1.0;
  const std::size_t vocab = dist.p_txt.size();
  for (std::size_t w = 0; w < vocab; ++w) {
    const double p = dist.text_prob(w);
    if (p > best.prob) best = {Token::text(static_cast<int>(w)), p, w};
  }
  for (std::size_t i = 0; i < dist.regions(); ++i) {
    const std::size_t subcats = dist.p_subcat[i].size();
    for (int b = 0; b < 2; ++b) {
      for (std::size_t s = 0; s < subcats; ++s) {
        const double p = dist.slot_prob(i, b, s);
        if (p > best.prob) {
          Token t = Token::slot(static_cast<int>(i), static_cast<int>(s), b);
          best = {t, p, token_index(t, vocab, subcats)};
        }
      }
    }
  }
  return best;
}

// ---------------------------------------------------------------------------
// Generic search over any step function.

template <typename State>
struct Hypothesis {
  std::vector<Token> tokens;
  std::vector<double> step_log_probs;
  double log_prob = 0.0;
  State state{};  // decoder state before consuming tokens.back()
  bool finished = false;
};

template <typename State>
struct Expansion {
  std::vector<ScoredToken> candidates;
  State next;  // decoder state after consuming the hypothesis' last token
};

template <typename State>
struct BeamResult {
  Hypothesis<State> best;
  std::vector<Hypothesis<State>> nbest;  // sorted by log_prob, descending
};

namespace detail {

template <typename State>
bool better_completion(const Hypothesis<State>& a, const Hypothesis<State>& b) {
  if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
  return a.tokens.size() < b.tokens.size();
}

template <typename State>
Hypothesis<State> extend(const Hypothesis<State>& parent, const ScoredToken& c, const State& next) {
  Hypothesis<State> h;
  h.tokens = parent.tokens;
  h.tokens.push_back(c.token);
  h.step_log_probs = parent.step_log_probs;
  const double lp = std::log(c.prob);
  h.step_log_probs.push_back(lp);
  h.log_prob = parent.log_prob + lp;
  h.state = next;
  return h;
}

}  // namespace detail

/// Picks the highest cumulative-score token each step until `is_end` or
/// max_len generated tokens.
template <typename State, typename Expand, typename IsEnd>
Hypothesis<State> greedy_search(const State& init, const Token& start, Expand&& expand, IsEnd&& is_end,
                                std::size_t max_len) {
  if (max_len < 1) throw Error("greedy decode: max_len must be at least 1");
  Hypothesis<State> hyp;
  hyp.tokens = {start};
  hyp.state = init;
  for (std::size_t step = 0; step < max_len; ++step) {
    Expansion<State> ex = expand(hyp);
    const ScoredToken* pick = nullptr;
    double pick_score = -std::numeric_limits<double>::infinity();
    for (const auto& c : ex.candidates) {
      const double score = hyp.log_prob + std::log(c.prob);
      if (pick == nullptr || score > pick_score || (score == pick_score && c.index < pick->index)) {
        pick = &c;
        pick_score = score;
      }
    }
    if (pick == nullptr) break;
    hyp = detail::extend(hyp, *pick, ex.next);
    if (is_end(pick->token)) {
      hyp.finished = true;
      break;
    }
  }
  return hyp;
}

/// Length-unnormalized beam search. Each round the `beam` best extensions
/// of all live hypotheses survive; extensions ending in `is_end` retire to
/// the finished pool. Stops when nothing is live, max_len tokens have been
/// generated, or the best finished score already beats every live score.
/// Candidate ties: lower token index, then shorter sequence, then parent order.
template <typename State, typename Expand, typename IsEnd>
BeamResult<State> beam_search(const State& init, const Token& start, Expand&& expand, IsEnd&& is_end,
                              std::size_t beam, std::size_t max_len) {
  if (beam < 1) throw Error("beam decode: beam must be at least 1");
  if (max_len < 1) throw Error("beam decode: max_len must be at least 1");
  Hypothesis<State> root;
  root.tokens = {start};
  root.state = init;
  std::vector<Hypothesis<State>> live{root};
  std::vector<Hypothesis<State>> finished;

  struct Cand {
    double score;
    std::size_t index;
    std::size_t length;
    std::size_t parent;
    std::size_t option;
  };

  for (std::size_t step = 0; step < max_len && !live.empty(); ++step) {
    std::vector<Expansion<State>> expansions;
    std::vector<Cand> cands;
    for (std::size_t h = 0; h < live.size(); ++h) {
      expansions.push_back(expand(live[h]));
      const auto& opts = expansions.back().candidates;
      for (std::size_t o = 0; o < opts.size(); ++o) {
        cands.push_back({live[h].log_prob + std::log(opts[o].prob), opts[o].index, live[h].tokens.size(), h, o});
      }
    }
    std::stable_sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
      if (a.score != b.score) return a.score > b.score;
      if (a.index != b.index) return a.index < b.index;
      if (a.length != b.length) return a.length < b.length;
      return a.parent < b.parent;
    });
    if (cands.size() > beam) cands.resize(beam);

    std::vector<Hypothesis<State>> next_live;
    for (const Cand& c : cands) {
      const auto& opt = expansions[c.parent].candidates[c.option];
      Hypothesis<State> h = detail::extend(live[c.parent], opt, expansions[c.parent].next);
      if (is_end(opt.token)) {
        h.finished = true;
        finished.push_back(std::move(h));
      } else {
        next_live.push_back(std::move(h));
      }
    }
    live = std::move(next_live);

    if (!finished.empty() && !live.empty()) {
      double best_finished = -std::numeric_limits<double>::infinity();
      for (const auto& f : finished) best_finished = std::max(best_finished, f.log_prob);
      double best_live = -std::numeric_limits<double>::infinity();
      for (const auto& l : live) best_live = std::max(best_live, l.log_prob);
      if (best_finished >= best_live) break;
    }
  }
  for (auto& l : live) finished.push_back(std::move(l));

  BeamResult<State> result;
  std::stable_sort(finished.begin(), finished.end(), detail::better_completion<State>);
  if (finished.empty()) {
    result.best = root;
  } else {
    result.best = finished.front();
  }
  result.nbest = std::move(finished);
  return result;
}

// ---------------------------------------------------------------------------
// Caption model decoding.

/// Default cap on sub-categories expanded per region in beam search.
inline constexpr std::size_t kSubcatCap = 5;

inline bool is_eos(const Token& t) { return t.is_text() && t.id == Vocabulary::kEos; }

/// Runs one inference step from a snapshot and returns the joint distribution
/// together with the resulting state.
struct InferenceStep {
  WordDistribution dist;
  StateSnapshot next;
};

inline InferenceStep inference_step(const CaptionModel& model, const RegionSet& regions, const StateSnapshot& state,
                                    const Token& prev) {
  Tape tape;
  EncodedRegions enc = model.encode(tape, regions);
  DecoderState s = restore(tape, state);
  StepOutput out = model.step(tape, enc, s, prev, false, nullptr);
  HeadOutputs h = model.heads(enc, out);
  return {model.distribution(enc, out, h), snapshot(out.state)};
}

inline StateSnapshot initial_snapshot(const CaptionModel& model) {
  Tape tape;
  return snapshot(model.initial_state(tape));
}

namespace detail {
inline auto model_expander(const CaptionModel& model, const RegionSet& regions) {
  return [&model, &regions](const Hypothesis<StateSnapshot>& h) {
    InferenceStep st = inference_step(model, regions, h.state, h.tokens.back());
    return Expansion<StateSnapshot>{candidate_tokens(st.dist, kSubcatCap), std::move(st.next)};
  };
}
inline std::size_t clamp_len(const CaptionModel& model, std::size_t max_len) {
  return std::min(max_len, model.config().dims.max_len);
}
}  // namespace detail

/// Greedy caption (BOS first; EOS last unless max_len was hit).
inline std::vector<Token> greedy_decode(const CaptionModel& model, const RegionSet& regions, std::size_t max_len) {
  if (max_len < 1) throw Error("greedy decode: max_len must be at least 1");
  return greedy_search(initial_snapshot(model), Token::text(Vocabulary::kBos), detail::model_expander(model, regions),
                       is_eos, detail::clamp_len(model, max_len))
      .tokens;
}

inline BeamResult<StateSnapshot> beam_decode(const CaptionModel& model, const RegionSet& regions, std::size_t beam,
                                             std::size_t max_len) {
  if (beam < 1) throw Error("beam decode: beam must be at least 1");
  if (max_len < 1) throw Error("beam decode: max_len must be at least 1");
  return beam_search(initial_snapshot(model), Token::text(Vocabulary::kBos), detail::model_expander(model, regions),
                     is_eos, beam, detail::clamp_len(model, max_len));
}

// ---------------------------------------------------------------------------
// Surface realization.

inline std::string realize_slot(int category, int subcat, int plural, const CategoryBank& bank) {
  if (category < 0 || static_cast<std::size_t>(category) >= bank.categories()) {
    throw Error("realize_slot: unknown category " + std::to_string(category));
  }
  const auto& sc = bank.subcategory(subcat);
  return plural ? sc.plural : sc.singular;
}

/// Surface words of a caption without BOS/EOS. Slots are realized from
/// their sub-category and plurality; with `bracket` they render as "[word]".
inline std::vector<std::string> caption_words(const std::vector<Token>& tokens, const RegionSet& regions,
                                              const Vocabulary& vocab, const CategoryBank& bank, bool bracket) {
  std::vector<std::string> out;
  for (const Token& t : tokens) {
    if (t.is_text()) {
      if (t.id == Vocabulary::kBos || t.id == Vocabulary::kEos) continue;
      out.push_back(vocab.word(t.id));
      continue;
    }
    int category = bank.subcategory(t.subcat).category;
    if (!regions.labels.empty() && t.region >= 0 && static_cast<std::size_t>(t.region) < regions.labels.size()) {
      category = regions.labels[static_cast<std::size_t>(t.region)].category;
    }
    const std::string w = realize_slot(category, t.subcat, t.plural, bank);
    out.push_back(bracket ? "[" + w + "]" : w);
  }
  return out;
}

inline std::string join_words(const std::vector<std::string>& words) {
  std::string s;
  for (const auto& w : words) {
    if (!s.empty()) s += ' ';
    s += w;
  }
  return s;
}

}  // namespace ntt
