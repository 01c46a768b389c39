#pragma once

#include <map>
#include <string>
#include <vector>

#include "ntt/bleu.hpp"
#include "ntt/decoding.hpp"
#include "ntt/training.hpp"

namespace ntt {

struct EvalMetrics {
  double bleu1 = 0.0;
  double bleu4 = 0.0;
  double slot_precision = 0.0;
  double slot_recall = 0.0;
  double sentinel_accuracy = 0.0;
  std::size_t examples = 0;
};

/// Multiset overlap of the regions named by two captions' slot tokens.
inline std::size_t matched_slot_regions(const std::vector<Token>& generated, const std::vector<Token>& reference) {
  std::map<int, std::size_t> ref;
  for (const Token& t : reference) {
    if (t.is_slot()) ++ref[t.region];
  }
  std::size_t matched = 0;
  for (const Token& t : generated) {
    if (!t.is_slot()) continue;
    auto it = ref.find(t.region);
    if (it != ref.end() && it->second > 0) {
      --it->second;
      ++matched;
    }
  }
  return matched;
}

inline std::size_t slot_count(const std::vector<Token>& tokens) {
  std::size_t n = 0;
  for (const Token& t : tokens) n += t.is_slot() ? 1 : 0;
  return n;
}

/// Decodes every example (beam search; beam 1 is greedy) and scores it
/// against its single reference caption. BLEU is corpus-level over surface
/// words. A generated slot is correct when it points at a region the
/// reference also grounds. Sentinel accuracy is measured under teacher forcing.
inline EvalMetrics evaluate(const CaptionModel& model, const std::vector<const Example*>& examples,
                            const Vocabulary& vocab, const CategoryBank& bank, std::size_t beam) {
  EvalMetrics m;
  m.examples = examples.size();
  if (examples.empty()) return m;
  BleuStats<std::string> b1(1), b4(4);
  std::size_t matched = 0, generated_slots = 0, reference_slots = 0;
  for (const Example* ex : examples) {
    const auto hyp = beam_decode(model, ex->regions, beam, model.config().dims.max_len).best.tokens;
    const auto cand = caption_words(hyp, ex->regions, vocab, bank, false);
    const auto ref = caption_words(ex->tokens, ex->regions, vocab, bank, false);
    b1.add(cand, {ref});
    b4.add(cand, {ref});
    matched += matched_slot_regions(hyp, ex->tokens);
    generated_slots += slot_count(hyp);
    reference_slots += slot_count(ex->tokens);
  }
  m.bleu1 = b1.score();
  m.bleu4 = b4.score();
  m.slot_precision = generated_slots ? static_cast<double>(matched) / static_cast<double>(generated_slots) : 0.0;
  m.slot_recall = reference_slots ? static_cast<double>(matched) / static_cast<double>(reference_slots) : 0.0;
  m.sentinel_accuracy = teacher_forced_eval(model, examples).sentinel_accuracy;
  return m;
}

}  // namespace ntt
