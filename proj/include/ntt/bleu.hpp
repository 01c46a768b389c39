#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdlib>
#include <map>
#include <vector>

#include "ntt/tensor.hpp"

namespace ntt {

/// Clipped n-gram counts accumulated over one or more sentences. Scores
/// use the geometric mean of clipped precisions and the brevity penalty
/// exp(1 − r/c) when the candidate is shorter than the closest reference.
/// An order with zero matches is add-one smoothed: (0 + 1) / (total + 1).
template <typename Word>
class BleuStats {
 public:
  explicit BleuStats(std::size_t max_n = 4) : max_n_(max_n), matches_(max_n, 0), totals_(max_n, 0) {
    if (max_n == 0) throw Error("bleu: max_n must be positive");
  }

  void add(const std::vector<Word>& candidate, const std::vector<std::vector<Word>>& references) {
    if (references.empty()) throw Error("bleu: no reference");
    cand_len_ += candidate.size();
    ref_len_ += closest_length(candidate.size(), references);
    for (std::size_t n = 1; n <= max_n_; ++n) {
      const auto cand = ngrams(candidate, n);
      std::map<std::vector<Word>, std::size_t> max_ref;
      for (const auto& ref : references) {
        for (const auto& [gram, count] : ngrams(ref, n)) max_ref[gram] = std::max(max_ref[gram], count);
      }
      for (const auto& [gram, count] : cand) {
        totals_[n - 1] += count;
        auto it = max_ref.find(gram);
        if (it != max_ref.end()) matches_[n - 1] += std::min(count, it->second);
      }
    }
  }

  double score() const {
    if (cand_len_ == 0) return 0.0;
    double log_sum = 0.0;
    for (std::size_t n = 0; n < max_n_; ++n) {
      const double p = matches_[n] > 0 ? static_cast<double>(matches_[n]) / static_cast<double>(totals_[n])
                                       : 1.0 / static_cast<double>(totals_[n] + 1);
      log_sum += std::log(p);
    }
    return brevity_penalty() * std::exp(log_sum / static_cast<double>(max_n_));
  }

  double brevity_penalty() const {
    if (cand_len_ == 0) return 0.0;
    if (cand_len_ >= ref_len_) return 1.0;
    return std::exp(1.0 - static_cast<double>(ref_len_) / static_cast<double>(cand_len_));
  }

  std::size_t candidate_length() const { return cand_len_; }
  std::size_t reference_length() const { return ref_len_; }
  const std::vector<std::size_t>& matches() const { return matches_; }
  const std::vector<std::size_t>& totals() const { return totals_; }

 private:
  static std::map<std::vector<Word>, std::size_t> ngrams(const std::vector<Word>& s, std::size_t n) {
    std::map<std::vector<Word>, std::size_t> out;
    if (s.size() < n) return out;
    for (std::size_t i = 0; i + n <= s.size(); ++i) ++out[std::vector<Word>(s.begin() + i, s.begin() + i + n)];
    return out;
  }

  // Closest reference length; ties go to the shorter reference.
  static std::size_t closest_length(std::size_t c, const std::vector<std::vector<Word>>& refs) {
    std::size_t best = refs.front().size();
    for (const auto& r : refs) {
      const auto diff = [c](std::size_t len) { return len > c ? len - c : c - len; };
      if (diff(r.size()) < diff(best) || (diff(r.size()) == diff(best) && r.size() < best)) best = r.size();
    }
    return best;
  }

  std::size_t max_n_;
  std::vector<std::size_t> matches_;
  std::vector<std::size_t> totals_;
  std::size_t cand_len_ = 0;
  std::size_t ref_len_ = 0;
};

/// Sentence-level BLEU in [0, 1]; an empty candidate scores 0.
template <typename Word>
double bleu(const std::vector<Word>& candidate, const std::vector<std::vector<Word>>& references, std::size_t max_n) {
  if (candidate.empty()) return 0.0;
  BleuStats<Word> stats(max_n);
  stats.add(candidate, references);
  return stats.score();
}

}  // namespace ntt
