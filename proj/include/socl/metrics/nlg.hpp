#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "socl/errors.hpp"

namespace socl::metrics {

using Tokens = std::vector<std::string>;

namespace detail {

inline std::map<Tokens, std::size_t> ngram_counts(const Tokens& s, std::size_t n) {
  std::map<Tokens, std::size_t> c;
  if (s.size() < n) return c;
  for (std::size_t i = 0; i + n <= s.size(); ++i) ++c[Tokens(s.begin() + static_cast<std::ptrdiff_t>(i), s.begin() + static_cast<std::ptrdiff_t>(i + n))];
  return c;
}

// Reference length closest to c; ties go to the shorter reference.
inline std::size_t closest_ref_length(std::size_t c, const std::vector<Tokens>& refs) {
  std::size_t best = refs.front().size();
  for (const auto& r : refs) {
    const auto d = [c](std::size_t len) { return len > c ? len - c : c - len; };
    if (d(r.size()) < d(best) || (d(r.size()) == d(best) && r.size() < best)) best = r.size();
  }
  return best;
}

}  // namespace detail

// Corpus BLEU-n with uniform weights: clipped n-gram matches and candidate
// n-gram totals are pooled over the corpus for each order 1..n, combined by
// geometric mean and multiplied by the brevity penalty exp(1 - r/c) (c < r).
inline double corpus_bleu(const std::vector<Tokens>& hyps, const std::vector<std::vector<Tokens>>& refs, std::size_t n) {
  if (n < 1 || n > 4) throw ParameterError("bleu: order must be in 1..4");
  if (hyps.empty()) throw ParameterError("bleu: empty hypothesis corpus");
  if (hyps.size() != refs.size()) throw ParameterError("bleu: hypothesis and reference counts differ");
  std::vector<double> match(n, 0.0), total(n, 0.0);
  double c = 0.0, r = 0.0;
  for (std::size_t i = 0; i < hyps.size(); ++i) {
    if (refs[i].empty()) throw ParameterError("bleu: case without references");
    c += static_cast<double>(hyps[i].size());
    r += static_cast<double>(detail::closest_ref_length(hyps[i].size(), refs[i]));
    for (std::size_t k = 1; k <= n; ++k) {
      std::map<Tokens, std::size_t> max_ref;
      for (const auto& ref : refs[i])
        for (const auto& [g, cnt] : detail::ngram_counts(ref, k)) max_ref[g] = std::max(max_ref[g], cnt);
      for (const auto& [g, cnt] : detail::ngram_counts(hyps[i], k)) {
        total[k - 1] += static_cast<double>(cnt);
        auto it = max_ref.find(g);
        if (it != max_ref.end()) match[k - 1] += static_cast<double>(std::min(cnt, it->second));
      }
    }
  }
  if (c == 0.0) return 0.0;
  double log_sum = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    if (match[k] == 0.0) return 0.0;
    log_sum += std::log(match[k] / total[k]);
  }
  const double bp = c < r ? std::exp(1.0 - r / c) : 1.0;
  return std::min(1.0, bp * std::exp(log_sum / static_cast<double>(n)));
}

inline double bleu(const Tokens& hyp, const std::vector<Tokens>& refs, std::size_t n) {
  return corpus_bleu({hyp}, {refs}, n);
}

inline std::size_t lcs_length(const Tokens& a, const Tokens& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

inline constexpr double kRougeBeta = 1.0;

// LCS F-measure with beta = 1. An empty hypothesis scores 0.
inline double rouge_l(const Tokens& hyp, const Tokens& ref) {
  if (ref.empty()) throw ParameterError("rouge_l: empty reference");
  if (hyp.empty()) return 0.0;
  const double lcs = static_cast<double>(lcs_length(hyp, ref));
  if (lcs == 0.0) return 0.0;
  const double p = lcs / static_cast<double>(hyp.size());
  const double r = lcs / static_cast<double>(ref.size());
  const double b2 = kRougeBeta * kRougeBeta;
  return (1.0 + b2) * p * r / (r + b2 * p);
}

inline double corpus_rouge_l(const std::vector<Tokens>& hyps, const std::vector<Tokens>& refs) {
  if (hyps.empty()) throw ParameterError("rouge_l: empty corpus");
  if (hyps.size() != refs.size()) throw ParameterError("rouge_l: hypothesis and reference counts differ");
  double s = 0.0;
  for (std::size_t i = 0; i < hyps.size(); ++i) s += rouge_l(hyps[i], refs[i]);
  return s / static_cast<double>(hyps.size());
}

}  // namespace socl::metrics
