#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <vector>

#include "socl/errors.hpp"
#include "socl/ten/functional.hpp"
#include "socl/ten/mat.hpp"

namespace socl::metrics {

// Projected per-structure text tokens of one query report; absent where the
// report has no sentence for the structure.
using TextQuery = std::vector<std::optional<std::vector<double>>>;

// Mean over the query's present structures of sim(s^v_i, s^t_i). 0 when no
// structure is present.
inline double subject_score(const TextQuery& q, const ten::Mat& volume) {
  if (q.size() != volume.rows()) throw ShapeError("retrieval: query has " + std::to_string(q.size()) + " structures, volume " + volume.shape().str());
  double s = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < q.size(); ++i) {
    if (!q[i]) continue;
    s += ten::dot(*q[i], volume.row_span(i));
    ++n;
  }
  return n ? s / static_cast<double>(n) : 0.0;
}

// 0-based rank of volume `truth` among all candidates for one query: the
// number of candidates scoring higher, plus equal-scoring ones with a lower
// index.
inline std::size_t true_rank(const std::vector<double>& scores, std::size_t truth) {
  std::size_t r = 0;
  for (std::size_t j = 0; j < scores.size(); ++j)
    if (scores[j] > scores[truth] || (scores[j] == scores[truth] && j < truth)) ++r;
  return r;
}

// recall@K over queries i = 0..n-1 whose true volume is volumes[i].
inline std::map<std::size_t, double> retrieval_recall(const std::vector<TextQuery>& queries, const std::vector<ten::Mat>& volumes,
                                                      const std::vector<std::size_t>& ks) {
  if (queries.empty()) throw ParameterError("retrieval: empty test set");
  if (queries.size() != volumes.size()) throw ParameterError("retrieval: query and volume counts differ");
  std::map<std::size_t, std::size_t> hits;
  for (std::size_t k : ks) {
    if (k == 0) throw ParameterError("retrieval: K must be >= 1");
    hits[k] = 0;
  }
  std::vector<double> scores(volumes.size());
  for (std::size_t i = 0; i < queries.size(); ++i) {
    for (std::size_t j = 0; j < volumes.size(); ++j) scores[j] = subject_score(queries[i], volumes[j]);
    const std::size_t r = true_rank(scores, i);
    for (auto& [k, h] : hits)
      if (r < k) ++h;
  }
  std::map<std::size_t, double> out;
  for (const auto& [k, h] : hits) out[k] = static_cast<double>(h) / static_cast<double>(queries.size());
  return out;
}

}  // namespace socl::metrics
