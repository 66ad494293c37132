#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "socl/errors.hpp"

namespace socl::metrics {

enum class Averaging { Micro, Macro };

inline Averaging parse_averaging(const std::string& s) {
  if (s == "micro") return Averaging::Micro;
  if (s == "macro") return Averaging::Macro;
  throw ConfigError("CE averaging must be 'micro' or 'macro', got '" + s + "'");
}

inline const char* to_string(Averaging a) { return a == Averaging::Micro ? "micro" : "macro"; }

struct CeScores {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

struct Confusion {
  std::size_t tp = 0, fp = 0, fn = 0;

  CeScores scores() const {
    CeScores s;
    if (tp + fp > 0) s.precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    if (tp + fn > 0) s.recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
    if (s.precision + s.recall > 0.0) s.f1 = 2.0 * s.precision * s.recall / (s.precision + s.recall);
    return s;
  }
};

// Micro: pooled over every (case, label) cell. Macro: unweighted mean of the
// per-label scores. Each ratio is 0 when its denominator is 0.
inline CeScores ce_metrics(const std::vector<std::vector<int>>& pred, const std::vector<std::vector<int>>& truth,
                           Averaging mode = Averaging::Micro) {
  if (pred.size() != truth.size()) throw ShapeError("ce_metrics: case counts differ");
  const std::size_t L = truth.empty() ? 0 : truth.front().size();
  std::vector<Confusion> per(L);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i].size() != L || truth[i].size() != L) throw ShapeError("ce_metrics: label dimension mismatch");
    for (std::size_t l = 0; l < L; ++l) {
      const bool p = pred[i][l] != 0, t = truth[i][l] != 0;
      if (p && t) ++per[l].tp;
      else if (p) ++per[l].fp;
      else if (t) ++per[l].fn;
    }
  }
  if (mode == Averaging::Micro) {
    Confusion all;
    for (const auto& c : per) {
      all.tp += c.tp;
      all.fp += c.fp;
      all.fn += c.fn;
    }
    return all.scores();
  }
  CeScores m;
  if (L == 0) return m;
  for (const auto& c : per) {
    const auto s = c.scores();
    m.precision += s.precision;
    m.recall += s.recall;
    m.f1 += s.f1;
  }
  m.precision /= static_cast<double>(L);
  m.recall /= static_cast<double>(L);
  m.f1 /= static_cast<double>(L);
  return m;
}

}  // namespace socl::metrics
