#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "socl/errors.hpp"
#include "socl/ten/checkpoint.hpp"
#include "socl/ten/functional.hpp"

namespace socl::align {

enum class QueuePolicy {
  Diversity,  // evict the entry with the largest cached similarity sum
  Fifo,       // append, evict the oldest
};

inline QueuePolicy parse_queue_policy(const std::string& s) {
  if (s == "diversity") return QueuePolicy::Diversity;
  if (s == "fifo") return QueuePolicy::Fifo;
  throw ConfigError("queue policy must be 'diversity' or 'fifo', got '" + s + "'");
}

inline const char* to_string(QueuePolicy p) { return p == QueuePolicy::Diversity ? "diversity" : "fifo"; }

struct QueueEntry {
  std::vector<double> token;  // g_t output, unit norm
  double score = 0.0;         // similarity sum cached at enqueue time
  std::size_t subject = 0;
  std::vector<double> source;  // frozen pre-projection s^t; may be empty
};

struct QueueCandidate {
  std::size_t structure;
  std::vector<double> token;
  std::size_t subject;
  std::vector<double> source = {};
};

// Per-structure store of projected text tokens used as contrastive negatives.
class DiversityQueue {
 public:
  DiversityQueue() = default;
  DiversityQueue(std::size_t n_structures, std::size_t capacity, QueuePolicy policy = QueuePolicy::Diversity)
      : queues_(n_structures), capacity_(capacity), policy_(policy) {
    if (capacity == 0) throw ParameterError("queue capacity must be >= 1");
  }

  std::size_t n_structures() const { return queues_.size(); }
  std::size_t capacity() const { return capacity_; }
  QueuePolicy policy() const { return policy_; }
  const std::vector<QueueEntry>& entries(std::size_t structure) const { return queues_.at(structure); }

  std::size_t total_size() const {
    std::size_t n = 0;
    for (const auto& q : queues_) n += q.size();
    return n;
  }

  // Sum of inner products between `token` and every current member of the
  // structure's queue.
  double similarity_sum(std::size_t structure, const std::vector<double>& token) const {
    double s = 0.0;
    for (const auto& e : queues_.at(structure)) s += ten::dot(token, e.token);
    return s;
  }

  // Applies candidates in order. Returns how many were enqueued.
  std::size_t update(const std::vector<QueueCandidate>& candidates) {
    std::size_t accepted = 0;
    for (const auto& c : candidates) accepted += offer(c) ? 1 : 0;
    return accepted;
  }

  bool offer(const QueueCandidate& c) {
    if (c.structure >= queues_.size()) {
      throw ParameterError("queue: structure " + std::to_string(c.structure) + " out of range");
    }
    auto& q = queues_[c.structure];
    const double s = similarity_sum(c.structure, c.token);
    if (q.size() < capacity_) {
      q.push_back({c.token, s, c.subject, c.source});
      return true;
    }
    if (policy_ == QueuePolicy::Fifo) {
      q.erase(q.begin());
      q.push_back({c.token, s, c.subject, c.source});
      return true;
    }
    std::size_t worst = 0;
    for (std::size_t i = 1; i < q.size(); ++i)
      if (q[i].score > q[worst].score) worst = i;
    if (!(s < q[worst].score)) return false;
    q.erase(q.begin() + static_cast<std::ptrdiff_t>(worst));
    q.push_back({c.token, s, c.subject, c.source});
    return true;
  }

  // All tokens, structure-major, as a (total_size x d) matrix. This is the
  // negative candidate set in the order used by the losses.
  ten::Mat snapshot(std::size_t dim) const {
    ten::Mat m(total_size(), dim);
    std::size_t r = 0;
    for (const auto& q : queues_)
      for (const auto& e : q) {
        if (e.token.size() != dim) throw ShapeError("queue: token width " + std::to_string(e.token.size()) + " vs " + std::to_string(dim));
        std::copy(e.token.begin(), e.token.end(), m.row_span(r++).begin());
      }
    return m;
  }

  // Stored pre-projection sources in snapshot order. Every entry must carry
  // one of width `dim`.
  ten::Mat sources(std::size_t dim) const {
    ten::Mat m(total_size(), dim);
    std::size_t r = 0;
    for (const auto& q : queues_)
      for (const auto& e : q) {
        if (e.source.size() != dim) throw ShapeError("queue: source width " + std::to_string(e.source.size()) + " vs " + std::to_string(dim));
        std::copy(e.source.begin(), e.source.end(), m.row_span(r++).begin());
      }
    return m;
  }

  void save_to(ten::ArrayTable& table, const std::string& prefix = "queue") const {
    table.meta()[prefix + ".capacity"] = std::to_string(capacity_);
    table.meta()[prefix + ".policy"] = to_string(policy_);
    table.meta()[prefix + ".structures"] = std::to_string(queues_.size());
    for (std::size_t s = 0; s < queues_.size(); ++s) {
      const auto& q = queues_[s];
      const std::size_t dim = q.empty() ? 0 : q.front().token.size();
      const std::size_t src = q.empty() ? 0 : q.front().source.size();
      ten::Mat tokens(q.size(), dim), scores(q.size(), 2), sources(q.size(), src);
      for (std::size_t i = 0; i < q.size(); ++i) {
        std::copy(q[i].token.begin(), q[i].token.end(), tokens.row_span(i).begin());
        if (q[i].source.size() != src) throw ShapeError("queue: mixed source widths");
        std::copy(q[i].source.begin(), q[i].source.end(), sources.row_span(i).begin());
        scores(i, 0) = q[i].score;
        scores(i, 1) = static_cast<double>(q[i].subject);
      }
      table.put(prefix + "." + std::to_string(s) + ".tokens", std::move(tokens));
      table.put(prefix + "." + std::to_string(s) + ".scores", std::move(scores));
      table.put(prefix + "." + std::to_string(s) + ".sources", std::move(sources));
    }
  }

  static DiversityQueue load_from(const ten::ArrayTable& table, const std::string& prefix = "queue") {
    const auto& m = table.meta();
    DiversityQueue dq(std::stoul(m.at(prefix + ".structures")), std::stoul(m.at(prefix + ".capacity")),
                      parse_queue_policy(m.at(prefix + ".policy")));
    for (std::size_t s = 0; s < dq.queues_.size(); ++s) {
      const auto& tokens = table.get(prefix + "." + std::to_string(s) + ".tokens");
      const auto& scores = table.get(prefix + "." + std::to_string(s) + ".scores");
      const auto& sources = table.get(prefix + "." + std::to_string(s) + ".sources");
      if (scores.rows() != tokens.rows() || sources.rows() != tokens.rows()) throw FormatError("queue: inconsistent arrays");
      for (std::size_t i = 0; i < tokens.rows(); ++i) {
        dq.queues_[s].push_back({tokens.row_vec(i), scores(i, 0), static_cast<std::size_t>(scores(i, 1)),
                                 sources.cols() ? sources.row_vec(i) : std::vector<double>{}});
      }
    }
    return dq;
  }

 private:
  std::vector<std::vector<QueueEntry>> queues_;
  std::size_t capacity_ = 1;
  QueuePolicy policy_ = QueuePolicy::Diversity;
};

}  // namespace socl::align
