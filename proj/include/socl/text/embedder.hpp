#pragma once

#include <cctype>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "socl/report/parse.hpp"
#include "socl/ten/checkpoint.hpp"
#include "socl/ten/functional.hpp"
#include "socl/ten/rng.hpp"

namespace socl::text {

// Lowercased runs of ASCII letters and digits.
inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

// Per-structure textual observation tokens of one subject; absent where the
// structure's sentence bucket is empty.
struct TextObservationTokens {
  std::string subject;
  std::vector<std::optional<std::vector<double>>> tokens;

  bool present(std::size_t i) const { return tokens[i].has_value(); }
};

// Frozen hashed bag-of-words encoder: bucket counts times a fixed random
// projection, l2-normalized.
class TextEmbedder {
 public:
  static constexpr std::size_t kDefaultBuckets = 4096;
  static constexpr std::size_t kDefaultDim = 64;

  TextEmbedder(std::uint64_t seed = 0, std::size_t buckets = kDefaultBuckets, std::size_t dim = kDefaultDim)
      : seed_(seed), projection_(buckets, dim) {
    if (buckets == 0 || dim == 0) throw ParameterError("TextEmbedder: empty dimensions");
    ten::Rng rng(ten::mix_seed(seed, 0x7e47));
    const double s = 1.0 / std::sqrt(static_cast<double>(buckets));
    for (double& v : projection_.values()) v = s * rng.normal();
  }

  std::uint64_t seed() const { return seed_; }
  std::size_t buckets() const { return projection_.rows(); }
  std::size_t dim() const { return projection_.cols(); }
  const ten::Mat& projection() const { return projection_; }

  // Seeded FNV-1a over the word bytes.
  std::size_t bucket_of(std::string_view word) const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto feed = [&h](unsigned char b) {
      h ^= b;
      h *= 0x100000001b3ULL;
    };
    for (int i = 0; i < 8; ++i) feed(static_cast<unsigned char>(seed_ >> (8 * i)));
    for (char c : word) feed(static_cast<unsigned char>(c));
    return static_cast<std::size_t>(h % projection_.rows());
  }

  // Sparse bucket counts of the concatenated sentences.
  // Bucket counts divided by their gcd: a bucket repeated m times reduces to
  // the same integers, so repetition is invisible bit for bit.
  std::map<std::size_t, std::size_t> counts(const std::vector<std::string>& sentences) const {
    std::map<std::size_t, std::size_t> c;
    for (const auto& s : sentences)
      for (const auto& w : tokenize(s)) ++c[bucket_of(w)];
    std::size_t g = 0;
    for (const auto& [b, n] : c) g = std::gcd(g, n);
    for (auto& [b, n] : c) n /= g;
    return c;
  }

  // One embedding for a structure's whole sentence bucket; nullopt when the
  // bucket is empty (or contains no words).
  std::optional<std::vector<double>> embed_structure(const std::vector<std::string>& sentences) const {
    const auto c = counts(sentences);
    if (c.empty()) return std::nullopt;
    std::vector<double> v(dim(), 0.0);
    for (const auto& [b, n] : c) {
      auto row = projection_.row_span(b);
      for (std::size_t j = 0; j < v.size(); ++j) v[j] += static_cast<double>(n) * row[j];
    }
    return ten::l2_normalize(v);
  }

  TextObservationTokens embed(const report::ParsedReport& r) const {
    TextObservationTokens out;
    out.subject = r.subject;
    for (const auto& b : r.buckets) out.tokens.push_back(embed_structure(b));
    return out;
  }

  void save_to(ten::ArrayTable& table) const {
    table.put("text.projection", projection_);
    table.meta()["text.seed"] = std::to_string(seed_);
  }

  static TextEmbedder load_from(const ten::ArrayTable& table) {
    TextEmbedder e;
    e.projection_ = table.get("text.projection");
    e.seed_ = std::stoull(table.meta().at("text.seed"));
    return e;
  }

 private:
  std::uint64_t seed_;
  ten::Mat projection_;
};

}  // namespace socl::text
