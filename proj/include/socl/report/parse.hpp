#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "socl/report/catalog.hpp"

namespace socl::report {

struct ParsedReport {
  std::string subject;
  std::string text;
  // buckets[i] holds the sentences assigned to catalog structure i.
  std::vector<std::vector<std::string>> buckets;

  bool empty(std::size_t structure) const { return buckets[structure].empty(); }
  std::size_t instance_count() const {
    std::size_t n = 0;
    for (const auto& b : buckets) n += b.size();
    return n;
  }
};

// Maximal spans ended by '.', '!', '?' or newline, trimmed; empty spans dropped.
inline std::vector<std::string> split_sentences(std::string_view report) {
  std::vector<std::string> out;
  std::size_t start = 0;
  auto flush = [&](std::size_t end) {
    std::string s = trim(report.substr(start, end - start));
    if (!s.empty()) out.push_back(std::move(s));
    start = end + 1;
  };
  for (std::size_t i = 0; i < report.size(); ++i) {
    const char c = report[i];
    if (c == '.' || c == '!' || c == '?' || c == '\n') flush(i);
  }
  if (start < report.size()) flush(report.size());
  return out;
}

// Indices of the structures whose keywords occur in `sentence`
// (case-insensitive substring). Empty when nothing matches.
inline std::vector<std::size_t> matching_structures(std::string_view sentence, const StructureCatalog& catalog) {
  const std::string lower = to_lower(sentence);
  std::vector<std::size_t> hits;
  for (std::size_t i = 0; i < catalog.size(); ++i) {
    for (const auto& kw : catalog[i].keywords) {
      if (lower.find(kw) != std::string::npos) {
        hits.push_back(i);
        break;
      }
    }
  }
  return hits;
}

// Assigns each sentence to every structure it matches; unmatched sentences go
// to "others".
inline ParsedReport bucket(const std::vector<std::string>& sentences, const StructureCatalog& catalog) {
  ParsedReport r;
  r.buckets.resize(catalog.size());
  for (const auto& s : sentences) {
    const auto hits = matching_structures(s, catalog);
    if (hits.empty()) {
      r.buckets[catalog.others_index()].push_back(s);
    } else {
      for (std::size_t i : hits) r.buckets[i].push_back(s);
    }
  }
  return r;
}

inline ParsedReport parse_report(std::string subject, std::string text, const StructureCatalog& catalog) {
  ParsedReport r = bucket(split_sentences(text), catalog);
  r.subject = std::move(subject);
  r.text = std::move(text);
  return r;
}

}  // namespace socl::report
