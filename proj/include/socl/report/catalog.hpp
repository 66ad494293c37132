#pragma once

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "socl/errors.hpp"

namespace socl::report {

inline std::string to_lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

inline std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

struct Structure {
  std::string name;
  std::vector<std::string> keywords;  // lowercase phrases
};

// Ordered structure list. The last entry is the keyword-less "others"
// catch-all.
class StructureCatalog {
 public:
  StructureCatalog() = default;
  explicit StructureCatalog(std::vector<Structure> structures) : structures_(std::move(structures)) {
    for (auto& s : structures_)
      for (auto& k : s.keywords) k = to_lower(trim(k));
    validate();
  }

  std::size_t size() const { return structures_.size(); }
  const Structure& operator[](std::size_t i) const { return structures_[i]; }
  const std::vector<Structure>& structures() const { return structures_; }
  std::size_t others_index() const { return structures_.size() - 1; }

  std::size_t index_of(std::string_view name) const {
    for (std::size_t i = 0; i < structures_.size(); ++i)
      if (structures_[i].name == name) return i;
    throw ParameterError("catalog: no structure named '" + std::string(name) + "'");
  }

  // Plain-text format, one structure per line, in order:
  //
  //   # comment
  //   lung = lung, lungs, pulmonary
  //   others =
  static StructureCatalog parse(std::string_view text) {
    std::vector<Structure> out;
    std::istringstream in{std::string(text)};
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const std::string t = trim(line);
      if (t.empty() || t[0] == '#') continue;
      const auto eq = t.find('=');
      if (eq == std::string::npos) {
        throw ConfigError("catalog line " + std::to_string(lineno) + ": expected 'name = keyword, ...'");
      }
      Structure s;
      s.name = trim(std::string_view(t).substr(0, eq));
      std::istringstream kws(t.substr(eq + 1));
      std::string kw;
      while (std::getline(kws, kw, ',')) {
        kw = trim(kw);
        if (!kw.empty()) s.keywords.push_back(kw);
      }
      out.push_back(std::move(s));
    }
    try {
      return StructureCatalog(std::move(out));
    } catch (const ParameterError& e) {
      throw ConfigError(e.what());
    }
  }

  static StructureCatalog load(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("catalog: cannot read " + path.string());
    std::stringstream ss;
    ss << f.rdbuf();
    return parse(ss.str());
  }

  std::string to_text() const {
    std::string out;
    for (const auto& s : structures_) {
      out += s.name + " =";
      for (std::size_t i = 0; i < s.keywords.size(); ++i) out += (i ? ", " : " ") + s.keywords[i];
      out += "\n";
    }
    return out;
  }

  // The first `n_anatomical` entries of the chest catalog followed by "others".
  static StructureCatalog chest(std::size_t n_anatomical = 9);

 private:
  void validate() const {
    if (structures_.empty()) throw ParameterError("catalog: no structures");
    std::set<std::string> names;
    for (std::size_t i = 0; i < structures_.size(); ++i) {
      const auto& s = structures_[i];
      if (s.name.empty()) throw ParameterError("catalog: empty structure name");
      if (!names.insert(s.name).second) throw ParameterError("catalog: duplicate structure '" + s.name + "'");
      const bool last = i + 1 == structures_.size();
      if (last && !s.keywords.empty()) {
        throw ParameterError("catalog: last entry '" + s.name + "' must be the keyword-less catch-all");
      }
      if (!last && s.keywords.empty()) throw ParameterError("catalog: structure '" + s.name + "' has no keywords");
    }
  }

  std::vector<Structure> structures_;
};

// Chest CT structures in the usual reporting order.
inline StructureCatalog StructureCatalog::chest(std::size_t n_anatomical) {
  static const std::vector<Structure> all = {
      {"lung", {"lung", "pulmonary"}},
      {"trachea and bronchie", {"trachea", "tracheal", "bronchi", "bronchial"}},
      {"mediastinum and heart", {"heart", "cardiac", "mediastin", "pericardial"}},
      {"esophagus", {"esophagus", "esophageal"}},
      {"pleura", {"pleura", "pleural"}},
      {"bone", {"bone", "osseous", "rib", "vertebra"}},
      {"thyroid", {"thyroid"}},
      {"breast", {"breast"}},
      {"abdomen", {"abdomen", "abdominal", "liver", "kidney"}},
  };
  if (n_anatomical < 1 || n_anatomical > all.size()) {
    throw ParameterError("catalog: chest catalog has 1.." + std::to_string(all.size()) + " structures");
  }
  std::vector<Structure> s(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n_anatomical));
  s.push_back({"others", {}});
  return StructureCatalog(std::move(s));
}

}  // namespace socl::report
