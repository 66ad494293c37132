#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <string_view>
#include <vector>

#include "socl/errors.hpp"
#include "socl/report/parse.hpp"
#include "socl/synth/taxonomy.hpp"
#include "socl/ten/rng.hpp"
#include "socl/text/embedder.hpp"
#include "socl/vision/structure.hpp"

namespace socl::synth {

using vision::Extents;
using vision::Volume;

enum class Split { Train, Val, Test };

inline const char* to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "?";
}

inline Split parse_split(std::string_view s) {
  if (s == "train") return Split::Train;
  if (s == "val") return Split::Val;
  if (s == "test") return Split::Test;
  throw ConfigError("split must be train, val or test, got '" + std::string(s) + "'");
}

// finding < 0 means normal. location, grade and variant only pick wording
// and imprint geometry; the label depends on the finding alone.
struct StructureState {
  int finding = -1;
  int location = 0;
  int grade = 0;
  int variant = 0;

  bool abnormal() const { return finding >= 0; }
  bool operator==(const StructureState&) const = default;
};

struct CaseSpec {
  std::size_t subject = 0;
  std::vector<StructureState> states;  // one per anatomical structure
  std::uint64_t seed = 0;
};

struct SyntheticCase {
  std::string id;
  CaseSpec spec;
  Volume volume;
  std::string report;
  std::vector<int> labels;  // multi-hot, Taxonomy::n_labels() long
  Split split = Split::Train;
};

struct GeneratorConfig {
  double prevalence = 0.3;
  Extents volume{32, 32, 16};
  Extents patch{8, 8, 8};
  double noise = 0.2;
  double base_level = 0.2;   // amplitude of the structure signature
  double lesion_level = 1.0; // finding f adds lesion_level * (1 + f / 2)
  double train_fraction = 0.6;
  double val_fraction = 0.2;
};

inline void validate(const GeneratorConfig& c, const Taxonomy& tax) {
  if (!(c.prevalence >= 0.0 && c.prevalence <= 1.0)) throw ParameterError("prevalence outside [0, 1]");
  if (!(c.noise >= 0.0)) throw ParameterError("noise must be non-negative");
  if (!(c.train_fraction >= 0.0 && c.val_fraction >= 0.0 && c.train_fraction + c.val_fraction <= 1.0)) {
    throw ParameterError("split fractions must be non-negative with train + val <= 1");
  }
  const Extents g = vision::patch_grid_extents(c.volume, c.patch);
  if (g[0] * g[1] * g[2] < tax.n_structures()) {
    throw ParameterError("volume has fewer patches than structures");
  }
  for (int d = 0; d < 3; ++d)
    if (c.patch[d] < 2) throw ParameterError("patch extents must be >= 2 for lesion quadrants");
}

inline std::string fill_template(std::string_view tmpl, const StructureTemplate& st, const StructureState& s) {
  std::string grade = kGradeWords.at(static_cast<std::size_t>(s.grade));
  std::string cap = grade;
  cap[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(cap[0])));
  const std::pair<std::string_view, std::string> slots[] = {
      {"{grade}", grade},
      {"{Grade}", cap},
      {"{finding}", st.findings.at(static_cast<std::size_t>(s.finding))},
      {"{loc}", st.locations.at(static_cast<std::size_t>(s.location))},
  };
  std::string out;
  for (std::size_t i = 0; i < tmpl.size();) {
    bool hit = false;
    for (const auto& [key, value] : slots) {
      if (tmpl.substr(i, key.size()) == key) {
        out += value;
        i += key.size();
        hit = true;
        break;
      }
    }
    if (!hit) out.push_back(tmpl[i++]);
  }
  return out;
}

inline std::string sentence_for(const StructureTemplate& st, const StructureState& s) {
  if (!s.abnormal()) return st.normal.at(static_cast<std::size_t>(s.variant) % st.normal.size());
  return fill_template(st.abnormal.at(static_cast<std::size_t>(s.variant) % st.abnormal.size()), st, s);
}

inline std::string render_report(const Taxonomy& tax, const std::vector<StructureState>& states) {
  std::string out;
  for (std::size_t i = 0; i < states.size(); ++i) {
    if (i) out.push_back(' ');
    out += sentence_for(tax.structure(i), states[i]);
  }
  return out;
}

inline std::vector<int> labels_for(const Taxonomy& tax, const std::vector<StructureState>& states) {
  std::vector<int> y(tax.n_labels(), 0);
  for (std::size_t i = 0; i < states.size(); ++i)
    if (states[i].abnormal()) y[2 * i + static_cast<std::size_t>(states[i].finding)] = 1;
  return y;
}

// Rule labeler: a label is set iff its phrase occurs (as whole words) in some
// sentence with no "no"/"without" token before it in that sentence.
inline std::vector<int> label_report(std::string_view report, const Taxonomy& tax) {
  std::vector<int> y(tax.n_labels(), 0);
  for (const auto& sentence : report::split_sentences(report)) {
    const auto words = text::tokenize(sentence);
    std::size_t first_cue = words.size();
    for (std::size_t k = 0; k < words.size(); ++k)
      if (words[k] == "no" || words[k] == "without") {
        first_cue = k;
        break;
      }
    for (std::size_t l = 0; l < tax.n_labels(); ++l) {
      const auto& ph = tax.phrase_tokens(l);
      if (ph.empty() || ph.size() > words.size()) continue;
      for (std::size_t k = 0; k < first_cue && k + ph.size() <= words.size(); ++k) {
        if (std::equal(ph.begin(), ph.end(), words.begin() + static_cast<std::ptrdiff_t>(k))) {
          y[l] = 1;
          break;
        }
      }
    }
  }
  return y;
}

// Patch indices owned by structure s: a contiguous block of
// floor(N^v / n_structures) patches.
inline std::vector<std::size_t> structure_region(std::size_t s, std::size_t n_structures, std::size_t n_patches) {
  const std::size_t per = n_patches / n_structures;
  std::vector<std::size_t> r(per);
  std::iota(r.begin(), r.end(), s * per);
  return r;
}

// Fixed +-1 code of structure s over a 4x4x4 grid of cells within a patch.
// Codes do not depend on the corpus seed, so a structure looks the same in
// every corpus; that is what lets content-based attention find its region.
inline std::vector<double> structure_signature(std::size_t s) {
  ten::Rng rng(ten::mix_seed(0x5167, s));
  std::vector<double> code(64);
  for (double& x : code) x = rng.below(2) ? 1.0 : -1.0;
  return code;
}

// Signature baseline per structure region plus lesion blocks plus Gaussian
// noise. A lesion fills one octant-pair of each covered patch: the finding
// picks the z half, the location the x half; the grade covers 1, 2 or 4
// patches.
inline Volume render_volume(const CaseSpec& spec, const GeneratorConfig& c) {
  Volume v(c.volume, 0.0);
  const Extents g = vision::patch_grid_extents(c.volume, c.patch);
  const std::size_t n_patches = g[0] * g[1] * g[2];
  const std::size_t ns = spec.states.size();
  auto patch_origin = [&](std::size_t j) {
    return Extents{(j % g[0]) * c.patch[0], ((j / g[0]) % g[1]) * c.patch[1], (j / (g[0] * g[1])) * c.patch[2]};
  };
  auto cell = [&](std::size_t x, std::size_t y, std::size_t z) {
    return (x * 4 / c.patch[0]) + 4 * ((y * 4 / c.patch[1]) + 4 * (z * 4 / c.patch[2]));
  };
  for (std::size_t s = 0; s < ns; ++s) {
    const auto region = structure_region(s, ns, n_patches);
    const auto code = structure_signature(s);
    for (std::size_t j : region) {
      const Extents o = patch_origin(j);
      for (std::size_t z = 0; z < c.patch[2]; ++z)
        for (std::size_t y = 0; y < c.patch[1]; ++y)
          for (std::size_t x = 0; x < c.patch[0]; ++x) v.at(o[0] + x, o[1] + y, o[2] + z) = c.base_level * code[cell(x, y, z)];
    }
    const StructureState& st = spec.states[s];
    if (!st.abnormal()) continue;
    const std::size_t cover = std::min<std::size_t>(std::size_t{1} << st.grade, region.size());
    const double amp = c.lesion_level * (1.0 + 0.5 * st.finding);
    const std::size_t hx = c.patch[0] / 2, hz = c.patch[2] / 2;
    for (std::size_t k = 0; k < cover; ++k) {
      const Extents o = patch_origin(region[k]);
      const std::size_t x0 = st.location == 0 ? 0 : hx, z0 = st.finding == 0 ? 0 : hz;
      for (std::size_t z = z0; z < z0 + hz; ++z)
        for (std::size_t y = 0; y < c.patch[1]; ++y)
          for (std::size_t x = x0; x < x0 + hx; ++x) v.at(o[0] + x, o[1] + y, o[2] + z) += amp;
    }
  }
  if (c.noise > 0.0) {
    ten::Rng rng(ten::mix_seed(spec.seed, 0x401e));
    for (double& x : v.voxels) x += c.noise * rng.normal();
  }
  return v;
}

inline CaseSpec sample_spec(std::size_t subject, std::uint64_t case_seed, const Taxonomy& tax, double prevalence) {
  CaseSpec spec;
  spec.subject = subject;
  spec.seed = case_seed;
  ten::Rng rng(ten::mix_seed(case_seed, 0x57a7));
  for (std::size_t i = 0; i < tax.n_structures(); ++i) {
    const auto& st = tax.structure(i);
    StructureState s;
    if (rng.uniform() < prevalence) {
      s.finding = static_cast<int>(rng.below(2));
      s.location = static_cast<int>(rng.below(2));
      s.grade = static_cast<int>(rng.below(kGradeWords.size()));
      s.variant = static_cast<int>(rng.below(st.abnormal.size()));
    } else {
      s.variant = static_cast<int>(rng.below(st.normal.size()));
    }
    spec.states.push_back(s);
  }
  return spec;
}

inline std::string case_id(std::size_t i) {
  std::string n = std::to_string(i);
  return "case" + std::string(n.size() < 5 ? 5 - n.size() : 0, '0') + n;
}

// Split sizes: round(n * train), round(n * val), remainder to test.
inline std::vector<Split> assign_splits(std::size_t n, double train_fraction, double val_fraction, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  ten::Rng rng(ten::mix_seed(seed, 0x5b11));
  rng.shuffle(order);
  const auto n_train = static_cast<std::size_t>(std::llround(static_cast<double>(n) * train_fraction));
  const auto n_val = std::min(n - n_train, static_cast<std::size_t>(std::llround(static_cast<double>(n) * val_fraction)));
  std::vector<Split> out(n, Split::Test);
  for (std::size_t k = 0; k < n; ++k) {
    if (k < n_train) out[order[k]] = Split::Train;
    else if (k < n_train + n_val) out[order[k]] = Split::Val;
  }
  return out;
}

inline std::vector<SyntheticCase> generate_corpus(std::size_t n, const Taxonomy& tax, const GeneratorConfig& c,
                                                  std::uint64_t seed) {
  if (n == 0) throw ParameterError("generate_corpus: n must be >= 1");
  validate(c, tax);
  const auto splits = assign_splits(n, c.train_fraction, c.val_fraction, seed);
  std::vector<SyntheticCase> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    SyntheticCase sc;
    sc.id = case_id(i);
    sc.spec = sample_spec(i, ten::mix_seed(seed, 0x1000 + i), tax, c.prevalence);
    sc.volume = render_volume(sc.spec, c);
    sc.report = render_report(tax, sc.spec.states);
    sc.labels = labels_for(tax, sc.spec.states);
    sc.split = splits[i];
    out.push_back(std::move(sc));
  }
  return out;
}

inline std::vector<SyntheticCase> generate_corpus(std::size_t n, const report::StructureCatalog& catalog,
                                                  const GeneratorConfig& c, std::uint64_t seed) {
  return generate_corpus(n, Taxonomy::for_catalog(catalog), c, seed);
}

}  // namespace socl::synth
