#pragma once

#include <algorithm>
#include <array>
#include <string>
#include <string_view>
#include <vector>

#include "socl/errors.hpp"
#include "socl/report/catalog.hpp"
#include "socl/text/embedder.hpp"

namespace socl::synth {

inline constexpr std::array<const char*, 3> kGradeWords = {"small", "moderate", "large"};

// Report vocabulary of one anatomical structure in the synthetic corpus.
// Abnormal templates use {grade}, {Grade}, {finding} and {loc} slots.
struct StructureTemplate {
  std::string structure;                 // catalog name
  std::array<std::string, 2> findings;  // label phrases
  std::array<std::string, 2> locations;
  std::vector<std::string> normal;
  std::vector<std::string> abnormal;
};

inline const std::vector<StructureTemplate>& chest_templates() {
  static const std::vector<StructureTemplate> t = {
      {"lung",
       {"nodule", "consolidation"},
       {"left", "right"},
       {"The lungs are clear without nodule or consolidation.", "No pulmonary nodule or consolidation is seen."},
       {"There is a {grade} {finding} in the {loc} lung.", "A {grade} {finding} is seen in the {loc} lung."}},
      {"trachea and bronchie",
       {"bronchiectasis", "mucus plugging"},
       {"upper", "lower"},
       {"The trachea and bronchi are patent without bronchiectasis or mucus plugging.",
        "No bronchiectasis or mucus plugging of the bronchi."},
       {"There is {grade} {finding} in the {loc} bronchi.", "{Grade} {finding} is noted in the {loc} bronchial tree."}},
      {"mediastinum and heart",
       {"pericardial effusion", "lymphadenopathy"},
       {"anterior", "posterior"},
       {"The heart and mediastinum are normal without pericardial effusion or lymphadenopathy.",
        "No pericardial effusion or mediastinal lymphadenopathy."},
       {"There is {grade} {finding} in the {loc} mediastinum.", "{Grade} {finding} is seen in the {loc} mediastinum."}},
      {"esophagus",
       {"wall thickening", "hiatal hernia"},
       {"upper", "lower"},
       {"The esophagus is normal without wall thickening or hiatal hernia.", "No esophageal wall thickening or hiatal hernia."},
       {"There is {grade} {finding} of the {loc} esophagus.", "{Grade} esophageal {finding} is seen in the {loc} segment."}},
      {"pleura",
       {"pleural effusion", "pleural thickening"},
       {"left", "right"},
       {"No pleural effusion or pleural thickening.", "The pleura is normal without pleural effusion or pleural thickening."},
       {"There is a {grade} {loc} {finding}.", "A {grade} {finding} is present on the {loc} side."}},
      {"bone",
       {"fracture", "lytic lesion"},
       {"left", "right"},
       {"No fracture or lytic lesion in the visualized bones.",
        "The osseous structures are intact without fracture or lytic lesion."},
       {"There is a {grade} {finding} of a {loc} rib.", "A {grade} {loc} rib {finding} is seen."}},
      {"thyroid",
       {"goiter", "thyroid cyst"},
       {"left", "right"},
       {"The thyroid is normal without goiter or thyroid cyst.", "No goiter or thyroid cyst."},
       {"There is a {grade} {finding} in the {loc} thyroid lobe.", "A {grade} {finding} is noted in the {loc} thyroid."}},
      {"breast",
       {"breast mass", "gynecomastia"},
       {"left", "right"},
       {"The breasts are unremarkable without breast mass or gynecomastia.", "No breast mass or gynecomastia."},
       {"There is a {grade} {finding} in the {loc} breast.", "{Grade} {finding} is seen in the {loc} breast."}},
      {"abdomen",
       {"hepatic steatosis", "renal cyst"},
       {"left", "right"},
       {"The visualized upper abdomen is normal without hepatic steatosis or renal cyst.",
        "No hepatic steatosis or renal cyst in the abdomen."},
       {"There is {grade} {finding} in the {loc} upper abdomen.", "{Grade} {finding} is noted in the {loc} abdomen."}},
  };
  return t;
}

// Abnormality label space: two findings per anatomical structure, in
// structure order.
class Taxonomy {
 public:
  Taxonomy() = default;
  explicit Taxonomy(std::vector<StructureTemplate> s) : structures_(std::move(s)) {
    for (const auto& st : structures_)
      for (const auto& f : st.findings) phrases_.push_back(text::tokenize(f));
  }

  static Taxonomy chest(std::size_t n_structures) {
    const auto& all = chest_templates();
    if (n_structures < 1 || n_structures > all.size()) {
      throw ParameterError("taxonomy: 1.." + std::to_string(all.size()) + " structures supported");
    }
    return Taxonomy(std::vector<StructureTemplate>(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n_structures)));
  }

  // Templates for the anatomical entries of `catalog` (all but "others"),
  // matched by name.
  static Taxonomy for_catalog(const report::StructureCatalog& catalog) {
    std::vector<StructureTemplate> out;
    for (std::size_t i = 0; i + 1 < catalog.size(); ++i) {
      const auto& all = chest_templates();
      auto it = std::find_if(all.begin(), all.end(), [&](const auto& t) { return t.structure == catalog[i].name; });
      if (it == all.end()) throw ParameterError("taxonomy: no report templates for structure '" + catalog[i].name + "'");
      out.push_back(*it);
    }
    if (out.empty()) throw ParameterError("taxonomy: catalog has no anatomical structures");
    return Taxonomy(std::move(out));
  }

  std::size_t n_structures() const { return structures_.size(); }
  std::size_t n_labels() const { return phrases_.size(); }
  const StructureTemplate& structure(std::size_t i) const { return structures_.at(i); }
  const std::vector<StructureTemplate>& structures() const { return structures_; }
  const std::vector<std::string>& phrase_tokens(std::size_t label) const { return phrases_.at(label); }

  std::vector<std::string> label_names() const {
    std::vector<std::string> out;
    for (const auto& s : structures_)
      for (const auto& f : s.findings) out.push_back(s.structure + ": " + f);
    return out;
  }

 private:
  std::vector<StructureTemplate> structures_;
  std::vector<std::vector<std::string>> phrases_;
};

}  // namespace socl::synth
