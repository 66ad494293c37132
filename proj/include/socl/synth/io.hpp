#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "socl/errors.hpp"
#include "socl/synth/corpus.hpp"

namespace socl::synth {

static_assert(std::endian::native == std::endian::little, "volume IO assumes a little-endian host");

inline constexpr char kVolumeMagic[8] = {'S', 'O', 'C', 'L', 'V', 'O', 'L', '1'};

// Layout: magic[8], dtype tag "f64\0", u32 X, u32 Y, u32 Z, X*Y*Z doubles
// (x fastest), all little-endian.
inline std::string serialize_volume(const Volume& v) {
  std::string out(kVolumeMagic, 8);
  out.append("f64\0", 4);
  for (std::size_t e : v.extents) {
    const auto u = static_cast<std::uint32_t>(e);
    out.append(reinterpret_cast<const char*>(&u), 4);
  }
  out.append(reinterpret_cast<const char*>(v.voxels.data()), v.voxels.size() * sizeof(double));
  return out;
}

inline Volume deserialize_volume(const std::string& bytes) {
  if (bytes.size() < 24 || std::memcmp(bytes.data(), kVolumeMagic, 8) != 0) throw FormatError("volume: bad magic");
  if (std::memcmp(bytes.data() + 8, "f64\0", 4) != 0) throw FormatError("volume: unsupported dtype tag");
  Extents e{};
  for (int d = 0; d < 3; ++d) {
    std::uint32_t u;
    std::memcpy(&u, bytes.data() + 12 + 4 * d, 4);
    e[d] = u;
  }
  Volume v(e);
  if (bytes.size() != 24 + v.voxels.size() * sizeof(double)) throw FormatError("volume: size does not match extents");
  std::memcpy(v.voxels.data(), bytes.data() + 24, v.voxels.size() * sizeof(double));
  return v;
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw FormatError("cannot open " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& p, const std::string& bytes) {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + p.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("write failed: " + p.string());
}

inline void write_volume(const std::filesystem::path& p, const Volume& v) { write_file(p, serialize_volume(v)); }
inline Volume read_volume(const std::filesystem::path& p) { return deserialize_volume(read_file(p)); }

// One line of corpus.jsonl. `volume` is relative to the corpus file.
struct CorpusRecord {
  std::string id;
  std::string volume;
  std::string report;
  std::vector<int> labels;
  Split split = Split::Train;
};

inline nlohmann::json to_json(const CorpusRecord& r) {
  return {{"id", r.id}, {"volume", r.volume}, {"report", r.report}, {"labels", r.labels}, {"split", to_string(r.split)}};
}

inline CorpusRecord record_from_json(const nlohmann::json& j) {
  try {
    return {j.at("id").get<std::string>(), j.at("volume").get<std::string>(), j.at("report").get<std::string>(),
            j.at("labels").get<std::vector<int>>(), parse_split(j.at("split").get<std::string>())};
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("corpus record: ") + e.what());
  }
}

// Writes <dir>/corpus.jsonl and <dir>/volumes/<id>.vol.
inline std::filesystem::path write_corpus(const std::filesystem::path& dir, const std::vector<SyntheticCase>& cases) {
  std::string lines;
  for (const auto& c : cases) {
    const std::string rel = "volumes/" + c.id + ".vol";
    write_volume(dir / rel, c.volume);
    lines += to_json(CorpusRecord{c.id, rel, c.report, c.labels, c.split}).dump() + "\n";
  }
  const auto path = dir / "corpus.jsonl";
  write_file(path, lines);
  return path;
}

inline std::vector<CorpusRecord> read_corpus(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open corpus " + path.string());
  std::vector<CorpusRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(record_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::parse_error& e) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace socl::synth
