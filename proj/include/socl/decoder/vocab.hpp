#pragma once

#include <cctype>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "socl/errors.hpp"
#include "socl/ten/checkpoint.hpp"

namespace socl::decoder {

using TokenId = int;

// Lowercased alphanumeric words plus "." as its own token. Other
// punctuation is dropped; '!' and '?' map to ".".
inline std::vector<std::string> word_tokens(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(std::move(cur));
    cur.clear();
  };
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else {
      flush();
      if (ch == '.' || ch == '!' || ch == '?') out.emplace_back(".");
    }
  }
  flush();
  return out;
}

// Inverse of word_tokens for sentence-cased text: words joined by spaces,
// "." attached to the previous word, first word of each sentence capitalized.
inline std::string detokenize(const std::vector<std::string>& words) {
  std::string out;
  bool sentence_start = true;
  for (const auto& w : words) {
    if (w == ".") {
      out += ".";
      sentence_start = true;
      continue;
    }
    if (!out.empty()) out.push_back(' ');
    std::string s = w;
    if (sentence_start && !s.empty()) s[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
    out += s;
    sentence_start = false;
  }
  return out;
}

class Vocab {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kBos = 1;
  static constexpr TokenId kEos = 2;
  static constexpr TokenId kUnk = 3;

  Vocab() : Vocab(std::vector<std::string>{}) {}

  // Reserved tokens first, then `words` in order with duplicates dropped.
  explicit Vocab(const std::vector<std::string>& words) {
    for (const char* r : {"<pad>", "<bos>", "<eos>", "<unk>"}) add(r);
    for (const auto& w : words) add(w);
  }

  // Sorted word set of the given texts, so the mapping does not depend on
  // text order.
  static Vocab build(const std::vector<std::string>& texts) {
    std::map<std::string, int> seen;
    for (const auto& t : texts)
      for (auto& w : word_tokens(t)) seen.emplace(std::move(w), 0);
    std::vector<std::string> words;
    for (const auto& [w, _] : seen) words.push_back(w);
    return Vocab(words);
  }

  std::size_t size() const { return tokens_.size(); }
  const std::string& token(TokenId id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) throw ParameterError("vocab: id " + std::to_string(id) + " out of range");
    return tokens_[static_cast<std::size_t>(id)];
  }
  TokenId id(const std::string& word) const {
    auto it = ids_.find(word);
    return it == ids_.end() ? kUnk : it->second;
  }
  bool contains(const std::string& word) const { return ids_.count(word) > 0; }
  const std::vector<std::string>& tokens() const { return tokens_; }

  // [BOS, words..., EOS]
  std::vector<TokenId> encode(std::string_view text) const {
    std::vector<TokenId> out{kBos};
    for (const auto& w : word_tokens(text)) out.push_back(id(w));
    out.push_back(kEos);
    return out;
  }

  // Drops reserved tokens other than UNK and stops at the first EOS.
  std::string decode(const std::vector<TokenId>& ids) const {
    std::vector<std::string> words;
    for (TokenId i : ids) {
      if (i == kEos) break;
      if (i == kPad || i == kBos) continue;
      words.push_back(token(i));
    }
    return detokenize(words);
  }

  void save_to(ten::ArrayTable& table) const {
    std::string joined;
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
      if (i) joined.push_back('\n');
      joined += tokens_[i];
    }
    table.meta()["decoder.vocab"] = joined;
  }

  static Vocab load_from(const ten::ArrayTable& table) {
    auto it = table.meta().find("decoder.vocab");
    if (it == table.meta().end()) throw FormatError("checkpoint has no decoder.vocab");
    std::vector<std::string> toks;
    std::istringstream in(it->second);
    for (std::string line; std::getline(in, line);) toks.push_back(line);
    if (toks.size() < 4 || toks[0] != "<pad>" || toks[1] != "<bos>" || toks[2] != "<eos>" || toks[3] != "<unk>") {
      throw FormatError("decoder.vocab: reserved tokens missing");
    }
    return Vocab(std::vector<std::string>(toks.begin() + 4, toks.end()));
  }

 private:
  void add(const std::string& w) {
    if (ids_.count(w)) return;
    ids_.emplace(w, static_cast<TokenId>(tokens_.size()));
    tokens_.push_back(w);
  }

  std::vector<std::string> tokens_;
  std::map<std::string, TokenId> ids_;
};

}  // namespace socl::decoder
