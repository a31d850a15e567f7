#pragma once

#include <string>
#include <unordered_map>
#include <vector>

namespace harmon::tok {

// Closed word-level vocabulary. Ids 0..3 are reserved specials; everything else
// is a lowercase word (the newline counts as a word so prompt templates keep
// their line break through tokenization).
class Vocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kImg = 3;

  // The fixed model vocabulary (specials + grammar + template words).
  static const Vocab& standard();
  // Restores from an ordered word list, e.g. out of a checkpoint manifest.
  explicit Vocab(std::vector<std::string> words);

  int size() const { return static_cast<int>(words_.size()); }
  const std::vector<std::string>& words() const { return words_; }
  bool contains(const std::string& w) const { return ids_.count(w) != 0; }
  // TokenizeError on unknown words.
  int id(const std::string& w) const;
  const std::string& word(int id) const;

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, int> ids_;
};

// Case-insensitive; splits on whitespace, newlines become the "\n" token.
// "" -> [].
std::vector<int> tokenize(const Vocab& v, const std::string& text);
// Joins with single spaces; inverse of tokenize on grammar sentences.
std::string detokenize(const Vocab& v, const std::vector<int>& ids);

}  // namespace harmon::tok
