#include "harmon/tokenizer/vocab.hpp"

#include <algorithm>
#include <cctype>

#include "harmon/common.hpp"

namespace harmon::tok {

const Vocab& Vocab::standard() {
  static const Vocab v({
      "<pad>", "<bos>", "<eos>", "<img>",
      // prompt templates
      "user:", "assistant:", "\n", "generate", "an", "image",
      // caption grammar
      "a", "at", "the", "and", "top", "left", "bottom", "right",
      // palette
      "red", "green", "blue", "yellow",
      // shapes
      "square", "disk", "triangle",
      // single-token positions (answers)
      "top-left", "top-right", "bottom-left", "bottom-right",
      // counts
      "one", "two", "three",
      // question words
      "what", "color", "shape", "where", "is", "how", "many", "objects", "are", "there", "?",
      "object",
  });
  return v;
}

Vocab::Vocab(std::vector<std::string> words) : words_(std::move(words)) {
  for (std::size_t i = 0; i < words_.size(); ++i) {
    if (!ids_.emplace(words_[i], static_cast<int>(i)).second)
      throw Error("vocab: duplicate word '" + words_[i] + "'");
  }
  if (size() <= kImg || words_[kPad] != "<pad>" || words_[kBos] != "<bos>" ||
      words_[kEos] != "<eos>" || words_[kImg] != "<img>")
    throw Error("vocab: specials must occupy ids 0..3");
}

int Vocab::id(const std::string& w) const {
  auto it = ids_.find(w);
  if (it == ids_.end()) throw TokenizeError("unknown word '" + w + "'");
  return it->second;
}

const std::string& Vocab::word(int id) const {
  if (id < 0 || id >= size()) throw TokenizeError("token id " + std::to_string(id) + " out of range");
  return words_[static_cast<std::size_t>(id)];
}

std::vector<int> tokenize(const Vocab& v, const std::string& text) {
  std::vector<int> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) {
      out.push_back(v.id(cur));
      cur.clear();
    }
  };
  for (char c : text) {
    if (c == '\n') {
      flush();
      out.push_back(v.id("\n"));
    } else if (std::isspace(static_cast<unsigned char>(c))) {
      flush();
    } else {
      cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
  }
  flush();
  return out;
}

std::string detokenize(const Vocab& v, const std::vector<int>& ids) {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) out += " ";
    out += v.word(ids[i]);
  }
  return out;
}

}  // namespace harmon::tok
