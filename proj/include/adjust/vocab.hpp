#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace adjust {

struct Vocab {
  int size = 0;
  int mask_id = 0;
  std::vector<std::string> labels;  // optional, one per token when present

  Vocab() = default;
  Vocab(int size_, int mask_id_) : size(size_), mask_id(mask_id_) {
    if (mask_id < 0 || mask_id >= size) throw std::invalid_argument("Vocab: mask_id out of range");
  }
  // Builds a vocabulary from labels; the mask label is appended last.
  static Vocab with_labels(std::vector<std::string> words, const std::string& mask_label = "[M]");

  int label_id(const std::string& w) const;
};

// Fixed-length token sequence; positions equal to mask_id are missing.
class TokenString {
 public:
  TokenString() = default;
  TokenString(std::vector<int> tokens, int mask_id) : toks_(std::move(tokens)), mask_(mask_id) {}
  static TokenString all_mask(int length, const Vocab& v) {
    return TokenString(std::vector<int>(length, v.mask_id), v.mask_id);
  }

  int length() const { return static_cast<int>(toks_.size()); }
  int mask_id() const { return mask_; }
  int at(int i) const { return toks_[i]; }
  const std::vector<int>& tokens() const { return toks_; }
  bool is_masked(int i) const { return toks_[i] == mask_; }

  std::vector<int> masked_positions() const {
    std::vector<int> out;
    for (int i = 0; i < length(); ++i)
      if (is_masked(i)) out.push_back(i);
    return out;
  }
  int mask_count() const {
    int n = 0;
    for (int t : toks_) n += (t == mask_);
    return n;
  }
  bool fully_unmasked() const { return mask_count() == 0; }

  // x (+) token at position i; the position must currently be masked.
  TokenString splice(int i, int token) const {
    if (i < 0 || i >= length()) throw std::out_of_range("splice: position out of range");
    if (!is_masked(i)) throw std::invalid_argument("splice: position is not masked");
    if (token == mask_) throw std::invalid_argument("splice: cannot splice the mask token");
    TokenString out = *this;
    out.toks_[i] = token;
    return out;
  }

  bool operator==(const TokenString& o) const { return toks_ == o.toks_; }

  std::string str(const Vocab& v) const;

 private:
  std::vector<int> toks_;
  int mask_ = -1;
};

struct TokenStringHash {
  size_t operator()(const TokenString& s) const {
    uint64_t h = 1469598103934665603ULL;
    for (int t : s.tokens()) {
      h ^= static_cast<uint64_t>(t) + 0x9e3779b97f4a7c15ULL;
      h *= 1099511628211ULL;
    }
    return static_cast<size_t>(h);
  }
};

}  // namespace adjust
