#include "adjust/vocab.hpp"

#include <unordered_set>

namespace adjust {

Vocab Vocab::with_labels(std::vector<std::string> words, const std::string& mask_label) {
  std::unordered_set<std::string> seen;
  for (const auto& w : words)
    if (!seen.insert(w).second) throw std::invalid_argument("Vocab: duplicate label " + w);
  if (seen.count(mask_label)) throw std::invalid_argument("Vocab: mask label collides");
  Vocab v;
  v.labels = std::move(words);
  v.labels.push_back(mask_label);
  v.size = static_cast<int>(v.labels.size());
  v.mask_id = v.size - 1;
  return v;
}

int Vocab::label_id(const std::string& w) const {
  for (int i = 0; i < static_cast<int>(labels.size()); ++i)
    if (labels[i] == w) return i;
  throw std::invalid_argument("Vocab: unknown label " + w);
}

std::string TokenString::str(const Vocab& v) const {
  std::string out;
  for (int i = 0; i < length(); ++i) {
    if (i) out += ' ';
    if (!v.labels.empty())
      out += v.labels[toks_[i]];
    else
      out += std::to_string(toks_[i]);
  }
  return out;
}

}  // namespace adjust
