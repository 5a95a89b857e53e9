#pragma once

#include <algorithm>
#include <cctype>
#include <string>
#include <vector>

#include "t2d/core/rng.hpp"
#include "t2d/core/tensor.hpp"

namespace t2d {

struct PromptEmbedding {
  Tensor tokens;  // [n_tokens, dim]
  std::string source_text;

  int token_count() const { return tokens.dim(0); }
  int dim() const { return tokens.dim(1); }
};

inline std::vector<std::string> tokenize_words(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    if (std::isalnum(static_cast<unsigned char>(ch))) {
      cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
    } else if (!cur.empty()) {
      out.push_back(cur);
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

// Frozen prompt embedder. The real-model adapter would delegate to a CLIP-style
// encoder; the toy stack uses a fixed hash-seeded embedding per word, which is
// deterministic across runs and platforms.
class TextEncoder {
 public:
  virtual ~TextEncoder() = default;
  virtual int dim() const = 0;
  virtual PromptEmbedding encode(const std::string& text) const = 0;

  // Single vector for a class name; multi-word names are mean-pooled.
  virtual Tensor encode_class_name(const std::string& name) const {
    PromptEmbedding e = encode(name);
    Tensor out({dim()});
    if (e.token_count() == 0) return out;
    for (int t = 0; t < e.token_count(); ++t)
      for (int d = 0; d < dim(); ++d) out[d] += e.tokens.at(t, d);
    const float inv = 1.f / static_cast<float>(e.token_count());
    for (int d = 0; d < dim(); ++d) out[d] *= inv;
    return out;
  }
};

class HashedTextEncoder final : public TextEncoder {
 public:
  explicit HashedTextEncoder(int dim = 32, uint64_t seed = 0x7e57) : dim_(dim), seed_(seed) {}

  int dim() const override { return dim_; }

  PromptEmbedding encode(const std::string& text) const override {
    const auto words = tokenize_words(text);
    PromptEmbedding e;
    e.source_text = text;
    if (words.empty()) {
      e.tokens = Tensor({1, dim_});  // blank token keeps downstream shapes valid
      return e;
    }
    e.tokens = Tensor({static_cast<int>(words.size()), dim_});
    for (size_t w = 0; w < words.size(); ++w) {
      Rng rng = Rng::for_stream(seed_, word_hash(words[w]));
      for (int d = 0; d < dim_; ++d)
        e.tokens.at(static_cast<int>(w), d) = static_cast<float>(rng.normal());
    }
    return e;
  }

 private:
  static uint64_t word_hash(const std::string& w) {
    uint64_t h = 1469598103934665603ULL;  // FNV-1a
    for (unsigned char c : w) {
      h ^= c;
      h *= 1099511628211ULL;
    }
    return h;
  }

  int dim_;
  uint64_t seed_;
};

}  // namespace t2d
