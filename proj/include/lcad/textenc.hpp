#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "lcad/layers.hpp"
#include "lcad/tensor.hpp"

namespace lcad {

inline constexpr int kPadToken = 0;
inline constexpr int kUnkToken = 1;

class Vocabulary {
 public:
  /// PAD, UNK, articles, punctuation, palette colours and shape nouns.
  static Vocabulary standard();
  static Vocabulary from_words(std::vector<std::string> words);

  int index(const std::string& word) const;
  const std::string& word(int index) const;
  int size() const { return static_cast<int>(words_.size()); }
  const std::vector<std::string>& words() const { return words_; }

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, int> lookup_;
};

/// Lowercases and splits on whitespace, emitting punctuation as separate tokens.
std::vector<std::string> split_words(const std::string& text);

/// Exactly n_tok indices: unknown words map to UNK, the tail is PAD.
std::vector<int> tokenize(const std::string& text, const Vocabulary& vocab, int n_tok);
std::vector<int> tokenize_words(const std::vector<std::string>& words, const Vocabulary& vocab, int n_tok);

struct TextEmbedding {
  int batch = 0;
  int n_tok = 0;
  int width = 0;
  nn::Var sequence;                 ///< [batch, n_tok, width]; PAD rows are exactly zero
  std::vector<std::uint8_t> valid;  ///< batch * n_tok; 0 at PAD positions
};

struct TextEncoderConfig {
  int n_tok = 16;
  int width = 64;
  int heads = 1;
};

/// Learned token + positional embeddings followed by one residual
/// self-attention layer.
class TextEncoder {
 public:
  TextEncoder() = default;
  TextEncoder(const TextEncoderConfig& config, int vocab_size, nn::Rng& rng);

  /// tokens: batch * n_tok indices.
  TextEmbedding encode(std::span<const int> tokens, int batch) const;

  nn::ParamList params() const;
  const TextEncoderConfig& config() const { return config_; }
  const nn::Var& token_table() const { return token_emb_; }

 private:
  TextEncoderConfig config_;
  int vocab_size_ = 0;
  nn::Var token_emb_;
  nn::Var pos_emb_;
  nn::Linear wq_, wk_, wv_, wo_;
};

}  // namespace lcad
