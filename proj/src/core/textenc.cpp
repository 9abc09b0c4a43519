#include "lcad/textenc.hpp"

#include <cctype>

#include "lcad/error.hpp"
#include "lcad/ops.hpp"
#include "lcad/synthdata.hpp"

namespace lcad {

Vocabulary Vocabulary::standard() {
  std::vector<std::string> words = {"<pad>", "<unk>", "a", ",", ".", "and", "colorful", "image"};
  for (const auto& e : palette()) words.push_back(e.name);
  for (ShapeKind k : {ShapeKind::kCircle, ShapeKind::kSquare, ShapeKind::kTriangle}) words.emplace_back(shape_noun(k));
  return from_words(std::move(words));
}

Vocabulary Vocabulary::from_words(std::vector<std::string> words) {
  if (words.size() < 2 || words.size() > 64) throw ValidationError("vocabulary size must be in [2,64]");
  Vocabulary v;
  v.words_ = std::move(words);
  for (int i = 0; i < v.size(); ++i) {
    if (!v.lookup_.emplace(v.words_[static_cast<std::size_t>(i)], i).second) {
      throw ValidationError("duplicate vocabulary word '" + v.words_[static_cast<std::size_t>(i)] + "'");
    }
  }
  return v;
}

int Vocabulary::index(const std::string& word) const {
  auto it = lookup_.find(word);
  return it == lookup_.end() ? kUnkToken : it->second;
}

const std::string& Vocabulary::word(int index) const {
  if (index < 0 || index >= size()) throw ValidationError("token index out of range");
  return words_[static_cast<std::size_t>(index)];
}

std::vector<std::string> split_words(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(std::move(cur));
    cur.clear();
  };
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (c >= 128) throw ValidationError("description text must be ASCII");
    if (std::isspace(c)) {
      flush();
    } else if (std::ispunct(c)) {
      flush();
      out.emplace_back(1, static_cast<char>(c));
    } else {
      cur.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  flush();
  return out;
}

std::vector<int> tokenize_words(const std::vector<std::string>& words, const Vocabulary& vocab, int n_tok) {
  if (words.empty()) throw ValidationError("cannot tokenize empty text");
  std::vector<int> ids(static_cast<std::size_t>(n_tok), kPadToken);
  for (std::size_t i = 0; i < words.size() && i < ids.size(); ++i) ids[i] = vocab.index(words[i]);
  return ids;
}

std::vector<int> tokenize(const std::string& text, const Vocabulary& vocab, int n_tok) {
  return tokenize_words(split_words(text), vocab, n_tok);
}

TextEncoder::TextEncoder(const TextEncoderConfig& config, int vocab_size, nn::Rng& rng)
    : config_(config), vocab_size_(vocab_size) {
  std::normal_distribution<double> nd(0.0, 0.3);
  std::vector<double> te(static_cast<std::size_t>(vocab_size) * config.width);
  for (double& v : te) v = nd(rng);
  token_emb_ = nn::Var::from({vocab_size, config.width}, std::move(te), true);
  std::vector<double> pe(static_cast<std::size_t>(config.n_tok) * config.width);
  std::normal_distribution<double> pd(0.0, 0.1);
  for (double& v : pe) v = pd(rng);
  pos_emb_ = nn::Var::from({config.n_tok, config.width}, std::move(pe), true);
  wq_ = nn::Linear::make(config.width, config.width, rng, false);
  wk_ = nn::Linear::make(config.width, config.width, rng, false);
  wv_ = nn::Linear::make(config.width, config.width, rng, false);
  wo_ = nn::Linear::make(config.width, config.width, rng);
  for (double& w : wo_.weight.values()) w *= 0.5;
}

TextEmbedding TextEncoder::encode(std::span<const int> tokens, int batch) const {
  const int t = config_.n_tok;
  if (tokens.size() != static_cast<std::size_t>(batch) * t) {
    throw ShapeError("encode: expected " + std::to_string(batch * t) + " token ids");
  }
  TextEmbedding out;
  out.batch = batch;
  out.n_tok = t;
  out.width = config_.width;
  out.valid.resize(tokens.size());
  std::vector<double> keep(tokens.size() * static_cast<std::size_t>(config_.width));
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] < 0 || tokens[i] >= vocab_size_) {
      throw ValidationError("token index " + std::to_string(tokens[i]) + " outside vocabulary of " +
                            std::to_string(vocab_size_));
    }
    out.valid[i] = tokens[i] != kPadToken ? 1 : 0;
    std::fill_n(keep.begin() + static_cast<std::ptrdiff_t>(i * config_.width), config_.width, out.valid[i] ? 1.0 : 0.0);
  }
  nn::Var x = nn::add_positional(nn::embedding(token_emb_, tokens, batch, t), pos_emb_);
  nn::Var att = nn::attention(wq_(x), wk_(x), wv_(x), config_.heads, out.valid);
  nn::Var y = nn::add(x, wo_(att));
  out.sequence = nn::mul_const(y, keep);
  return out;
}

nn::ParamList TextEncoder::params() const {
  nn::ParamList p;
  p.push_back({"text.token_emb", token_emb_, false});
  p.push_back({"text.pos_emb", pos_emb_, false});
  wq_.collect(p, "text.wq");
  wk_.collect(p, "text.wk");
  wv_.collect(p, "text.wv");
  wo_.collect(p, "text.wo");
  return p;
}

}  // namespace lcad
