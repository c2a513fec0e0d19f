#pragma once

#include <cstddef>
#include <cstdint>
#include <istream>
#include <random>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace ntrf {

using TokenId = std::int32_t;

// A sentence as vocabulary ids. No boundary tokens are stored.
using TokenSeq = std::vector<TokenId>;

using Rng = std::mt19937_64;

inline constexpr std::string_view kUnkToken = "<unk>";

class Vocab {
 public:
  static constexpr TokenId kUnkId = 0;

  Vocab() = default;
  // `tokens[0]` must be the unknown token.
  explicit Vocab(std::vector<std::string> tokens);

  // Ranks tokens by frequency (ties lexicographic) and keeps the top
  // max_size - 1 next to <unk>.
  static Vocab build(std::istream& corpus, std::size_t max_size);
  static Vocab load(const std::string& path);
  void save(const std::string& path) const;

  std::size_t size() const { return tokens_.size(); }
  TokenId unk_id() const { return kUnkId; }
  TokenId id(std::string_view token) const;
  const std::string& token(TokenId id) const;
  bool contains(std::string_view token) const;
  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

std::vector<std::string> split_whitespace(std::string_view text);

// Throws EncodeError on empty text or more than max_length tokens.
TokenSeq encode(std::string_view text, const Vocab& vocab, int max_length);
std::string decode(const TokenSeq& seq, const Vocab& vocab);

// Length probabilities for lengths 1..m, stored at index l-1.
class LengthDist {
 public:
  LengthDist() = default;
  explicit LengthDist(std::vector<double> probs);

  static LengthDist uniform(int max_length);

  int max_length() const { return static_cast<int>(probs_.size()); }
  double prob(int length) const;
  double log_prob(int length) const;
  const std::vector<double>& probs() const { return probs_; }

  // pi0_l proportional to max(p_l, floor * max_j p_j).
  LengthDist flattened(double floor) const;

 private:
  std::vector<double> probs_;
};

class CorpusStore {
 public:
  CorpusStore() = default;
  CorpusStore(std::vector<TokenSeq> sentences, int max_length);

  // One sentence per line; blank lines are skipped and sentences longer
  // than max_length are truncated with a warning.
  static CorpusStore read(std::istream& in, const Vocab& vocab, int max_length);
  static CorpusStore read_file(const std::string& path, const Vocab& vocab, int max_length);

  std::size_t size() const { return sentences_.size(); }
  bool empty() const { return sentences_.empty(); }
  int max_length() const { return max_length_; }
  const std::vector<TokenSeq>& sentences() const { return sentences_; }
  const TokenSeq& operator[](std::size_t i) const { return sentences_[i]; }
  // Indices of the sentences of length l.
  const std::vector<std::size_t>& bucket(int length) const;
  std::size_t count(int length) const { return bucket(length).size(); }
  std::size_t token_count() const;

 private:
  std::vector<TokenSeq> sentences_;
  std::vector<std::vector<std::size_t>> buckets_;
  int max_length_ = 0;
};

LengthDist length_histogram(const CorpusStore& store);

// Uniform draws with replacement.
std::vector<TokenSeq> sample_minibatch(const CorpusStore& store, std::size_t count, Rng& rng);

}  // namespace ntrf
