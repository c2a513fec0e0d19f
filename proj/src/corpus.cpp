#include "ntrf/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "ntrf/errors.hpp"
#include "ntrf/logging.hpp"

namespace ntrf {

Vocab::Vocab(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  if (tokens_.size() < 2) throw IngestionError("vocabulary needs at least 2 entries");
  if (tokens_[0] != kUnkToken) throw IngestionError("vocabulary must start with " + std::string(kUnkToken));
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    auto [it, inserted] = index_.emplace(tokens_[i], static_cast<TokenId>(i));
    if (!inserted) throw IngestionError("duplicate vocabulary entry '" + tokens_[i] + "'");
  }
}

Vocab Vocab::build(std::istream& corpus, std::size_t max_size) {
  if (max_size < 2) throw IngestionError("max vocabulary size must be at least 2");
  std::map<std::string, std::size_t> counts;
  std::string line;
  bool any = false;
  while (std::getline(corpus, line)) {
    for (auto& tok : split_whitespace(line)) {
      any = true;
      if (tok != kUnkToken) ++counts[tok];
    }
  }
  if (!any) throw IngestionError("empty corpus");

  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  // std::map iteration is lexicographic, so a stable sort keeps that as the tie rule.
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });

  std::vector<std::string> tokens{std::string(kUnkToken)};
  for (auto& [tok, n] : ranked) {
    if (tokens.size() >= max_size) break;
    tokens.push_back(tok);
  }
  if (tokens.size() < 2) throw IngestionError("corpus contains only unknown tokens");
  return Vocab(std::move(tokens));
}

Vocab Vocab::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IngestionError("cannot open vocabulary file " + path);
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) {
    auto parts = split_whitespace(line);
    if (parts.size() != 1) throw IngestionError("malformed vocabulary line: '" + line + "'");
    tokens.push_back(parts[0]);
  }
  return Vocab(std::move(tokens));
}

void Vocab::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw IngestionError("cannot write vocabulary file " + path);
  for (const auto& t : tokens_) out << t << '\n';
}

TokenId Vocab::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnkId : it->second;
}

const std::string& Vocab::token(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw IndexError("token id " + std::to_string(id) + " out of range");
  }
  return tokens_[static_cast<std::size_t>(id)];
}

bool Vocab::contains(std::string_view token) const { return index_.count(std::string(token)) > 0; }

std::vector<std::string> split_whitespace(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  auto is_space = [](char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\n' || c == '\v' || c == '\f'; };
  while (i < text.size()) {
    while (i < text.size() && is_space(text[i])) ++i;
    std::size_t j = i;
    while (j < text.size() && !is_space(text[j])) ++j;
    if (j > i) out.emplace_back(text.substr(i, j - i));
    i = j;
  }
  return out;
}

TokenSeq encode(std::string_view text, const Vocab& vocab, int max_length) {
  auto words = split_whitespace(text);
  if (words.empty()) throw EncodeError("cannot encode empty text");
  if (static_cast<int>(words.size()) > max_length) {
    throw EncodeError("sentence of length " + std::to_string(words.size()) + " exceeds max length " +
                      std::to_string(max_length));
  }
  TokenSeq seq;
  seq.reserve(words.size());
  for (const auto& w : words) seq.push_back(vocab.id(w));
  return seq;
}

std::string decode(const TokenSeq& seq, const Vocab& vocab) {
  std::string out;
  for (std::size_t i = 0; i < seq.size(); ++i) {
    if (i) out += ' ';
    out += vocab.token(seq[i]);
  }
  return out;
}

LengthDist::LengthDist(std::vector<double> probs) : probs_(std::move(probs)) {
  if (probs_.empty()) throw DomainError("length distribution needs at least one length");
  double sum = 0.0;
  for (double p : probs_) {
    if (!(p >= 0.0) || !std::isfinite(p)) throw DomainError("length probabilities must be finite and nonnegative");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw DomainError("length probabilities sum to " + std::to_string(sum));
}

LengthDist LengthDist::uniform(int max_length) {
  if (max_length < 1) throw DomainError("max length must be positive");
  return LengthDist(std::vector<double>(static_cast<std::size_t>(max_length), 1.0 / max_length));
}

double LengthDist::prob(int length) const {
  if (length < 1 || length > max_length()) return 0.0;
  return probs_[static_cast<std::size_t>(length - 1)];
}

double LengthDist::log_prob(int length) const { return std::log(prob(length)); }

LengthDist LengthDist::flattened(double floor) const {
  const double hi = *std::max_element(probs_.begin(), probs_.end());
  std::vector<double> out(probs_.size());
  for (std::size_t i = 0; i < probs_.size(); ++i) out[i] = std::max(probs_[i], floor * hi);
  const double z = std::accumulate(out.begin(), out.end(), 0.0);
  for (double& p : out) p /= z;
  return LengthDist(std::move(out));
}

CorpusStore::CorpusStore(std::vector<TokenSeq> sentences, int max_length)
    : sentences_(std::move(sentences)), buckets_(static_cast<std::size_t>(max_length)), max_length_(max_length) {
  if (max_length < 1) throw IngestionError("max length must be positive");
  for (std::size_t i = 0; i < sentences_.size(); ++i) {
    const auto l = static_cast<int>(sentences_[i].size());
    if (l < 1 || l > max_length) throw IngestionError("sentence length " + std::to_string(l) + " outside [1, m]");
    buckets_[static_cast<std::size_t>(l - 1)].push_back(i);
  }
}

CorpusStore CorpusStore::read(std::istream& in, const Vocab& vocab, int max_length) {
  std::vector<TokenSeq> sentences;
  std::string line;
  std::size_t truncated = 0;
  while (std::getline(in, line)) {
    auto words = split_whitespace(line);
    if (words.empty()) continue;
    if (static_cast<int>(words.size()) > max_length) {
      words.resize(static_cast<std::size_t>(max_length));
      ++truncated;
    }
    TokenSeq seq;
    seq.reserve(words.size());
    for (const auto& w : words) seq.push_back(vocab.id(w));
    sentences.push_back(std::move(seq));
  }
  if (truncated) spdlog::warn("truncated {} sentences longer than {} tokens", truncated, max_length);
  return CorpusStore(std::move(sentences), max_length);
}

CorpusStore CorpusStore::read_file(const std::string& path, const Vocab& vocab, int max_length) {
  std::ifstream in(path);
  if (!in) throw IngestionError("cannot open corpus file " + path);
  return read(in, vocab, max_length);
}

const std::vector<std::size_t>& CorpusStore::bucket(int length) const {
  if (length < 1 || length > max_length_) throw IndexError("length " + std::to_string(length) + " outside [1, m]");
  return buckets_[static_cast<std::size_t>(length - 1)];
}

std::size_t CorpusStore::token_count() const {
  std::size_t n = 0;
  for (const auto& s : sentences_) n += s.size();
  return n;
}

LengthDist length_histogram(const CorpusStore& store) {
  if (store.empty()) throw IngestionError("length histogram of an empty corpus");
  const int m = store.max_length();
  std::vector<double> probs(static_cast<std::size_t>(m));
  const double n = static_cast<double>(store.size());
  for (int l = 1; l <= m; ++l) probs[static_cast<std::size_t>(l - 1)] = static_cast<double>(store.count(l)) / n;
  return LengthDist(std::move(probs));
}

std::vector<TokenSeq> sample_minibatch(const CorpusStore& store, std::size_t count, Rng& rng) {
  if (count < 1) throw DomainError("minibatch size must be at least 1");
  if (store.empty()) throw IngestionError("cannot draw a minibatch from an empty corpus");
  std::uniform_int_distribution<std::size_t> pick(0, store.size() - 1);
  std::vector<TokenSeq> batch;
  batch.reserve(count);
  for (std::size_t i = 0; i < count; ++i) batch.push_back(store[pick(rng)]);
  return batch;
}

}  // namespace ntrf
