#pragma once

#include <utility>
#include <vector>

#include "ntrf/checkpoint.hpp"
#include "ntrf/corpus.hpp"
#include "ntrf/nn_core.hpp"

namespace ntrf {

struct ProposalConfig {
  int embed_dim = 32;
  int hidden = 64;
};

// Auxiliary autoregressive model q(l, x): a single-layer LSTM over the
// vocabulary plus an end-of-sentence symbol. Input id |V| is the sentence
// start marker; output id |V| is the end-of-sentence symbol.
//
// q(l, x) = prod_i q(x_i | x_<i) * q(EOS | x). The fixed-length proposal
// g(u | prefix) used by the sampler renormalizes every conditional over the
// real vocabulary, i.e. EOS is masked out.
class Proposal {
 public:
  struct State {
    Vector h;
    Vector c;
  };

  Proposal() = default;
  Proposal(const ProposalConfig& cfg, int vocab_size);

  int vocab_size() const { return vocab_size_; }
  TokenId eos() const { return vocab_size_; }
  TokenId bos() const { return vocab_size_; }
  const ProposalConfig& config() const { return cfg_; }

  std::vector<ParamTensor>& tensors() { return tensors_; }
  const std::vector<ParamTensor>& tensors() const { return tensors_; }

  void set_zero();
  void init_uniform(double bound, Rng& rng);

  // State after reading the start marker; its logits predict x_1.
  State start() const;
  State advance(const State& s, TokenId input) const;
  State advance(State s, const TokenSeq& inputs) const;
  // |V| + 1 unnormalized scores for the next symbol.
  Vector logits(const State& s) const;

  // log g(u | state): sum of EOS-masked conditionals.
  double continuation_logprob(const State& s, const TokenSeq& u) const;
  // Ancestral draw of n tokens from the masked conditionals.
  std::pair<TokenSeq, double> sample_continuation(const State& s, int n, Rng& rng) const;

  // log q(l, x) and, when `grad` is given, accumulates its gradient (aligned
  // with tensors()).
  double logprob_and_grad(const TokenSeq& x, GradBuffer* grad) const;

  void write(Checkpoint& ck, const std::string& prefix) const;
  static Proposal read(const Checkpoint& ck, const std::string& prefix);

  static constexpr std::size_t kEmbed = 0;
  static constexpr std::size_t kInputW = 1;
  static constexpr std::size_t kRecurW = 2;
  static constexpr std::size_t kGateB = 3;
  static constexpr std::size_t kOutW = 4;
  static constexpr std::size_t kOutB = 5;

 private:
  ProposalConfig cfg_;
  int vocab_size_ = 0;
  std::vector<ParamTensor> tensors_;
};

// Log-softmax entry over all |V| + 1 symbols.
double log_softmax_at(const Vector& logits, TokenId target);
// Log-softmax entry over the first |V| symbols (EOS masked).
double masked_log_softmax_at(const Vector& logits, TokenId target);

double q_logprob(const TokenSeq& x, const Proposal& mu);
double g_logprob(const TokenSeq& u, const TokenSeq& prefix, const Proposal& mu, int max_length);
std::pair<TokenSeq, double> g_sample(const TokenSeq& prefix, int n, const Proposal& mu, int max_length, Rng& rng);

// mu += lr * sum_x d log q(x) / d mu, with the summed gradient clipped to
// global norm `clip_norm` (<= 0 disables clipping). Returns the pre-clip norm.
double mu_step(const std::vector<TokenSeq>& batch, Proposal& mu, double lr, double clip_norm = 5.0, int workers = 1);

}  // namespace ntrf
