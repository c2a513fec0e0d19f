#pragma once

#include <string>
#include <vector>

#include "ntrf/corpus.hpp"
#include "ntrf/potential.hpp"

namespace ntrf {

// Estimates of log(Z_l / Z_1) for l = 1..m, stored at index l-1.
class Zeta {
 public:
  Zeta() = default;
  explicit Zeta(std::vector<double> values);

  int max_length() const { return static_cast<int>(values_.size()); }
  double operator()(int length) const { return values_[static_cast<std::size_t>(length - 1)]; }
  double& operator()(int length) { return values_[static_cast<std::size_t>(length - 1)]; }
  const std::vector<double>& values() const { return values_; }

  // Shifts every entry so the first is exactly zero.
  void renormalize();

 private:
  std::vector<double> values_;
};

// The trans-dimensional model: potential, normalization estimates, and the
// two length distributions (empirical for inference, pi0 for training).
struct TrfModel {
  static constexpr int kFormatVersion = 1;

  Vocab vocab;
  PotentialParams theta;
  Zeta zeta;
  LengthDist pi_infer;
  LengthDist pi0;
  // Cached log Z_1(theta); refresh_log_z1() after theta changes.
  double log_z1 = 0.0;

  int max_length() const { return zeta.max_length(); }
  int vocab_size() const { return static_cast<int>(vocab.size()); }
  void refresh_log_z1();
  void validate() const;

  void save(const std::string& path) const;
  static TrfModel load(const std::string& path);
  void write(Checkpoint& ck) const;
  static TrfModel read(const Checkpoint& ck);
};

// log sum_{v in V} exp(phi(v)) over all length-1 sentences.
double log_z1_exact(const PotentialParams& theta);

// Brute-force log Z_l; throws DomainError when |V|^l exceeds 10^6.
double enumerate_log_z(const PotentialParams& theta, int length);

// Calls fn(seq) for every sequence of the given length, in lexicographic order.
template <typename Fn>
void for_each_sequence(int vocab_size, int length, Fn&& fn) {
  TokenSeq seq(static_cast<std::size_t>(length), 0);
  while (true) {
    fn(static_cast<const TokenSeq&>(seq));
    int pos = length - 1;
    while (pos >= 0 && seq[static_cast<std::size_t>(pos)] == vocab_size - 1) {
      seq[static_cast<std::size_t>(pos)] = 0;
      --pos;
    }
    if (pos < 0) return;
    ++seq[static_cast<std::size_t>(pos)];
  }
}

// log pi0_l + phi - zeta_l: the training joint without the log Z_1 term,
// which cancels in every sampler acceptance ratio.
double log_joint_unnormalized(int length, double phi, const TrfModel& model);

// log pi0_l + phi(x) - log Z_1 - zeta_l. Throws DomainError when pi0_l = 0.
double log_joint_train(const TokenSeq& x, const TrfModel& model);

// log pi_l + phi(x) - log Z_1 - zeta_l with the empirical length prior.
// One potential evaluation; lengths with zero prior score -inf.
double sentence_logprob(const TokenSeq& x, const TrfModel& model);

struct PerplexityReport {
  double ppl = 0.0;
  double total_logprob = 0.0;
  std::size_t tokens = 0;
  std::size_t sentences = 0;
  std::size_t excluded = 0;  // zero-prior lengths, not counted
};

PerplexityReport perplexity(const std::vector<TokenSeq>& test, const TrfModel& model, int workers = 1);

}  // namespace ntrf
