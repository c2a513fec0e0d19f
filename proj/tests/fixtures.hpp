#pragma once

// Test-only fixtures and brute-force oracles. Every oracle here recomputes
// its quantity from phi_forward and plain summation, independent of the
// library routines it is used to check.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ntrf/proposal.hpp"
#include "ntrf/sampler.hpp"
#include "ntrf/trf_model.hpp"

namespace ntrf::fixtures {

inline PotentialConfig tiny_potential() {
  PotentialConfig c;
  c.embed_dim = 3;
  c.proj_dim = 3;
  c.max_width = 2;
  c.filters_per_width = 2;
  c.stack_depth = 1;
  c.stack_dim = 2;
  c.stack_width = 2;
  c.pool = true;
  return c;
}

// {<unk>, w1, ..., w(n-1)}
inline Vocab word_vocab(int n) {
  std::vector<std::string> t{std::string(kUnkToken)};
  for (int i = 1; i < n; ++i) t.push_back("w" + std::to_string(i));
  return Vocab(t);
}

// log Z_l by naive summation of exp(phi).
inline double naive_log_z(const PotentialParams& theta, int length) {
  double z = 0.0;
  for_each_sequence(theta.vocab_size(), length, [&](const TokenSeq& x) { z += std::exp(phi_forward(x, theta)); });
  return std::log(z);
}

inline void set_exact_zeta(TrfModel& m) {
  const double z1 = naive_log_z(m.theta, 1);
  const int max_length = m.pi0.max_length();
  std::vector<double> z(static_cast<std::size_t>(max_length));
  for (int l = 1; l <= max_length; ++l) z[static_cast<std::size_t>(l - 1)] = naive_log_z(m.theta, l) - z1;
  z[0] = 0.0;
  m.zeta = Zeta(z);
  m.refresh_log_z1();
}

// Random potential, uniform length priors, exact zeta.
inline TrfModel random_model(int vocab, int m, std::uint64_t seed, double bound,
                             const PotentialConfig& cfg = tiny_potential()) {
  TrfModel model;
  model.vocab = word_vocab(vocab);
  model.theta = PotentialParams(cfg, vocab);
  Rng rng(seed);
  model.theta.init_uniform(bound, rng);
  model.pi0 = LengthDist::uniform(m);
  model.pi_infer = LengthDist::uniform(m);
  set_exact_zeta(model);
  return model;
}

struct StateSpace {
  std::vector<TokenSeq> states;
  std::map<TokenSeq, std::size_t> index;

  std::size_t of(const TokenSeq& x) const { return index.at(x); }
  std::size_t size() const { return states.size(); }
};

inline StateSpace all_states(int vocab, int m) {
  StateSpace s;
  for (int l = 1; l <= m; ++l) {
    for_each_sequence(vocab, l, [&](const TokenSeq& x) {
      s.index[x] = s.states.size();
      s.states.push_back(x);
    });
  }
  return s;
}

// pi_l exp(phi(x)) / Z_l over every state, with `prior` the length prior.
inline std::vector<double> exact_joint(const TrfModel& m, const StateSpace& s, const LengthDist& prior) {
  std::vector<double> z(static_cast<std::size_t>(m.max_length()), 0.0);
  std::vector<double> w(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    w[i] = std::exp(phi_forward(s.states[i], m.theta));
    z[s.states[i].size() - 1] += w[i];
  }
  for (std::size_t i = 0; i < s.size(); ++i) {
    const int l = static_cast<int>(s.states[i].size());
    w[i] = prior.prob(l) * w[i] / z[static_cast<std::size_t>(l - 1)];
  }
  return w;
}

inline std::vector<TokenSeq> draw_exact(const StateSpace& s, const std::vector<double>& p, std::size_t n, Rng& rng) {
  std::discrete_distribution<std::size_t> d(p.begin(), p.end());
  std::vector<TokenSeq> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(s.states[d(rng)]);
  return out;
}

// Mean log-probability of `data` under a distribution over `s`.
inline double mean_loglik(const StateSpace& s, const std::vector<double>& p, const std::vector<TokenSeq>& data) {
  double ll = 0.0;
  for (const auto& x : data) ll += std::log(p[s.of(x)]);
  return ll / static_cast<double>(data.size());
}

inline double total_variation(const std::vector<double>& p, const std::vector<double>& q) {
  double d = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) d += std::abs(p[i] - q[i]);
  return 0.5 * d;
}

inline std::vector<double> normalized_counts(const std::vector<std::size_t>& counts) {
  double total = 0.0;
  for (auto c : counts) total += static_cast<double>(c);
  std::vector<double> out(counts.size());
  for (std::size_t i = 0; i < counts.size(); ++i) out[i] = static_cast<double>(counts[i]) / total;
  return out;
}

// Relative error with a floor so that two tiny numbers compare as equal.
inline double rel_error(double a, double b, double floor = 1e-3) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

inline double max_rel_error(const GradBuffer& a, const GradBuffer& b, double floor = 1e-3) {
  double worst = 0.0;
  for (std::size_t t = 0; t < a.size(); ++t)
    for (Eigen::Index i = 0; i < a[t].size(); ++i) worst = std::max(worst, rel_error(a[t].data()[i], b[t].data()[i], floor));
  return worst;
}

// Backprop versus central differences for d phi(x) / d theta. Returns
// nullopt when some ReLU or max-pool sits within `margin` of its kink, where
// a finite difference would straddle the kink.
inline std::optional<double> potential_grad_error(PotentialParams theta, const TokenSeq& x, double eps = 1e-5,
                                                  double margin = 1e-3) {
  PotentialCache cache;
  phi_forward(x, theta, &cache);
  if (cache.kink_margin < margin) return std::nullopt;
  GradBuffer analytic = make_grad_buffer(theta.tensors());
  phi_backward(cache, 1.0, theta, analytic);
  const GradBuffer numeric = finite_diff_grad([&] { return phi_forward(x, theta); }, theta.tensors(), eps);
  return max_rel_error(analytic, numeric);
}

inline double proposal_grad_error(Proposal mu, const TokenSeq& x, double eps = 1e-5) {
  GradBuffer analytic = make_grad_buffer(mu.tensors());
  mu.logprob_and_grad(x, &analytic);
  const GradBuffer numeric = finite_diff_grad([&] { return q_logprob(x, mu); }, mu.tensors(), eps);
  return max_rel_error(analytic, numeric);
}

// Visit counts over `space` after `burn_in` discarded calls of `step`.
template <typename Step>
std::vector<double> chain_occupancy(ChainState& chain, const StateSpace& space, std::size_t burn_in, std::size_t steps,
                                    Step&& step) {
  for (std::size_t i = 0; i < burn_in; ++i) step(chain);
  std::vector<std::size_t> counts(space.size(), 0);
  for (std::size_t i = 0; i < steps; ++i) {
    step(chain);
    ++counts[space.of(chain.x)];
  }
  return normalized_counts(counts);
}

inline std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("ntrf_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

inline void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream(p) << text;
}

inline std::string read_text(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

}  // namespace ntrf::fixtures
