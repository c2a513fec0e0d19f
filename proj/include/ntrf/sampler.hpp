#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "ntrf/proposal.hpp"
#include "ntrf/trf_model.hpp"

namespace ntrf {

struct JumpConfig {
  int range = 2;   // r
  int block = 5;   // s
  int trials = 10; // M

  void validate() const;
};

struct ChainDiagnostics {
  std::int64_t jump_attempts = 0;  // steps where j != k
  std::int64_t jump_accepts = 0;
  std::int64_t move_blocks = 0;
  std::int64_t move_accepts = 0;
};

// One TransMS chain. `log_phi` caches phi(x) under the parameters it was
// last computed with; local_jump refreshes it before use.
struct ChainState {
  TokenSeq x;
  double log_phi = 0.0;
  Rng rng;
  ChainDiagnostics diag;
  // Outcome of the most recent transms_step.
  bool last_jump_accepted = false;
  int last_move_accepts = 0;

  int length() const { return static_cast<int>(x.size()); }
};

// Gamma(k, j) for j = 1..m (index j-1).
std::vector<double> jump_distribution(int k, int m, int r);
double jump_prob(int k, int j, int m, int r);

// log of the acceptance ratio for moving from (k, x) to (j, x') where
// `log_target_*` are log p(.) up to a shared constant. For an extension,
// pass log_g_forward = log g(u | x) and log_g_reverse = 0; for a truncation
// pass log_g_forward = 0 and log_g_reverse = log g(x_{j+1:k} | x_{1:j}).
double jump_log_accept(int k, int j, int m, int r, double log_target_from, double log_target_to, double log_g_forward,
                       double log_g_reverse);

// log of min-free MTMIS acceptance ratio W / (W - w(selected) + w(current)),
// computed from log weights without cancellation.
double mtmis_log_accept(std::span<const double> log_w, std::size_t selected, double log_w_current);

ChainState make_chain(TokenSeq x, const TrfModel& model, std::uint64_t seed);

// Step I: local jump between lengths.
void local_jump(ChainState& state, const TrfModel& model, const Proposal& proposal, const JumpConfig& cfg);
// Step II: block MTMIS sweep at fixed length.
void markov_move(ChainState& state, const TrfModel& model, const Proposal& proposal, const JumpConfig& cfg);
// Local jump followed by a Markov move.
void transms_step(ChainState& state, const TrfModel& model, const Proposal& proposal, const JumpConfig& cfg);

}  // namespace ntrf
