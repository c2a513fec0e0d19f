#include "ntrf/sampler.hpp"

#include <cmath>

#include "ntrf/errors.hpp"
#include "ntrf/numeric.hpp"

namespace ntrf {

void JumpConfig::validate() const {
  if (range < 1) throw ConfigError("jump_range", "jump_range must be at least 1");
  if (block < 1) throw ConfigError("block_size", "block_size must be at least 1");
  if (trials < 1) throw ConfigError("trials", "trials must be at least 1");
}

std::vector<double> jump_distribution(int k, int m, int r) {
  if (k < 1 || k > m) throw DomainError("jump origin outside [1, m]");
  std::vector<double> out(static_cast<std::size_t>(m), 0.0);
  const int lo = std::max(k - r, 1);
  const int hi = std::min(k + r, m);
  const double p = 1.0 / static_cast<double>(hi - lo + 1);
  for (int j = lo; j <= hi; ++j) out[static_cast<std::size_t>(j - 1)] = p;
  return out;
}

double jump_prob(int k, int j, int m, int r) {
  if (j < 1 || j > m || std::abs(k - j) > r) return 0.0;
  return 1.0 / static_cast<double>(std::min(k + r, m) - std::max(k - r, 1) + 1);
}

double jump_log_accept(int k, int j, int m, int r, double log_target_from, double log_target_to, double log_g_forward,
                       double log_g_reverse) {
  const double log_gamma_ratio = std::log(jump_prob(j, k, m, r)) - std::log(jump_prob(k, j, m, r));
  const double la = log_gamma_ratio + log_target_to - log_target_from - log_g_forward + log_g_reverse;
  if (std::isnan(la)) throw TrainingError("NaN in local jump acceptance");
  return la;
}

double mtmis_log_accept(std::span<const double> log_w, std::size_t selected, double log_w_current) {
  if (selected >= log_w.size()) throw IndexError("selected trial out of range");
  const double log_total = log_sum_exp(log_w);
  // W - w(selected) + w(current), summed directly from the other terms.
  std::vector<double> rest;
  rest.reserve(log_w.size());
  for (std::size_t k = 0; k < log_w.size(); ++k) {
    if (k != selected) rest.push_back(log_w[k]);
  }
  rest.push_back(log_w_current);
  const double la = log_total - log_sum_exp(rest);
  if (std::isnan(la)) throw TrainingError("NaN in Markov move acceptance");
  return la;
}

ChainState make_chain(TokenSeq x, const TrfModel& model, std::uint64_t seed) {
  if (x.empty() || static_cast<int>(x.size()) > model.max_length()) throw DomainError("chain start outside [1, m]");
  ChainState s;
  s.log_phi = phi_forward(x, model.theta);
  s.x = std::move(x);
  s.rng.seed(seed);
  return s;
}

namespace {

bool accept(double log_ratio, Rng& rng) {
  if (log_ratio >= 0.0) return true;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  return std::log(u(rng)) < log_ratio;
}

void jump_impl(ChainState& st, const TrfModel& model, const Proposal& proposal, const JumpConfig& cfg) {
  const int k = st.length();
  const int m = model.max_length();
  st.last_jump_accepted = false;
  const int lo = std::max(k - cfg.range, 1);
  const int hi = std::min(k + cfg.range, m);
  const int j = std::uniform_int_distribution<int>(lo, hi)(st.rng);
  if (j == k) return;
  ++st.diag.jump_attempts;

  const double log_from = log_joint_unnormalized(k, st.log_phi, model);
  TokenSeq next;
  double log_g_forward = 0.0;
  double log_g_reverse = 0.0;
  if (j > k) {
    auto [u, lg] = proposal.sample_continuation(proposal.advance(proposal.start(), st.x), j - k, st.rng);
    next = st.x;
    next.insert(next.end(), u.begin(), u.end());
    log_g_forward = lg;
  } else {
    next.assign(st.x.begin(), st.x.begin() + j);
    const TokenSeq tail(st.x.begin() + j, st.x.end());
    log_g_reverse = proposal.continuation_logprob(proposal.advance(proposal.start(), next), tail);
  }
  const double phi_next = phi_forward(next, model.theta);
  const double log_to = log_joint_unnormalized(j, phi_next, model);
  const double la = jump_log_accept(k, j, m, cfg.range, log_from, log_to, log_g_forward, log_g_reverse);
  if (accept(la, st.rng)) {
    st.x = std::move(next);
    st.log_phi = phi_next;
    st.last_jump_accepted = true;
    ++st.diag.jump_accepts;
  }
}

void move_impl(ChainState& st, const TrfModel& model, const Proposal& proposal, const JumpConfig& cfg) {
  const int l = st.length();
  const auto M = static_cast<std::size_t>(cfg.trials);
  st.last_move_accepts = 0;
  Proposal::State prefix_state = proposal.start();
  std::vector<TokenSeq> candidates(M);
  std::vector<double> phis(M);
  std::vector<double> log_w(M);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  for (int i = 0; i < l; i += cfg.block) {
    const int b = std::min(cfg.block, l - i);
    const auto first = st.x.begin() + i;
    for (std::size_t t = 0; t < M; ++t) {
      auto [u, lg] = proposal.sample_continuation(prefix_state, b, st.rng);
      candidates[t] = st.x;
      std::copy(u.begin(), u.end(), candidates[t].begin() + i);
      phis[t] = phi_forward(candidates[t], model.theta);
      log_w[t] = log_joint_unnormalized(l, phis[t], model) - lg;
    }
    const TokenSeq current_block(first, first + b);
    const double log_w_current =
        log_joint_unnormalized(l, st.log_phi, model) - proposal.continuation_logprob(prefix_state, current_block);

    const double log_total = log_sum_exp(log_w);
    const double r = unif(st.rng);
    std::size_t pick = M - 1;
    double acc = 0.0;
    for (std::size_t t = 0; t < M; ++t) {
      acc += std::exp(log_w[t] - log_total);
      if (r < acc) {
        pick = t;
        break;
      }
    }

    ++st.diag.move_blocks;
    if (accept(mtmis_log_accept(log_w, pick, log_w_current), st.rng)) {
      st.x = candidates[pick];
      st.log_phi = phis[pick];
      ++st.diag.move_accepts;
      ++st.last_move_accepts;
    }
    if (i + b < l) prefix_state = proposal.advance(prefix_state, TokenSeq(st.x.begin() + i, st.x.begin() + i + b));
  }
}

}  // namespace

void local_jump(ChainState& state, const TrfModel& model, const Proposal& proposal, const JumpConfig& cfg) {
  state.log_phi = phi_forward(state.x, model.theta);
  jump_impl(state, model, proposal, cfg);
}

void markov_move(ChainState& state, const TrfModel& model, const Proposal& proposal, const JumpConfig& cfg) {
  state.log_phi = phi_forward(state.x, model.theta);
  move_impl(state, model, proposal, cfg);
}

void transms_step(ChainState& state, const TrfModel& model, const Proposal& proposal, const JumpConfig& cfg) {
  state.log_phi = phi_forward(state.x, model.theta);
  jump_impl(state, model, proposal, cfg);
  move_impl(state, model, proposal, cfg);
}

}  // namespace ntrf
