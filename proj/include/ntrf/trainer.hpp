#pragma once

#include <cstdint>
#include <deque>
#include <fstream>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "ntrf/corpus.hpp"
#include "ntrf/proposal.hpp"
#include "ntrf/sampler.hpp"
#include "ntrf/trf_model.hpp"

namespace ntrf {

// Learning-rate schedule, parsed from
//   const:c            c
//   inv:t0[:a]         a / (t + t0)
//   pow:e[:a]          a * t^-e
class Schedule {
 public:
  enum class Kind { kConstant, kInverse, kPower };

  Schedule() = default;
  Schedule(Kind kind, double a, double b) : kind_(kind), a_(a), b_(b) {}

  static Schedule parse(const std::string& spec);
  std::string str() const;
  double operator()(std::int64_t t) const;

 private:
  Kind kind_ = Kind::kConstant;
  double a_ = 1.0;  // scale
  double b_ = 0.0;  // offset t0 or exponent e
};

struct TrainConfig {
  std::size_t batch_data = 1000;     // K_D
  std::size_t batch_samples = 100;   // K_B
  std::int64_t max_iterations = 1000;
  Schedule lr_theta{Schedule::Kind::kInverse, 1.0, 1e4};
  Schedule lr_zeta{Schedule::Kind::kPower, 1.0, 0.2};
  Schedule lr_mu{Schedule::Kind::kConstant, 1.0, 0.0};
  double mu_clip = 5.0;
  int chains = 0;                    // 0: one chain per sample
  JumpConfig jump;
  double init_bound = 0.1;
  double length_floor = 0.1;         // flattening of pi0
  int cache_depth = 10;
  std::int64_t checkpoint_every = 0; // 0: once per epoch, ceil(|D| / K_D) iterations
  int eval_every = 1;
  int smooth_window = 1000;          // iterations
  bool early_stop = true;
  int patience = 5;                  // smoothed windows
  double min_delta = 1e-3;           // nats
  int max_nan_streak = 10;
  std::uint64_t seed = 1;
  int workers = 1;
  std::string out_dir;               // empty: keep checkpoints in memory only
  std::string log_csv;

  void validate() const;
};

// pi_infer = empirical lengths of `train`, pi0 = flattened pi_infer,
// zeta from init_zeta, theta uniform in [-bound, bound].
TrfModel make_initial_model(const Vocab& vocab, const CorpusStore& train, const PotentialConfig& pcfg,
                            double length_floor, double init_bound, Rng& rng);

Zeta init_zeta(int vocab_size, int max_length);

// Ascent direction E_D[dphi] - (1/K_B) sum_B (pi_l / pi0_l) dphi.
GradBuffer theta_gradient(const std::vector<TokenSeq>& data, const std::vector<TokenSeq>& samples,
                          const TrfModel& model, int workers = 1);

// Applies theta_gradient through Adam at rate lr. Throws TrainingError and
// leaves theta unchanged on a non-finite gradient.
void theta_step(const std::vector<TokenSeq>& data, const std::vector<TokenSeq>& samples, TrfModel& model,
                AdamState& adam, double lr, int workers = 1);

// zeta_l += lr * delta_l(B) / pi0_l, then zeta -= zeta_1.
void zeta_step(const std::vector<TokenSeq>& samples, Zeta& zeta, const LengthDist& pi0, double lr);

struct IterationStats {
  std::int64_t iteration = 0;
  bool skipped = false;                  // non-finite update, parameters kept
  double lr_theta = 0.0;
  double lr_zeta = 0.0;
  double lr_mu = 0.0;
  std::optional<double> dev_ll;          // mean per-sentence log-likelihood
  std::optional<double> dev_ll_smoothed;
  std::optional<double> kl_estimate;     // (1/K_B) sum [log p - log q] on B
  double jump_accept_rate = 0.0;
  double move_accept_rate = 0.0;
  std::vector<double> zeta;
};

struct TrainResult {
  std::int64_t iterations = 0;
  bool early_stopped = false;
  // Most recent checkpoints, oldest first (at most cache_depth).
  std::vector<std::string> checkpoint_paths;
  std::vector<TrfModel> checkpoints;
};

class Trainer {
 public:
  using Callback = std::function<void(const IterationStats&, const Trainer&)>;

  Trainer(TrainConfig cfg, const CorpusStore& train, const CorpusStore* dev, TrfModel& model, Proposal& proposal);

  // One AugSA + JSA iteration.
  IterationStats step();
  TrainResult run(const Callback& on_iteration = {});

  const TrfModel& model() const { return model_; }
  const Proposal& proposal() const { return proposal_; }
  const std::vector<ChainState>& chains() const { return chains_; }
  const std::vector<TokenSeq>& last_samples() const { return last_samples_; }
  std::int64_t iteration() const { return t_; }
  std::int64_t checkpoint_interval() const;

 private:
  // Runs the chains, then the theta, zeta and mu updates. On TrainingError
  // every parameter is restored before rethrowing.
  void sample_and_update(const std::vector<TokenSeq>& data, std::vector<TokenSeq>& samples, IterationStats& st);
  void save_checkpoint(TrainResult& result);
  double dev_loglik();
  void write_log(const IterationStats& s);

  TrainConfig cfg_;
  const CorpusStore& train_;
  const CorpusStore* dev_;
  TrfModel& model_;
  Proposal& proposal_;
  AdamState adam_;
  Rng data_rng_;
  std::vector<ChainState> chains_;
  std::vector<TokenSeq> last_samples_;
  std::int64_t t_ = 0;
  int nan_streak_ = 0;
  std::deque<double> dev_window_;
  double dev_window_sum_ = 0.0;
  std::vector<double> window_marks_;
  std::unique_ptr<std::ofstream> log_;
};

// Writes the model and proposal into one checkpoint file.
void save_model_bundle(const std::string& path, const TrfModel& model, const Proposal& proposal);
Proposal load_proposal(const std::string& path);

}  // namespace ntrf
