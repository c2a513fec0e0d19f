#include "ntrf/trainer.hpp"

#include <cmath>
#include <filesystem>
#include <sstream>

#include "ntrf/errors.hpp"
#include "ntrf/logging.hpp"
#include "ntrf/numeric.hpp"
#include "ntrf/parallel.hpp"

namespace ntrf {

Schedule Schedule::parse(const std::string& spec) {
  std::vector<std::string> parts;
  std::stringstream ss(spec);
  for (std::string p; std::getline(ss, p, ':');) parts.push_back(p);
  auto num = [&](std::size_t i) {
    try {
      std::size_t used = 0;
      const double v = std::stod(parts.at(i), &used);
      if (used != parts[i].size()) throw std::invalid_argument(parts[i]);
      return v;
    } catch (const std::exception&) {
      throw ConfigError("schedule", "malformed schedule '" + spec + "'");
    }
  };
  if (parts.size() < 2 || parts.size() > 3) throw ConfigError("schedule", "malformed schedule '" + spec + "'");
  const double scale = parts.size() == 3 ? num(2) : 1.0;
  Schedule s;
  if (parts[0] == "const" && parts.size() == 2) {
    s = Schedule(Kind::kConstant, num(1), 0.0);
  } else if (parts[0] == "inv") {
    s = Schedule(Kind::kInverse, scale, num(1));
  } else if (parts[0] == "pow") {
    s = Schedule(Kind::kPower, scale, num(1));
  } else {
    throw ConfigError("schedule", "unknown schedule '" + spec + "'");
  }
  if (!(s(1) > 0.0)) throw ConfigError("schedule", "schedule '" + spec + "' is not positive");
  return s;
}

std::string Schedule::str() const {
  switch (kind_) {
    case Kind::kConstant:
      return "const:" + format_double(a_);
    case Kind::kInverse:
      return "inv:" + format_double(b_) + ":" + format_double(a_);
    case Kind::kPower:
      return "pow:" + format_double(b_) + ":" + format_double(a_);
  }
  return {};
}

double Schedule::operator()(std::int64_t t) const {
  const double td = static_cast<double>(t);
  switch (kind_) {
    case Kind::kConstant:
      return a_;
    case Kind::kInverse:
      return a_ / (td + b_);
    case Kind::kPower:
      return a_ * std::pow(td, -b_);
  }
  return 0.0;
}

void TrainConfig::validate() const {
  if (batch_data < 1) throw ConfigError("batch_data", "batch_data (K_D) must be at least 1");
  if (batch_samples < 1) throw ConfigError("batch_samples", "batch_samples (K_B) must be at least 1");
  if (max_iterations < 0) throw ConfigError("max_iterations", "max_iterations must be nonnegative");
  if (chains < 0) throw ConfigError("chains", "chains must be nonnegative");
  if (cache_depth < 1) throw ConfigError("cache_depth", "cache_depth must be at least 1");
  if (eval_every < 1) throw ConfigError("eval_every", "eval_every must be at least 1");
  if (smooth_window < 1) throw ConfigError("smooth_window", "smooth_window must be at least 1");
  if (!(length_floor > 0.0 && length_floor <= 1.0)) throw ConfigError("length_floor", "length_floor must be in (0, 1]");
  if (!(init_bound >= 0.0)) throw ConfigError("init_bound", "init_bound must be nonnegative");
  jump.validate();
}

Zeta init_zeta(int vocab_size, int max_length) {
  if (vocab_size < 2) throw DomainError("vocabulary must hold at least 2 tokens");
  std::vector<double> z(static_cast<std::size_t>(max_length));
  const double lv = std::log(static_cast<double>(vocab_size));
  for (int l = 1; l <= max_length; ++l) z[static_cast<std::size_t>(l - 1)] = (l - 1) * lv;
  return Zeta(std::move(z));
}

TrfModel make_initial_model(const Vocab& vocab, const CorpusStore& train, const PotentialConfig& pcfg,
                            double length_floor, double init_bound, Rng& rng) {
  TrfModel model;
  model.vocab = vocab;
  model.theta = PotentialParams(pcfg, static_cast<int>(vocab.size()));
  model.theta.init_uniform(init_bound, rng);
  model.pi_infer = length_histogram(train);
  model.pi0 = model.pi_infer.flattened(length_floor);
  model.zeta = init_zeta(static_cast<int>(vocab.size()), train.max_length());
  model.refresh_log_z1();
  return model;
}

namespace {

// Sum over `xs` of weight(x) * dphi(x), reduced in a fixed worker order.
template <typename Weight>
GradBuffer weighted_phi_grad(const std::vector<TokenSeq>& xs, const PotentialParams& theta, int workers,
                             Weight&& weight) {
  const int w = std::max(1, workers);
  std::vector<GradBuffer> partial(static_cast<std::size_t>(w), make_grad_buffer(theta.tensors()));
  parallel_chunks(xs.size(), w, [&](std::size_t begin, std::size_t end, int worker) {
    PotentialCache cache;
    for (std::size_t i = begin; i < end; ++i) {
      phi_forward(xs[i], theta, &cache);
      phi_backward(cache, weight(xs[i]), theta, partial[static_cast<std::size_t>(worker)]);
    }
  });
  GradBuffer total = std::move(partial[0]);
  for (std::size_t k = 1; k < partial.size(); ++k) add_into(total, partial[k]);
  return total;
}

}  // namespace

GradBuffer theta_gradient(const std::vector<TokenSeq>& data, const std::vector<TokenSeq>& samples,
                          const TrfModel& model, int workers) {
  if (data.empty() || samples.empty()) throw DomainError("theta step needs nonempty data and sample batches");
  GradBuffer g_data = weighted_phi_grad(data, model.theta, workers, [](const TokenSeq&) { return 1.0; });
  GradBuffer g_model = weighted_phi_grad(samples, model.theta, workers, [&](const TokenSeq& x) {
    const int l = static_cast<int>(x.size());
    const double ratio = model.pi_infer.prob(l) / model.pi0.prob(l);
    if (!std::isfinite(ratio)) throw TrainingError("non-finite length importance weight");
    return ratio;
  });
  const double inv_d = 1.0 / static_cast<double>(data.size());
  const double inv_b = 1.0 / static_cast<double>(samples.size());
  for (std::size_t i = 0; i < g_data.size(); ++i) g_data[i] = inv_d * g_data[i] - inv_b * g_model[i];
  return g_data;
}

void theta_step(const std::vector<TokenSeq>& data, const std::vector<TokenSeq>& samples, TrfModel& model,
                AdamState& adam, double lr, int workers) {
  GradBuffer g = theta_gradient(data, samples, model, workers);
  if (!all_finite(g)) throw TrainingError("non-finite potential gradient");
  auto& params = model.theta.tensors();
  // Adam descends; the estimate above is an ascent direction.
  for (std::size_t i = 0; i < params.size(); ++i) params[i].grad = -g[i];
  adam_step(params, adam, lr);
}

void zeta_step(const std::vector<TokenSeq>& samples, Zeta& zeta, const LengthDist& pi0, double lr) {
  if (samples.empty()) throw DomainError("zeta step needs a nonempty sample batch");
  const int m = zeta.max_length();
  std::vector<double> counts(static_cast<std::size_t>(m), 0.0);
  for (const auto& x : samples) counts[x.size() - 1] += 1.0;
  const double kb = static_cast<double>(samples.size());
  for (int l = 1; l <= m; ++l) {
    const double delta = counts[static_cast<std::size_t>(l - 1)] / kb;
    if (delta > 0.0) zeta(l) += lr * delta / pi0.prob(l);
  }
  zeta.renormalize();
}

void save_model_bundle(const std::string& path, const TrfModel& model, const Proposal& proposal) {
  Checkpoint ck;
  model.write(ck);
  proposal.write(ck, "aux.");
  ck.save(path);
}

Proposal load_proposal(const std::string& path) { return Proposal::read(Checkpoint::load(path), "aux."); }

Trainer::Trainer(TrainConfig cfg, const CorpusStore& train, const CorpusStore* dev, TrfModel& model,
                 Proposal& proposal)
    : cfg_(std::move(cfg)), train_(train), dev_(dev), model_(model), proposal_(proposal) {
  cfg_.validate();
  if (train_.empty()) throw IngestionError("training corpus is empty");
  if (train_.max_length() != model_.max_length()) throw DomainError("corpus and model max lengths differ");
  if (proposal_.vocab_size() != model_.vocab_size()) throw DomainError("proposal and model vocabularies differ");
  model_.validate();

  std::seed_seq data_seed{cfg_.seed, std::uint64_t{0x5eed}};
  data_rng_.seed(data_seed);

  const int n_chains = cfg_.chains > 0 ? cfg_.chains : static_cast<int>(cfg_.batch_samples);
  Rng init_rng;
  std::seed_seq init_seed{cfg_.seed, std::uint64_t{0xc4a1}};
  init_rng.seed(init_seed);
  std::discrete_distribution<int> length_dist(model_.pi0.probs().begin(), model_.pi0.probs().end());
  for (int c = 0; c < n_chains; ++c) {
    const int l = length_dist(init_rng) + 1;
    auto [x, lp] = g_sample({}, l, proposal_, model_.max_length(), init_rng);
    std::seed_seq chain_seed{cfg_.seed, std::uint64_t{0xc0de}, static_cast<std::uint64_t>(c)};
    std::uint64_t s[1];
    chain_seed.generate(s, s + 1);
    chains_.push_back(make_chain(std::move(x), model_, s[0]));
  }

  if (!cfg_.log_csv.empty()) {
    log_ = std::make_unique<std::ofstream>(cfg_.log_csv);
    if (!*log_) throw IngestionError("cannot write training log " + cfg_.log_csv);
    *log_ << "# ntrf-train-log v1\n"
          << "iteration,skipped,lr_theta,lr_zeta,lr_mu,dev_ll,dev_ll_smoothed,kl_estimate,jump_accept,move_accept,zeta\n";
  }
}

std::int64_t Trainer::checkpoint_interval() const {
  if (cfg_.checkpoint_every > 0) return cfg_.checkpoint_every;
  return static_cast<std::int64_t>((train_.size() + cfg_.batch_data - 1) / cfg_.batch_data);
}

double Trainer::dev_loglik() {
  double total = 0.0;
  for (const auto& x : dev_->sentences()) total += sentence_logprob(x, model_);
  return total / static_cast<double>(dev_->size());
}

void Trainer::sample_and_update(const std::vector<TokenSeq>& data, std::vector<TokenSeq>& samples,
                                IterationStats& st) {
  // Split K_B samples over the persistent chains; chain c emits one sample per step.
  const std::size_t n_chains = chains_.size();
  const std::size_t kb = cfg_.batch_samples;
  std::vector<std::vector<TokenSeq>> per_chain(n_chains);
  std::vector<std::int64_t> jump_tries(n_chains), jump_ok(n_chains), blocks(n_chains), block_ok(n_chains);
  parallel_chunks(n_chains, cfg_.workers, [&](std::size_t begin, std::size_t end, int) {
    for (std::size_t c = begin; c < end; ++c) {
      const std::size_t steps = kb / n_chains + (c < kb % n_chains ? 1 : 0);
      ChainState& chain = chains_[c];
      const ChainDiagnostics before = chain.diag;
      for (std::size_t k = 0; k < steps; ++k) {
        transms_step(chain, model_, proposal_, cfg_.jump);
        per_chain[c].push_back(chain.x);
      }
      jump_tries[c] = chain.diag.jump_attempts - before.jump_attempts;
      jump_ok[c] = chain.diag.jump_accepts - before.jump_accepts;
      blocks[c] = chain.diag.move_blocks - before.move_blocks;
      block_ok[c] = chain.diag.move_accepts - before.move_accepts;
    }
  });
  samples.clear();
  samples.reserve(kb);
  std::int64_t jt = 0, ja = 0, mb = 0, ma = 0;
  for (std::size_t c = 0; c < n_chains; ++c) {
    for (auto& x : per_chain[c]) samples.push_back(std::move(x));
    jt += jump_tries[c];
    ja += jump_ok[c];
    mb += blocks[c];
    ma += block_ok[c];
  }
  st.jump_accept_rate = jt ? static_cast<double>(ja) / static_cast<double>(jt) : 0.0;
  st.move_accept_rate = mb ? static_cast<double>(ma) / static_cast<double>(mb) : 0.0;

  const PotentialParams theta_before = model_.theta;
  const Zeta zeta_before = model_.zeta;
  const std::vector<ParamTensor> mu_before = proposal_.tensors();
  try {
    theta_step(data, samples, model_, adam_, st.lr_theta, cfg_.workers);
    zeta_step(samples, model_.zeta, model_.pi0, st.lr_zeta);
    mu_step(samples, proposal_, st.lr_mu, cfg_.mu_clip, cfg_.workers);
    for (const auto& t : model_.theta.tensors()) {
      if (!t.value.allFinite()) throw TrainingError("non-finite parameter " + t.name);
    }
    if (!Eigen::Map<const Vector>(model_.zeta.values().data(), model_.max_length()).allFinite()) {
      throw TrainingError("non-finite zeta");
    }
  } catch (const TrainingError&) {
    model_.theta = theta_before;
    model_.zeta = zeta_before;
    proposal_.tensors() = mu_before;
    throw;
  }
}

IterationStats Trainer::step() {
  ++t_;
  IterationStats st;
  st.iteration = t_;
  st.lr_theta = cfg_.lr_theta(t_);
  st.lr_zeta = cfg_.lr_zeta(t_);
  st.lr_mu = cfg_.lr_mu(t_);

  std::vector<TokenSeq> data = sample_minibatch(train_, cfg_.batch_data, data_rng_);

  std::vector<TokenSeq> samples;
  try {
    sample_and_update(data, samples, st);
    nan_streak_ = 0;
  } catch (const TrainingError& e) {
    st.skipped = true;
    ++nan_streak_;
    spdlog::warn("iteration {}: {}; update skipped", t_, e.what());
    if (nan_streak_ >= cfg_.max_nan_streak) {
      std::ostringstream dump;
      dump << "aborting after " << nan_streak_ << " consecutive non-finite iterations at t=" << t_ << "; zeta =";
      for (double z : model_.zeta.values()) dump << ' ' << format_double(z);
      if (!cfg_.out_dir.empty()) {
        const std::string path = cfg_.out_dir + "/diverged.ntrf";
        save_model_bundle(path, model_, proposal_);
        dump << "; state dumped to " << path;
      }
      throw TrainingError(dump.str());
    }
  }
  st.zeta = model_.zeta.values();
  last_samples_ = std::move(samples);

  if (t_ % cfg_.eval_every == 0) {
    model_.refresh_log_z1();
    if (!last_samples_.empty()) {
      double kl = 0.0;
      for (const auto& x : last_samples_) kl += log_joint_train(x, model_) - q_logprob(x, proposal_);
      st.kl_estimate = kl / static_cast<double>(last_samples_.size());
    }
    if (dev_ && !dev_->empty()) {
      const double ll = dev_loglik();
      st.dev_ll = ll;
      const std::size_t window = std::max<std::size_t>(1, static_cast<std::size_t>(cfg_.smooth_window / cfg_.eval_every));
      dev_window_.push_back(ll);
      dev_window_sum_ += ll;
      if (dev_window_.size() > window) {
        dev_window_sum_ -= dev_window_.front();
        dev_window_.pop_front();
      }
      st.dev_ll_smoothed = dev_window_sum_ / static_cast<double>(dev_window_.size());
    }
  }
  write_log(st);
  return st;
}

void Trainer::write_log(const IterationStats& s) {
  if (!log_) return;
  auto opt = [](const std::optional<double>& v) { return v ? format_double(*v) : std::string(); };
  std::string zeta;
  for (std::size_t i = 0; i < s.zeta.size(); ++i) {
    if (i) zeta += ';';
    zeta += format_double(s.zeta[i]);
  }
  *log_ << s.iteration << ',' << (s.skipped ? 1 : 0) << ',' << format_double(s.lr_theta) << ','
        << format_double(s.lr_zeta) << ',' << format_double(s.lr_mu) << ',' << opt(s.dev_ll) << ','
        << opt(s.dev_ll_smoothed) << ',' << opt(s.kl_estimate) << ',' << format_double(s.jump_accept_rate) << ','
        << format_double(s.move_accept_rate) << ',' << zeta << '\n';
}

void Trainer::save_checkpoint(TrainResult& result) {
  model_.refresh_log_z1();
  result.checkpoints.push_back(model_);
  if (!cfg_.out_dir.empty()) {
    const std::string path = cfg_.out_dir + "/ckpt-" + std::to_string(t_) + ".ntrf";
    save_model_bundle(path, model_, proposal_);
    result.checkpoint_paths.push_back(path);
  }
  while (result.checkpoints.size() > static_cast<std::size_t>(cfg_.cache_depth)) {
    result.checkpoints.erase(result.checkpoints.begin());
  }
  while (result.checkpoint_paths.size() > static_cast<std::size_t>(cfg_.cache_depth)) {
    std::error_code ec;
    std::filesystem::remove(result.checkpoint_paths.front(), ec);
    result.checkpoint_paths.erase(result.checkpoint_paths.begin());
  }
}

TrainResult Trainer::run(const Callback& on_iteration) {
  if (!cfg_.out_dir.empty()) std::filesystem::create_directories(cfg_.out_dir);
  TrainResult result;
  const std::int64_t every = checkpoint_interval();
  while (t_ < cfg_.max_iterations) {
    const IterationStats st = step();
    if (on_iteration) on_iteration(st, *this);
    if (t_ % every == 0) save_checkpoint(result);

    if (cfg_.early_stop && st.dev_ll_smoothed && t_ % cfg_.smooth_window == 0) {
      window_marks_.push_back(*st.dev_ll_smoothed);
      const auto n = window_marks_.size();
      if (n > static_cast<std::size_t>(cfg_.patience) &&
          window_marks_[n - 1] - window_marks_[n - 1 - static_cast<std::size_t>(cfg_.patience)] < cfg_.min_delta) {
        spdlog::info("early stop at iteration {}: smoothed dev log-likelihood plateaued", t_);
        result.early_stopped = true;
        break;
      }
    }
  }
  if (result.checkpoints.empty() || t_ % every != 0) save_checkpoint(result);
  result.iterations = t_;
  model_.refresh_log_z1();
  if (log_) log_->flush();
  return result;
}

}  // namespace ntrf
