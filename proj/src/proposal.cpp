#include "ntrf/proposal.hpp"

#include <cmath>

#include "ntrf/errors.hpp"
#include "ntrf/parallel.hpp"

namespace ntrf {

namespace {

Vector sigmoid(const Vector& v) { return (1.0 / (1.0 + (-v.array()).exp())).matrix(); }

// log sum exp over the first n entries.
double head_lse(const Vector& logits, Eigen::Index n) {
  OpCounters::vocab_normalizations.fetch_add(1, std::memory_order_relaxed);
  const double hi = logits.head(n).maxCoeff();
  return hi + std::log((logits.head(n).array() - hi).exp().sum());
}

}  // namespace

double log_softmax_at(const Vector& logits, TokenId target) { return logits[target] - head_lse(logits, logits.size()); }

double masked_log_softmax_at(const Vector& logits, TokenId target) {
  return logits[target] - head_lse(logits, logits.size() - 1);
}

Proposal::Proposal(const ProposalConfig& cfg, int vocab_size) : cfg_(cfg), vocab_size_(vocab_size) {
  if (cfg.embed_dim < 1 || cfg.hidden < 1) throw ConfigError("proposal", "proposal sizes must be positive");
  if (vocab_size < 2) throw ConfigError("vocab_size", "vocabulary must hold at least 2 tokens");
  const int h = cfg.hidden;
  tensors_.emplace_back("embed", cfg.embed_dim, vocab_size + 1);
  tensors_.emplace_back("w_input", 4 * h, cfg.embed_dim);
  tensors_.emplace_back("w_recurrent", 4 * h, h);
  tensors_.emplace_back("gate_bias", 4 * h, 1);
  tensors_.emplace_back("out_w", vocab_size + 1, h);
  tensors_.emplace_back("out_b", vocab_size + 1, 1);
}

void Proposal::set_zero() {
  for (auto& t : tensors_) {
    t.value.setZero();
    t.grad.setZero();
  }
}

void Proposal::init_uniform(double bound, Rng& rng) { ntrf::init_uniform(tensors_, bound, rng); }

Proposal::State Proposal::start() const {
  State zero{Vector::Zero(cfg_.hidden), Vector::Zero(cfg_.hidden)};
  return advance(zero, bos());
}

Proposal::State Proposal::advance(const State& s, TokenId input) const {
  if (input < 0 || input > vocab_size_) throw IndexError("proposal input id out of range");
  const Eigen::Index h = cfg_.hidden;
  Vector pre = tensors_[kInputW].value * tensors_[kEmbed].value.col(input) + tensors_[kRecurW].value * s.h +
               tensors_[kGateB].value.col(0);
  const Vector i = sigmoid(pre.segment(0, h));
  const Vector f = sigmoid(pre.segment(h, h));
  const Vector o = sigmoid(pre.segment(2 * h, h));
  const Vector g = pre.segment(3 * h, h).array().tanh().matrix();
  State next;
  next.c = f.cwiseProduct(s.c) + i.cwiseProduct(g);
  next.h = o.cwiseProduct(next.c.array().tanh().matrix());
  return next;
}

Proposal::State Proposal::advance(State s, const TokenSeq& inputs) const {
  for (TokenId t : inputs) s = advance(s, t);
  return s;
}

Vector Proposal::logits(const State& s) const { return tensors_[kOutW].value * s.h + tensors_[kOutB].value.col(0); }

double Proposal::continuation_logprob(const State& s, const TokenSeq& u) const {
  double lp = 0.0;
  State cur = s;
  for (std::size_t i = 0; i < u.size(); ++i) {
    if (u[i] < 0 || u[i] >= vocab_size_) throw IndexError("token id out of range");
    lp += masked_log_softmax_at(logits(cur), u[i]);
    if (i + 1 < u.size()) cur = advance(cur, u[i]);
  }
  return lp;
}

std::pair<TokenSeq, double> Proposal::sample_continuation(const State& s, int n, Rng& rng) const {
  TokenSeq u;
  u.reserve(static_cast<std::size_t>(std::max(n, 0)));
  double lp = 0.0;
  State cur = s;
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (int k = 0; k < n; ++k) {
    const Vector z = logits(cur);
    const double lse = head_lse(z, vocab_size_);
    const double r = unif(rng);
    double acc = 0.0;
    TokenId pick = vocab_size_ - 1;
    for (TokenId v = 0; v < vocab_size_; ++v) {
      acc += std::exp(z[v] - lse);
      if (r < acc) {
        pick = v;
        break;
      }
    }
    lp += z[pick] - lse;
    u.push_back(pick);
    if (k + 1 < n) cur = advance(cur, pick);
  }
  return {std::move(u), lp};
}

double Proposal::logprob_and_grad(const TokenSeq& x, GradBuffer* grad) const {
  if (x.empty()) throw DomainError("proposal log-probability of an empty sentence");
  for (TokenId t : x) {
    if (t < 0 || t >= vocab_size_) throw IndexError("token id out of range");
  }
  const Eigen::Index h = cfg_.hidden;
  const std::size_t steps = x.size() + 1;

  struct Step {
    TokenId input;
    Vector i, f, o, g, c_prev, c, h_prev, tanh_c, probs;
    TokenId target;
  };
  std::vector<Step> tape;
  if (grad) tape.reserve(steps);

  double lp = 0.0;
  Vector h_prev = Vector::Zero(h);
  Vector c_prev = Vector::Zero(h);
  const Matrix& E = tensors_[kEmbed].value;
  const Matrix& Wx = tensors_[kInputW].value;
  const Matrix& Wh = tensors_[kRecurW].value;
  const Matrix& Wo = tensors_[kOutW].value;
  for (std::size_t t = 0; t < steps; ++t) {
    const TokenId input = t == 0 ? bos() : x[t - 1];
    const TokenId target = t < x.size() ? x[t] : eos();
    Vector pre = Wx * E.col(input) + Wh * h_prev + tensors_[kGateB].value.col(0);
    Vector i = sigmoid(pre.segment(0, h));
    Vector f = sigmoid(pre.segment(h, h));
    Vector o = sigmoid(pre.segment(2 * h, h));
    Vector g = pre.segment(3 * h, h).array().tanh().matrix();
    Vector c = f.cwiseProduct(c_prev) + i.cwiseProduct(g);
    Vector tanh_c = c.array().tanh().matrix();
    Vector hh = o.cwiseProduct(tanh_c);
    Vector z = Wo * hh + tensors_[kOutB].value.col(0);
    const double lse = head_lse(z, z.size());
    lp += z[target] - lse;
    if (grad) {
      Vector probs = (z.array() - lse).exp().matrix();
      tape.push_back({input, std::move(i), std::move(f), std::move(o), std::move(g), c_prev, c, h_prev,
                      std::move(tanh_c), std::move(probs), target});
    }
    h_prev = std::move(hh);
    c_prev = std::move(c);
  }
  if (!grad) return lp;

  GradBuffer& G = *grad;
  Vector dh_next = Vector::Zero(h);
  Vector dc_next = Vector::Zero(h);
  for (std::size_t k = steps; k-- > 0;) {
    const Step& s = tape[k];
    Vector dz = -s.probs;
    dz[s.target] += 1.0;
    const Vector h_t = s.o.cwiseProduct(s.tanh_c);
    G[kOutW].noalias() += dz * h_t.transpose();
    G[kOutB].col(0) += dz;
    Vector dh = Wo.transpose() * dz + dh_next;

    Vector d_o = dh.cwiseProduct(s.tanh_c);
    Vector dc = dc_next + dh.cwiseProduct(s.o).cwiseProduct((1.0 - s.tanh_c.array().square()).matrix());
    Vector d_i = dc.cwiseProduct(s.g);
    Vector d_g = dc.cwiseProduct(s.i);
    Vector d_f = dc.cwiseProduct(s.c_prev);
    dc_next = dc.cwiseProduct(s.f);

    Vector dpre(4 * h);
    dpre.segment(0, h) = d_i.array() * s.i.array() * (1.0 - s.i.array());
    dpre.segment(h, h) = d_f.array() * s.f.array() * (1.0 - s.f.array());
    dpre.segment(2 * h, h) = d_o.array() * s.o.array() * (1.0 - s.o.array());
    dpre.segment(3 * h, h) = d_g.array() * (1.0 - s.g.array().square());

    G[kInputW].noalias() += dpre * E.col(s.input).transpose();
    G[kRecurW].noalias() += dpre * s.h_prev.transpose();
    G[kGateB].col(0) += dpre;
    G[kEmbed].col(s.input) += Wx.transpose() * dpre;
    dh_next = Wh.transpose() * dpre;
  }
  return lp;
}

void Proposal::write(Checkpoint& ck, const std::string& prefix) const {
  ck.put_string(prefix + "vocab_size", std::to_string(vocab_size_));
  ck.put_string(prefix + "embed_dim", std::to_string(cfg_.embed_dim));
  ck.put_string(prefix + "hidden", std::to_string(cfg_.hidden));
  for (const auto& t : tensors_) ck.put(prefix + t.name, t.value);
}

Proposal Proposal::read(const Checkpoint& ck, const std::string& prefix) {
  ProposalConfig cfg;
  cfg.embed_dim = std::stoi(ck.string(prefix + "embed_dim"));
  cfg.hidden = std::stoi(ck.string(prefix + "hidden"));
  Proposal p(cfg, std::stoi(ck.string(prefix + "vocab_size")));
  for (auto& t : p.tensors_) {
    const Matrix& m = ck.tensor(prefix + t.name);
    if (m.rows() != t.value.rows() || m.cols() != t.value.cols()) {
      throw FormatError("tensor " + prefix + t.name + " has the wrong shape");
    }
    t.value = m;
  }
  return p;
}

double q_logprob(const TokenSeq& x, const Proposal& mu) { return mu.logprob_and_grad(x, nullptr); }

double g_logprob(const TokenSeq& u, const TokenSeq& prefix, const Proposal& mu, int max_length) {
  if (static_cast<int>(prefix.size() + u.size()) > max_length) {
    throw DomainError("prefix plus continuation exceeds the max length");
  }
  if (u.empty()) return 0.0;
  return mu.continuation_logprob(mu.advance(mu.start(), prefix), u);
}

std::pair<TokenSeq, double> g_sample(const TokenSeq& prefix, int n, const Proposal& mu, int max_length, Rng& rng) {
  if (n < 0 || static_cast<int>(prefix.size()) + n > max_length) {
    throw DomainError("prefix plus continuation exceeds the max length");
  }
  if (n == 0) return {TokenSeq{}, 0.0};
  return mu.sample_continuation(mu.advance(mu.start(), prefix), n, rng);
}

double mu_step(const std::vector<TokenSeq>& batch, Proposal& mu, double lr, double clip_norm, int workers) {
  if (batch.empty()) return 0.0;
  const int w = std::max(1, workers);
  std::vector<GradBuffer> partial(static_cast<std::size_t>(w), make_grad_buffer(mu.tensors()));
  parallel_chunks(batch.size(), w, [&](std::size_t begin, std::size_t end, int worker) {
    for (std::size_t i = begin; i < end; ++i) mu.logprob_and_grad(batch[i], &partial[static_cast<std::size_t>(worker)]);
  });
  GradBuffer total = make_grad_buffer(mu.tensors());
  for (const auto& p : partial) add_into(total, p);
  if (!all_finite(total)) throw TrainingError("non-finite proposal gradient");
  const double norm = std::sqrt(squared_norm(total));
  const double scale = (clip_norm > 0.0 && norm > clip_norm) ? clip_norm / norm : 1.0;
  auto& params = mu.tensors();
  for (std::size_t i = 0; i < params.size(); ++i) {
    params[i].grad = total[i];
    params[i].value += (lr * scale) * total[i];
  }
  return norm;
}

}  // namespace ntrf
