#include "ntrf/trf_model.hpp"

#include <cmath>
#include <sstream>

#include "ntrf/errors.hpp"
#include "ntrf/logging.hpp"
#include "ntrf/numeric.hpp"
#include "ntrf/parallel.hpp"

namespace ntrf {

Zeta::Zeta(std::vector<double> values) : values_(std::move(values)) {
  if (values_.empty()) throw DomainError("zeta needs at least one entry");
}

void Zeta::renormalize() {
  const double first = values_.front();
  for (double& v : values_) v -= first;
}

void TrfModel::refresh_log_z1() { log_z1 = log_z1_exact(theta); }

void TrfModel::validate() const {
  const int m = max_length();
  if (m < 1) throw DomainError("model has no lengths");
  if (pi_infer.max_length() != m || pi0.max_length() != m) {
    throw DomainError("length distributions do not match the max length");
  }
  if (zeta(1) != 0.0) throw DomainError("zeta_1 must be exactly zero");
  if (theta.vocab_size() != static_cast<int>(vocab.size())) throw DomainError("potential and vocabulary sizes differ");
}

namespace {

std::string join_doubles(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ' ';
    s += format_double(v[i]);
  }
  return s;
}

Matrix as_column(const std::vector<double>& v) { return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size())); }

std::vector<double> from_column(const Matrix& m) { return std::vector<double>(m.data(), m.data() + m.size()); }

}  // namespace

void TrfModel::write(Checkpoint& ck) const {
  ck.put_string("trf.format_version", std::to_string(kFormatVersion));
  std::string vocab_text;
  for (const auto& t : vocab.tokens()) vocab_text += t + '\n';
  ck.put_string("trf.vocab", vocab_text);
  theta.write(ck, "trf.theta.");
  ck.put("trf.zeta", as_column(zeta.values()));
  ck.put("trf.pi_infer", as_column(pi_infer.probs()));
  ck.put("trf.pi0", as_column(pi0.probs()));
  ck.put("trf.log_z1", Matrix::Constant(1, 1, log_z1));
}

TrfModel TrfModel::read(const Checkpoint& ck) {
  if (!ck.has_string("trf.format_version")) throw FormatError("not a model file (missing format version)");
  const int version = std::stoi(ck.string("trf.format_version"));
  if (version != kFormatVersion) {
    throw FormatError("model format version " + std::to_string(version) + " is not supported (expected " +
                      std::to_string(kFormatVersion) + ")");
  }
  TrfModel model;
  std::istringstream vs(ck.string("trf.vocab"));
  std::vector<std::string> tokens;
  for (std::string line; std::getline(vs, line);) tokens.push_back(line);
  model.vocab = Vocab(std::move(tokens));
  model.theta = PotentialParams::read(ck, "trf.theta.");
  model.zeta = Zeta(from_column(ck.tensor("trf.zeta")));
  model.pi_infer = LengthDist(from_column(ck.tensor("trf.pi_infer")));
  model.pi0 = LengthDist(from_column(ck.tensor("trf.pi0")));
  model.log_z1 = ck.tensor("trf.log_z1")(0, 0);
  model.validate();
  return model;
}

void TrfModel::save(const std::string& path) const {
  Checkpoint ck;
  write(ck);
  ck.save(path);
}

TrfModel TrfModel::load(const std::string& path) { return read(Checkpoint::load(path)); }

double log_z1_exact(const PotentialParams& theta) {
  std::vector<double> phis(static_cast<std::size_t>(theta.vocab_size()));
  TokenSeq x(1);
  for (int v = 0; v < theta.vocab_size(); ++v) {
    x[0] = v;
    phis[static_cast<std::size_t>(v)] = phi_forward(x, theta);
  }
  return log_sum_exp(phis);
}

double enumerate_log_z(const PotentialParams& theta, int length) {
  if (length < 1) throw DomainError("length must be positive");
  const double states = std::pow(static_cast<double>(theta.vocab_size()), length);
  if (states > 1e6) throw DomainError("enumeration over " + std::to_string(states) + " sequences exceeds the guard");
  std::vector<double> phis;
  phis.reserve(static_cast<std::size_t>(states));
  for_each_sequence(theta.vocab_size(), length, [&](const TokenSeq& x) { phis.push_back(phi_forward(x, theta)); });
  return log_sum_exp(phis);
}

double log_joint_unnormalized(int length, double phi, const TrfModel& model) {
  const double p0 = model.pi0.prob(length);
  if (!(p0 > 0.0)) throw DomainError("training length prior is zero at length " + std::to_string(length));
  return std::log(p0) + phi - model.zeta(length);
}

double log_joint_train(const TokenSeq& x, const TrfModel& model) {
  const int l = static_cast<int>(x.size());
  if (l < 1 || l > model.max_length()) throw DomainError("sentence length outside [1, m]");
  return log_joint_unnormalized(l, phi_forward(x, model.theta), model) - model.log_z1;
}

double sentence_logprob(const TokenSeq& x, const TrfModel& model) {
  const int l = static_cast<int>(x.size());
  if (l < 1 || l > model.max_length()) throw DomainError("sentence length outside [1, m]");
  const double prior = model.pi_infer.prob(l);
  if (!(prior > 0.0)) {
    spdlog::warn("length {} has zero prior probability; scoring as -inf", l);
    return kNegInf;
  }
  return std::log(prior) + phi_forward(x, model.theta) - model.log_z1 - model.zeta(l);
}

PerplexityReport perplexity(const std::vector<TokenSeq>& test, const TrfModel& model, int workers) {
  std::vector<double> scores(test.size(), kNegInf);
  parallel_chunks(test.size(), workers, [&](std::size_t begin, std::size_t end, int) {
    for (std::size_t i = begin; i < end; ++i) {
      const int l = static_cast<int>(test[i].size());
      if (l >= 1 && l <= model.max_length() && model.pi_infer.prob(l) > 0.0) scores[i] = sentence_logprob(test[i], model);
    }
  });
  PerplexityReport r;
  for (std::size_t i = 0; i < test.size(); ++i) {
    if (scores[i] == kNegInf) {
      ++r.excluded;
      continue;
    }
    r.total_logprob += scores[i];
    r.tokens += test[i].size();
    ++r.sentences;
  }
  if (r.sentences == 0) throw DomainError("no test sentence has a length with nonzero prior");
  if (r.excluded) spdlog::warn("excluded {} sentences with zero-prior or out-of-range lengths", r.excluded);
  r.ppl = std::exp(-r.total_logprob / static_cast<double>(r.tokens));
  return r;
}

}  // namespace ntrf
