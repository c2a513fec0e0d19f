#include "ntrf/potential.hpp"

#include <cmath>
#include <limits>

#include "ntrf/errors.hpp"
#include "ntrf/parallel.hpp"

namespace ntrf {

void PotentialConfig::validate() const {
  if (embed_dim < 1 || proj_dim < 1 || max_width < 1 || filters_per_width < 1 || stack_dim < 1 || stack_width < 1) {
    throw ConfigError("potential", "potential sizes must be positive");
  }
  if (stack_depth < 0) throw ConfigError("stack_depth", "stack_depth must be nonnegative");
  if (stack_dim > bank_channels()) {
    throw ConfigError("stack_dim", "stack_dim must not exceed filters_per_width * max_width");
  }
}

PotentialParams::PotentialParams(const PotentialConfig& cfg, int vocab_size) : cfg_(cfg), vocab_size_(vocab_size) {
  cfg_.validate();
  if (vocab_size < 2) throw ConfigError("vocab_size", "vocabulary must hold at least 2 tokens");
  tensors_.emplace_back("E", cfg.embed_dim, vocab_size);
  tensors_.emplace_back("proj_w", cfg.proj_dim, cfg.embed_dim);
  tensors_.emplace_back("proj_b", cfg.proj_dim, 1);
  for (int k = 1; k <= cfg.max_width; ++k) {
    tensors_.emplace_back("bank" + std::to_string(k), cfg.filters_per_width, cfg.proj_dim * k);
  }
  for (int j = 0; j < stack_layers(); ++j) {
    const int in_ch = j == 0 ? cfg.bank_channels() : cfg.stack_dim;
    tensors_.emplace_back("stack" + std::to_string(j + 1), cfg.stack_dim, in_ch * stack_layer_width());
  }
  if (cfg.stack_depth > 0) tensors_.emplace_back("skip", cfg.stack_dim, cfg.stack_depth);
  tensors_.emplace_back("readout", cfg.stack_dim, 1);
  tensors_.emplace_back("offset", 1, 1);
}

void PotentialParams::set_zero() {
  for (auto& t : tensors_) {
    t.value.setZero();
    t.grad.setZero();
  }
}

void PotentialParams::init_uniform(double bound, Rng& rng) { ntrf::init_uniform(tensors_, bound, rng); }

void PotentialParams::write(Checkpoint& ck, const std::string& prefix) const {
  ck.put_string(prefix + "vocab_size", std::to_string(vocab_size_));
  ck.put_string(prefix + "embed_dim", std::to_string(cfg_.embed_dim));
  ck.put_string(prefix + "proj_dim", std::to_string(cfg_.proj_dim));
  ck.put_string(prefix + "max_width", std::to_string(cfg_.max_width));
  ck.put_string(prefix + "filters_per_width", std::to_string(cfg_.filters_per_width));
  ck.put_string(prefix + "stack_depth", std::to_string(cfg_.stack_depth));
  ck.put_string(prefix + "stack_dim", std::to_string(cfg_.stack_dim));
  ck.put_string(prefix + "stack_width", std::to_string(cfg_.stack_width));
  ck.put_string(prefix + "pool", cfg_.pool ? "1" : "0");
  for (const auto& t : tensors_) ck.put(prefix + t.name, t.value);
}

PotentialParams PotentialParams::read(const Checkpoint& ck, const std::string& prefix) {
  auto geti = [&](const std::string& k) { return std::stoi(ck.string(prefix + k)); };
  PotentialConfig cfg;
  cfg.embed_dim = geti("embed_dim");
  cfg.proj_dim = geti("proj_dim");
  cfg.max_width = geti("max_width");
  cfg.filters_per_width = geti("filters_per_width");
  cfg.stack_depth = geti("stack_depth");
  cfg.stack_dim = geti("stack_dim");
  cfg.stack_width = geti("stack_width");
  cfg.pool = geti("pool") != 0;
  PotentialParams p(cfg, geti("vocab_size"));
  for (auto& t : p.tensors_) {
    const Matrix& m = ck.tensor(prefix + t.name);
    if (m.rows() != t.value.rows() || m.cols() != t.value.cols()) {
      throw FormatError("tensor " + prefix + t.name + " has the wrong shape");
    }
    t.value = m;
  }
  return p;
}

namespace {

double min_abs(const Matrix& m) { return m.size() ? m.cwiseAbs().minCoeff() : std::numeric_limits<double>::infinity(); }

double pool_margin(const Matrix& in) {
  double margin = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < in.cols(); ++i) {
    for (Eigen::Index c = 0; c < in.rows(); ++c) {
      const double prev = i > 0 ? in(c, i - 1) : 0.0;
      const double cur = in(c, i);
      // Both clamped to zero by an upstream ReLU is a flat region, not a kink.
      if (std::max(prev, cur) > 0.0) margin = std::min(margin, std::abs(cur - prev));
    }
  }
  return margin;
}

}  // namespace

double phi_forward(const TokenSeq& x, const PotentialParams& theta, PotentialCache* cache) {
  if (x.empty()) throw DomainError("potential of an empty sentence");
  const PotentialConfig& cfg = theta.config();
  const auto l = static_cast<Eigen::Index>(x.size());

  Matrix embedded = embed_forward(x, theta.embedding());
  Matrix projected = affine_relu_forward(embedded, theta.proj_weight(), theta.proj_bias());

  const int w = cfg.filters_per_width;
  Matrix bank_out(cfg.bank_channels(), l);
  std::vector<ConvCache> bank_caches(cache ? static_cast<std::size_t>(cfg.max_width) : 0);
  for (int k = 1; k <= cfg.max_width; ++k) {
    ConvCache* cc = cache ? &bank_caches[static_cast<std::size_t>(k - 1)] : nullptr;
    bank_out.middleRows((k - 1) * w, w) = halfconv_forward(projected, theta.bank(k), k, cc);
  }

  Eigen::Matrix<std::int8_t, Eigen::Dynamic, Eigen::Dynamic> mask;
  Matrix pooled = cfg.pool ? maxpool_time(bank_out, cache ? &mask : nullptr) : bank_out;

  const int layers = theta.stack_layers();
  std::vector<ConvCache> stack_caches(cache ? static_cast<std::size_t>(layers) : 0);
  std::vector<Matrix> stack_outs;
  stack_outs.reserve(static_cast<std::size_t>(layers));
  const Matrix* cur = &pooled;
  for (int j = 0; j < layers; ++j) {
    ConvCache* cc = cache ? &stack_caches[static_cast<std::size_t>(j)] : nullptr;
    stack_outs.push_back(halfconv_forward(*cur, theta.stack(j), theta.stack_layer_width(), cc));
    cur = &stack_outs.back();
  }

  Matrix skip_sum;
  Matrix stack_out;
  if (cfg.stack_depth > 0) {
    skip_sum = Matrix::Zero(cfg.stack_dim, l);
    for (int j = 0; j < layers; ++j) {
      skip_sum += (stack_outs[static_cast<std::size_t>(j)].array().colwise() * theta.skip().col(j).array()).matrix();
    }
    stack_out = skip_sum.cwiseMax(0.0);
  } else {
    stack_out = stack_outs[0];
  }

  const double value = theta.readout().col(0).dot(stack_out.rowwise().sum()) + theta.offset();

  if (cache) {
    double margin = std::numeric_limits<double>::infinity();
    Matrix proj_pre = theta.proj_weight() * embedded;
    proj_pre.colwise() += theta.proj_bias().col(0);
    margin = std::min(margin, min_abs(proj_pre));
    for (const auto& bc : bank_caches) margin = std::min(margin, min_abs(bc.pre));
    if (cfg.pool) margin = std::min(margin, pool_margin(bank_out));
    for (const auto& sc : stack_caches) margin = std::min(margin, min_abs(sc.pre));
    if (cfg.stack_depth > 0) margin = std::min(margin, min_abs(skip_sum));

    cache->ids = x;
    cache->embedded = std::move(embedded);
    cache->projected = std::move(projected);
    cache->bank = std::move(bank_caches);
    cache->bank_out = std::move(bank_out);
    cache->pool_mask = std::move(mask);
    cache->pooled = std::move(pooled);
    cache->stack = std::move(stack_caches);
    cache->skip_sum = std::move(skip_sum);
    cache->stack_out = std::move(stack_out);
    cache->kink_margin = margin;
    cache->valid = true;
  }
  return value;
}

void phi_backward(const PotentialCache& cache, double upstream, const PotentialParams& theta, GradBuffer& grad) {
  if (!cache.valid) throw DomainError("potential backward called without a forward cache");
  if (grad.size() != theta.tensors().size()) throw ShapeError("gradient buffer does not match potential parameters");
  const PotentialConfig& cfg = theta.config();
  const Eigen::Index l = cache.stack_out.cols();
  if (cache.stack_out.rows() != cfg.stack_dim || static_cast<Eigen::Index>(cache.ids.size()) != l) {
    throw DomainError("stale potential cache");
  }

  grad[theta.readout_index()].col(0) += upstream * cache.stack_out.rowwise().sum();
  grad[theta.offset_index()](0, 0) += upstream;
  Matrix d_stack_out = (upstream * theta.readout().col(0)).replicate(1, l);

  const int layers = theta.stack_layers();
  std::vector<Matrix> d_layer(static_cast<std::size_t>(layers));
  if (cfg.stack_depth > 0) {
    Matrix d_skip = (cache.skip_sum.array() > 0.0).select(d_stack_out, 0.0);
    Matrix& skip_grad = grad[theta.skip_index()];
    for (int j = 0; j < layers; ++j) {
      const Matrix& out_j = cache.stack[static_cast<std::size_t>(j)].out;
      skip_grad.col(j) += d_skip.cwiseProduct(out_j).rowwise().sum();
      d_layer[static_cast<std::size_t>(j)] = (d_skip.array().colwise() * theta.skip().col(j).array()).matrix();
    }
  } else {
    d_layer[0] = d_stack_out;
  }

  Matrix d_pooled;
  for (int j = layers - 1; j >= 0; --j) {
    const auto in_ch = j == 0 ? static_cast<Eigen::Index>(cfg.bank_channels()) : static_cast<Eigen::Index>(cfg.stack_dim);
    Matrix d_in = halfconv_backward(cache.stack[static_cast<std::size_t>(j)], d_layer[static_cast<std::size_t>(j)],
                                    theta.stack(j), theta.stack_layer_width(), in_ch, grad[theta.stack_index(j)]);
    if (j > 0) {
      d_layer[static_cast<std::size_t>(j - 1)] += d_in;
    } else {
      d_pooled = std::move(d_in);
    }
  }

  Matrix d_bank = cfg.pool ? maxpool_time_backward(cache.pool_mask, d_pooled) : d_pooled;

  const int w = cfg.filters_per_width;
  Matrix d_projected = Matrix::Zero(cfg.proj_dim, l);
  for (int k = 1; k <= cfg.max_width; ++k) {
    d_projected += halfconv_backward(cache.bank[static_cast<std::size_t>(k - 1)], d_bank.middleRows((k - 1) * w, w),
                                     theta.bank(k), k, cfg.proj_dim, grad[theta.bank_index(k)]);
  }

  Matrix d_embedded = affine_relu_backward(cache.embedded, cache.projected, d_projected, theta.proj_weight(),
                                           grad[PotentialParams::kProjW], grad[PotentialParams::kProjB]);
  embed_backward(cache.ids, d_embedded, grad[PotentialParams::kEmbed]);
}

std::vector<double> phi_batch(const std::vector<TokenSeq>& xs, const PotentialParams& theta, int workers) {
  if (xs.empty()) throw DomainError("potential batch is empty");
  std::vector<double> out(xs.size());
  parallel_chunks(xs.size(), workers, [&](std::size_t begin, std::size_t end, int) {
    for (std::size_t i = begin; i < end; ++i) out[i] = phi_forward(xs[i], theta);
  });
  return out;
}

}  // namespace ntrf
