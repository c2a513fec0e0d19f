#include "ntrf/nn_core.hpp"

#include <cmath>

#include "ntrf/errors.hpp"

namespace ntrf {

std::atomic<std::int64_t> OpCounters::vocab_normalizations{0};

GradBuffer make_grad_buffer(std::span<const ParamTensor> params) {
  GradBuffer g;
  g.reserve(params.size());
  for (const auto& p : params) g.push_back(Matrix::Zero(p.value.rows(), p.value.cols()));
  return g;
}

void add_into(GradBuffer& dst, const GradBuffer& src, double scale) {
  if (dst.size() != src.size()) throw ShapeError("gradient buffers differ in length");
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += scale * src[i];
}

bool all_finite(const GradBuffer& g) {
  for (const auto& m : g) {
    if (!m.allFinite()) return false;
  }
  return true;
}

double squared_norm(const GradBuffer& g) {
  double s = 0.0;
  for (const auto& m : g) s += m.squaredNorm();
  return s;
}

void init_uniform(std::span<ParamTensor> params, double bound, Rng& rng) {
  std::uniform_real_distribution<double> u(-bound, bound);
  for (auto& p : params) {
    for (Eigen::Index j = 0; j < p.value.cols(); ++j)
      for (Eigen::Index i = 0; i < p.value.rows(); ++i) p.value(i, j) = u(rng);
    p.grad.setZero();
  }
}

Matrix embed_forward(const TokenSeq& ids, const Matrix& table) {
  Matrix out(table.rows(), static_cast<Eigen::Index>(ids.size()));
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= table.cols()) {
      throw IndexError("token id " + std::to_string(ids[i]) + " outside embedding table");
    }
    out.col(static_cast<Eigen::Index>(i)) = table.col(ids[i]);
  }
  return out;
}

void embed_backward(const TokenSeq& ids, const Matrix& upstream, Matrix& table_grad) {
  for (std::size_t i = 0; i < ids.size(); ++i) {
    table_grad.col(ids[i]) += upstream.col(static_cast<Eigen::Index>(i));
  }
}

Matrix affine_relu_forward(const Matrix& in, const Matrix& weight, const Matrix& bias) {
  if (weight.cols() != in.rows() || bias.rows() != weight.rows() || bias.cols() != 1) {
    throw ShapeError("affine layer shape mismatch");
  }
  Matrix pre = weight * in;
  pre.colwise() += bias.col(0);
  return pre.cwiseMax(0.0);
}

Matrix affine_relu_backward(const Matrix& in, const Matrix& out, const Matrix& upstream, const Matrix& weight,
                            Matrix& weight_grad, Matrix& bias_grad) {
  // ReLU subgradient at 0 is 0; out > 0 exactly when the pre-activation is.
  Matrix d_pre = (out.array() > 0.0).select(upstream, 0.0);
  weight_grad.noalias() += d_pre * in.transpose();
  bias_grad.col(0) += d_pre.rowwise().sum();
  return weight.transpose() * d_pre;
}

Matrix im2col(const Matrix& in, int width) {
  const Eigen::Index d = in.rows();
  const Eigen::Index l = in.cols();
  const int before = halfconv_pad_before(width);
  Matrix cols = Matrix::Zero(d * width, l);
  for (Eigen::Index i = 0; i < l; ++i) {
    for (int t = 0; t < width; ++t) {
      const Eigen::Index src = i + t - before;
      if (src < 0 || src >= l) continue;
      cols.block(t * d, i, d, 1) = in.col(src);
    }
  }
  return cols;
}

Matrix col2im(const Matrix& cols, Eigen::Index channels, int width) {
  const Eigen::Index l = cols.cols();
  const int before = halfconv_pad_before(width);
  Matrix out = Matrix::Zero(channels, l);
  for (Eigen::Index i = 0; i < l; ++i) {
    for (int t = 0; t < width; ++t) {
      const Eigen::Index dst = i + t - before;
      if (dst < 0 || dst >= l) continue;
      out.col(dst) += cols.block(t * channels, i, channels, 1);
    }
  }
  return out;
}

Matrix halfconv_forward(const Matrix& in, const Matrix& filters, int width, ConvCache* cache) {
  if (width < 1) throw ShapeError("filter width must be at least 1");
  if (filters.cols() != in.rows() * width) throw ShapeError("filter shape does not match input channels");
  if (in.cols() < 1) throw ShapeError("half convolution needs at least one time step");
  Matrix cols = im2col(in, width);
  Matrix pre = filters * cols;
  Matrix out = pre.cwiseMax(0.0);
  if (cache) {
    cache->cols = std::move(cols);
    cache->pre = std::move(pre);
    cache->out = out;
  }
  return out;
}

Matrix halfconv_backward(const ConvCache& cache, const Matrix& upstream, const Matrix& filters, int width,
                         Eigen::Index in_channels, Matrix& filter_grad) {
  Matrix d_pre = (cache.pre.array() > 0.0).select(upstream, 0.0);
  filter_grad.noalias() += d_pre * cache.cols.transpose();
  Matrix d_cols = filters.transpose() * d_pre;
  return col2im(d_cols, in_channels, width);
}

Vector halfconv_single(const Matrix& in, const Matrix& filter) {
  if (filter.rows() != in.rows()) throw ShapeError("filter depth does not match input channels");
  const int width = static_cast<int>(filter.cols());
  // Column-major d x k is already the flattened window layout.
  Matrix row = Eigen::Map<const Matrix>(filter.data(), 1, filter.size());
  return halfconv_forward(in, row, width).row(0).transpose();
}

Matrix maxpool_time(const Matrix& in, Eigen::Matrix<std::int8_t, Eigen::Dynamic, Eigen::Dynamic>* from_current) {
  const Eigen::Index d = in.rows();
  const Eigen::Index l = in.cols();
  Matrix out(d, l);
  if (from_current) from_current->resize(d, l);
  for (Eigen::Index i = 0; i < l; ++i) {
    for (Eigen::Index c = 0; c < d; ++c) {
      const double prev = i > 0 ? in(c, i - 1) : 0.0;
      const double cur = in(c, i);
      const bool take_cur = cur >= prev;
      out(c, i) = take_cur ? cur : prev;
      if (from_current) (*from_current)(c, i) = take_cur ? 1 : 0;
    }
  }
  return out;
}

Matrix maxpool_time_backward(const Eigen::Matrix<std::int8_t, Eigen::Dynamic, Eigen::Dynamic>& from_current,
                             const Matrix& upstream) {
  const Eigen::Index d = upstream.rows();
  const Eigen::Index l = upstream.cols();
  Matrix out = Matrix::Zero(d, l);
  for (Eigen::Index i = 0; i < l; ++i) {
    for (Eigen::Index c = 0; c < d; ++c) {
      if (from_current(c, i)) {
        out(c, i) += upstream(c, i);
      } else if (i > 0) {
        out(c, i - 1) += upstream(c, i);
      }
    }
  }
  return out;
}

void adam_step(std::span<ParamTensor> params, AdamState& state, double lr, const AdamConfig& cfg) {
  if (!(lr > 0.0)) throw DomainError("learning rate must be positive");
  for (const auto& p : params) {
    if (p.grad.rows() != p.value.rows() || p.grad.cols() != p.value.cols()) {
      throw ShapeError("gradient shape differs from parameter " + p.name);
    }
    if (!p.grad.allFinite()) throw TrainingError("non-finite gradient in " + p.name);
  }
  if (state.first_moment.empty()) {
    for (const auto& p : params) {
      state.first_moment.push_back(Matrix::Zero(p.value.rows(), p.value.cols()));
      state.second_moment.push_back(Matrix::Zero(p.value.rows(), p.value.cols()));
    }
  }
  if (state.first_moment.size() != params.size()) throw ShapeError("Adam state does not match parameters");

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    Matrix& m = state.first_moment[i];
    Matrix& v = state.second_moment[i];
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * p.grad;
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * p.grad.cwiseAbs2();
    p.value.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + cfg.eps);
  }
}

Vector finite_diff_grad(const std::function<double(const Vector&)>& f, const Vector& x, double eps) {
  if (!(eps > 0.0)) throw DomainError("finite difference step must be positive");
  Vector g(x.size());
  Vector probe = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + eps;
    const double hi = f(probe);
    probe[i] = x[i] - eps;
    const double lo = f(probe);
    probe[i] = x[i];
    if (!std::isfinite(hi) || !std::isfinite(lo)) throw DomainError("non-finite function value in finite differences");
    g[i] = (hi - lo) / (2.0 * eps);
  }
  return g;
}

GradBuffer finite_diff_grad(const std::function<double()>& f, std::span<ParamTensor> params, double eps) {
  if (!(eps > 0.0)) throw DomainError("finite difference step must be positive");
  GradBuffer g;
  g.reserve(params.size());
  for (auto& p : params) {
    Matrix gp(p.value.rows(), p.value.cols());
    for (Eigen::Index k = 0; k < p.value.size(); ++k) {
      const double orig = p.value.data()[k];
      p.value.data()[k] = orig + eps;
      const double hi = f();
      p.value.data()[k] = orig - eps;
      const double lo = f();
      p.value.data()[k] = orig;
      if (!std::isfinite(hi) || !std::isfinite(lo)) {
        throw DomainError("non-finite function value in finite differences");
      }
      gp.data()[k] = (hi - lo) / (2.0 * eps);
    }
    g.push_back(std::move(gp));
  }
  return g;
}

}  // namespace ntrf
