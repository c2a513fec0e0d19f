#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ntrf/corpus.hpp"

namespace ntrf {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// A named parameter with its gradient accumulator. All parameters are
// stored as 2-D matrices; biases and scalars are n x 1.
struct ParamTensor {
  std::string name;
  Matrix value;
  Matrix grad;

  ParamTensor() = default;
  ParamTensor(std::string n, Eigen::Index rows, Eigen::Index cols)
      : name(std::move(n)), value(Matrix::Zero(rows, cols)), grad(Matrix::Zero(rows, cols)) {}
};

// Gradient storage aligned index-by-index with a parameter list. Used as a
// per-worker buffer so backward passes never write into shared tensors.
using GradBuffer = std::vector<Matrix>;

GradBuffer make_grad_buffer(std::span<const ParamTensor> params);
void add_into(GradBuffer& dst, const GradBuffer& src, double scale = 1.0);
bool all_finite(const GradBuffer& g);
double squared_norm(const GradBuffer& g);
void init_uniform(std::span<ParamTensor> params, double bound, Rng& rng);

// Counts normalizations over the whole vocabulary (softmax denominators).
// Sentence scoring by the random-field model must never bump it.
struct OpCounters {
  static std::atomic<std::int64_t> vocab_normalizations;
  static void reset() { vocab_normalizations = 0; }
};

// ---- embedding ------------------------------------------------------------

// `table` is d_e x |V|: column v is the embedding of token v.
Matrix embed_forward(const TokenSeq& ids, const Matrix& table);
void embed_backward(const TokenSeq& ids, const Matrix& upstream, Matrix& table_grad);

// ---- projection -----------------------------------------------------------

// out[:, i] = max(W y_i + b, 0)
Matrix affine_relu_forward(const Matrix& in, const Matrix& weight, const Matrix& bias);
// Accumulates weight/bias gradients; returns the gradient wrt `in`.
Matrix affine_relu_backward(const Matrix& in, const Matrix& out, const Matrix& upstream, const Matrix& weight,
                            Matrix& weight_grad, Matrix& bias_grad);

// ---- half convolution -----------------------------------------------------

// Zero padding used for a filter of width k: ceil((k-1)/2) columns before,
// floor((k-1)/2) after, so the output keeps the input length.
constexpr int halfconv_pad_before(int width) { return width / 2; }
constexpr int halfconv_pad_after(int width) { return (width - 1) / 2; }

// Column i holds the flattened window Y'[:, i:i+k-1] (channel-fastest).
Matrix im2col(const Matrix& in, int width);
Matrix col2im(const Matrix& cols, Eigen::Index channels, int width);

struct ConvCache {
  Matrix cols;  // im2col(input)
  Matrix pre;   // filters * cols
  Matrix out;   // max(pre, 0)
};

// `filters` is d_out x (d_in * width); row o is filter o laid out like an
// im2col column. Returns max(<window, filter>, 0) per output channel.
Matrix halfconv_forward(const Matrix& in, const Matrix& filters, int width, ConvCache* cache = nullptr);
// Accumulates into filter_grad and returns the gradient wrt the input.
Matrix halfconv_backward(const ConvCache& cache, const Matrix& upstream, const Matrix& filters, int width,
                         Eigen::Index in_channels, Matrix& filter_grad);

// Single filter given as a d x k matrix; returns the length-l feature map.
Vector halfconv_single(const Matrix& in, const Matrix& filter);

// ---- max-pooling over time ------------------------------------------------

// Width 2, stride 1, one zero column padded on the left:
// out[:, i] = max(in[:, i-1], in[:, i]) with in[:, -1] = 0.
// `from_current` (optional) records 1 where in[:, i] won (ties go to i).
Matrix maxpool_time(const Matrix& in, Eigen::Matrix<std::int8_t, Eigen::Dynamic, Eigen::Dynamic>* from_current = nullptr);
Matrix maxpool_time_backward(const Eigen::Matrix<std::int8_t, Eigen::Dynamic, Eigen::Dynamic>& from_current,
                             const Matrix& upstream);

// ---- Adam -----------------------------------------------------------------

struct AdamState {
  std::vector<Matrix> first_moment;
  std::vector<Matrix> second_moment;
  std::int64_t step = 0;
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Standard (descent) Adam with bias correction, reading gradients from
// `params[i].grad`. Throws TrainingError and leaves everything untouched if
// any gradient entry is non-finite.
void adam_step(std::span<ParamTensor> params, AdamState& state, double lr, const AdamConfig& cfg = {});

// ---- finite differences ---------------------------------------------------

// Central differences (f(x+eps) - f(x-eps)) / 2eps for every coordinate.
Vector finite_diff_grad(const std::function<double(const Vector&)>& f, const Vector& x, double eps);

// Same, perturbing parameter values in place (restored exactly afterwards).
GradBuffer finite_diff_grad(const std::function<double()>& f, std::span<ParamTensor> params, double eps);

}  // namespace ntrf
