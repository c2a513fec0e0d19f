#pragma once

#include <vector>

#include "ntrf/checkpoint.hpp"
#include "ntrf/nn_core.hpp"

namespace ntrf {

// Sizes of the convolutional potential.
//
//   embed_dim          d_e, word embedding size
//   proj_dim           d_p, projection layer output
//   max_width          K, bank filter widths run 1..K
//   filters_per_width  w, bank output has w*K channels
//   stack_depth        n, number of stacked half convolutions (0 allowed)
//   stack_dim          d_s, channels of every stack layer
//   stack_width        filter width of the stack layers
//   pool               width-2 stride-1 max-pool after the bank
struct PotentialConfig {
  int embed_dim = 32;
  int proj_dim = 16;
  int max_width = 4;
  int filters_per_width = 16;
  int stack_depth = 2;
  int stack_dim = 16;
  int stack_width = 3;
  bool pool = true;

  int bank_channels() const { return filters_per_width * max_width; }
  void validate() const;
};

// All potential parameters, held in one flat list so optimizers, gradient
// buffers and checkpoints can treat them uniformly.
class PotentialParams {
 public:
  PotentialParams() = default;
  PotentialParams(const PotentialConfig& cfg, int vocab_size);

  const PotentialConfig& config() const { return cfg_; }
  int vocab_size() const { return vocab_size_; }

  std::vector<ParamTensor>& tensors() { return tensors_; }
  const std::vector<ParamTensor>& tensors() const { return tensors_; }

  const Matrix& embedding() const { return tensors_[kEmbed].value; }
  const Matrix& proj_weight() const { return tensors_[kProjW].value; }
  const Matrix& proj_bias() const { return tensors_[kProjB].value; }
  // Width-k bank filters: w x (d_p * k).
  const Matrix& bank(int width) const { return tensors_[bank_index(width)].value; }
  // Stack layer j (0-based). With n = 0 there is one 1x1 layer.
  const Matrix& stack(int layer) const { return tensors_[stack_index(layer)].value; }
  int stack_layers() const { return cfg_.stack_depth > 0 ? cfg_.stack_depth : 1; }
  int stack_layer_width() const { return cfg_.stack_depth > 0 ? cfg_.stack_width : 1; }
  // d_s x n skip weights; column j scales layer j. Absent when n = 0.
  const Matrix& skip() const { return tensors_[skip_index()].value; }
  const Matrix& readout() const { return tensors_[readout_index()].value; }
  double offset() const { return tensors_[offset_index()].value(0, 0); }

  std::size_t bank_index(int width) const { return kFirstBank + static_cast<std::size_t>(width - 1); }
  std::size_t stack_index(int layer) const {
    return kFirstBank + static_cast<std::size_t>(cfg_.max_width + layer);
  }
  std::size_t skip_index() const { return stack_index(stack_layers()); }
  std::size_t readout_index() const { return skip_index() + (cfg_.stack_depth > 0 ? 1 : 0); }
  std::size_t offset_index() const { return readout_index() + 1; }

  void set_zero();
  void init_uniform(double bound, Rng& rng);

  void write(Checkpoint& ck, const std::string& prefix) const;
  static PotentialParams read(const Checkpoint& ck, const std::string& prefix);

  static constexpr std::size_t kEmbed = 0;
  static constexpr std::size_t kProjW = 1;
  static constexpr std::size_t kProjB = 2;
  static constexpr std::size_t kFirstBank = 3;

 private:
  PotentialConfig cfg_;
  int vocab_size_ = 0;
  std::vector<ParamTensor> tensors_;
};

// Intermediate activations of one forward pass.
struct PotentialCache {
  TokenSeq ids;
  Matrix embedded;                   // d_e x l
  Matrix projected;                  // d_p x l
  std::vector<ConvCache> bank;       // one per width
  Matrix bank_out;                   // wK x l, before pooling
  Eigen::Matrix<std::int8_t, Eigen::Dynamic, Eigen::Dynamic> pool_mask;
  Matrix pooled;                     // wK x l
  std::vector<ConvCache> stack;      // one per stack layer
  Matrix skip_sum;                   // sum_j a_j * Y_s^j, before ReLU
  Matrix stack_out;                  // d_s x l
  // Smallest distance of any ReLU pre-activation or active max-pool pair to
  // its kink. Gradient checks reject instances where this is tiny.
  double kink_margin = 0.0;
  bool valid = false;
};

// phi(x) = readout . sum_i Y_s[:, i] + offset.
double phi_forward(const TokenSeq& x, const PotentialParams& theta, PotentialCache* cache = nullptr);

// Accumulates upstream * d phi / d theta into `grad` (aligned with
// theta.tensors()). Throws DomainError on a cache not produced by a forward pass.
void phi_backward(const PotentialCache& cache, double upstream, const PotentialParams& theta, GradBuffer& grad);

std::vector<double> phi_batch(const std::vector<TokenSeq>& xs, const PotentialParams& theta, int workers = 1);

}  // namespace ntrf
