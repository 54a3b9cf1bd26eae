#pragma once

#include <cstddef>
#include <vector>

#include "gaitstage/rng.hpp"
#include "gaitstage/tensor.hpp"

namespace gaitstage {

// self-normalizing constants
inline constexpr double kSeluLambda = 1.0507009873554804934193349852946;
inline constexpr double kSeluAlpha = 1.6732632423543772848170429916717;

// positional-encoding scale; keeps the additive table below signal scale
inline constexpr double kPositionalScale = 0.70710678118654752440;  // 1/sqrt(2)

Tensor selu(const Tensor& x);

// exponentials normalized along `axis`, stabilized by max subtraction
Tensor softmax(const Tensor& x, std::size_t axis);

// Training mode zeroes each element with probability `rate` and scales the
// survivors by 1/(1-rate); inference mode is the identity.
Tensor dropout(const Tensor& x, double rate, bool training, CounterRng& rng);

// zero-mean unit-variance over the last axis, then affine gain/offset
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& offset,
                  double epsilon = 1e-5);

// (batch, seq, dim) -> (batch, dim), mean over the sequence axis
Tensor global_average_pool(const Tensor& x);

// per-window maximum; out_length = floor((length - window)/stride) + 1
Tensor maxpool1d(const Tensor& x, std::size_t window, std::size_t stride);

std::size_t valid_out_length(std::size_t length, std::size_t window, std::size_t stride);

// Valid-padding 1D convolution over (batch, in_channels, length).
struct Conv1d {
  Tensor kernel;  // (out_channels, in_channels, kernel_width)
  Tensor bias;    // (out_channels)
  std::size_t stride = 1;

  static Conv1d init(std::size_t in_channels, std::size_t out_channels,
                     std::size_t kernel_width, std::size_t stride, Rng& rng);
  Tensor forward(const Tensor& x) const;
  std::size_t out_length(std::size_t length) const;
  std::size_t kernel_width() const { return kernel.shape()[2]; }
};

// Affine map over the last axis of a rank-2 or rank-3 input.
struct Dense {
  Tensor weight;  // (in_dim, out_dim)
  Tensor bias;    // (out_dim)

  static Dense init(std::size_t in_dim, std::size_t out_dim, Rng& rng,
                    double weight_scale = 1.0);
  Tensor forward(const Tensor& x) const;
  std::size_t in_dim() const { return weight.shape()[0]; }
  std::size_t out_dim() const { return weight.shape()[1]; }
};

// Fixed sinusoidal table scaled by kPositionalScale; a pure function of
// (length, dim), never trained.
struct PositionalEncoding {
  std::size_t length = 0;
  std::size_t dim = 0;
  Tensor table;  // (length, dim)
};

PositionalEncoding positional_encoding(std::size_t length, std::size_t dim);

// adds the table to every batch row of x: (batch, length, dim)
Tensor add_positional_encoding(const Tensor& x, const PositionalEncoding& pe);

struct AttentionResult {
  Tensor output;   // (batch, seq, model_dim)
  Tensor weights;  // (batch, heads, seq, seq); rows over the key axis sum to 1
};

// Pre-norm transformer encoder block: multi-head scaled dot-product
// attention and a SeLU feed-forward (hidden = 4 x model_dim), each wrapped
// in layer_norm -> sublayer -> dropout -> residual add.
struct EncoderBlock {
  std::size_t head_count = 0;
  std::size_t model_dim = 0;
  Dense query, key, value, out_proj;
  Dense ff_expand, ff_contract;
  Tensor norm1_gain, norm1_offset;
  Tensor norm2_gain, norm2_offset;

  static EncoderBlock init(std::size_t model_dim, std::size_t head_count, Rng& rng);

  // attention sublayer on x as given (no norm, no residual)
  AttentionResult self_attention(const Tensor& x) const;

  Tensor forward(const Tensor& x, double dropout_rate, bool training,
                 CounterRng& rng) const;
};

}  // namespace gaitstage
