#include "gaitstage/layers.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <utility>

namespace gaitstage {

namespace {

bool recording(const Tensor& t) { return active_tape() && t.requires_grad(); }

}  // namespace

Tensor selu(const Tensor& x) {
  const auto xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) {
    const double v = xv[i];
    out[i] = v > 0.0 ? kSeluLambda * v : kSeluLambda * kSeluAlpha * std::expm1(v);
  }
  Tensor result(x.shape(), std::move(out));
  if (recording(x)) {
    result.set_requires_grad(true);
    Tensor ti = x, to = result;
    active_tape()->record(result, [ti, to]() mutable {
      const auto g = to.grad();
      if (g.empty() || !ti.requires_grad()) return;
      auto gi = ti.grad_mut();
      const auto xv = ti.values();
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double d = xv[i] > 0.0 ? kSeluLambda : kSeluLambda * kSeluAlpha * std::exp(xv[i]);
        gi[i] += g[i] * d;
      }
    });
  }
  return result;
}

namespace {

struct AxisSplit {
  std::size_t outer, extent, inner;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis) {
  AxisSplit s{1, shape[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

}  // namespace

Tensor softmax(const Tensor& x, std::size_t axis) {
  if (axis >= x.rank()) {
    throw std::invalid_argument("softmax: axis out of range for shape " + shape_str(x.shape()));
  }
  const AxisSplit s = split_axis(x.shape(), axis);
  const auto xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.extent * s.inner + in;
      double hi = xv[base];
      for (std::size_t e = 1; e < s.extent; ++e) hi = std::max(hi, xv[base + e * s.inner]);
      double denom = 0.0;
      for (std::size_t e = 0; e < s.extent; ++e) {
        const double v = std::exp(xv[base + e * s.inner] - hi);
        out[base + e * s.inner] = v;
        denom += v;
      }
      for (std::size_t e = 0; e < s.extent; ++e) out[base + e * s.inner] /= denom;
    }
  }
  Tensor result(x.shape(), std::move(out));
  if (recording(x)) {
    result.set_requires_grad(true);
    Tensor ti = x, to = result;
    active_tape()->record(result, [s, ti, to]() mutable {
      const auto g = to.grad();
      if (g.empty() || !ti.requires_grad()) return;
      auto gi = ti.grad_mut();
      const auto yv = to.values();
      // dx = y * (g - sum(g * y)) along the axis
      for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t in = 0; in < s.inner; ++in) {
          const std::size_t base = o * s.extent * s.inner + in;
          double dot = 0.0;
          for (std::size_t e = 0; e < s.extent; ++e) {
            const std::size_t k = base + e * s.inner;
            dot += g[k] * yv[k];
          }
          for (std::size_t e = 0; e < s.extent; ++e) {
            const std::size_t k = base + e * s.inner;
            gi[k] += yv[k] * (g[k] - dot);
          }
        }
      }
    });
  }
  return result;
}

Tensor dropout(const Tensor& x, double rate, bool training, CounterRng& rng) {
  if (rate < 0.0 || rate >= 1.0) {
    throw std::invalid_argument("dropout: rate must be in [0, 1), got " + std::to_string(rate));
  }
  if (!training || rate == 0.0) return x;
  const double scale = 1.0 / (1.0 - rate);
  const auto xv = x.values();
  std::vector<double> mask(xv.size());
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) {
    mask[i] = rng.uniform() < rate ? 0.0 : scale;
    out[i] = xv[i] * mask[i];
  }
  Tensor result(x.shape(), std::move(out));
  if (recording(x)) {
    result.set_requires_grad(true);
    Tensor ti = x, to = result;
    active_tape()->record(result, [ti, to, mask = std::move(mask)]() mutable {
      const auto g = to.grad();
      if (g.empty() || !ti.requires_grad()) return;
      auto gi = ti.grad_mut();
      for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i] * mask[i];
    });
  }
  return result;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& offset, double epsilon) {
  const std::size_t dim = x.shape().back();
  if (gain.size() != dim || offset.size() != dim) {
    throw std::invalid_argument("layer_norm: gain/offset size must match last axis " +
                                std::to_string(dim));
  }
  const std::size_t rows = x.size() / dim;
  const auto xv = x.values();
  const auto gv = gain.values();
  const auto ov = offset.values();
  std::vector<double> out(x.size());
  std::vector<double> inv_sd(rows);
  std::vector<double> means(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = &xv[r * dim];
    double mean = 0.0;
    for (std::size_t j = 0; j < dim; ++j) mean += row[j];
    mean /= static_cast<double>(dim);
    double var = 0.0;
    for (std::size_t j = 0; j < dim; ++j) {
      const double d = row[j] - mean;
      var += d * d;
    }
    var /= static_cast<double>(dim);
    const double is = 1.0 / std::sqrt(var + epsilon);
    means[r] = mean;
    inv_sd[r] = is;
    double* orow = &out[r * dim];
    for (std::size_t j = 0; j < dim; ++j) orow[j] = (row[j] - mean) * is * gv[j] + ov[j];
  }
  Tensor result(x.shape(), std::move(out));
  if (active_tape() && (x.requires_grad() || gain.requires_grad() || offset.requires_grad())) {
    result.set_requires_grad(true);
    Tensor ti = x, tg = gain, tof = offset, to = result;
    active_tape()->record(
        result, [dim, rows, ti, tg, tof, to, means = std::move(means),
                 inv_sd = std::move(inv_sd)]() mutable {
          const auto g = to.grad();
          if (g.empty()) return;
          const auto xv = ti.values();
          const auto gv = tg.values();
          const bool need_x = ti.requires_grad();
          const bool need_gain = tg.requires_grad();
          const bool need_off = tof.requires_grad();
          std::span<double> gx, gg, go;
          if (need_x) gx = ti.grad_mut();
          if (need_gain) gg = tg.grad_mut();
          if (need_off) go = tof.grad_mut();
          const double n = static_cast<double>(dim);
          for (std::size_t r = 0; r < rows; ++r) {
            const double* row = &xv[r * dim];
            const double* grow = &g[r * dim];
            const double mean = means[r];
            const double is = inv_sd[r];
            if (need_gain || need_off) {
              for (std::size_t j = 0; j < dim; ++j) {
                const double xhat = (row[j] - mean) * is;
                if (need_gain) gg[j] += grow[j] * xhat;
                if (need_off) go[j] += grow[j];
              }
            }
            if (need_x) {
              // dx = is * (dxhat - mean(dxhat) - xhat * mean(dxhat * xhat))
              double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
              for (std::size_t j = 0; j < dim; ++j) {
                const double xhat = (row[j] - mean) * is;
                const double dxhat = grow[j] * gv[j];
                sum_dxhat += dxhat;
                sum_dxhat_xhat += dxhat * xhat;
              }
              const double m1 = sum_dxhat / n;
              const double m2 = sum_dxhat_xhat / n;
              double* gxrow = &gx[r * dim];
              for (std::size_t j = 0; j < dim; ++j) {
                const double xhat = (row[j] - mean) * is;
                const double dxhat = grow[j] * gv[j];
                gxrow[j] += is * (dxhat - m1 - xhat * m2);
              }
            }
          }
        });
  }
  return result;
}

Tensor global_average_pool(const Tensor& x) {
  if (x.rank() != 3) {
    throw std::invalid_argument("global_average_pool expects (batch, seq, dim), got " +
                                shape_str(x.shape()));
  }
  return reduce_mean(x, 1);
}

std::size_t valid_out_length(std::size_t length, std::size_t window, std::size_t stride) {
  return (length - window) / stride + 1;
}

Tensor maxpool1d(const Tensor& x, std::size_t window, std::size_t stride) {
  if (x.rank() != 3) {
    throw std::invalid_argument("maxpool1d expects (batch, channels, length), got " +
                                shape_str(x.shape()));
  }
  const std::size_t batch = x.shape()[0], channels = x.shape()[1], length = x.shape()[2];
  if (window == 0 || stride == 0) throw std::invalid_argument("maxpool1d: zero window or stride");
  if (window > length) {
    throw std::invalid_argument("maxpool1d: window " + std::to_string(window) +
                                " larger than input length " + std::to_string(length));
  }
  const std::size_t out_len = valid_out_length(length, window, stride);
  const auto xv = x.values();
  std::vector<double> out(batch * channels * out_len);
  std::vector<std::size_t> argmax(out.size());
  for (std::size_t bc = 0; bc < batch * channels; ++bc) {
    const double* row = &xv[bc * length];
    for (std::size_t i = 0; i < out_len; ++i) {
      const std::size_t start = i * stride;
      double best = row[start];
      std::size_t best_j = start;
      for (std::size_t j = start + 1; j < start + window; ++j) {
        if (row[j] > best) {  // first maximum wins ties
          best = row[j];
          best_j = j;
        }
      }
      out[bc * out_len + i] = best;
      argmax[bc * out_len + i] = best_j;
    }
  }
  Tensor result(Shape{batch, channels, out_len}, std::move(out));
  if (recording(x)) {
    result.set_requires_grad(true);
    Tensor ti = x, to = result;
    active_tape()->record(result,
                          [length, out_len, ti, to, argmax = std::move(argmax)]() mutable {
                            const auto g = to.grad();
                            if (g.empty() || !ti.requires_grad()) return;
                            auto gi = ti.grad_mut();
                            const std::size_t rows = g.size() / out_len;
                            for (std::size_t bc = 0; bc < rows; ++bc) {
                              for (std::size_t i = 0; i < out_len; ++i) {
                                gi[bc * length + argmax[bc * out_len + i]] +=
                                    g[bc * out_len + i];
                              }
                            }
                          });
  }
  return result;
}

// ---------------------------------------------------------------------------
// conv1d

Conv1d Conv1d::init(std::size_t in_channels, std::size_t out_channels,
                    std::size_t kernel_width, std::size_t stride, Rng& rng) {
  Conv1d layer;
  const std::size_t fan_in = in_channels * kernel_width;
  const double sd = std::sqrt(1.0 / static_cast<double>(fan_in));
  std::vector<double> k(out_channels * in_channels * kernel_width);
  for (double& v : k) v = rng.normal(0.0, sd);
  layer.kernel = Tensor(Shape{out_channels, in_channels, kernel_width}, std::move(k), true);
  layer.bias = Tensor::zeros(Shape{out_channels}, true);
  layer.stride = stride;
  return layer;
}

std::size_t Conv1d::out_length(std::size_t length) const {
  return valid_out_length(length, kernel_width(), stride);
}

Tensor Conv1d::forward(const Tensor& x) const {
  if (x.rank() != 3) {
    throw std::invalid_argument("conv1d expects (batch, in_channels, length), got " +
                                shape_str(x.shape()));
  }
  const std::size_t batch = x.shape()[0], in_ch = x.shape()[1], length = x.shape()[2];
  const std::size_t out_ch = kernel.shape()[0], kw = kernel.shape()[2];
  if (kernel.shape()[1] != in_ch) {
    throw std::invalid_argument("conv1d: kernel expects " + std::to_string(kernel.shape()[1]) +
                                " input channels, input has " + std::to_string(in_ch));
  }
  if (length < kw) {
    throw std::invalid_argument("conv1d: input length " + std::to_string(length) +
                                " shorter than kernel width " + std::to_string(kw));
  }
  const std::size_t out_len = valid_out_length(length, kw, stride);
  const auto xv = x.values();
  const auto wv = kernel.values();
  const auto bv = bias.values();
  std::vector<double> out(batch * out_ch * out_len);
  for (std::size_t b = 0; b < batch; ++b) {
    const double* xb = &xv[b * in_ch * length];
    for (std::size_t oc = 0; oc < out_ch; ++oc) {
      const double* woc = &wv[oc * in_ch * kw];
      double* orow = &out[(b * out_ch + oc) * out_len];
      for (std::size_t i = 0; i < out_len; ++i) {
        // accumulate taps in ascending (channel, tap) order, bias added last
        double acc = 0.0;
        const std::size_t start = i * stride;
        for (std::size_t ic = 0; ic < in_ch; ++ic) {
          const double* xrow = &xb[ic * length + start];
          const double* wrow = &woc[ic * kw];
          for (std::size_t j = 0; j < kw; ++j) acc += xrow[j] * wrow[j];
        }
        orow[i] = acc + bv[oc];
      }
    }
  }
  Tensor result(Shape{batch, out_ch, out_len}, std::move(out));
  if (active_tape() &&
      (x.requires_grad() || kernel.requires_grad() || bias.requires_grad())) {
    result.set_requires_grad(true);
    Tensor ti = x, tk = kernel, tb = bias, to = result;
    const std::size_t str = stride;
    active_tape()->record(result, [batch, in_ch, length, out_ch, kw, out_len, str, ti, tk,
                                   tb, to]() mutable {
      const auto g = to.grad();
      if (g.empty()) return;
      const auto xv = ti.values();
      const auto wv = tk.values();
      const bool need_x = ti.requires_grad();
      const bool need_w = tk.requires_grad();
      const bool need_b = tb.requires_grad();
      std::span<double> gx, gw, gb;
      if (need_x) gx = ti.grad_mut();
      if (need_w) gw = tk.grad_mut();
      if (need_b) gb = tb.grad_mut();
      for (std::size_t b = 0; b < batch; ++b) {
        const double* xb = &xv[b * in_ch * length];
        for (std::size_t oc = 0; oc < out_ch; ++oc) {
          const double* grow = &g[(b * out_ch + oc) * out_len];
          const double* woc = &wv[oc * in_ch * kw];
          for (std::size_t i = 0; i < out_len; ++i) {
            const double gv = grow[i];
            if (gv == 0.0) continue;
            const std::size_t start = i * str;
            if (need_b) gb[oc] += gv;
            for (std::size_t ic = 0; ic < in_ch; ++ic) {
              const std::size_t xoff = ic * length + start;
              const std::size_t woff = ic * kw;
              for (std::size_t j = 0; j < kw; ++j) {
                if (need_x) gx[b * in_ch * length + xoff + j] += gv * woc[woff + j];
                if (need_w) gw[oc * in_ch * kw + woff + j] += gv * xb[xoff + j];
              }
            }
          }
        }
      }
    });
  }
  return result;
}

// ---------------------------------------------------------------------------
// dense

Dense Dense::init(std::size_t in_dim, std::size_t out_dim, Rng& rng, double weight_scale) {
  Dense layer;
  const double sd = weight_scale * std::sqrt(1.0 / static_cast<double>(in_dim));
  std::vector<double> w(in_dim * out_dim);
  for (double& v : w) v = rng.normal(0.0, sd);
  layer.weight = Tensor(Shape{in_dim, out_dim}, std::move(w), true);
  layer.bias = Tensor::zeros(Shape{out_dim}, true);
  return layer;
}

Tensor Dense::forward(const Tensor& x) const {
  if (x.rank() == 2) {
    if (x.shape()[1] != in_dim()) {
      throw std::invalid_argument("dense: input dim " + std::to_string(x.shape()[1]) +
                                  " does not match weight input dim " +
                                  std::to_string(in_dim()));
    }
    return add(matmul(x, weight), bias);
  }
  if (x.rank() == 3) {
    const std::size_t b = x.shape()[0], t = x.shape()[1], d = x.shape()[2];
    if (d != in_dim()) {
      throw std::invalid_argument("dense: input dim " + std::to_string(d) +
                                  " does not match weight input dim " +
                                  std::to_string(in_dim()));
    }
    Tensor flat = reshape(x, Shape{b * t, d});
    Tensor y = add(matmul(flat, weight), bias);
    return reshape(y, Shape{b, t, out_dim()});
  }
  throw std::invalid_argument("dense expects rank-2 or rank-3 input, got " +
                              shape_str(x.shape()));
}

// ---------------------------------------------------------------------------
// positional encoding

PositionalEncoding positional_encoding(std::size_t length, std::size_t dim) {
  if (length == 0 || dim == 0) {
    throw std::invalid_argument("positional_encoding: length and dim must be >= 1");
  }
  std::vector<double> table(length * dim);
  for (std::size_t pos = 0; pos < length; ++pos) {
    for (std::size_t j = 0; j < dim; ++j) {
      const double pair = static_cast<double>(j / 2);
      const double denom = std::pow(10000.0, 2.0 * pair / static_cast<double>(dim));
      const double angle = static_cast<double>(pos) / denom;
      table[pos * dim + j] = kPositionalScale * (j % 2 == 0 ? std::sin(angle) : std::cos(angle));
    }
  }
  PositionalEncoding pe;
  pe.length = length;
  pe.dim = dim;
  pe.table = Tensor(Shape{length, dim}, std::move(table));
  return pe;
}

Tensor add_positional_encoding(const Tensor& x, const PositionalEncoding& pe) {
  if (x.rank() != 3 || x.shape()[1] != pe.length || x.shape()[2] != pe.dim) {
    throw std::invalid_argument("positional encoding (" + std::to_string(pe.length) + ", " +
                                std::to_string(pe.dim) + ") does not match input " +
                                shape_str(x.shape()));
  }
  return add(x, pe.table);
}

// ---------------------------------------------------------------------------
// encoder block

EncoderBlock EncoderBlock::init(std::size_t model_dim, std::size_t head_count, Rng& rng) {
  if (head_count == 0 || model_dim % head_count != 0) {
    throw std::invalid_argument("encoder block: model_dim " + std::to_string(model_dim) +
                                " not divisible by head_count " + std::to_string(head_count));
  }
  EncoderBlock blk;
  blk.head_count = head_count;
  blk.model_dim = model_dim;
  blk.query = Dense::init(model_dim, model_dim, rng);
  blk.key = Dense::init(model_dim, model_dim, rng);
  blk.value = Dense::init(model_dim, model_dim, rng);
  blk.out_proj = Dense::init(model_dim, model_dim, rng);
  blk.ff_expand = Dense::init(model_dim, 4 * model_dim, rng);
  blk.ff_contract = Dense::init(4 * model_dim, model_dim, rng);
  blk.norm1_gain = Tensor::full(Shape{model_dim}, 1.0, true);
  blk.norm1_offset = Tensor::zeros(Shape{model_dim}, true);
  blk.norm2_gain = Tensor::full(Shape{model_dim}, 1.0, true);
  blk.norm2_offset = Tensor::zeros(Shape{model_dim}, true);
  return blk;
}

AttentionResult EncoderBlock::self_attention(const Tensor& x) const {
  if (x.rank() != 3 || x.shape()[2] != model_dim) {
    throw std::invalid_argument("attention expects (batch, seq, " + std::to_string(model_dim) +
                                "), got " + shape_str(x.shape()));
  }
  const std::size_t b = x.shape()[0], t = x.shape()[1];
  const std::size_t h = head_count, dh = model_dim / head_count;
  auto to_heads = [&](const Tensor& proj) {
    // (b, t, d) -> (b*h, t, dh)
    Tensor split = reshape(proj, Shape{b, t, h, dh});
    Tensor swapped = permute(split, {0, 2, 1, 3});
    return reshape(swapped, Shape{b * h, t, dh});
  };
  Tensor q = to_heads(query.forward(x));
  Tensor k = to_heads(key.forward(x));
  Tensor v = to_heads(value.forward(x));
  Tensor scores = bmm(q, permute(k, {0, 2, 1}));
  scores = mul(scores, Tensor::scalar(1.0 / std::sqrt(static_cast<double>(dh))));
  Tensor attn = softmax(scores, 2);  // (b*h, t, t)
  Tensor ctx = bmm(attn, v);
  Tensor merged = reshape(permute(reshape(ctx, Shape{b, h, t, dh}), {0, 2, 1, 3}),
                          Shape{b, t, model_dim});
  AttentionResult result;
  result.output = out_proj.forward(merged);
  result.weights = reshape(attn, Shape{b, h, t, t});
  return result;
}

Tensor EncoderBlock::forward(const Tensor& x, double dropout_rate, bool training,
                             CounterRng& rng) const {
  Tensor attended = self_attention(layer_norm(x, norm1_gain, norm1_offset)).output;
  Tensor h = add(x, dropout(attended, dropout_rate, training, rng));
  Tensor f = ff_contract.forward(selu(ff_expand.forward(layer_norm(h, norm2_gain, norm2_offset))));
  return add(h, dropout(f, dropout_rate, training, rng));
}

}  // namespace gaitstage
