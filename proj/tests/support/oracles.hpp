#pragma once

// Independent reference implementations used to derive expected test values.
// Everything here is deliberately written from the defining formulas, not by
// calling the library code it checks.

#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "gaitstage/rng.hpp"
#include "gaitstage/tensor.hpp"

namespace oracle {

// --- explicit-loop broadcast oracle (trailing-dimension rules) ---

inline std::vector<std::size_t> broadcast_shape(const gaitstage::Shape& a,
                                                const gaitstage::Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  std::vector<std::size_t> out(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t da = i < a.size() ? a[a.size() - 1 - i] : 1;
    const std::size_t db = i < b.size() ? b[b.size() - 1 - i] : 1;
    out[rank - 1 - i] = std::max(da, db);
  }
  return out;
}

// element of a tensor under broadcasting, by explicit multi-index arithmetic
inline double broadcast_at(const std::vector<double>& vals, const gaitstage::Shape& shape,
                           const std::vector<std::size_t>& out_index) {
  std::size_t offset = 0, stride = 1;
  const std::size_t out_rank = out_index.size();
  for (std::size_t i = 0; i < shape.size(); ++i) {
    const std::size_t dim = shape.size() - 1 - i;
    const std::size_t out_dim = out_rank - 1 - i;
    const std::size_t idx = shape[dim] == 1 ? 0 : out_index[out_dim];
    offset += idx * stride;
    stride *= shape[dim];
  }
  return vals[offset];
}

inline std::vector<double> elementwise_oracle(char op, const std::vector<double>& a,
                                              const gaitstage::Shape& sa,
                                              const std::vector<double>& b,
                                              const gaitstage::Shape& sb) {
  const auto out_shape = broadcast_shape(sa, sb);
  std::size_t total = 1;
  for (std::size_t d : out_shape) total *= d;
  std::vector<double> out(total);
  std::vector<std::size_t> idx(out_shape.size(), 0);
  for (std::size_t i = 0; i < total; ++i) {
    const double x = broadcast_at(a, sa, idx);
    const double y = broadcast_at(b, sb, idx);
    out[i] = op == '+' ? x + y : op == '-' ? x - y : x * y;
    for (std::size_t d = out_shape.size(); d-- > 0;) {
      if (++idx[d] < out_shape[d]) break;
      idx[d] = 0;
    }
  }
  return out;
}

// --- convolution oracle: y[i] = sum_{ic, j} x[ic, i*s+j] * w[ic, j] + b ---

inline std::vector<double> conv1d_oracle(const std::vector<double>& x, std::size_t batch,
                                         std::size_t in_ch, std::size_t length,
                                         const std::vector<double>& w, std::size_t out_ch,
                                         std::size_t kw, const std::vector<double>& bias,
                                         std::size_t stride) {
  const std::size_t out_len = (length - kw) / stride + 1;
  std::vector<double> y(batch * out_ch * out_len);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t oc = 0; oc < out_ch; ++oc) {
      for (std::size_t i = 0; i < out_len; ++i) {
        double acc = 0.0;
        for (std::size_t ic = 0; ic < in_ch; ++ic) {
          for (std::size_t j = 0; j < kw; ++j) {
            acc += x[(b * in_ch + ic) * length + i * stride + j] *
                   w[(oc * in_ch + ic) * kw + j];
          }
        }
        y[(b * out_ch + oc) * out_len + i] = acc + bias[oc];
      }
    }
  }
  return y;
}

// --- scalar Nadam oracle, straight from the update equations ---

struct ScalarNadam {
  double alpha = 0.001, beta1 = 0.9, beta2 = 0.999, epsilon = 1e-8;
  double m = 0.0, n = 0.0;
  std::size_t t = 0;

  double step(double theta, double grad) {
    ++t;
    m = beta1 * m + (1.0 - beta1) * grad;
    n = beta2 * n + (1.0 - beta2) * grad * grad;
    const double td = static_cast<double>(t);
    const double m_hat = m / (1.0 - std::pow(beta1, td + 1.0));
    const double n_hat = n / (1.0 - std::pow(beta2, td));
    const double g_hat = grad / (1.0 - std::pow(beta1, td));
    return theta - alpha * (beta1 * m_hat + (1.0 - beta1) * g_hat) /
                       (std::sqrt(n_hat) + epsilon);
  }
};

// --- central finite differences ---

// d(loss)/d(param[index]) by central differences; value_fn re-runs the
// forward pass on the current parameter values without recording
inline double finite_difference(gaitstage::Tensor& param, std::size_t index,
                                const std::function<double()>& value_fn, double step) {
  auto vals = param.values();
  const double original = vals[index];
  vals[index] = original + step;
  const double up = value_fn();
  vals[index] = original - step;
  const double down = value_fn();
  vals[index] = original;
  return (up - down) / (2.0 * step);
}

struct GradCheckOptions {
  double step = 1e-5;
  std::size_t max_coords_per_tensor = SIZE_MAX;  // sample when a tensor is large
  std::uint64_t seed = 7;
};

// Runs loss_fn once under a fresh tape, then checks each parameter's
// autodiff gradient against central differences. Returns the worst
// |analytic - numeric| / max(1, |analytic|, |numeric|) over all checks.
inline double max_gradient_error(std::vector<gaitstage::Tensor> params,
                                 const std::function<gaitstage::Tensor()>& loss_fn,
                                 GradCheckOptions options = {}) {
  using namespace gaitstage;
  for (Tensor& p : params) {
    p.set_requires_grad(true);
    p.zero_grad();
  }
  {
    Tape tape;
    TapeScope scope(tape);
    Tensor loss = loss_fn();
    tape.backward(loss);
  }
  const auto value_fn = [&]() { return loss_fn().item(); };
  Rng rng(options.seed);
  double worst = 0.0;
  for (Tensor& p : params) {
    const auto grad = p.grad();
    std::vector<std::size_t> coords;
    if (p.size() <= options.max_coords_per_tensor) {
      coords.resize(p.size());
      for (std::size_t i = 0; i < p.size(); ++i) coords[i] = i;
    } else {
      for (std::size_t i = 0; i < options.max_coords_per_tensor; ++i) {
        coords.push_back(rng.uniform_index(p.size()));
      }
    }
    for (std::size_t index : coords) {
      const double analytic = grad.empty() ? 0.0 : grad[index];
      const double numeric = finite_difference(p, index, value_fn, options.step);
      const double err = std::abs(analytic - numeric) /
                         std::max({1.0, std::abs(analytic), std::abs(numeric)});
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace oracle
