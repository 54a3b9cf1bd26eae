#include "gaitstage/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace gaitstage {

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ')';
  return os.str();
}

struct Tensor::Data {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // empty until populated
  bool requires_grad = false;
};

namespace {

const Shape kEmptyShape;

[[noreturn]] void throw_shape(const std::string& what) {
  throw std::invalid_argument(what);
}

void check_positive_extents(const Shape& shape) {
  for (std::size_t d : shape) {
    if (d == 0) throw_shape("tensor shape has zero extent: " + shape_str(shape));
  }
}

std::vector<std::size_t> row_major_strides(const Shape& shape) {
  std::vector<std::size_t> strides(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) {
    strides[i - 1] = strides[i] * shape[i];
  }
  return strides;
}

}  // namespace

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad) {
  check_positive_extents(shape);
  if (shape_size(shape) != values.size()) {
    throw_shape("tensor data size " + std::to_string(values.size()) +
                " does not match shape " + shape_str(shape));
  }
  d_ = std::make_shared<Data>();
  d_->shape = std::move(shape);
  d_->values = std::move(values);
  d_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  const std::size_t n = shape_size(shape);
  return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const std::size_t n = shape_size(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor(Shape{1}, std::vector<double>{value}, requires_grad);
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows,
                      bool requires_grad) {
  const std::size_t r = rows.size();
  const std::size_t c = r ? rows.begin()->size() : 0;
  std::vector<double> values;
  values.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw_shape("matrix rows have unequal lengths");
    values.insert(values.end(), row.begin(), row.end());
  }
  return Tensor(Shape{r, c}, std::move(values), requires_grad);
}

const Shape& Tensor::shape() const { return d_ ? d_->shape : kEmptyShape; }

std::size_t Tensor::size() const { return d_ ? d_->values.size() : 0; }

std::span<double> Tensor::values() {
  return d_ ? std::span<double>(d_->values) : std::span<double>();
}

std::span<const double> Tensor::values() const {
  return d_ ? std::span<const double>(d_->values) : std::span<const double>();
}

double Tensor::item() const {
  if (size() != 1) {
    throw std::invalid_argument("item() on tensor of shape " + shape_str(shape()));
  }
  return d_->values[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  if (!d_ || index.size() != d_->shape.size()) {
    throw std::invalid_argument("index rank does not match tensor rank");
  }
  const auto strides = row_major_strides(d_->shape);
  std::size_t offset = 0;
  std::size_t i = 0;
  for (std::size_t idx : index) {
    if (idx >= d_->shape[i]) throw std::out_of_range("tensor index out of range");
    offset += idx * strides[i++];
  }
  return d_->values[offset];
}

bool Tensor::requires_grad() const { return d_ && d_->requires_grad; }

void Tensor::set_requires_grad(bool value) {
  if (d_) d_->requires_grad = value;
}

bool Tensor::has_grad() const { return d_ && !d_->grad.empty(); }

std::span<const double> Tensor::grad() const {
  return has_grad() ? std::span<const double>(d_->grad) : std::span<const double>();
}

std::span<double> Tensor::grad_mut() {
  if (!d_) throw std::logic_error("grad_mut() on empty tensor");
  if (d_->grad.empty()) d_->grad.assign(d_->values.size(), 0.0);
  return std::span<double>(d_->grad);
}

void Tensor::zero_grad() {
  if (d_) d_->grad.clear();
}

Tensor Tensor::clone() const {
  if (!d_) return Tensor();
  return Tensor(d_->shape, d_->values, false);
}

// ---------------------------------------------------------------------------
// tape

namespace {
thread_local Tape* g_active_tape = nullptr;
}

Tape* active_tape() { return g_active_tape; }

TapeScope::TapeScope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }

TapeScope::~TapeScope() { g_active_tape = previous_; }

void Tape::record(Tensor output, std::function<void()> rule) {
  nodes_.push_back(Node{std::move(output), std::move(rule)});
}

void Tape::clear() { nodes_.clear(); }

void Tape::backward(const Tensor& loss) {
  if (loss.size() != 1) {
    throw std::invalid_argument("backward: loss must be scalar, got shape " +
                                shape_str(loss.shape()));
  }
  bool found = false;
  for (auto& node : nodes_) {
    node.output.zero_grad();
    if (node.output.same_storage(loss)) found = true;
  }
  if (!found) {
    throw std::invalid_argument("backward: loss was not produced by recorded operations");
  }
  Tensor seed = loss;
  seed.grad_mut()[0] = 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    it->rule();
  }
}

void backward(const Tensor& loss) {
  Tape* tape = active_tape();
  if (!tape) throw std::logic_error("backward: no active tape");
  tape->backward(loss);
}

// ---------------------------------------------------------------------------
// broadcasting

namespace {

struct BroadcastPlan {
  Shape out;
  // per output axis: element stride into each input, 0 on broadcast axes
  std::vector<std::size_t> stride_a;
  std::vector<std::size_t> stride_b;
  bool same_shape = false;
};

BroadcastPlan make_broadcast(const Shape& a, const Shape& b) {
  BroadcastPlan plan;
  if (a == b) {
    plan.out = a;
    plan.same_shape = true;
    return plan;
  }
  const std::size_t rank = std::max(a.size(), b.size());
  plan.out.resize(rank);
  const auto sa = row_major_strides(a);
  const auto sb = row_major_strides(b);
  plan.stride_a.assign(rank, 0);
  plan.stride_b.assign(rank, 0);
  for (std::size_t i = 0; i < rank; ++i) {
    // align on trailing dimensions
    const std::size_t da = i < a.size() ? a[a.size() - 1 - i] : 1;
    const std::size_t db = i < b.size() ? b[b.size() - 1 - i] : 1;
    const std::size_t axis = rank - 1 - i;
    if (da == db) {
      plan.out[axis] = da;
      if (i < a.size()) plan.stride_a[axis] = sa[a.size() - 1 - i];
      if (i < b.size()) plan.stride_b[axis] = sb[b.size() - 1 - i];
    } else if (da == 1) {
      plan.out[axis] = db;
      plan.stride_b[axis] = sb[b.size() - 1 - i];
    } else if (db == 1) {
      plan.out[axis] = da;
      if (i < a.size()) plan.stride_a[axis] = sa[a.size() - 1 - i];
    } else {
      throw_shape("shapes " + shape_str(a) + " and " + shape_str(b) +
                  " are not broadcast-compatible");
    }
  }
  return plan;
}

// Applies fn(out_index, a_offset, b_offset) over the broadcast output space.
template <class Fn>
void for_each_broadcast(const BroadcastPlan& plan, Fn&& fn) {
  const std::size_t rank = plan.out.size();
  const std::size_t total = shape_size(plan.out);
  std::vector<std::size_t> idx(rank, 0);
  std::size_t oa = 0, ob = 0;
  for (std::size_t i = 0; i < total; ++i) {
    fn(i, oa, ob);
    for (std::size_t d = rank; d-- > 0;) {
      idx[d]++;
      oa += plan.stride_a[d];
      ob += plan.stride_b[d];
      if (idx[d] < plan.out[d]) break;
      oa -= plan.stride_a[d] * plan.out[d];
      ob -= plan.stride_b[d] * plan.out[d];
      idx[d] = 0;
    }
  }
}

// Accumulates g (laid out as plan.out) into a buffer with the given stride
// map; broadcast axes fold multiple g elements into one slot.
void scatter_accumulate(const BroadcastPlan& plan, std::span<const double> g,
                        const std::vector<std::size_t>& strides, std::span<double> acc,
                        std::span<const double> scale_other = {},
                        const std::vector<std::size_t>* strides_other = nullptr) {
  const std::size_t rank = plan.out.size();
  const std::size_t total = g.size();
  std::vector<std::size_t> idx(rank, 0);
  std::size_t off = 0, off_other = 0;
  for (std::size_t i = 0; i < total; ++i) {
    const double v = scale_other.empty() ? g[i] : g[i] * scale_other[off_other];
    acc[off] += v;
    for (std::size_t d = rank; d-- > 0;) {
      idx[d]++;
      off += strides[d];
      if (strides_other) off_other += (*strides_other)[d];
      if (idx[d] < plan.out[d]) break;
      off -= strides[d] * plan.out[d];
      if (strides_other) off_other -= (*strides_other)[d] * plan.out[d];
      idx[d] = 0;
    }
  }
}

bool should_record(std::initializer_list<const Tensor*> inputs) {
  if (!active_tape()) return false;
  for (const Tensor* t : inputs) {
    if (t->requires_grad()) return true;
  }
  return false;
}

}  // namespace

// ---------------------------------------------------------------------------
// elementwise

Tensor elementwise(Elementwise op, const Tensor& a, const Tensor& b) {
  BroadcastPlan plan = make_broadcast(a.shape(), b.shape());
  std::vector<double> out(shape_size(plan.out));
  const auto av = a.values();
  const auto bv = b.values();
  if (plan.same_shape) {
    switch (op) {
      case Elementwise::add:
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
        break;
      case Elementwise::sub:
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
        break;
      case Elementwise::mul:
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
        break;
    }
  } else {
    switch (op) {
      case Elementwise::add:
        for_each_broadcast(plan, [&](std::size_t i, std::size_t oa, std::size_t ob) {
          out[i] = av[oa] + bv[ob];
        });
        break;
      case Elementwise::sub:
        for_each_broadcast(plan, [&](std::size_t i, std::size_t oa, std::size_t ob) {
          out[i] = av[oa] - bv[ob];
        });
        break;
      case Elementwise::mul:
        for_each_broadcast(plan, [&](std::size_t i, std::size_t oa, std::size_t ob) {
          out[i] = av[oa] * bv[ob];
        });
        break;
    }
  }
  Tensor result(plan.out, std::move(out));
  if (should_record({&a, &b})) {
    result.set_requires_grad(true);
    Tensor ta = a, tb = b, to = result;
    active_tape()->record(result, [op, plan, ta, tb, to]() mutable {
      const auto g = to.grad();
      if (g.empty()) return;
      const std::size_t rank = plan.out.size();
      const std::vector<std::size_t> unit(rank, 0);
      const auto& sa = plan.same_shape ? unit : plan.stride_a;
      const auto& sb = plan.same_shape ? unit : plan.stride_b;
      if (plan.same_shape) {
        if (ta.requires_grad()) {
          auto ga = ta.grad_mut();
          const auto bv = tb.values();
          switch (op) {
            case Elementwise::add:
            case Elementwise::sub:
              for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
              break;
            case Elementwise::mul:
              for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
              break;
          }
        }
        if (tb.requires_grad()) {
          auto gb = tb.grad_mut();
          const auto av = ta.values();
          switch (op) {
            case Elementwise::add:
              for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
              break;
            case Elementwise::sub:
              for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
              break;
            case Elementwise::mul:
              for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
              break;
          }
        }
        return;
      }
      if (ta.requires_grad()) {
        auto ga = ta.grad_mut();
        if (op == Elementwise::mul) {
          scatter_accumulate(plan, g, sa, ga, tb.values(), &plan.stride_b);
        } else {
          scatter_accumulate(plan, g, sa, ga);
        }
      }
      if (tb.requires_grad()) {
        auto gb = tb.grad_mut();
        if (op == Elementwise::mul) {
          scatter_accumulate(plan, g, sb, gb, ta.values(), &plan.stride_a);
        } else if (op == Elementwise::add) {
          scatter_accumulate(plan, g, sb, gb);
        } else {
          std::vector<double> neg(g.size());
          for (std::size_t i = 0; i < g.size(); ++i) neg[i] = -g[i];
          scatter_accumulate(plan, neg, sb, gb);
        }
      }
    });
  }
  return result;
}

Tensor add(const Tensor& a, const Tensor& b) { return elementwise(Elementwise::add, a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return elementwise(Elementwise::sub, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return elementwise(Elementwise::mul, a, b); }

// sub broadcast backward needs negation; handled above.

// ---------------------------------------------------------------------------
// matrix products

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2) {
    throw_shape("matmul expects rank-2 tensors, got " + shape_str(a.shape()) + " and " +
                shape_str(b.shape()));
  }
  const std::size_t m = a.shape()[0], k = a.shape()[1];
  const std::size_t k2 = b.shape()[0], n = b.shape()[1];
  if (k != k2) {
    throw_shape("matmul inner dimensions disagree: " + shape_str(a.shape()) + " vs " +
                shape_str(b.shape()));
  }
  std::vector<double> out(m * n, 0.0);
  const auto av = a.values();
  const auto bv = b.values();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t l = 0; l < k; ++l) {
      const double ail = av[i * k + l];
      if (ail == 0.0) continue;
      const double* brow = &bv[l * n];
      double* crow = &out[i * n];
      for (std::size_t j = 0; j < n; ++j) crow[j] += ail * brow[j];
    }
  }
  Tensor result(Shape{m, n}, std::move(out));
  if (should_record({&a, &b})) {
    result.set_requires_grad(true);
    Tensor ta = a, tb = b, to = result;
    active_tape()->record(result, [m, k, n, ta, tb, to]() mutable {
      const auto g = to.grad();
      if (g.empty()) return;
      if (ta.requires_grad()) {  // da = g . b^T
        auto ga = ta.grad_mut();
        const auto bv = tb.values();
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t l = 0; l < k; ++l) {
            double acc = 0.0;
            const double* grow = &g[i * n];
            const double* brow = &bv[l * n];
            for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
            ga[i * k + l] += acc;
          }
        }
      }
      if (tb.requires_grad()) {  // db = a^T . g
        auto gb = tb.grad_mut();
        const auto av = ta.values();
        for (std::size_t i = 0; i < m; ++i) {
          const double* grow = &g[i * n];
          for (std::size_t l = 0; l < k; ++l) {
            const double ail = av[i * k + l];
            if (ail == 0.0) continue;
            double* gbrow = &gb[l * n];
            for (std::size_t j = 0; j < n; ++j) gbrow[j] += ail * grow[j];
          }
        }
      }
    });
  }
  return result;
}

Tensor bmm(const Tensor& a, const Tensor& b) {
  if (a.rank() != 3 || b.rank() != 3) {
    throw_shape("bmm expects rank-3 tensors, got " + shape_str(a.shape()) + " and " +
                shape_str(b.shape()));
  }
  const std::size_t nb = a.shape()[0], m = a.shape()[1], k = a.shape()[2];
  if (b.shape()[0] != nb || b.shape()[1] != k) {
    throw_shape("bmm shapes disagree: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  const std::size_t n = b.shape()[2];
  std::vector<double> out(nb * m * n, 0.0);
  const auto av = a.values();
  const auto bv = b.values();
  for (std::size_t t = 0; t < nb; ++t) {
    const double* ab = &av[t * m * k];
    const double* bb = &bv[t * k * n];
    double* cb = &out[t * m * n];
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t l = 0; l < k; ++l) {
        const double ail = ab[i * k + l];
        if (ail == 0.0) continue;
        const double* brow = &bb[l * n];
        double* crow = &cb[i * n];
        for (std::size_t j = 0; j < n; ++j) crow[j] += ail * brow[j];
      }
    }
  }
  Tensor result(Shape{nb, m, n}, std::move(out));
  if (should_record({&a, &b})) {
    result.set_requires_grad(true);
    Tensor ta = a, tb = b, to = result;
    active_tape()->record(result, [nb, m, k, n, ta, tb, to]() mutable {
      const auto g = to.grad();
      if (g.empty()) return;
      if (ta.requires_grad()) {
        auto ga = ta.grad_mut();
        const auto bv = tb.values();
        for (std::size_t t = 0; t < nb; ++t) {
          const double* gb_ = &g[t * m * n];
          const double* bb = &bv[t * k * n];
          double* gab = &ga[t * m * k];
          for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t l = 0; l < k; ++l) {
              double acc = 0.0;
              for (std::size_t j = 0; j < n; ++j) acc += gb_[i * n + j] * bb[l * n + j];
              gab[i * k + l] += acc;
            }
          }
        }
      }
      if (tb.requires_grad()) {
        auto gb = tb.grad_mut();
        const auto av = ta.values();
        for (std::size_t t = 0; t < nb; ++t) {
          const double* gb_ = &g[t * m * n];
          const double* ab = &av[t * m * k];
          double* gbb = &gb[t * k * n];
          for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t l = 0; l < k; ++l) {
              const double ail = ab[i * k + l];
              if (ail == 0.0) continue;
              for (std::size_t j = 0; j < n; ++j) gbb[l * n + j] += ail * gb_[i * n + j];
            }
          }
        }
      }
    });
  }
  return result;
}

// ---------------------------------------------------------------------------
// reductions

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

Shape drop_axis(const Shape& shape, std::size_t axis) {
  Shape out;
  out.reserve(shape.size() - 1);
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i != axis) out.push_back(shape[i]);
  }
  if (out.empty()) out.push_back(1);  // scalar result keeps shape (1)
  return out;
}

}  // namespace

Tensor reduce(Reduce op, const Tensor& t, std::size_t axis) {
  if (axis >= t.rank()) {
    throw std::invalid_argument("reduce: axis " + std::to_string(axis) +
                                " out of range for shape " + shape_str(t.shape()));
  }
  const AxisSplit s = split_axis(t.shape(), axis);
  const auto tv = t.values();
  std::vector<double> out(s.outer * s.inner, 0.0);
  std::vector<std::size_t> argmax;
  if (op == Reduce::max) argmax.assign(out.size(), 0);
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.extent * s.inner + in;
      if (op == Reduce::max) {
        double best = tv[base];
        std::size_t best_i = 0;
        for (std::size_t e = 1; e < s.extent; ++e) {
          const double v = tv[base + e * s.inner];
          if (v > best) {  // ties keep the lowest index
            best = v;
            best_i = e;
          }
        }
        out[o * s.inner + in] = best;
        argmax[o * s.inner + in] = best_i;
      } else {
        double acc = 0.0;
        for (std::size_t e = 0; e < s.extent; ++e) acc += tv[base + e * s.inner];
        out[o * s.inner + in] = op == Reduce::mean ? acc / static_cast<double>(s.extent) : acc;
      }
    }
  }
  Tensor result(drop_axis(t.shape(), axis), std::move(out));
  if (should_record({&t})) {
    result.set_requires_grad(true);
    Tensor ti = t, to = result;
    active_tape()->record(result, [op, s, ti, to, argmax = std::move(argmax)]() mutable {
      const auto g = to.grad();
      if (g.empty() || !ti.requires_grad()) return;
      auto gi = ti.grad_mut();
      const double scale = op == Reduce::mean ? 1.0 / static_cast<double>(s.extent) : 1.0;
      for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t in = 0; in < s.inner; ++in) {
          const std::size_t oi = o * s.inner + in;
          const std::size_t base = o * s.extent * s.inner + in;
          if (op == Reduce::max) {
            gi[base + argmax[oi] * s.inner] += g[oi];
          } else {
            const double gv = g[oi] * scale;
            for (std::size_t e = 0; e < s.extent; ++e) gi[base + e * s.inner] += gv;
          }
        }
      }
    });
  }
  return result;
}

Tensor reduce_sum(const Tensor& t, std::size_t axis) { return reduce(Reduce::sum, t, axis); }
Tensor reduce_mean(const Tensor& t, std::size_t axis) { return reduce(Reduce::mean, t, axis); }
Tensor reduce_max(const Tensor& t, std::size_t axis) { return reduce(Reduce::max, t, axis); }

Tensor sum_all(const Tensor& t) {
  const auto tv = t.values();
  double acc = 0.0;
  for (double v : tv) acc += v;
  Tensor result = Tensor::scalar(acc);
  if (should_record({&t})) {
    result.set_requires_grad(true);
    Tensor ti = t, to = result;
    active_tape()->record(result, [ti, to]() mutable {
      const auto g = to.grad();
      if (g.empty() || !ti.requires_grad()) return;
      auto gi = ti.grad_mut();
      for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += g[0];
    });
  }
  return result;
}

// ---------------------------------------------------------------------------
// layout

Tensor reshape(const Tensor& t, Shape new_shape) {
  if (shape_size(new_shape) != t.size()) {
    throw_shape("reshape from " + shape_str(t.shape()) + " to " + shape_str(new_shape) +
                " changes element count");
  }
  const auto tv = t.values();
  Tensor result(std::move(new_shape), std::vector<double>(tv.begin(), tv.end()));
  if (should_record({&t})) {
    result.set_requires_grad(true);
    Tensor ti = t, to = result;
    active_tape()->record(result, [ti, to]() mutable {
      const auto g = to.grad();
      if (g.empty() || !ti.requires_grad()) return;
      auto gi = ti.grad_mut();
      for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += g[i];
    });
  }
  return result;
}

namespace {

std::vector<std::size_t> inverse_permutation(const std::vector<std::size_t>& axes) {
  std::vector<std::size_t> inv(axes.size());
  for (std::size_t i = 0; i < axes.size(); ++i) inv[axes[i]] = i;
  return inv;
}

void permute_into(const Shape& in_shape, std::span<const double> in,
                  const std::vector<std::size_t>& axes, std::span<double> out,
                  bool accumulate) {
  const std::size_t rank = in_shape.size();
  const auto in_strides = row_major_strides(in_shape);
  Shape out_shape(rank);
  std::vector<std::size_t> gather(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    out_shape[i] = in_shape[axes[i]];
    gather[i] = in_strides[axes[i]];
  }
  std::vector<std::size_t> idx(rank, 0);
  std::size_t src = 0;
  const std::size_t total = in.size();
  for (std::size_t i = 0; i < total; ++i) {
    if (accumulate) {
      out[i] += in[src];
    } else {
      out[i] = in[src];
    }
    for (std::size_t d = rank; d-- > 0;) {
      idx[d]++;
      src += gather[d];
      if (idx[d] < out_shape[d]) break;
      src -= gather[d] * out_shape[d];
      idx[d] = 0;
    }
  }
}

}  // namespace

Tensor permute(const Tensor& t, const std::vector<std::size_t>& axes) {
  const std::size_t rank = t.rank();
  if (axes.size() != rank) {
    throw std::invalid_argument("permute: axes size does not match tensor rank");
  }
  std::vector<bool> seen(rank, false);
  for (std::size_t a : axes) {
    if (a >= rank || seen[a]) throw std::invalid_argument("permute: invalid axes permutation");
    seen[a] = true;
  }
  Shape out_shape(rank);
  for (std::size_t i = 0; i < rank; ++i) out_shape[i] = t.shape()[axes[i]];
  std::vector<double> out(t.size());
  permute_into(t.shape(), t.values(), axes, out, false);
  Tensor result(std::move(out_shape), std::move(out));
  if (should_record({&t})) {
    result.set_requires_grad(true);
    Tensor ti = t, to = result;
    const auto inv = inverse_permutation(axes);
    active_tape()->record(result, [ti, to, inv]() mutable {
      const auto g = to.grad();
      if (g.empty() || !ti.requires_grad()) return;
      auto gi = ti.grad_mut();
      permute_into(to.shape(), g, inv, gi, true);
    });
  }
  return result;
}

Tensor slice(const Tensor& t, std::size_t axis, std::size_t start, std::size_t length) {
  if (axis >= t.rank()) {
    throw std::invalid_argument("slice: axis out of range for shape " + shape_str(t.shape()));
  }
  if (length == 0 || start + length > t.shape()[axis]) {
    throw std::invalid_argument("slice: range [" + std::to_string(start) + ", " +
                                std::to_string(start + length) + ") out of bounds for shape " +
                                shape_str(t.shape()));
  }
  const AxisSplit s = split_axis(t.shape(), axis);
  Shape out_shape = t.shape();
  out_shape[axis] = length;
  std::vector<double> out(s.outer * length * s.inner);
  const auto tv = t.values();
  for (std::size_t o = 0; o < s.outer; ++o) {
    const double* src = &tv[(o * s.extent + start) * s.inner];
    double* dst = &out[o * length * s.inner];
    std::copy(src, src + length * s.inner, dst);
  }
  Tensor result(std::move(out_shape), std::move(out));
  if (should_record({&t})) {
    result.set_requires_grad(true);
    Tensor ti = t, to = result;
    active_tape()->record(result, [s, start, length, ti, to]() mutable {
      const auto g = to.grad();
      if (g.empty() || !ti.requires_grad()) return;
      auto gi = ti.grad_mut();
      for (std::size_t o = 0; o < s.outer; ++o) {
        const double* src = &g[o * length * s.inner];
        double* dst = &gi[(o * s.extent + start) * s.inner];
        for (std::size_t i = 0; i < length * s.inner; ++i) dst[i] += src[i];
      }
    });
  }
  return result;
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw std::invalid_argument("concat: no tensors given");
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) {
    throw std::invalid_argument("concat: axis out of range for shape " + shape_str(first));
  }
  std::size_t total_extent = 0;
  for (const Tensor& p : parts) {
    if (p.rank() != first.size()) throw_shape("concat: rank mismatch");
    for (std::size_t i = 0; i < first.size(); ++i) {
      if (i != axis && p.shape()[i] != first[i]) {
        throw_shape("concat: shape " + shape_str(p.shape()) + " incompatible with " +
                    shape_str(first) + " along axis " + std::to_string(axis));
      }
    }
    total_extent += p.shape()[axis];
  }
  Shape out_shape = first;
  out_shape[axis] = total_extent;
  const AxisSplit so = split_axis(out_shape, axis);
  std::vector<double> out(shape_size(out_shape));
  std::size_t offset = 0;
  for (const Tensor& p : parts) {
    const std::size_t extent = p.shape()[axis];
    const auto pv = p.values();
    for (std::size_t o = 0; o < so.outer; ++o) {
      const double* src = &pv[o * extent * so.inner];
      double* dst = &out[(o * so.extent + offset) * so.inner];
      std::copy(src, src + extent * so.inner, dst);
    }
    offset += extent;
  }
  Tensor result(std::move(out_shape), std::move(out));
  bool any_grad = false;
  for (const Tensor& p : parts) any_grad = any_grad || p.requires_grad();
  if (active_tape() && any_grad) {
    result.set_requires_grad(true);
    Tensor to = result;
    std::vector<Tensor> held = parts;
    active_tape()->record(result, [so, held = std::move(held), to]() mutable {
      const auto g = to.grad();
      if (g.empty()) return;
      std::size_t offset = 0;
      for (Tensor& p : held) {
        const std::size_t ext = p.size() / (so.outer * so.inner);
        if (p.requires_grad()) {
          auto gp = p.grad_mut();
          for (std::size_t o = 0; o < so.outer; ++o) {
            const double* src = &g[(o * so.extent + offset) * so.inner];
            double* dst = &gp[o * ext * so.inner];
            for (std::size_t i = 0; i < ext * so.inner; ++i) dst[i] += src[i];
          }
        }
        offset += ext;
      }
    });
  }
  return result;
}

}  // namespace gaitstage
