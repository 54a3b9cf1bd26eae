#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace gaitstage {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense row-major 64-bit tensor. Copies are shared handles: ops hold the
// same storage they were recorded with, and gradients accumulate in place.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  // rank-2 convenience
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows,
                       bool requires_grad = false);

  bool defined() const { return static_cast<bool>(d_); }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t size() const;

  std::span<double> values();
  std::span<const double> values() const;
  double item() const;  // value of a single-element tensor
  double at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const;
  void set_requires_grad(bool value);

  bool has_grad() const;
  std::span<const double> grad() const;  // empty span until populated
  std::span<double> grad_mut();          // allocates zeros on first use
  void zero_grad();                      // drops the grad buffer

  bool same_storage(const Tensor& other) const { return d_ == other.d_; }

  // deep copy of values (no grad, no recording)
  Tensor clone() const;

 private:
  struct Data;
  std::shared_ptr<Data> d_;
};

// Record of executed operations for one forward pass. Every op that touches
// a grad-requiring tensor appends its output handle plus a backward rule;
// backward() replays the rules in reverse. A tape and the tensors recorded
// on it are confined to one thread; independent tapes may run in parallel.
class Tape {
 public:
  void record(Tensor output, std::function<void()> rule);
  std::size_t size() const { return nodes_.size(); }
  void clear();

  // Zeroes the grads of all recorded outputs, seeds d(loss)/d(loss) = 1 and
  // replays the backward rules in reverse order. Leaf gradients accumulate
  // across repeated calls; intermediate gradients reflect the latest call.
  void backward(const Tensor& loss);

 private:
  struct Node {
    Tensor output;
    std::function<void()> rule;
  };
  std::vector<Node> nodes_;
};

// Thread-local active tape. Ops record onto it when one is installed.
Tape* active_tape();

class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

// Runs backward on the active tape.
void backward(const Tensor& loss);

// --- elementwise ops with trailing-dimension broadcasting ---
enum class Elementwise { add, sub, mul };
Tensor elementwise(Elementwise op, const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }

// --- matrix products ---
Tensor matmul(const Tensor& a, const Tensor& b);  // rank-2 x rank-2
Tensor bmm(const Tensor& a, const Tensor& b);     // rank-3: (n,a,b) x (n,b,c)

// --- reductions over one axis (axis removed from shape) ---
enum class Reduce { sum, mean, max };
Tensor reduce(Reduce op, const Tensor& t, std::size_t axis);
Tensor reduce_sum(const Tensor& t, std::size_t axis);
Tensor reduce_mean(const Tensor& t, std::size_t axis);
Tensor reduce_max(const Tensor& t, std::size_t axis);
Tensor sum_all(const Tensor& t);  // scalar sum of all elements

// --- layout ops ---
Tensor reshape(const Tensor& t, Shape new_shape);
Tensor permute(const Tensor& t, const std::vector<std::size_t>& axes);
Tensor slice(const Tensor& t, std::size_t axis, std::size_t start, std::size_t length);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);

}  // namespace gaitstage
