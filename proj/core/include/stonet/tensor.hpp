#pragma once

// Dense float-64 tensors with a per-forward-pass gradient tape.
//
// A Tensor is a shared handle: copies alias the same storage. Operations
// record themselves on the thread's active Tape (see TapeScope) whenever one
// of their inputs requires a gradient. Tape::backward replays the records in
// reverse and consumes the tape.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace stonet {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until a gradient is accumulated
  bool requires_grad = false;
  std::string name;
};

class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  std::span<double> mutable_data();
  double item() const;
  double at(std::size_t i) const;
  double at(std::size_t row, std::size_t col) const;

  bool requires_grad() const;
  void set_requires_grad(bool value);
  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();
  void clear_grad();

  const std::string& name() const;
  void set_name(std::string name);

  // Deep copy without gradient or tape participation.
  Tensor detach() const;
  bool is_same(const Tensor& other) const { return impl_ == other.impl_; }

  const std::shared_ptr<TensorImpl>& impl() const { return impl_; }

 private:
  std::shared_ptr<TensorImpl> impl_;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Seeds d(loss)/d(loss) = 1 and replays every record in reverse. Requires
  // a scalar loss. The tape is consumed afterwards; a second call throws.
  void backward(const Tensor& loss);

  // Drops all records and makes the tape usable for a fresh forward pass.
  void reset();

  bool consumed() const { return consumed_; }
  std::size_t size() const { return nodes_.size(); }

  void record(std::shared_ptr<TensorImpl> output, std::function<void()> backward_fn);

  static Tape* active();

 private:
  struct Node {
    std::shared_ptr<TensorImpl> output;
    std::function<void()> backward_fn;
  };
  std::vector<Node> nodes_;
  bool consumed_ = false;

  friend class TapeScope;
};

// Makes `tape` the active tape on this thread for the scope's lifetime.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

// Backward on the active tape.
void backward(const Tensor& loss);

enum class Activation { kIdentity, kRelu, kTanh, kGelu };

Activation parse_activation(const std::string& name);
std::string activation_name(Activation act);

// ---- primitive operations -------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);

// Elementwise arithmetic. The smaller operand may be broadcast along leading
// axes only, i.e. its shape must be a suffix of the larger operand's shape.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);

Tensor activate(const Tensor& x, Activation act);
Tensor abs(const Tensor& x);

// [n, k] angles -> [n, 2k] as (sin a_1, cos a_1, sin a_2, cos a_2, ...).
Tensor sin_cos_interleave(const Tensor& angles);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor reshape(const Tensor& x, Shape shape);

// Row-wise concatenation of rank-2 tensors with equal row counts.
Tensor concat_cols(std::span<const Tensor> parts);

// out[e] = x[index[e]] for rank-2 x.
Tensor gather_rows(const Tensor& x, std::span<const std::size_t> index);

// out[index[e]] += weight[e] * src[e]; `weights` may be empty (all ones).
Tensor scatter_add_rows(const Tensor& src, std::span<const std::size_t> index,
                        std::size_t rows_out, std::span<const double> weights = {});

// Copy of `base` with base[index[e]] := rows[e]. Indices must be distinct.
Tensor replace_rows(const Tensor& base, std::span<const std::size_t> index, const Tensor& rows);

// Per-row matrix-vector product: mats [E, d*d] (row-major d x d), vecs [E, d].
Tensor row_matvec(const Tensor& mats, const Tensor& vecs);

// Weighted segment sums of per-pair outer products:
//   out[segment[e], i*q + j] += weight[e] * a[e, i] * b[rows[e], j]
// with a [E, p], b [R, q], out [segments, p*q]. The [E, p*q] outer products
// are never materialized.
Tensor segment_outer_sum(const Tensor& a, const Tensor& b, std::span<const std::size_t> rows,
                         std::span<const std::size_t> segment, std::span<const double> weights,
                         std::size_t segments);

}  // namespace stonet
