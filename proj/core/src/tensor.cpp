#include "stonet/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "stonet/errors.hpp"

namespace stonet {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

thread_local Tape* g_active_tape = nullptr;

std::vector<double>& grad_of(TensorImpl& t) {
  if (t.grad.empty()) t.grad.assign(t.data.size(), 0.0);
  return t.grad;
}

bool any_requires_grad(std::initializer_list<const Tensor*> inputs) {
  return std::any_of(inputs.begin(), inputs.end(),
                     [](const Tensor* t) { return t->requires_grad(); });
}

// Records `fn` on the active tape when some input wants a gradient.
template <typename Fn>
void maybe_record(Tensor& out, std::initializer_list<const Tensor*> inputs, Fn&& fn) {
  Tape* tape = Tape::active();
  if (tape == nullptr || !any_requires_grad(inputs)) return;
  out.set_requires_grad(true);
  tape->record(out.impl(), std::forward<Fn>(fn));
}

void require_defined(const Tensor& t, const char* op) {
  if (!t.defined()) throw ContractError(std::string(op) + ": undefined tensor");
}

void require_rank2(const Tensor& t, const char* op) {
  require_defined(t, op);
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected rank-2 tensor, got " +
                         shape_str(t.shape()));
  }
}

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

enum class BinaryKind { kAdd, kSub, kMul };

Tensor binary(const Tensor& a, const Tensor& b, BinaryKind kind, const char* op) {
  require_defined(a, op);
  require_defined(b, op);
  const bool a_big = a.numel() >= b.numel();
  const Tensor& big = a_big ? a : b;
  const Tensor& small = a_big ? b : a;
  if (!is_suffix(small.shape(), big.shape())) {
    throw DimensionError(std::string(op) + ": cannot broadcast " + shape_str(a.shape()) +
                         " with " + shape_str(b.shape()));
  }
  const std::size_t n = big.numel();
  const std::size_t m = small.numel();
  const bool a_full = a.numel() == n;
  const bool b_full = b.numel() == n;
  const double* ad = a.data().data();
  const double* bd = b.data().data();
  std::vector<double> out(n);
  // The broadcast operand repeats every m entries.
  for (std::size_t base = 0; base < n; base += m) {
    const double* x = ad + (a_full ? base : 0);
    const double* y = bd + (b_full ? base : 0);
    double* o = out.data() + base;
    switch (kind) {
      case BinaryKind::kAdd: for (std::size_t j = 0; j < m; ++j) o[j] = x[j] + y[j]; break;
      case BinaryKind::kSub: for (std::size_t j = 0; j < m; ++j) o[j] = x[j] - y[j]; break;
      case BinaryKind::kMul: for (std::size_t j = 0; j < m; ++j) o[j] = x[j] * y[j]; break;
    }
  }
  Tensor result(big.shape(), std::move(out));
  maybe_record(result, {&a, &b},
               [ai = a.impl(), bi = b.impl(), oi = result.impl().get(), kind, n, m, a_full, b_full] {
                 const double* g = oi->grad.data();
                 const double sign_b = kind == BinaryKind::kSub ? -1.0 : 1.0;
                 double* ga = ai->requires_grad ? grad_of(*ai).data() : nullptr;
                 double* gb = bi->requires_grad ? grad_of(*bi).data() : nullptr;
                 for (std::size_t base = 0; base < n; base += m) {
                   const double* gs = g + base;
                   const std::size_t oa = a_full ? base : 0;
                   const std::size_t ob = b_full ? base : 0;
                   if (kind == BinaryKind::kMul) {
                     const double* x = ai->data.data() + oa;
                     const double* y = bi->data.data() + ob;
                     if (ga) for (std::size_t j = 0; j < m; ++j) ga[oa + j] += gs[j] * y[j];
                     if (gb) for (std::size_t j = 0; j < m; ++j) gb[ob + j] += gs[j] * x[j];
                   } else {
                     if (ga) for (std::size_t j = 0; j < m; ++j) ga[oa + j] += gs[j];
                     if (gb) for (std::size_t j = 0; j < m; ++j) gb[ob + j] += sign_b * gs[j];
                   }
                 }
               });
  return result;
}

double act_value(Activation act, double x) {
  switch (act) {
    case Activation::kIdentity: return x;
    case Activation::kRelu: return x > 0.0 ? x : 0.0;
    case Activation::kTanh: return std::tanh(x);
    case Activation::kGelu: return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2));
  }
  return x;
}

double act_derivative(Activation act, double x) {
  switch (act) {
    case Activation::kIdentity: return 1.0;
    case Activation::kRelu: return x > 0.0 ? 1.0 : 0.0;
    case Activation::kTanh: {
      const double t = std::tanh(x);
      return 1.0 - t * t;
    }
    case Activation::kGelu: {
      const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
      const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
      return cdf + x * pdf;
    }
  }
  return 1.0;
}

}  // namespace

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto s : shape) n *= s;
  return n;
}

// ---- Tensor ----------------------------------------------------------------

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad)
    : impl_(std::make_shared<TensorImpl>()) {
  if (shape_numel(shape) != data.size()) {
    throw DimensionError("tensor shape " + shape_str(shape) + " holds " +
                         std::to_string(shape_numel(shape)) + " values, got " +
                         std::to_string(data.size()));
  }
  impl_->shape = std::move(shape);
  impl_->data = std::move(data);
  impl_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  const auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor({}, {value}, requires_grad);
}

const Shape& Tensor::shape() const {
  require_defined(*this, "shape");
  return impl_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " +
                         shape_str(shape()));
  }
  return impl_->shape[axis];
}

std::size_t Tensor::numel() const { return defined() ? impl_->data.size() : 0; }

std::span<const double> Tensor::data() const { return impl_->data; }
std::span<double> Tensor::mutable_data() { return impl_->data; }

double Tensor::item() const {
  if (numel() != 1) throw DimensionError("item() on tensor " + shape_str(shape()));
  return impl_->data[0];
}

double Tensor::at(std::size_t i) const { return impl_->data.at(i); }

double Tensor::at(std::size_t row, std::size_t col) const {
  if (rank() != 2) throw DimensionError("at(row, col) on tensor " + shape_str(shape()));
  return impl_->data.at(row * impl_->shape[1] + col);
}

bool Tensor::requires_grad() const { return defined() && impl_->requires_grad; }
void Tensor::set_requires_grad(bool value) { impl_->requires_grad = value; }
bool Tensor::has_grad() const { return defined() && !impl_->grad.empty(); }
std::span<const double> Tensor::grad() const { return impl_->grad; }
std::span<double> Tensor::mutable_grad() { return grad_of(*impl_); }

void Tensor::zero_grad() { impl_->grad.assign(impl_->data.size(), 0.0); }

void Tensor::clear_grad() { impl_->grad.clear(); }

const std::string& Tensor::name() const { return impl_->name; }
void Tensor::set_name(std::string name) { impl_->name = std::move(name); }

Tensor Tensor::detach() const {
  Tensor copy(impl_->shape, impl_->data, false);
  copy.impl_->name = impl_->name;
  return copy;
}

// ---- Tape ------------------------------------------------------------------

Tape* Tape::active() { return g_active_tape; }

void Tape::record(std::shared_ptr<TensorImpl> output, std::function<void()> backward_fn) {
  if (consumed_) throw ContractError("recording on a consumed tape; call reset() first");
  nodes_.push_back({std::move(output), std::move(backward_fn)});
}

void Tape::reset() {
  nodes_.clear();
  consumed_ = false;
}

void Tape::backward(const Tensor& loss) {
  if (consumed_) throw ContractError("backward called twice on the same tape");
  require_defined(loss, "backward");
  if (loss.numel() != 1) {
    throw ContractError("backward requires a scalar loss, got " + shape_str(loss.shape()));
  }
  consumed_ = true;
  if (!loss.requires_grad()) {
    nodes_.clear();
    return;
  }
  grad_of(*loss.impl())[0] += 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    if (it->output->grad.empty()) continue;  // not on a path to the loss
    it->backward_fn();
  }
  nodes_.clear();
}

TapeScope::TapeScope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = previous_; }

void backward(const Tensor& loss) {
  Tape* tape = Tape::active();
  if (tape == nullptr) throw ContractError("backward: no active tape");
  tape->backward(loss);
}

Activation parse_activation(const std::string& name) {
  if (name == "identity") return Activation::kIdentity;
  if (name == "relu") return Activation::kRelu;
  if (name == "tanh") return Activation::kTanh;
  if (name == "gelu") return Activation::kGelu;
  throw ParameterError("unknown activation '" + name + "'");
}

std::string activation_name(Activation act) {
  switch (act) {
    case Activation::kIdentity: return "identity";
    case Activation::kRelu: return "relu";
    case Activation::kTanh: return "tanh";
    case Activation::kGelu: return "gelu";
  }
  return "?";
}

// ---- ops -------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner dimensions differ, " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  }
  std::vector<double> out(m * n);
  MutMap(out.data(), m, n).noalias() =
      ConstMap(a.data().data(), m, k) * ConstMap(b.data().data(), k, n);
  Tensor result({m, n}, std::move(out));
  maybe_record(result, {&a, &b}, [ai = a.impl(), bi = b.impl(), oi = result.impl().get(), m, k, n] {
    ConstMap g(oi->grad.data(), m, n);
    if (ai->requires_grad) {
      MutMap(grad_of(*ai).data(), m, k).noalias() += g * ConstMap(bi->data.data(), k, n).transpose();
    }
    if (bi->requires_grad) {
      MutMap(grad_of(*bi).data(), k, n).noalias() += ConstMap(ai->data.data(), m, k).transpose() * g;
    }
  });
  return result;
}

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::kAdd, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::kSub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::kMul, "mul"); }

Tensor scale(const Tensor& a, double factor) {
  require_defined(a, "scale");
  std::vector<double> out(a.data().begin(), a.data().end());
  for (auto& v : out) v *= factor;
  Tensor result(a.shape(), std::move(out));
  maybe_record(result, {&a}, [ai = a.impl(), oi = result.impl().get(), factor] {
    auto& ga = grad_of(*ai);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += factor * oi->grad[i];
  });
  return result;
}

Tensor activate(const Tensor& x, Activation act) {
  require_defined(x, "activate");
  std::vector<double> out(x.numel());
  auto xd = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = act_value(act, xd[i]);
  Tensor result(x.shape(), std::move(out));
  maybe_record(result, {&x}, [xi = x.impl(), oi = result.impl().get(), act] {
    auto& gx = grad_of(*xi);
    for (std::size_t i = 0; i < gx.size(); ++i) {
      gx[i] += oi->grad[i] * act_derivative(act, xi->data[i]);
    }
  });
  return result;
}

Tensor abs(const Tensor& x) {
  require_defined(x, "abs");
  std::vector<double> out(x.numel());
  auto xd = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::abs(xd[i]);
  Tensor result(x.shape(), std::move(out));
  maybe_record(result, {&x}, [xi = x.impl(), oi = result.impl().get()] {
    auto& gx = grad_of(*xi);
    for (std::size_t i = 0; i < gx.size(); ++i) {
      const double v = xi->data[i];
      gx[i] += oi->grad[i] * (v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0));
    }
  });
  return result;
}

Tensor sin_cos_interleave(const Tensor& angles) {
  require_rank2(angles, "sin_cos_interleave");
  const std::size_t n = angles.dim(0), k = angles.dim(1);
  std::vector<double> out(n * 2 * k);
  auto ad = angles.data();
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t j = 0; j < k; ++j) {
      out[r * 2 * k + 2 * j] = std::sin(ad[r * k + j]);
      out[r * 2 * k + 2 * j + 1] = std::cos(ad[r * k + j]);
    }
  }
  Tensor result({n, 2 * k}, std::move(out));
  maybe_record(result, {&angles}, [ai = angles.impl(), oi = result.impl().get(), n, k] {
    auto& ga = grad_of(*ai);
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t j = 0; j < k; ++j) {
        const double a = ai->data[r * k + j];
        ga[r * k + j] += oi->grad[r * 2 * k + 2 * j] * std::cos(a) -
                         oi->grad[r * 2 * k + 2 * j + 1] * std::sin(a);
      }
    }
  });
  return result;
}

Tensor sum(const Tensor& x) {
  require_defined(x, "sum");
  double s = 0.0;
  for (double v : x.data()) s += v;
  Tensor result = Tensor::scalar(s);
  maybe_record(result, {&x}, [xi = x.impl(), oi = result.impl().get()] {
    auto& gx = grad_of(*xi);
    const double g = oi->grad[0];
    for (auto& v : gx) v += g;
  });
  return result;
}

Tensor mean(const Tensor& x) {
  if (x.numel() == 0) throw DimensionError("mean of an empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor reshape(const Tensor& x, Shape shape) {
  require_defined(x, "reshape");
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: " + shape_str(x.shape()) + " to " + shape_str(shape));
  }
  Tensor result(std::move(shape), std::vector<double>(x.data().begin(), x.data().end()));
  maybe_record(result, {&x}, [xi = x.impl(), oi = result.impl().get()] {
    auto& gx = grad_of(*xi);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += oi->grad[i];
  });
  return result;
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const std::size_t rows = parts[0].defined() ? parts[0].dim(0) : 0;
  std::size_t cols = 0;
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    require_rank2(p, "concat_cols");
    if (p.dim(0) != rows) {
      throw DimensionError("concat_cols: row counts differ, " + shape_str(parts[0].shape()) +
                           " vs " + shape_str(p.shape()));
    }
    offsets.push_back(cols);
    cols += p.dim(1);
  }
  std::vector<double> out(rows * cols);
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const std::size_t w = parts[p].dim(1);
    auto pd = parts[p].data();
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(pd.begin() + r * w, w, out.begin() + r * cols + offsets[p]);
    }
  }
  Tensor result({rows, cols}, std::move(out));
  Tape* tape = Tape::active();
  const bool need = std::any_of(parts.begin(), parts.end(),
                                [](const Tensor& t) { return t.requires_grad(); });
  if (tape != nullptr && need) {
    result.set_requires_grad(true);
    std::vector<std::shared_ptr<TensorImpl>> impls;
    for (const auto& p : parts) impls.push_back(p.impl());
    tape->record(result.impl(), [impls, offsets, oi = result.impl().get(), rows, cols] {
      for (std::size_t p = 0; p < impls.size(); ++p) {
        if (!impls[p]->requires_grad) continue;
        auto& g = grad_of(*impls[p]);
        const std::size_t w = impls[p]->shape[1];
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t c = 0; c < w; ++c) g[r * w + c] += oi->grad[r * cols + offsets[p] + c];
        }
      }
    });
  }
  return result;
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> index) {
  require_rank2(x, "gather_rows");
  const std::size_t n = x.dim(0), w = x.dim(1), e = index.size();
  std::vector<double> out(e * w);
  auto xd = x.data();
  for (std::size_t r = 0; r < e; ++r) {
    if (index[r] >= n) throw DimensionError("gather_rows: index out of range");
    std::copy_n(xd.begin() + index[r] * w, w, out.begin() + r * w);
  }
  Tensor result({e, w}, std::move(out));
  maybe_record(result, {&x},
               [xi = x.impl(), oi = result.impl().get(),
                idx = std::vector<std::size_t>(index.begin(), index.end()), w] {
                 auto& gx = grad_of(*xi);
                 for (std::size_t r = 0; r < idx.size(); ++r) {
                   const double* g = oi->grad.data() + r * w;
                   double* dst = gx.data() + idx[r] * w;
                   for (std::size_t c = 0; c < w; ++c) dst[c] += g[c];
                 }
               });
  return result;
}

Tensor scatter_add_rows(const Tensor& src, std::span<const std::size_t> index,
                        std::size_t rows_out, std::span<const double> weights) {
  require_rank2(src, "scatter_add_rows");
  const std::size_t e = src.dim(0), w = src.dim(1);
  if (index.size() != e) throw DimensionError("scatter_add_rows: index length != rows");
  if (!weights.empty() && weights.size() != e) {
    throw DimensionError("scatter_add_rows: weight length != rows");
  }
  std::vector<double> out(rows_out * w, 0.0);
  auto sd = src.data();
  for (std::size_t r = 0; r < e; ++r) {
    if (index[r] >= rows_out) throw DimensionError("scatter_add_rows: index out of range");
    const double wt = weights.empty() ? 1.0 : weights[r];
    double* dst = out.data() + index[r] * w;
    const double* s = sd.data() + r * w;
    for (std::size_t c = 0; c < w; ++c) dst[c] += wt * s[c];
  }
  Tensor result({rows_out, w}, std::move(out));
  maybe_record(result, {&src},
               [si = src.impl(), oi = result.impl().get(),
                idx = std::vector<std::size_t>(index.begin(), index.end()),
                wts = std::vector<double>(weights.begin(), weights.end()), w] {
                 auto& gs = grad_of(*si);
                 for (std::size_t r = 0; r < idx.size(); ++r) {
                   const double wt = wts.empty() ? 1.0 : wts[r];
                   const double* g = oi->grad.data() + idx[r] * w;
                   double* dst = gs.data() + r * w;
                   for (std::size_t c = 0; c < w; ++c) dst[c] += wt * g[c];
                 }
               });
  return result;
}

Tensor replace_rows(const Tensor& base, std::span<const std::size_t> index, const Tensor& rows) {
  require_rank2(base, "replace_rows");
  require_rank2(rows, "replace_rows");
  const std::size_t n = base.dim(0), w = base.dim(1);
  if (rows.dim(1) != w || rows.dim(0) != index.size()) {
    throw DimensionError("replace_rows: " + shape_str(rows.shape()) + " into " +
                         shape_str(base.shape()));
  }
  std::vector<double> out(base.data().begin(), base.data().end());
  std::vector<char> replaced(n, 0);
  auto rd = rows.data();
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] >= n) throw DimensionError("replace_rows: index out of range");
    if (replaced[index[r]]) throw ContractError("replace_rows: duplicate index");
    replaced[index[r]] = 1;
    std::copy_n(rd.begin() + r * w, w, out.begin() + index[r] * w);
  }
  Tensor result({n, w}, std::move(out));
  maybe_record(result, {&base, &rows},
               [bi = base.impl(), ri = rows.impl(), oi = result.impl().get(),
                idx = std::vector<std::size_t>(index.begin(), index.end()),
                replaced = std::move(replaced), w] {
                 if (bi->requires_grad) {
                   auto& gb = grad_of(*bi);
                   for (std::size_t r = 0; r < replaced.size(); ++r) {
                     if (replaced[r]) continue;
                     for (std::size_t c = 0; c < w; ++c) gb[r * w + c] += oi->grad[r * w + c];
                   }
                 }
                 if (ri->requires_grad) {
                   auto& gr = grad_of(*ri);
                   for (std::size_t r = 0; r < idx.size(); ++r) {
                     for (std::size_t c = 0; c < w; ++c) gr[r * w + c] += oi->grad[idx[r] * w + c];
                   }
                 }
               });
  return result;
}

Tensor row_matvec(const Tensor& mats, const Tensor& vecs) {
  require_rank2(mats, "row_matvec");
  require_rank2(vecs, "row_matvec");
  const std::size_t e = vecs.dim(0), d = vecs.dim(1);
  if (mats.dim(0) != e || mats.dim(1) != d * d) {
    throw DimensionError("row_matvec: matrices " + shape_str(mats.shape()) + " vs vectors " +
                         shape_str(vecs.shape()));
  }
  std::vector<double> out(e * d, 0.0);
  auto md = mats.data();
  auto vd = vecs.data();
  for (std::size_t r = 0; r < e; ++r) {
    const double* mrow = md.data() + r * d * d;
    const double* v = vd.data() + r * d;
    double* o = out.data() + r * d;
    for (std::size_t i = 0; i < d; ++i) {
      double acc = 0.0;
      for (std::size_t j = 0; j < d; ++j) acc += mrow[i * d + j] * v[j];
      o[i] = acc;
    }
  }
  Tensor result({e, d}, std::move(out));
  maybe_record(result, {&mats, &vecs}, [mi = mats.impl(), vi = vecs.impl(), oi = result.impl().get(), e, d] {
    const auto& g = oi->grad;
    if (mi->requires_grad) {
      auto& gm = grad_of(*mi);
      for (std::size_t r = 0; r < e; ++r) {
        for (std::size_t i = 0; i < d; ++i) {
          const double gi = g[r * d + i];
          double* dst = gm.data() + r * d * d + i * d;
          const double* v = vi->data.data() + r * d;
          for (std::size_t j = 0; j < d; ++j) dst[j] += gi * v[j];
        }
      }
    }
    if (vi->requires_grad) {
      auto& gv = grad_of(*vi);
      for (std::size_t r = 0; r < e; ++r) {
        const double* mrow = mi->data.data() + r * d * d;
        for (std::size_t i = 0; i < d; ++i) {
          const double gi = g[r * d + i];
          for (std::size_t j = 0; j < d; ++j) gv[r * d + j] += gi * mrow[i * d + j];
        }
      }
    }
  });
  return result;
}

Tensor segment_outer_sum(const Tensor& a, const Tensor& b, std::span<const std::size_t> rows,
                         std::span<const std::size_t> segment, std::span<const double> weights,
                         std::size_t segments) {
  require_rank2(a, "segment_outer_sum");
  require_rank2(b, "segment_outer_sum");
  const std::size_t e = a.dim(0), p = a.dim(1), r = b.dim(0), q = b.dim(1);
  if (rows.size() != e || segment.size() != e || weights.size() != e) {
    throw DimensionError("segment_outer_sum: index/weight lengths must equal " + std::to_string(e));
  }
  for (std::size_t k = 0; k < e; ++k) {
    if (rows[k] >= r || segment[k] >= segments) {
      throw DimensionError("segment_outer_sum: index out of range");
    }
  }
  std::vector<double> out(segments * p * q, 0.0);
  auto ad = a.data();
  auto bd = b.data();
  for (std::size_t k = 0; k < e; ++k) {
    const double* av = ad.data() + k * p;
    const double* bv = bd.data() + rows[k] * q;
    double* o = out.data() + segment[k] * p * q;
    for (std::size_t i = 0; i < p; ++i) {
      const double s = weights[k] * av[i];
      for (std::size_t j = 0; j < q; ++j) o[i * q + j] += s * bv[j];
    }
  }
  Tensor result({segments, p * q}, std::move(out));
  maybe_record(result, {&a, &b},
               [ai = a.impl(), bi = b.impl(), oi = result.impl().get(),
                rws = std::vector<std::size_t>(rows.begin(), rows.end()),
                seg = std::vector<std::size_t>(segment.begin(), segment.end()),
                wts = std::vector<double>(weights.begin(), weights.end()), e, p, q] {
                 const auto& g = oi->grad;
                 const bool need_a = ai->requires_grad, need_b = bi->requires_grad;
                 double* ga = need_a ? grad_of(*ai).data() : nullptr;
                 double* gb = need_b ? grad_of(*bi).data() : nullptr;
                 for (std::size_t k = 0; k < e; ++k) {
                   const double* gg = g.data() + seg[k] * p * q;
                   const double* av = ai->data.data() + k * p;
                   const double* bv = bi->data.data() + rws[k] * q;
                   for (std::size_t i = 0; i < p; ++i) {
                     const double* gi = gg + i * q;
                     if (need_a) {
                       double acc = 0.0;
                       for (std::size_t j = 0; j < q; ++j) acc += gi[j] * bv[j];
                       ga[k * p + i] += wts[k] * acc;
                     }
                     if (need_b) {
                       const double s = wts[k] * av[i];
                       double* dst = gb + rws[k] * q;
                       for (std::size_t j = 0; j < q; ++j) dst[j] += s * gi[j];
                     }
                   }
                 }
               });
  return result;
}

}  // namespace stonet
