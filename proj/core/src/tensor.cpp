#include "relstm/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace relstm {

namespace {

void check_rank2(const Tensor& t, const char* who) {
  if (t.rank() != 2) {
    throw ShapeError(std::string(who) + ": expected rank-2 tensor, got shape " + t.shape_str());
  }
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* who) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(who) + ": shape mismatch " + a.shape_str() + " vs " + b.shape_str());
  }
}

}  // namespace

std::string shape_str(const std::vector<std::int64_t>& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

std::int64_t shape_product(const std::vector<std::int64_t>& shape) {
  return std::accumulate(shape.begin(), shape.end(), static_cast<std::int64_t>(1),
                         std::multiplies<>());
}

Tensor::Tensor(std::vector<std::int64_t> shape) : shape_(std::move(shape)) {
  for (auto e : shape_) {
    if (e <= 0) throw ShapeError("Tensor: nonpositive extent in shape " + relstm::shape_str(shape_));
  }
  data_.assign(static_cast<std::size_t>(shape_product(shape_)), 0.0);
}

Tensor::Tensor(std::vector<std::int64_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  for (auto e : shape_) {
    if (e <= 0) throw ShapeError("Tensor: nonpositive extent in shape " + relstm::shape_str(shape_));
  }
  if (shape_product(shape_) != static_cast<std::int64_t>(data_.size())) {
    throw ShapeError("Tensor: shape " + relstm::shape_str(shape_) + " does not hold " +
                     std::to_string(data_.size()) + " elements");
  }
}

Tensor Tensor::zeros(std::vector<std::int64_t> shape) { return Tensor(std::move(shape)); }

Tensor Tensor::full(std::vector<std::int64_t> shape, double value) {
  Tensor t(std::move(shape));
  std::fill(t.data_.begin(), t.data_.end(), value);
  return t;
}

Tensor Tensor::scalar(double value) { return Tensor({1}, {value}); }

bool Tensor::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

std::string Tensor::shape_str() const { return relstm::shape_str(shape_); }

void Shape3::validate() const {
  if (h < 1 || w < 1) throw ShapeError("Shape3: spatial extents must be >= 1, got " +
                                       std::to_string(h) + "x" + std::to_string(w));
  if (c < 2 || c % 2 != 0) {
    throw ShapeError("Shape3: channel count must be even and >= 2, got " + std::to_string(c));
  }
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_rank2(a, "matmul");
  check_rank2(b, "matmul");
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner extents disagree, " + a.shape_str() + " vs " + b.shape_str());
  }
  const std::int64_t m = a.rows(), k = a.cols(), n = b.cols();
  Tensor out({m, n});
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  // i-k-j order: cache friendly, and each out[i,j] still accumulates its k
  // terms in ascending order.
  for (std::int64_t i = 0; i < m; ++i) {
    const double* arow = pa + i * k;
    double* orow = po + i * n;
    for (std::int64_t kk = 0; kk < k; ++kk) {
      const double av = arow[kk];
      const double* brow = pb + kk * n;
      for (std::int64_t j = 0; j < n; ++j) {
        orow[j] += av * brow[j];
      }
    }
  }
  return out;
}

Tensor softmax_rows(const Tensor& a) {
  check_rank2(a, "softmax_rows");
  const std::int64_t m = a.rows(), n = a.cols();
  Tensor out({m, n});
  for (std::int64_t i = 0; i < m; ++i) {
    const double* row = a.data() + i * n;
    double* orow = out.data() + i * n;
    double mx = row[0];
    for (std::int64_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
    double sum = 0.0;
    for (std::int64_t j = 0; j < n; ++j) {
      orow[j] = std::exp(row[j] - mx);
      sum += orow[j];
    }
    for (std::int64_t j = 0; j < n; ++j) orow[j] /= sum;
  }
  return out;
}

Tensor position_linear(const Tensor& x, const Tensor& w) {
  check_rank2(x, "position_linear");
  check_rank2(w, "position_linear");
  if (x.cols() != w.rows()) {
    throw ShapeError("position_linear: feature width " + x.shape_str() + " does not match map " +
                     w.shape_str());
  }
  return matmul(x, w);
}

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  Tensor out(a.shape());
  for (std::int64_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  Tensor out(a.shape());
  for (std::int64_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
  return out;
}

Tensor hadamard(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "hadamard");
  Tensor out(a.shape());
  for (std::int64_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
  return out;
}

Tensor sigmoid(const Tensor& a) {
  Tensor out(a.shape());
  for (std::int64_t i = 0; i < a.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-a[i]));
  return out;
}

Tensor tanh(const Tensor& a) {
  Tensor out(a.shape());
  for (std::int64_t i = 0; i < a.size(); ++i) out[i] = std::tanh(a[i]);
  return out;
}

Tensor scale(const Tensor& a, double s) {
  Tensor out(a.shape());
  for (std::int64_t i = 0; i < a.size(); ++i) out[i] = a[i] * s;
  return out;
}

Tensor reshape(const Tensor& a, std::vector<std::int64_t> shape) {
  if (shape_product(shape) != a.size()) {
    throw ShapeError("reshape: cannot view " + a.shape_str() + " as " + relstm::shape_str(shape));
  }
  return Tensor(std::move(shape), a.values());
}

Tensor transpose(const Tensor& a) {
  check_rank2(a, "transpose");
  const std::int64_t m = a.rows(), n = a.cols();
  Tensor out({n, m});
  for (std::int64_t i = 0; i < m; ++i) {
    for (std::int64_t j = 0; j < n; ++j) out.at(j, i) = a.at(i, j);
  }
  return out;
}

Tensor reduce_mean(const Tensor& a, std::int64_t axis) {
  if (axis < 0 || axis >= a.rank()) {
    throw ShapeError("reduce_mean: axis " + std::to_string(axis) + " out of range for " +
                     a.shape_str());
  }
  std::vector<std::int64_t> out_shape;
  for (std::int64_t i = 0; i < a.rank(); ++i) {
    if (i != axis) out_shape.push_back(a.extent(i));
  }
  if (out_shape.empty()) out_shape = {1};

  std::int64_t outer = 1, inner = 1;
  for (std::int64_t i = 0; i < axis; ++i) outer *= a.extent(i);
  for (std::int64_t i = axis + 1; i < a.rank(); ++i) inner *= a.extent(i);
  const std::int64_t len = a.extent(axis);

  Tensor out(out_shape);
  const double inv = 1.0 / static_cast<double>(len);
  for (std::int64_t o = 0; o < outer; ++o) {
    for (std::int64_t l = 0; l < len; ++l) {
      const double* src = a.data() + (o * len + l) * inner;
      double* dst = out.data() + o * inner;
      for (std::int64_t in = 0; in < inner; ++in) dst[in] += src[in];
    }
  }
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] *= inv;
  return out;
}

Tensor concat(const Tensor& a, const Tensor& b, std::int64_t axis) {
  if (a.rank() != b.rank()) {
    throw ShapeError("concat: rank mismatch " + a.shape_str() + " vs " + b.shape_str());
  }
  if (axis < 0 || axis >= a.rank()) {
    throw ShapeError("concat: axis " + std::to_string(axis) + " out of range for " + a.shape_str());
  }
  for (std::int64_t i = 0; i < a.rank(); ++i) {
    if (i != axis && a.extent(i) != b.extent(i)) {
      throw ShapeError("concat: extents disagree off the concat axis, " + a.shape_str() + " vs " +
                       b.shape_str());
    }
  }
  std::vector<std::int64_t> out_shape = a.shape();
  out_shape[static_cast<std::size_t>(axis)] += b.extent(axis);

  std::int64_t outer = 1, inner = 1;
  for (std::int64_t i = 0; i < axis; ++i) outer *= a.extent(i);
  for (std::int64_t i = axis + 1; i < a.rank(); ++i) inner *= a.extent(i);
  const std::int64_t la = a.extent(axis), lb = b.extent(axis);

  Tensor out(out_shape);
  for (std::int64_t o = 0; o < outer; ++o) {
    double* dst = out.data() + o * (la + lb) * inner;
    const double* pa = a.data() + o * la * inner;
    const double* pb = b.data() + o * lb * inner;
    std::copy(pa, pa + la * inner, dst);
    std::copy(pb, pb + lb * inner, dst + la * inner);
  }
  return out;
}

Tensor sum_all(const Tensor& a) {
  double s = 0.0;
  for (std::int64_t i = 0; i < a.size(); ++i) s += a[i];
  return Tensor::scalar(s);
}

BatchNormState BatchNormState::init(std::int64_t channels) {
  BatchNormState s;
  s.running_mean = Tensor({channels});
  s.running_var = Tensor::full({channels}, 1.0);
  return s;
}

namespace {

void check_bn_shapes(const Tensor& x, const Tensor& gamma, const Tensor& beta) {
  check_rank2(x, "batch_norm");
  if (gamma.rank() != 1 || beta.rank() != 1 || gamma.size() != x.cols() || beta.size() != x.cols()) {
    throw ShapeError("batch_norm: scale/shift must be [C] with C=" + std::to_string(x.cols()) +
                     ", got " + gamma.shape_str() + " and " + beta.shape_str());
  }
}

}  // namespace

Tensor batch_norm_train_forward(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                                Tensor* batch_mean, Tensor* batch_var) {
  check_bn_shapes(x, gamma, beta);
  const std::int64_t n = x.rows(), c = x.cols();
  Tensor mean({c}), var({c});
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::int64_t j = 0; j < c; ++j) mean[j] += x.at(i, j);
  }
  for (std::int64_t j = 0; j < c; ++j) mean[j] /= static_cast<double>(n);
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::int64_t j = 0; j < c; ++j) {
      const double d = x.at(i, j) - mean[j];
      var[j] += d * d;
    }
  }
  for (std::int64_t j = 0; j < c; ++j) var[j] /= static_cast<double>(n);

  Tensor out({n, c});
  for (std::int64_t j = 0; j < c; ++j) {
    const double inv = 1.0 / std::sqrt(var[j] + kBatchNormEps);
    for (std::int64_t i = 0; i < n; ++i) {
      out.at(i, j) = gamma[j] * (x.at(i, j) - mean[j]) * inv + beta[j];
    }
  }
  if (batch_mean) *batch_mean = mean;
  if (batch_var) *batch_var = var;
  return out;
}

Tensor batch_norm_infer_forward(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                                const BatchNormState& stats) {
  check_bn_shapes(x, gamma, beta);
  if (stats.running_mean.size() != x.cols() || stats.running_var.size() != x.cols()) {
    throw ShapeError("batch_norm: running stats sized " + stats.running_mean.shape_str() +
                     " do not match input " + x.shape_str());
  }
  const std::int64_t n = x.rows(), c = x.cols();
  Tensor out({n, c});
  for (std::int64_t j = 0; j < c; ++j) {
    const double inv = 1.0 / std::sqrt(stats.running_var[j] + kBatchNormEps);
    const double mu = stats.running_mean[j];
    for (std::int64_t i = 0; i < n; ++i) {
      out.at(i, j) = gamma[j] * (x.at(i, j) - mu) * inv + beta[j];
    }
  }
  return out;
}

void batch_norm_update(BatchNormState& stats, const Tensor& batch_mean, const Tensor& batch_var,
                       double momentum) {
  if (momentum < 0.0 || momentum > 1.0) {
    throw DataError("batch_norm: momentum must lie in [0,1], got " + std::to_string(momentum));
  }
  for (std::int64_t j = 0; j < stats.running_mean.size(); ++j) {
    stats.running_mean[j] = (1.0 - momentum) * stats.running_mean[j] + momentum * batch_mean[j];
    stats.running_var[j] = (1.0 - momentum) * stats.running_var[j] + momentum * batch_var[j];
  }
}

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormState& stats,
                  BatchNormMode mode, double momentum) {
  if (mode == BatchNormMode::kInfer) {
    return batch_norm_infer_forward(x, gamma, beta, stats);
  }
  Tensor mean, var;
  Tensor out = batch_norm_train_forward(x, gamma, beta, &mean, &var);
  batch_norm_update(stats, mean, var, momentum);
  return out;
}

}  // namespace relstm
