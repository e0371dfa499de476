#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "relstm/errors.hpp"

namespace relstm {

// Dense N-dimensional array of doubles, row-major, value semantics.
// All kernels below are pure: inputs are never modified and identical
// inputs produce bitwise-identical outputs.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::int64_t> shape);
  Tensor(std::vector<std::int64_t> shape, std::vector<double> data);

  static Tensor zeros(std::vector<std::int64_t> shape);
  static Tensor full(std::vector<std::int64_t> shape, double value);
  static Tensor scalar(double value);  // shape {1}

  const std::vector<std::int64_t>& shape() const { return shape_; }
  std::int64_t rank() const { return static_cast<std::int64_t>(shape_.size()); }
  std::int64_t extent(std::int64_t axis) const { return shape_[static_cast<std::size_t>(axis)]; }
  std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  const std::vector<double>& values() const { return data_; }

  double& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  double operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

  // 2-D accessors; valid only for rank-2 tensors.
  double& at(std::int64_t r, std::int64_t c) { return data_[static_cast<std::size_t>(r * shape_[1] + c)]; }
  double at(std::int64_t r, std::int64_t c) const { return data_[static_cast<std::size_t>(r * shape_[1] + c)]; }

  std::int64_t rows() const { return shape_[0]; }
  std::int64_t cols() const { return shape_[1]; }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  bool all_finite() const;
  std::string shape_str() const;

 private:
  std::vector<std::int64_t> shape_;
  std::vector<double> data_;
};

std::string shape_str(const std::vector<std::int64_t>& shape);
std::int64_t shape_product(const std::vector<std::int64_t>& shape);

// Spatial feature geometry: height x width x channels, channels even so a
// half-width hidden state is well defined.
struct Shape3 {
  std::int64_t h = 0;
  std::int64_t w = 0;
  std::int64_t c = 0;

  std::int64_t positions() const { return h * w; }
  void validate() const;
};

// ---- Primitive kernels ----------------------------------------------------

// Standard product; the sum over the inner dimension accumulates in
// ascending-index order, which pins the floating-point result.
Tensor matmul(const Tensor& a, const Tensor& b);

// Row-wise softmax with per-row max subtraction.
Tensor softmax_rows(const Tensor& a);

// Per-position linear map (1x1 convolution over flattened positions).
Tensor position_linear(const Tensor& x, const Tensor& w);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor hadamard(const Tensor& a, const Tensor& b);
Tensor sigmoid(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor scale(const Tensor& a, double s);
Tensor reshape(const Tensor& a, std::vector<std::int64_t> shape);
Tensor transpose(const Tensor& a);  // rank-2 only
Tensor reduce_mean(const Tensor& a, std::int64_t axis);
Tensor concat(const Tensor& a, const Tensor& b, std::int64_t axis);
Tensor sum_all(const Tensor& a);  // shape {1}

// ---- Batch normalization --------------------------------------------------

inline constexpr double kBatchNormEps = 1e-5;

struct BatchNormState {
  Tensor running_mean;  // [C]
  Tensor running_var;   // [C]

  static BatchNormState init(std::int64_t channels);
};

enum class BatchNormMode { kTrain, kInfer };

// Per-channel statistics over the rows of x ([N x C]). Train mode normalizes
// with batch statistics; infer mode with the running ones. The running stats
// move by `momentum` toward the batch statistics (momentum 0 freezes them).
// Variance uses the biased 1/N estimator and a floor of kBatchNormEps.
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  BatchNormState& stats, BatchNormMode mode, double momentum);

// Split form used by the differentiation tape: compute without touching the
// running statistics, report the batch statistics, fold them in separately.
Tensor batch_norm_train_forward(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                                Tensor* batch_mean, Tensor* batch_var);
Tensor batch_norm_infer_forward(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                                const BatchNormState& stats);
void batch_norm_update(BatchNormState& stats, const Tensor& batch_mean,
                       const Tensor& batch_var, double momentum);

}  // namespace relstm
