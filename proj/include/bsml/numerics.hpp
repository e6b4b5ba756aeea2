#pragma once

// Flat parameter vectors, a small fully-connected classifier and its exact
// first and second derivatives (reverse mode for gradients, the R-operator
// for Hessian-vector products).

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace bsml {

class ParamVector {
 public:
  ParamVector() = default;
  explicit ParamVector(std::size_t n, double fill = 0.0) : values_(n, fill) {}
  explicit ParamVector(std::vector<double> values) : values_(std::move(values)) {}
  ParamVector(std::initializer_list<double> values) : values_(values) {}

  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }

  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }

  std::span<double> span() { return values_; }
  std::span<const double> span() const { return values_; }
  const std::vector<double>& values() const { return values_; }

  auto begin() { return values_.begin(); }
  auto end() { return values_.end(); }
  auto begin() const { return values_.begin(); }
  auto end() const { return values_.end(); }

  // this += scale * other
  ParamVector& axpy(double scale, const ParamVector& other);
  ParamVector& operator+=(const ParamVector& other) { return axpy(1.0, other); }
  ParamVector& operator-=(const ParamVector& other) { return axpy(-1.0, other); }
  ParamVector& operator*=(double scale);

  double dot(const ParamVector& other) const;
  double norm() const;
  bool all_finite() const;

  friend bool operator==(const ParamVector&, const ParamVector&) = default;

 private:
  std::vector<double> values_;
};

ParamVector operator+(ParamVector lhs, const ParamVector& rhs);
ParamVector operator-(ParamVector lhs, const ParamVector& rhs);
ParamVector operator*(double scale, ParamVector v);

// Row-major dense matrix.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}
  static Matrix from_rows(const std::vector<std::vector<double>>& rows);

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }
  std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }

  friend bool operator==(const Matrix&, const Matrix&) = default;
};

enum class Activation { Relu, Tanh, Identity };

std::string_view to_string(Activation a);
Activation parse_activation(std::string_view name);

// Layer widths run input -> hidden... -> logits. Each layer stores its weight
// matrix (out x in, row-major) followed by its bias vector.
struct Architecture {
  std::vector<std::size_t> layer_widths;
  Activation activation = Activation::Relu;

  std::size_t input_dim() const { return layer_widths.front(); }
  std::size_t output_dim() const { return layer_widths.back(); }
  std::size_t layer_count() const { return layer_widths.size() - 1; }
  std::size_t param_count() const;
  // Offset of layer l's weights inside the flat vector; its bias follows the
  // out*in weights.
  std::size_t layer_offset(std::size_t layer) const;

  // Throws ConfigError unless there is at least one hidden layer, every
  // width is positive and the output width is at least 2.
  void validate() const;

  friend bool operator==(const Architecture&, const Architecture&) = default;
};

// Per-layer uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases.
ParamVector initialize_params(const Architecture& arch, std::mt19937_64& rng);

struct Batch {
  Matrix inputs;
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
};

Matrix forward(const Architecture& arch, const ParamVector& params, const Matrix& inputs);

// Mean over rows of -log softmax(logits)[label], stabilised with log-sum-exp.
double cross_entropy(const Matrix& logits, std::span<const int> labels);

double batch_loss(const Architecture& arch, const ParamVector& params, const Batch& batch);
ParamVector grad(const Architecture& arch, const ParamVector& params, const Batch& batch);
ParamVector hessian_vector_product(const Architecture& arch, const ParamVector& params,
                                   const Batch& batch, const ParamVector& v);

// Scalar objective over a flat parameter vector with exact first and second
// order information. Adaptation and meta-gradients are written against this
// so they can be checked on closed-form losses as well as on the network.
class DifferentiableLoss {
 public:
  virtual ~DifferentiableLoss() = default;
  virtual double value(const ParamVector& params) const = 0;
  virtual ParamVector gradient(const ParamVector& params) const = 0;
  virtual ParamVector hessian_vector_product(const ParamVector& params,
                                             const ParamVector& v) const = 0;
};

// Cross-entropy of the network on a fixed batch.
class BatchLoss final : public DifferentiableLoss {
 public:
  BatchLoss(const Architecture& arch, const Batch& batch) : arch_(&arch), batch_(&batch) {}

  double value(const ParamVector& params) const override {
    return batch_loss(*arch_, params, *batch_);
  }
  ParamVector gradient(const ParamVector& params) const override {
    return grad(*arch_, params, *batch_);
  }
  ParamVector hessian_vector_product(const ParamVector& params,
                                     const ParamVector& v) const override {
    return bsml::hessian_vector_product(*arch_, params, *batch_, v);
  }

 private:
  const Architecture* arch_;
  const Batch* batch_;
};

}  // namespace bsml
