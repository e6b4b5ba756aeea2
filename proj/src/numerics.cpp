#include "bsml/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "bsml/errors.hpp"

namespace bsml {

namespace {

void require_same_size(const ParamVector& a, const ParamVector& b, const char* what) {
  if (a.size() != b.size()) {
    std::ostringstream msg;
    msg << what << ": length mismatch (" << a.size() << " vs " << b.size() << ")";
    throw DimensionError(msg.str());
  }
}

double activate(Activation a, double z) {
  switch (a) {
    case Activation::Relu: return z > 0.0 ? z : 0.0;
    case Activation::Tanh: return std::tanh(z);
    case Activation::Identity: return z;
  }
  return z;
}

// Derivative at exactly z == 0 is taken as 0 for the rectifier.
double activate_d1(Activation a, double z) {
  switch (a) {
    case Activation::Relu: return z > 0.0 ? 1.0 : 0.0;
    case Activation::Tanh: {
      const double t = std::tanh(z);
      return 1.0 - t * t;
    }
    case Activation::Identity: return 1.0;
  }
  return 1.0;
}

double activate_d2(Activation a, double z) {
  if (a == Activation::Tanh) {
    const double t = std::tanh(z);
    return -2.0 * t * (1.0 - t * t);
  }
  return 0.0;
}

void check_shapes(const Architecture& arch, const ParamVector& params, const Matrix& inputs) {
  if (arch.layer_widths.size() < 2) throw DimensionError("architecture needs at least two widths");
  if (params.size() != arch.param_count()) {
    std::ostringstream msg;
    msg << "parameter vector has " << params.size() << " entries, architecture expects "
        << arch.param_count();
    throw DimensionError(msg.str());
  }
  if (inputs.cols != arch.input_dim()) {
    std::ostringstream msg;
    msg << "inputs have " << inputs.cols << " columns, architecture expects " << arch.input_dim();
    throw DimensionError(msg.str());
  }
}

void check_batch(const Architecture& arch, const ParamVector& params, const Batch& batch) {
  check_shapes(arch, params, batch.inputs);
  if (batch.inputs.rows != batch.labels.size()) {
    throw DimensionError("batch has " + std::to_string(batch.inputs.rows) + " rows but " +
                         std::to_string(batch.labels.size()) + " labels");
  }
}

// View of one layer inside a flat vector.
struct LayerView {
  const double* weights;  // out x in
  const double* bias;     // out
  std::size_t in;
  std::size_t out;
};

LayerView layer_view(const Architecture& arch, const ParamVector& params, std::size_t l) {
  const std::size_t off = arch.layer_offset(l);
  const std::size_t in = arch.layer_widths[l];
  const std::size_t out = arch.layer_widths[l + 1];
  return {params.span().data() + off, params.span().data() + off + in * out, in, out};
}

// out = x * W^T (+ bias when non-null). x is n x in, result n x out.
Matrix affine(const Matrix& x, const LayerView& layer, bool with_bias) {
  Matrix out(x.rows, layer.out);
  for (std::size_t r = 0; r < x.rows; ++r) {
    const double* xr = x.data.data() + r * x.cols;
    for (std::size_t o = 0; o < layer.out; ++o) {
      const double* w = layer.weights + o * layer.in;
      double acc = with_bias ? layer.bias[o] : 0.0;
      for (std::size_t i = 0; i < layer.in; ++i) acc += w[i] * xr[i];
      out(r, o) = acc;
    }
  }
  return out;
}

// result = d * W, i.e. back-propagation through the affine map (n x in).
Matrix affine_transpose(const Matrix& d, const LayerView& layer) {
  Matrix out(d.rows, layer.in);
  for (std::size_t r = 0; r < d.rows; ++r) {
    for (std::size_t o = 0; o < layer.out; ++o) {
      const double g = d(r, o);
      if (g == 0.0) continue;
      const double* w = layer.weights + o * layer.in;
      for (std::size_t i = 0; i < layer.in; ++i) out(r, i) += g * w[i];
    }
  }
  return out;
}

// Accumulates d^T x into the weight block and column sums of d into the bias.
void accumulate_layer_grad(const Matrix& d, const Matrix& x, double* weights, double* bias) {
  const std::size_t out = d.cols;
  const std::size_t in = x.cols;
  for (std::size_t r = 0; r < d.rows; ++r) {
    for (std::size_t o = 0; o < out; ++o) {
      const double g = d(r, o);
      if (g == 0.0) continue;
      double* w = weights + o * in;
      for (std::size_t i = 0; i < in; ++i) w[i] += g * x(r, i);
      if (bias != nullptr) bias[o] += g;
    }
  }
}

struct Trace {
  std::vector<Matrix> activations;  // [0] = inputs, [L] = logits
  std::vector<Matrix> pre;          // pre[l] = pre-activation of layer l
};

Trace run_forward(const Architecture& arch, const ParamVector& params, const Matrix& inputs) {
  Trace t;
  const std::size_t layers = arch.layer_count();
  t.activations.reserve(layers + 1);
  t.pre.reserve(layers);
  t.activations.push_back(inputs);
  for (std::size_t l = 0; l < layers; ++l) {
    Matrix z = affine(t.activations.back(), layer_view(arch, params, l), true);
    Matrix a = z;
    if (l + 1 < layers) {
      for (double& v : a.data) v = activate(arch.activation, v);
    }
    t.pre.push_back(std::move(z));
    t.activations.push_back(std::move(a));
  }
  return t;
}

Matrix softmax_rows(const Matrix& logits) {
  Matrix p(logits.rows, logits.cols);
  for (std::size_t r = 0; r < logits.rows; ++r) {
    auto row = logits.row(r);
    const double m = *std::max_element(row.begin(), row.end());
    double sum = 0.0;
    for (std::size_t c = 0; c < logits.cols; ++c) {
      p(r, c) = std::exp(row[c] - m);
      sum += p(r, c);
    }
    for (std::size_t c = 0; c < logits.cols; ++c) p(r, c) /= sum;
  }
  return p;
}

// d(mean CE)/d(logits)
Matrix loss_delta(const Matrix& probs, std::span<const int> labels) {
  Matrix d = probs;
  const double inv_n = 1.0 / static_cast<double>(probs.rows);
  for (std::size_t r = 0; r < d.rows; ++r) {
    d(r, static_cast<std::size_t>(labels[r])) -= 1.0;
    for (std::size_t c = 0; c < d.cols; ++c) d(r, c) *= inv_n;
  }
  return d;
}

void check_labels(std::span<const int> labels, std::size_t width) {
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= width) {
      throw DimensionError("label " + std::to_string(y) + " outside logit width " +
                           std::to_string(width));
    }
  }
}

}  // namespace

ParamVector& ParamVector::axpy(double scale, const ParamVector& other) {
  require_same_size(*this, other, "axpy");
  for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += scale * other.values_[i];
  return *this;
}

ParamVector& ParamVector::operator*=(double scale) {
  for (double& v : values_) v *= scale;
  return *this;
}

double ParamVector::dot(const ParamVector& other) const {
  require_same_size(*this, other, "dot");
  double acc = 0.0;
  for (std::size_t i = 0; i < values_.size(); ++i) acc += values_[i] * other.values_[i];
  return acc;
}

double ParamVector::norm() const { return std::sqrt(dot(*this)); }

bool ParamVector::all_finite() const {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

ParamVector operator+(ParamVector lhs, const ParamVector& rhs) { return lhs += rhs; }
ParamVector operator-(ParamVector lhs, const ParamVector& rhs) { return lhs -= rhs; }
ParamVector operator*(double scale, ParamVector v) { return v *= scale; }

Matrix Matrix::from_rows(const std::vector<std::vector<double>>& rows) {
  Matrix m(rows.size(), rows.empty() ? 0 : rows.front().size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != m.cols) throw DimensionError("ragged rows in Matrix::from_rows");
    std::copy(rows[r].begin(), rows[r].end(), m.row(r).begin());
  }
  return m;
}

std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::Relu: return "relu";
    case Activation::Tanh: return "tanh";
    case Activation::Identity: return "identity";
  }
  return "relu";
}

Activation parse_activation(std::string_view name) {
  if (name == "relu") return Activation::Relu;
  if (name == "tanh") return Activation::Tanh;
  if (name == "identity") return Activation::Identity;
  throw ConfigError("unknown activation '" + std::string(name) + "'");
}

std::size_t Architecture::param_count() const {
  std::size_t n = 0;
  for (std::size_t i = 0; i + 1 < layer_widths.size(); ++i) {
    n += (layer_widths[i] + 1) * layer_widths[i + 1];
  }
  return n;
}

std::size_t Architecture::layer_offset(std::size_t layer) const {
  std::size_t n = 0;
  for (std::size_t i = 0; i < layer; ++i) n += (layer_widths[i] + 1) * layer_widths[i + 1];
  return n;
}

void Architecture::validate() const {
  if (layer_widths.size() < 3) throw ConfigError("architecture needs at least one hidden layer");
  if (std::any_of(layer_widths.begin(), layer_widths.end(), [](std::size_t w) { return w == 0; })) {
    throw ConfigError("layer widths must be positive");
  }
  if (output_dim() < 2) throw ConfigError("output width must be at least 2");
}

ParamVector initialize_params(const Architecture& arch, std::mt19937_64& rng) {
  ParamVector p(arch.param_count());
  for (std::size_t l = 0; l < arch.layer_count(); ++l) {
    const std::size_t in = arch.layer_widths[l];
    const std::size_t out = arch.layer_widths[l + 1];
    const double scale = 1.0 / std::sqrt(static_cast<double>(in));
    std::uniform_real_distribution<double> dist(-scale, scale);
    const std::size_t off = arch.layer_offset(l);
    for (std::size_t i = 0; i < (in + 1) * out; ++i) p[off + i] = dist(rng);
  }
  return p;
}

Matrix forward(const Architecture& arch, const ParamVector& params, const Matrix& inputs) {
  check_shapes(arch, params, inputs);
  return std::move(run_forward(arch, params, inputs).activations.back());
}

double cross_entropy(const Matrix& logits, std::span<const int> labels) {
  if (logits.rows != labels.size()) {
    throw DimensionError("cross_entropy: " + std::to_string(logits.rows) + " logit rows vs " +
                         std::to_string(labels.size()) + " labels");
  }
  if (labels.empty()) throw DimensionError("cross_entropy: empty batch");
  check_labels(labels, logits.cols);
  double total = 0.0;
  for (std::size_t r = 0; r < logits.rows; ++r) {
    auto row = logits.row(r);
    const double m = *std::max_element(row.begin(), row.end());
    double sum = 0.0;
    for (double v : row) sum += std::exp(v - m);
    total += m + std::log(sum) - row[static_cast<std::size_t>(labels[r])];
  }
  return total / static_cast<double>(logits.rows);
}

double batch_loss(const Architecture& arch, const ParamVector& params, const Batch& batch) {
  check_batch(arch, params, batch);
  return cross_entropy(forward(arch, params, batch.inputs), batch.labels);
}

ParamVector grad(const Architecture& arch, const ParamVector& params, const Batch& batch) {
  check_batch(arch, params, batch);
  if (batch.size() == 0) throw DimensionError("grad: empty batch");
  check_labels(batch.labels, arch.output_dim());

  const Trace t = run_forward(arch, params, batch.inputs);
  const std::size_t layers = arch.layer_count();
  ParamVector g(params.size());

  Matrix delta = loss_delta(softmax_rows(t.activations.back()), batch.labels);
  for (std::size_t l = layers; l-- > 0;) {
    const LayerView layer = layer_view(arch, params, l);
    double* gw = g.span().data() + arch.layer_offset(l);
    accumulate_layer_grad(delta, t.activations[l], gw, gw + layer.in * layer.out);
    if (l == 0) break;
    Matrix back = affine_transpose(delta, layer);
    const Matrix& z = t.pre[l - 1];
    for (std::size_t i = 0; i < back.data.size(); ++i) {
      back.data[i] *= activate_d1(arch.activation, z.data[i]);
    }
    delta = std::move(back);
  }
  return g;
}

// Pearlmutter's R-operator: forward-propagate the directional derivative of
// every intermediate along v, then back-propagate the directional derivative
// of the adjoints. The result is the exact H*v of the batch loss.
ParamVector hessian_vector_product(const Architecture& arch, const ParamVector& params,
                                   const Batch& batch, const ParamVector& v) {
  check_batch(arch, params, batch);
  require_same_size(params, v, "hessian_vector_product");
  if (batch.size() == 0) throw DimensionError("hessian_vector_product: empty batch");
  check_labels(batch.labels, arch.output_dim());

  const std::size_t layers = arch.layer_count();
  const Activation act = arch.activation;
  const Trace t = run_forward(arch, params, batch.inputs);

  // R-forward.
  std::vector<Matrix> r_act(layers + 1);  // R{a_l}
  std::vector<Matrix> r_pre(layers);      // R{z_l}
  r_act[0] = Matrix(batch.inputs.rows, batch.inputs.cols);
  for (std::size_t l = 0; l < layers; ++l) {
    const LayerView w = layer_view(arch, params, l);
    const LayerView dv = layer_view(arch, v, l);
    Matrix rz = affine(t.activations[l], dv, true);
    const Matrix through = affine(r_act[l], w, false);
    for (std::size_t i = 0; i < rz.data.size(); ++i) rz.data[i] += through.data[i];
    Matrix ra = rz;
    if (l + 1 < layers) {
      for (std::size_t i = 0; i < ra.data.size(); ++i) {
        ra.data[i] = activate_d1(act, t.pre[l].data[i]) * rz.data[i];
      }
    }
    r_pre[l] = std::move(rz);
    r_act[l + 1] = std::move(ra);
  }

  // Output adjoint and its R-derivative: d = (p - y)/n, R{d} = (diag(p) - pp^T) R{z} / n.
  const Matrix probs = softmax_rows(t.activations.back());
  Matrix delta = loss_delta(probs, batch.labels);
  Matrix r_delta(probs.rows, probs.cols);
  {
    const double inv_n = 1.0 / static_cast<double>(probs.rows);
    const Matrix& rz = r_pre[layers - 1];
    for (std::size_t r = 0; r < probs.rows; ++r) {
      double p_dot_rz = 0.0;
      for (std::size_t c = 0; c < probs.cols; ++c) p_dot_rz += probs(r, c) * rz(r, c);
      for (std::size_t c = 0; c < probs.cols; ++c) {
        r_delta(r, c) = probs(r, c) * (rz(r, c) - p_dot_rz) * inv_n;
      }
    }
  }

  ParamVector hv(params.size());
  for (std::size_t l = layers; l-- > 0;) {
    const LayerView w = layer_view(arch, params, l);
    const LayerView dv = layer_view(arch, v, l);
    double* block = hv.span().data() + arch.layer_offset(l);
    accumulate_layer_grad(r_delta, t.activations[l], block, block + w.in * w.out);
    accumulate_layer_grad(delta, r_act[l], block, nullptr);
    if (l == 0) break;

    Matrix back = affine_transpose(delta, w);
    Matrix r_back = affine_transpose(r_delta, w);
    const Matrix via_v = affine_transpose(delta, dv);
    for (std::size_t i = 0; i < r_back.data.size(); ++i) r_back.data[i] += via_v.data[i];

    const Matrix& z = t.pre[l - 1];
    const Matrix& rz = r_pre[l - 1];
    for (std::size_t i = 0; i < back.data.size(); ++i) {
      const double d1 = activate_d1(act, z.data[i]);
      r_back.data[i] = d1 * r_back.data[i] + activate_d2(act, z.data[i]) * rz.data[i] * back.data[i];
      back.data[i] *= d1;
    }
    delta = std::move(back);
    r_delta = std::move(r_back);
  }
  return hv;
}

}  // namespace bsml
