#include "fgn/mlp.hpp"

#include <cmath>
#include <random>
#include <string>

namespace fgn {

namespace {

std::string shape_str(Index rows, Index cols) {
  return std::to_string(rows) + "x" + std::to_string(cols);
}

void require_params_match(const MlpSpec& spec, const ParamVector& params,
                          const char* op) {
  spec.validate();
  if (!params.layout) {
    throw Error(std::string(op) + ": parameter vector has no layout");
  }
  if (!params.layout->matches(spec)) {
    throw Error(std::string(op) + ": parameter layout does not match spec");
  }
  if (params.values.size() != params.layout->size()) {
    throw Error(std::string(op) + ": parameter vector has " +
                std::to_string(params.values.size()) + " values, layout needs " +
                std::to_string(params.layout->size()));
  }
}

void apply_activation(Activation act, Matrix& m) {
  switch (act) {
    case Activation::kIdentity:
      return;
    case Activation::kRelu:
      m = m.cwiseMax(Scalar(0));
      return;
    case Activation::kTanh:
      m = m.array().tanh().matrix();
      return;
  }
}

// Derivative with respect to the pre-activation, folded into the cotangent.
// relu uses the subgradient 0 at exactly 0.
void fold_activation_grad(Activation act, const Matrix& pre, const Matrix& post,
                          Matrix& cotangent) {
  switch (act) {
    case Activation::kIdentity:
      return;
    case Activation::kRelu:
      cotangent.array() *= (pre.array() > Scalar(0)).cast<Scalar>();
      return;
    case Activation::kTanh:
      cotangent.array() *= (Scalar(1) - post.array().square());
      return;
  }
}

}  // namespace

Activation activation_from_string(std::string_view name) {
  if (name == "identity" || name == "linear") return Activation::kIdentity;
  if (name == "relu") return Activation::kRelu;
  if (name == "tanh") return Activation::kTanh;
  throw Error("unknown activation: " + std::string(name));
}

std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::kIdentity: return "identity";
    case Activation::kRelu: return "relu";
    case Activation::kTanh: return "tanh";
  }
  return "?";
}

Index MlpSpec::param_count() const {
  Index n = 0;
  for (Index l = 0; l + 1 < static_cast<Index>(layer_widths.size()); ++l) {
    n += layer_widths[l] * layer_widths[l + 1] + layer_widths[l + 1];
  }
  return n;
}

void MlpSpec::validate() const {
  if (layer_widths.size() < 2) {
    throw Error("MlpSpec: need at least 2 layer widths, got " +
                std::to_string(layer_widths.size()));
  }
  for (std::size_t i = 0; i < layer_widths.size(); ++i) {
    if (layer_widths[i] < 1) {
      throw Error("MlpSpec: width of layer " + std::to_string(i) +
                  " must be >= 1, got " + std::to_string(layer_widths[i]));
    }
  }
  if (static_cast<Index>(activations.size()) > num_layers()) {
    throw Error("MlpSpec: " + std::to_string(activations.size()) +
                " activations for " + std::to_string(num_layers()) + " layers");
  }
}

ParamLayout::ParamLayout(const MlpSpec& spec, Index tail_layers) {
  spec.validate();
  num_layers_ = spec.num_layers();
  if (tail_layers < 1 || tail_layers > num_layers_) {
    throw Error("ParamLayout: tail of " + std::to_string(tail_layers) +
                " layers is unknown for a " + std::to_string(num_layers_) +
                "-layer network");
  }
  tail_layers_ = tail_layers;
  Index offset = 0;
  for (Index l = 0; l < num_layers_; ++l) {
    const Index in = spec.layer_widths[l];
    const Index out = spec.layer_widths[l + 1];
    segments_.push_back({l, in, out, false, offset});
    offset += in * out;
    segments_.push_back({l, 1, out, true, offset});
    offset += out;
  }
  size_ = offset;
  tail_offset_ = weight_offset(num_layers_ - tail_layers_);
}

Index ParamLayout::tail_offset_for(Index tail_layers) const {
  if (tail_layers < 1 || tail_layers > num_layers_) {
    throw Error("restricted_norm: tail of " + std::to_string(tail_layers) +
                " layers is unknown for a " + std::to_string(num_layers_) +
                "-layer network");
  }
  return weight_offset(num_layers_ - tail_layers);
}

Index ParamLayout::weight_offset(Index layer) const {
  return segments_[static_cast<std::size_t>(2 * layer)].offset;
}

Index ParamLayout::bias_offset(Index layer) const {
  return segments_[static_cast<std::size_t>(2 * layer + 1)].offset;
}

Index ParamLayout::fan_in(Index layer) const {
  return segments_[static_cast<std::size_t>(2 * layer)].rows;
}

Index ParamLayout::fan_out(Index layer) const {
  return segments_[static_cast<std::size_t>(2 * layer)].cols;
}

bool ParamLayout::matches(const MlpSpec& spec) const {
  if (num_layers_ != spec.num_layers()) return false;
  for (Index l = 0; l < num_layers_; ++l) {
    if (fan_in(l) != spec.layer_widths[l] || fan_out(l) != spec.layer_widths[l + 1]) {
      return false;
    }
  }
  return true;
}

bool operator==(const ParamLayout& a, const ParamLayout& b) {
  if (a.num_layers_ != b.num_layers_ || a.tail_layers_ != b.tail_layers_ ||
      a.size_ != b.size_) {
    return false;
  }
  for (Index l = 0; l < a.num_layers_; ++l) {
    if (a.fan_in(l) != b.fan_in(l) || a.fan_out(l) != b.fan_out(l)) return false;
  }
  return true;
}

Eigen::Map<const Matrix> ParamVector::weight(Index layer) const {
  return {values.data() + layout->weight_offset(layer), layout->fan_in(layer),
          layout->fan_out(layer)};
}

Eigen::Map<Matrix> ParamVector::weight(Index layer) {
  return {values.data() + layout->weight_offset(layer), layout->fan_in(layer),
          layout->fan_out(layer)};
}

Eigen::Map<const Vector> ParamVector::bias(Index layer) const {
  return {values.data() + layout->bias_offset(layer), layout->fan_out(layer)};
}

Eigen::Map<Vector> ParamVector::bias(Index layer) {
  return {values.data() + layout->bias_offset(layer), layout->fan_out(layer)};
}

ParamVector init_params(const MlpSpec& spec, std::uint64_t seed,
                        Index tail_layers) {
  auto layout = std::make_shared<ParamLayout>(spec, tail_layers);
  ParamVector params{Vector(layout->size()), layout};
  std::mt19937_64 rng(seed);
  for (Index l = 0; l < layout->num_layers(); ++l) {
    const Scalar a =
        std::sqrt(Scalar(6) / Scalar(layout->fan_in(l) + layout->fan_out(l)));
    std::uniform_real_distribution<Scalar> dist(-a, a);
    const Index begin = layout->weight_offset(l);
    const Index end = layout->bias_offset(l) + layout->fan_out(l);
    for (Index i = begin; i < end; ++i) params.values[i] = dist(rng);
  }
  return params;
}

ParamVector zeros_like(const ParamVector& like) {
  return {Vector::Zero(like.values.size()), like.layout};
}

namespace {

struct ForwardTrace {
  std::vector<Matrix> pre;   // affine output per layer
  std::vector<Matrix> post;  // activation output per layer
};

ForwardTrace run_forward(const MlpSpec& spec, const ParamVector& params,
                         const Matrix& input) {
  if (input.cols() != spec.input_width()) {
    throw Error("forward: input has " + shape_str(input.rows(), input.cols()) +
                " shape but layer 0 expects " +
                std::to_string(spec.input_width()) + " columns");
  }
  ForwardTrace trace;
  const Index layers = spec.num_layers();
  trace.pre.reserve(static_cast<std::size_t>(layers));
  trace.post.reserve(static_cast<std::size_t>(layers));
  const Matrix* x = &input;
  for (Index l = 0; l < layers; ++l) {
    Matrix pre = (*x) * params.weight(l);
    pre.rowwise() += params.bias(l).transpose();
    Matrix post = pre;
    apply_activation(spec.activation(l), post);
    trace.pre.push_back(std::move(pre));
    trace.post.push_back(std::move(post));
    x = &trace.post.back();
  }
  return trace;
}

}  // namespace

Matrix forward(const MlpSpec& spec, const ParamVector& params,
               const Matrix& input) {
  require_params_match(spec, params, "forward");
  return run_forward(spec, params, input).post.back();
}

Gradient backward(const MlpSpec& spec, const ParamVector& params,
                  const Matrix& input, const Matrix& loss_grad,
                  Matrix* input_grad) {
  require_params_match(spec, params, "backward");
  ForwardTrace trace = run_forward(spec, params, input);
  const Matrix& out = trace.post.back();
  if (loss_grad.rows() != out.rows() || loss_grad.cols() != out.cols()) {
    throw Error("backward: loss_grad is " +
                shape_str(loss_grad.rows(), loss_grad.cols()) +
                " but the output of layer " + std::to_string(spec.num_layers() - 1) +
                " is " + shape_str(out.rows(), out.cols()));
  }

  Gradient grad = zeros_like(params);
  Matrix cotangent = loss_grad;
  for (Index l = spec.num_layers() - 1; l >= 0; --l) {
    fold_activation_grad(spec.activation(l), trace.pre[static_cast<std::size_t>(l)],
                         trace.post[static_cast<std::size_t>(l)], cotangent);
    const Matrix& activation_in =
        l == 0 ? input : trace.post[static_cast<std::size_t>(l - 1)];
    grad.weight(l) = activation_in.transpose() * cotangent;
    grad.bias(l) = cotangent.colwise().sum().transpose();
    if (l > 0 || input_grad != nullptr) {
      cotangent = cotangent * params.weight(l).transpose();
    }
  }
  if (input_grad != nullptr) *input_grad = std::move(cotangent);
  return grad;
}

Gradient finite_diff_grad(const std::function<Scalar(const ParamVector&)>& loss_fn,
                          const ParamVector& params, Scalar step) {
  if (!(step > Scalar(0))) {
    throw Error("finite_diff_grad: step must be > 0");
  }
  ParamVector probe = params;
  Gradient grad = zeros_like(params);
  for (Index i = 0; i < params.values.size(); ++i) {
    const Scalar saved = probe.values[i];
    probe.values[i] = saved + step;
    const Scalar up = loss_fn(probe);
    probe.values[i] = saved - step;
    const Scalar down = loss_fn(probe);
    probe.values[i] = saved;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw Error("finite_diff_grad: non-finite loss at coordinate " +
                  std::to_string(i));
    }
    grad.values[i] = (up - down) / (2 * step);
  }
  return grad;
}

Scalar restricted_norm(const Gradient& grad) {
  if (!grad.layout) throw Error("restricted_norm: gradient has no layout");
  const Index offset = grad.layout->tail_offset();
  return grad.values.tail(grad.values.size() - offset).norm();
}

Scalar restricted_norm(const Gradient& grad, Index tail_layers) {
  if (!grad.layout) throw Error("restricted_norm: gradient has no layout");
  const Index offset = grad.layout->tail_offset_for(tail_layers);
  return grad.values.tail(grad.values.size() - offset).norm();
}

}  // namespace fgn
