#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string_view>
#include <vector>

#include "fgn/types.hpp"

namespace fgn {

enum class Activation { kIdentity, kRelu, kTanh };

Activation activation_from_string(std::string_view name);
std::string_view to_string(Activation a);

/// Fully connected network description. `layer_widths` starts with the input
/// width, so a spec with W widths has W-1 affine layers. `activations[l]`
/// follows affine layer l; layers without an entry are linear, which leaves
/// the output layer linear by default.
struct MlpSpec {
  std::vector<Index> layer_widths;
  std::vector<Activation> activations;

  Index num_layers() const { return static_cast<Index>(layer_widths.size()) - 1; }
  Index input_width() const { return layer_widths.front(); }
  Index output_width() const { return layer_widths.back(); }
  Activation activation(Index layer) const {
    return layer < static_cast<Index>(activations.size()) ? activations[layer]
                                                          : Activation::kIdentity;
  }
  Index param_count() const;
  void validate() const;
};

struct ParamSegment {
  Index layer = 0;
  Index rows = 0;  // weight: fan_in x fan_out; bias: 1 x fan_out
  Index cols = 0;
  bool is_bias = false;
  Index offset = 0;
  Index size() const { return rows * cols; }
};

/// Immutable coefficient map for one MlpSpec: per layer a weight segment then
/// a bias segment, in layer order. The segments of the trailing `tail_layers`
/// layers form the designated tail block used by restricted_norm.
class ParamLayout {
 public:
  ParamLayout(const MlpSpec& spec, Index tail_layers = 1);

  const std::vector<ParamSegment>& segments() const { return segments_; }
  Index size() const { return size_; }
  Index num_layers() const { return num_layers_; }
  Index tail_layers() const { return tail_layers_; }
  /// First coefficient of the tail block; the block runs to the end.
  Index tail_offset() const { return tail_offset_; }
  Index tail_offset_for(Index tail_layers) const;

  Index weight_offset(Index layer) const;
  Index bias_offset(Index layer) const;
  Index fan_in(Index layer) const;
  Index fan_out(Index layer) const;

  bool matches(const MlpSpec& spec) const;
  friend bool operator==(const ParamLayout& a, const ParamLayout& b);

 private:
  std::vector<ParamSegment> segments_;
  Index size_ = 0;
  Index num_layers_ = 0;
  Index tail_layers_ = 1;
  Index tail_offset_ = 0;
};

/// Flat parameter (or gradient) vector plus its shared, immutable layout.
struct ParamVector {
  Vector values;
  std::shared_ptr<const ParamLayout> layout;

  Index size() const { return values.size(); }
  Eigen::Map<const Matrix> weight(Index layer) const;
  Eigen::Map<Matrix> weight(Index layer);
  Eigen::Map<const Vector> bias(Index layer) const;
  Eigen::Map<Vector> bias(Index layer);
};

using Gradient = ParamVector;

/// Uniform init on [-a, a] with a = sqrt(6 / (fan_in + fan_out)), per layer,
/// weights and biases alike. Deterministic in `seed`.
ParamVector init_params(const MlpSpec& spec, std::uint64_t seed,
                        Index tail_layers = 1);
ParamVector zeros_like(const ParamVector& like);

Matrix forward(const MlpSpec& spec, const ParamVector& params,
               const Matrix& input);

/// Gradient of a scalar loss with cotangent `loss_grad` (the loss derivative
/// with respect to the network output) in every parameter. When `input_grad`
/// is non-null it receives the cotangent with respect to `input`, which is
/// how a head network chains into the network that feeds it.
Gradient backward(const MlpSpec& spec, const ParamVector& params,
                  const Matrix& input, const Matrix& loss_grad,
                  Matrix* input_grad = nullptr);

/// Central differences (f(x + s e_i) - f(x - s e_i)) / 2s per coordinate.
Gradient finite_diff_grad(const std::function<Scalar(const ParamVector&)>& loss_fn,
                          const ParamVector& params, Scalar step = 1e-5);

/// l2 norm over the tail block only (the layout's default block, or the
/// trailing `tail_layers` layers for the explicit overload).
Scalar restricted_norm(const Gradient& grad);
Scalar restricted_norm(const Gradient& grad, Index tail_layers);

}  // namespace fgn
