#pragma once

#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "swiden/rng.hpp"
#include "swiden/tensor.hpp"

namespace swiden {

/// Trainable parameter: value, accumulated gradient, heavy-ball velocity and
/// a per-parameter learning-rate multiplier.
struct Param {
  explicit Param(Tensor v, double lr_scale = 1.0);

  Tensor value;
  Tensor grad;
  Tensor momentum;
  double lr_scale = 1.0;

  void zero_grad() { grad.fill(0.0); }
};

struct NamedParam {
  std::string name;
  Param* param;
};

enum class Mode { Train, Eval };

/// A differentiable node with a hand-written backward pass.
///
/// backward() consumes the activations cached by the most recent forward() on
/// the same instance and *accumulates* into each Param::grad; callers zero
/// gradients between steps.
class Layer {
 public:
  virtual ~Layer() = default;

  virtual Tensor forward(const Tensor& x, Mode mode, Rng& rng) = 0;
  virtual Tensor backward(const Tensor& grad_out) = 0;
  virtual std::string kind() const = 0;

  /// Appends this layer's parameters, named "<prefix><local name>".
  virtual void collect_params(const std::string& prefix, std::vector<NamedParam>& out);

  std::vector<Param*> params();
};

/// 2-D cross-correlation (no kernel flip) plus per-channel bias, lowered to
/// GEMM via im2col. Weights [Cout,Cin,kh,kw], bias [Cout]; input [N,Cin,H,W].
class Conv2d final : public Layer {
 public:
  /// He-normal weights (sigma = sqrt(2 / (Cin*k*k))), zero bias.
  Conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel, std::size_t stride,
         std::size_t pad, Rng& init);
  Conv2d(Tensor weight, Tensor bias, std::size_t stride, std::size_t pad);

  Tensor forward(const Tensor& x, Mode mode, Rng& rng) override;
  Tensor backward(const Tensor& grad_out) override;
  std::string kind() const override { return "conv2d"; }
  void collect_params(const std::string& prefix, std::vector<NamedParam>& out) override;

  Param& weight() { return weight_; }
  Param& bias() { return bias_; }
  std::size_t out_channels() const { return weight_.value.dim(0); }
  /// When false, backward still fills the parameter gradients but returns a
  /// zero input gradient without computing it (for layers reading raw input).
  void set_input_grad(bool on) { input_grad_ = on; }
  bool input_grad() const { return input_grad_; }

 private:
  Param weight_;
  Param bias_;
  std::size_t stride_, pad_;
  bool input_grad_ = true;
  std::optional<ConvGeometry> geom_;
  std::size_t batch_ = 0;
  std::vector<double> cols_;  // im2col of every sample in the last forward
};

/// Windowed max without padding. Backward routes each upstream gradient to
/// the first maximum in row-major window order.
class MaxPool2d final : public Layer {
 public:
  MaxPool2d(std::size_t kernel, std::size_t stride);

  Tensor forward(const Tensor& x, Mode mode, Rng& rng) override;
  Tensor backward(const Tensor& grad_out) override;
  std::string kind() const override { return "maxpool2d"; }

 private:
  std::size_t kernel_, stride_;
  Shape in_shape_;
  std::vector<std::size_t> argmax_;
};

/// [N,C,H,W] -> [N,C], per-channel spatial mean.
class GlobalAvgPool final : public Layer {
 public:
  Tensor forward(const Tensor& x, Mode mode, Rng& rng) override;
  Tensor backward(const Tensor& grad_out) override;
  std::string kind() const override { return "global_avg_pool"; }

 private:
  Shape in_shape_;
};

/// [N,...] -> [N,D].
class Flatten final : public Layer {
 public:
  Tensor forward(const Tensor& x, Mode mode, Rng& rng) override;
  Tensor backward(const Tensor& grad_out) override;
  std::string kind() const override { return "flatten"; }

 private:
  Shape in_shape_;
};

/// Fully connected: y = x W + b with W [D,K], b [K].
class Linear final : public Layer {
 public:
  /// He-normal weights (sigma = sqrt(2 / D)), zero bias.
  Linear(std::size_t in_features, std::size_t out_features, Rng& init);
  Linear(Tensor weight, Tensor bias);

  Tensor forward(const Tensor& x, Mode mode, Rng& rng) override;
  Tensor backward(const Tensor& grad_out) override;
  std::string kind() const override { return "fc"; }
  void collect_params(const std::string& prefix, std::vector<NamedParam>& out) override;

  Param& weight() { return weight_; }
  Param& bias() { return bias_; }

 private:
  Param weight_;
  Param bias_;
  std::optional<Tensor> input_;
};

/// max(x, 0); the subgradient at 0 is 0.
class Relu final : public Layer {
 public:
  Tensor forward(const Tensor& x, Mode mode, Rng& rng) override;
  Tensor backward(const Tensor& grad_out) override;
  std::string kind() const override { return "relu"; }

 private:
  std::optional<Tensor> input_;
};

/// Inverted dropout. In Train mode every element, in row-major order, is
/// dropped when rng.uniform() < p and survivors are scaled by 1/(1-p); p == 0
/// draws nothing. Eval mode is an exact passthrough.
class Dropout final : public Layer {
 public:
  explicit Dropout(double p);

  Tensor forward(const Tensor& x, Mode mode, Rng& rng) override;
  Tensor backward(const Tensor& grad_out) override;
  std::string kind() const override { return "dropout"; }

  double p() const { return p_; }

 private:
  double p_;
  std::optional<Tensor> mask_;  // holds 0 or 1/(1-p); empty after an Eval forward
};

/// Identity on forward; multiplies the upstream gradient by -lambda.
class GradientReversal final : public Layer {
 public:
  explicit GradientReversal(double lambda);

  Tensor forward(const Tensor& x, Mode mode, Rng& rng) override;
  Tensor backward(const Tensor& grad_out) override;
  std::string kind() const override { return "grl"; }

  double lambda() const { return lambda_; }

 private:
  double lambda_;
};

Tensor grl_forward(const Tensor& x, double lambda);
Tensor grl_backward(const Tensor& grad, double lambda);

class Sequential final : public Layer {
 public:
  Sequential() = default;
  explicit Sequential(std::vector<std::unique_ptr<Layer>> layers);

  Sequential& add(std::unique_ptr<Layer> layer);
  template <typename L, typename... Args>
  L& emplace(Args&&... args) {
    auto p = std::make_unique<L>(std::forward<Args>(args)...);
    L& ref = *p;
    layers_.push_back(std::move(p));
    return ref;
  }

  Tensor forward(const Tensor& x, Mode mode, Rng& rng) override;
  Tensor backward(const Tensor& grad_out) override;
  std::string kind() const override { return "sequential"; }
  void collect_params(const std::string& prefix, std::vector<NamedParam>& out) override;

  std::size_t size() const { return layers_.size(); }
  bool empty() const { return layers_.empty(); }
  Layer& operator[](std::size_t i) { return *layers_.at(i); }

 private:
  std::vector<std::unique_ptr<Layer>> layers_;
};

/// Sends every sample through exactly one branch, chosen per sample by the
/// route set before forward(). Backward reaches only the branch each sample
/// used; branches that received no samples are not touched at all.
class Router final : public Layer {
 public:
  explicit Router(std::vector<std::unique_ptr<Sequential>> branches);

  /// Branch index per sample for the next forward(). Throws RoutingError when
  /// an index is out of range.
  void set_routes(std::vector<std::size_t> routes);
  const std::vector<std::size_t>& routes() const { return routes_; }

  Tensor forward(const Tensor& x, Mode mode, Rng& rng) override;
  Tensor backward(const Tensor& grad_out) override;
  std::string kind() const override { return "router"; }
  void collect_params(const std::string& prefix, std::vector<NamedParam>& out) override;

  std::size_t num_branches() const { return branches_.size(); }
  Sequential& branch(std::size_t i) { return *branches_.at(i); }

 private:
  std::vector<std::unique_ptr<Sequential>> branches_;
  std::vector<std::size_t> routes_;
  std::vector<std::vector<std::size_t>> groups_;  // sample indices per branch, last forward
  Shape in_shape_;
  Shape out_shape_;
};

Tensor route_forward(Router& router, const Tensor& x, std::span<const std::size_t> styles, Mode mode,
                     Rng& rng);
Tensor route_backward(Router& router, const Tensor& grad_out);

/// Rows of a batch tensor selected along axis 0.
Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows);
/// Writes `src` rows into `dst` at positions `rows` along axis 0.
void scatter_rows(Tensor& dst, const Tensor& src, std::span<const std::size_t> rows);

struct LossResult {
  double loss;
  Tensor grad;  // d loss / d logits
};

/// Mean softmax cross-entropy over the batch with max-subtraction;
/// grad = (softmax - onehot) / N. Throws LabelError for out-of-range labels.
LossResult softmax_xent(const Tensor& logits, std::span<const std::size_t> labels);

/// Row-wise softmax of [N,K] logits.
Tensor softmax(const Tensor& logits);

}  // namespace swiden
