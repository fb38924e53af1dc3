#include "swiden/layers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace swiden {

Param::Param(Tensor v, double scale)
    : value(std::move(v)), grad(Tensor::zeros(value.shape())), momentum(Tensor::zeros(value.shape())),
      lr_scale(scale) {
  if (!(lr_scale > 0.0)) throw ConfigError("lr_scale must be positive");
}

void Layer::collect_params(const std::string&, std::vector<NamedParam>&) {}

std::vector<Param*> Layer::params() {
  std::vector<NamedParam> named;
  collect_params("", named);
  std::vector<Param*> out;
  out.reserve(named.size());
  for (auto& np : named) out.push_back(np.param);
  return out;
}

// ---------------------------------------------------------------- Conv2d

Conv2d::Conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
               std::size_t stride, std::size_t pad, Rng& init)
    : weight_(Tensor::normal({out_channels, in_channels, kernel, kernel},
                             std::sqrt(2.0 / static_cast<double>(in_channels * kernel * kernel)), init)),
      bias_(Tensor::zeros({out_channels})),
      stride_(stride),
      pad_(pad) {
  if (stride == 0) throw ConfigError("conv stride must be >= 1");
}

Conv2d::Conv2d(Tensor weight, Tensor bias, std::size_t stride, std::size_t pad)
    : weight_(std::move(weight)), bias_(std::move(bias)), stride_(stride), pad_(pad) {
  if (weight_.value.rank() != 4) throw ShapeError("conv weight must be [Cout,Cin,kh,kw]");
  if (bias_.value.shape() != Shape{weight_.value.dim(0)}) throw ShapeError("conv bias must be [Cout]");
  if (stride == 0) throw ConfigError("conv stride must be >= 1");
}

void Conv2d::collect_params(const std::string& prefix, std::vector<NamedParam>& out) {
  out.push_back({prefix + "weight", &weight_});
  out.push_back({prefix + "bias", &bias_});
}

Tensor Conv2d::forward(const Tensor& x, Mode, Rng&) {
  const auto& w = weight_.value;
  if (x.rank() != 4 || x.dim(1) != w.dim(1))
    throw ShapeError("conv2d: input " + to_string(x.shape()) + " incompatible with weight " +
                     to_string(w.shape()));
  ConvGeometry g{x.dim(1), x.dim(2), x.dim(3), w.dim(2), w.dim(3), stride_, pad_};
  const std::size_t positions = g.out_h() * g.out_w();
  const std::size_t n = x.dim(0), cout = w.dim(0);
  const std::size_t rows = g.channels * g.kernel_h * g.kernel_w, ld = n * positions;
  geom_ = g;
  batch_ = n;

  // One column matrix [rows, N*positions] for the whole batch, one GEMM.
  cols_.resize(rows * ld);
  const std::size_t in_stride = g.channels * g.height * g.width;
  for (std::size_t s = 0; s < n; ++s) im2col_raw(x.raw() + s * in_stride, g, cols_.data() + s * positions, ld);
  std::vector<double> y(cout * ld);
  gemm(w.raw(), cols_.data(), y.data(), cout, rows, ld);

  Tensor out({n, cout, g.out_h(), g.out_w()});
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t c = 0; c < cout; ++c) {
      const double* src = y.data() + c * ld + s * positions;
      double* dst = out.raw() + (s * cout + c) * positions;
      const double b = bias_.value[c];
      for (std::size_t p = 0; p < positions; ++p) dst[p] = src[p] + b;
    }
  return out;
}

Tensor Conv2d::backward(const Tensor& grad_out) {
  if (!geom_) throw Error("conv2d: backward called before forward");
  const auto& g = *geom_;
  const std::size_t oh = g.out_h(), ow = g.out_w(), positions = oh * ow;
  const std::size_t cout = weight_.value.dim(0);
  const std::size_t rows = g.channels * g.kernel_h * g.kernel_w, ld = batch_ * positions;
  if (grad_out.shape() != Shape{batch_, cout, oh, ow})
    throw ShapeError("conv2d: grad_out shape " + to_string(grad_out.shape()) + " mismatch");

  std::vector<double> dy(cout * ld);
  for (std::size_t s = 0; s < batch_; ++s)
    for (std::size_t c = 0; c < cout; ++c) {
      const double* src = grad_out.raw() + (s * cout + c) * positions;
      std::copy(src, src + positions, dy.data() + c * ld + s * positions);
    }
  gemm_bt(dy.data(), cols_.data(), weight_.grad.raw(), cout, ld, rows, /*accumulate=*/true);
  for (std::size_t c = 0; c < cout; ++c) {
    double acc = 0.0;
    for (std::size_t p = 0; p < ld; ++p) acc += dy[c * ld + p];
    bias_.grad[c] += acc;
  }
  Tensor grad_in({batch_, g.channels, g.height, g.width});
  if (!input_grad_) return grad_in;
  std::vector<double> dcols(rows * ld);
  gemm_at(weight_.value.raw(), dy.data(), dcols.data(), rows, cout, ld);

  const std::size_t in_stride = g.channels * g.height * g.width;
  for (std::size_t s = 0; s < batch_; ++s)
    col2im_raw(dcols.data() + s * positions, g, grad_in.raw() + s * in_stride, ld);
  return grad_in;
}

// ---------------------------------------------------------------- MaxPool2d

MaxPool2d::MaxPool2d(std::size_t kernel, std::size_t stride) : kernel_(kernel), stride_(stride) {
  if (kernel == 0 || stride == 0) throw ConfigError("maxpool kernel and stride must be >= 1");
}

Tensor MaxPool2d::forward(const Tensor& x, Mode, Rng&) {
  if (x.rank() != 4) throw ShapeError("maxpool2d expects [N,C,H,W], got " + to_string(x.shape()));
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h < kernel_ || w < kernel_)
    throw ShapeError("maxpool2d: window " + std::to_string(kernel_) + " exceeds input " + to_string(x.shape()));
  const std::size_t oh = (h - kernel_) / stride_ + 1, ow = (w - kernel_) / stride_ + 1;
  in_shape_ = x.shape();
  Tensor out({n, c, oh, ow});
  argmax_.resize(out.size());
  std::size_t o = 0;
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const double* src = x.raw() + plane * h * w;
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox, ++o) {
        std::size_t best = (oy * stride_) * w + ox * stride_;
        double best_v = src[best];
        for (std::size_t ky = 0; ky < kernel_; ++ky)
          for (std::size_t kx = 0; kx < kernel_; ++kx) {
            const std::size_t idx = (oy * stride_ + ky) * w + ox * stride_ + kx;
            if (src[idx] > best_v) {
              best_v = src[idx];
              best = idx;
            }
          }
        out[o] = best_v;
        argmax_[o] = plane * h * w + best;
      }
  }
  return out;
}

Tensor MaxPool2d::backward(const Tensor& grad_out) {
  if (in_shape_.empty()) throw Error("maxpool2d: backward called before forward");
  if (grad_out.size() != argmax_.size()) throw ShapeError("maxpool2d: grad_out size mismatch");
  Tensor grad_in(in_shape_);
  for (std::size_t o = 0; o < argmax_.size(); ++o) grad_in[argmax_[o]] += grad_out[o];
  return grad_in;
}

// ---------------------------------------------------------------- GlobalAvgPool

Tensor GlobalAvgPool::forward(const Tensor& x, Mode, Rng&) {
  if (x.rank() != 4) throw ShapeError("global_avg_pool expects [N,C,H,W], got " + to_string(x.shape()));
  in_shape_ = x.shape();
  const std::size_t planes = x.dim(0) * x.dim(1), area = x.dim(2) * x.dim(3);
  Tensor out({x.dim(0), x.dim(1)});
  for (std::size_t p = 0; p < planes; ++p) {
    double acc = 0.0;
    const double* src = x.raw() + p * area;
    for (std::size_t i = 0; i < area; ++i) acc += src[i];
    out[p] = acc / static_cast<double>(area);
  }
  return out;
}

Tensor GlobalAvgPool::backward(const Tensor& grad_out) {
  if (in_shape_.empty()) throw Error("global_avg_pool: backward called before forward");
  if (grad_out.shape() != Shape{in_shape_[0], in_shape_[1]})
    throw ShapeError("global_avg_pool: grad_out shape mismatch");
  const std::size_t area = in_shape_[2] * in_shape_[3];
  Tensor grad_in(in_shape_);
  for (std::size_t p = 0; p < grad_out.size(); ++p) {
    const double g = grad_out[p] / static_cast<double>(area);
    std::fill(grad_in.raw() + p * area, grad_in.raw() + (p + 1) * area, g);
  }
  return grad_in;
}

// ---------------------------------------------------------------- Flatten

Tensor Flatten::forward(const Tensor& x, Mode, Rng&) {
  in_shape_ = x.shape();
  return x.reshaped({x.dim(0), x.size() / x.dim(0)});
}

Tensor Flatten::backward(const Tensor& grad_out) {
  if (in_shape_.empty()) throw Error("flatten: backward called before forward");
  return grad_out.reshaped(in_shape_);
}

// ---------------------------------------------------------------- Linear

Linear::Linear(std::size_t in_features, std::size_t out_features, Rng& init)
    : weight_(Tensor::normal({in_features, out_features},
                             std::sqrt(2.0 / static_cast<double>(in_features)), init)),
      bias_(Tensor::zeros({out_features})) {}

Linear::Linear(Tensor weight, Tensor bias) : weight_(std::move(weight)), bias_(std::move(bias)) {
  if (weight_.value.rank() != 2) throw ShapeError("fc weight must be [D,K]");
  if (bias_.value.shape() != Shape{weight_.value.dim(1)}) throw ShapeError("fc bias must be [K]");
}

void Linear::collect_params(const std::string& prefix, std::vector<NamedParam>& out) {
  out.push_back({prefix + "weight", &weight_});
  out.push_back({prefix + "bias", &bias_});
}

Tensor Linear::forward(const Tensor& x, Mode, Rng&) {
  const auto& w = weight_.value;
  if (x.rank() != 2 || x.dim(1) != w.dim(0))
    throw ShapeError("fc: input " + to_string(x.shape()) + " incompatible with weight " + to_string(w.shape()));
  const std::size_t n = x.dim(0), k = w.dim(1);
  Tensor out({n, k});
  for (std::size_t i = 0; i < n; ++i) std::copy(bias_.value.raw(), bias_.value.raw() + k, out.raw() + i * k);
  gemm(x.raw(), w.raw(), out.raw(), n, w.dim(0), k, /*accumulate=*/true);
  input_ = x;
  return out;
}

Tensor Linear::backward(const Tensor& grad_out) {
  if (!input_) throw Error("fc: backward called before forward");
  const auto& x = *input_;
  const std::size_t n = x.dim(0), d = x.dim(1), k = weight_.value.dim(1);
  if (grad_out.shape() != Shape{n, k}) throw ShapeError("fc: grad_out shape mismatch");
  gemm_at(x.raw(), grad_out.raw(), weight_.grad.raw(), d, n, k, /*accumulate=*/true);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < k; ++j) bias_.grad[j] += grad_out[i * k + j];
  Tensor grad_in({n, d});
  gemm_bt(grad_out.raw(), weight_.value.raw(), grad_in.raw(), n, k, d);
  return grad_in;
}

// ---------------------------------------------------------------- Relu

Tensor Relu::forward(const Tensor& x, Mode, Rng&) {
  Tensor out = x;
  for (auto& v : out.data()) v = v > 0.0 ? v : 0.0;
  input_ = out;  // out > 0 exactly where x > 0
  return out;
}

Tensor Relu::backward(const Tensor& grad_out) {
  if (!input_) throw Error("relu: backward called before forward");
  if (grad_out.shape() != input_->shape()) throw ShapeError("relu: grad_out shape mismatch");
  Tensor grad_in = grad_out;
  for (std::size_t i = 0; i < grad_in.size(); ++i)
    if (!((*input_)[i] > 0.0)) grad_in[i] = 0.0;
  return grad_in;
}

// ---------------------------------------------------------------- Dropout

Dropout::Dropout(double p) : p_(p) {
  if (!(p >= 0.0 && p < 1.0)) throw ConfigError("dropout probability must be in [0, 1)");
}

Tensor Dropout::forward(const Tensor& x, Mode mode, Rng& rng) {
  if (mode == Mode::Eval || p_ == 0.0) {
    mask_.reset();
    return x;
  }
  const double keep_scale = 1.0 / (1.0 - p_);
  Tensor mask(x.shape());
  Tensor out = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mask[i] = rng.uniform() < p_ ? 0.0 : keep_scale;
    out[i] *= mask[i];
  }
  mask_ = std::move(mask);
  return out;
}

Tensor Dropout::backward(const Tensor& grad_out) {
  if (!mask_) return grad_out;
  return mul(grad_out, *mask_);
}

// ---------------------------------------------------------------- GRL

Tensor grl_forward(const Tensor& x, double) { return x; }

Tensor grl_backward(const Tensor& grad, double lambda) { return scale(grad, -lambda); }

GradientReversal::GradientReversal(double lambda) : lambda_(lambda) {
  if (!(lambda >= 0.0)) throw ConfigError("gradient reversal lambda must be >= 0");
}

Tensor GradientReversal::forward(const Tensor& x, Mode, Rng&) { return grl_forward(x, lambda_); }

Tensor GradientReversal::backward(const Tensor& grad_out) { return grl_backward(grad_out, lambda_); }

// ---------------------------------------------------------------- Sequential

Sequential::Sequential(std::vector<std::unique_ptr<Layer>> layers) : layers_(std::move(layers)) {}

Sequential& Sequential::add(std::unique_ptr<Layer> layer) {
  layers_.push_back(std::move(layer));
  return *this;
}

Tensor Sequential::forward(const Tensor& x, Mode mode, Rng& rng) {
  if (layers_.empty()) return x;
  Tensor h = layers_.front()->forward(x, mode, rng);
  for (std::size_t i = 1; i < layers_.size(); ++i) h = layers_[i]->forward(h, mode, rng);
  return h;
}

Tensor Sequential::backward(const Tensor& grad_out) {
  if (layers_.empty()) return grad_out;
  Tensor g = layers_.back()->backward(grad_out);
  for (std::size_t i = layers_.size() - 1; i-- > 0;) g = layers_[i]->backward(g);
  return g;
}

void Sequential::collect_params(const std::string& prefix, std::vector<NamedParam>& out) {
  for (std::size_t i = 0; i < layers_.size(); ++i)
    layers_[i]->collect_params(prefix + std::to_string(i) + ".", out);
}

// ---------------------------------------------------------------- Router

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows) {
  const std::size_t stride = x.size() / x.dim(0);
  Shape s = x.shape();
  s[0] = rows.size();
  Tensor out(s);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= x.dim(0)) throw ShapeError("gather_rows: row index out of range");
    std::copy(x.raw() + rows[i] * stride, x.raw() + (rows[i] + 1) * stride, out.raw() + i * stride);
  }
  return out;
}

void scatter_rows(Tensor& dst, const Tensor& src, std::span<const std::size_t> rows) {
  const std::size_t stride = dst.size() / dst.dim(0);
  if (src.dim(0) != rows.size() || src.size() / src.dim(0) != stride)
    throw ShapeError("scatter_rows: source rows " + to_string(src.shape()) + " do not fit " +
                     to_string(dst.shape()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy(src.raw() + i * stride, src.raw() + (i + 1) * stride, dst.raw() + rows[i] * stride);
}

Router::Router(std::vector<std::unique_ptr<Sequential>> branches) : branches_(std::move(branches)) {
  if (branches_.empty()) throw ConfigError("router needs at least one branch");
}

void Router::set_routes(std::vector<std::size_t> routes) {
  for (auto r : routes)
    if (r >= branches_.size())
      throw RoutingError("route " + std::to_string(r) + " out of range for " +
                         std::to_string(branches_.size()) + " branches");
  routes_ = std::move(routes);
}

Tensor Router::forward(const Tensor& x, Mode mode, Rng& rng) {
  const std::size_t n = x.dim(0);
  if (routes_.size() != n)
    throw RoutingError("router has " + std::to_string(routes_.size()) + " routes for a batch of " +
                       std::to_string(n));
  groups_.assign(branches_.size(), {});
  for (std::size_t i = 0; i < n; ++i) groups_[routes_[i]].push_back(i);
  in_shape_ = x.shape();

  std::optional<Tensor> out;
  std::optional<Shape> sample_shape;
  for (std::size_t b = 0; b < branches_.size(); ++b) {
    const auto& idx = groups_[b];
    if (idx.empty()) continue;
    Tensor y = idx.size() == n ? branches_[b]->forward(x, mode, rng)
                               : branches_[b]->forward(gather_rows(x, idx), mode, rng);
    Shape s(y.shape().begin() + 1, y.shape().end());
    if (sample_shape && *sample_shape != s)
      throw ShapeError("router branches produce different output shapes");
    sample_shape = s;
    if (idx.size() == n) {
      out = std::move(y);
    } else {
      if (!out) {
        Shape full = y.shape();
        full[0] = n;
        out.emplace(full);
      }
      scatter_rows(*out, y, idx);
    }
  }
  out_shape_ = out->shape();
  return std::move(*out);
}

Tensor Router::backward(const Tensor& grad_out) {
  if (groups_.empty()) throw Error("router: backward called before forward");
  if (grad_out.shape() != out_shape_) throw ShapeError("router: grad_out shape mismatch");
  const std::size_t n = in_shape_[0];
  std::optional<Tensor> grad_in;
  for (std::size_t b = 0; b < branches_.size(); ++b) {
    const auto& idx = groups_[b];
    if (idx.empty()) continue;
    if (idx.size() == n) return branches_[b]->backward(grad_out);
    Tensor g = branches_[b]->backward(gather_rows(grad_out, idx));
    if (!grad_in) grad_in.emplace(in_shape_);
    scatter_rows(*grad_in, g, idx);
  }
  return std::move(*grad_in);
}

void Router::collect_params(const std::string& prefix, std::vector<NamedParam>& out) {
  for (std::size_t b = 0; b < branches_.size(); ++b)
    branches_[b]->collect_params(prefix + "branch" + std::to_string(b) + ".", out);
}

Tensor route_forward(Router& router, const Tensor& x, std::span<const std::size_t> styles, Mode mode,
                     Rng& rng) {
  router.set_routes({styles.begin(), styles.end()});
  return router.forward(x, mode, rng);
}

Tensor route_backward(Router& router, const Tensor& grad_out) { return router.backward(grad_out); }

// ---------------------------------------------------------------- losses

Tensor softmax(const Tensor& logits) {
  if (logits.rank() != 2) throw ShapeError("softmax expects [N,K] logits");
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  Tensor p(logits.shape());
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = logits.raw() + i * k;
    const double mx = *std::max_element(row, row + k);
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) z += (p[i * k + j] = std::exp(row[j] - mx));
    for (std::size_t j = 0; j < k; ++j) p[i * k + j] /= z;
  }
  return p;
}

LossResult softmax_xent(const Tensor& logits, std::span<const std::size_t> labels) {
  if (logits.rank() != 2) throw ShapeError("softmax_xent expects [N,K] logits");
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  if (labels.size() != n) throw LabelError("label count does not match batch size");
  for (auto l : labels)
    if (l >= k) throw LabelError("label " + std::to_string(l) + " out of range [0," + std::to_string(k) + ")");

  Tensor grad(logits.shape());
  double loss = 0.0;
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = logits.raw() + i * k;
    const double mx = *std::max_element(row, row + k);
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) z += std::exp(row[j] - mx);
    const double log_z = std::log(z);
    loss += -(row[labels[i]] - mx - log_z);
    for (std::size_t j = 0; j < k; ++j) {
      const double pj = std::exp(row[j] - mx - log_z);
      grad[i * k + j] = (pj - (j == labels[i] ? 1.0 : 0.0)) * inv_n;
    }
  }
  return {loss * inv_n, std::move(grad)};
}

}  // namespace swiden
