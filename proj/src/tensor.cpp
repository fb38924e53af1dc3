#include "swiden/tensor.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <bit>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>

#include "swiden/binio.hpp"

namespace swiden {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMat>;
using Map = Eigen::Map<RowMat>;

void check_shape(const Shape& shape) {
  if (shape.empty()) throw ShapeError("tensor shape must have at least one dimension");
  for (auto d : shape)
    if (d == 0) throw ShapeError("tensor dimension of size 0 in " + to_string(shape));
}

void require_same(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
}

template <typename F>
Tensor zip(const Tensor& a, const Tensor& b, const char* op, F f) {
  require_same(a, b, op);
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i], b[i]);
  return out;
}

std::size_t conv_out(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad) {
  if (stride == 0) throw ShapeError("convolution stride must be >= 1");
  const auto padded = static_cast<long long>(in + 2 * pad);
  if (padded < static_cast<long long>(k))
    throw ShapeError("kernel " + std::to_string(k) + " larger than padded input " +
                     std::to_string(padded));
  return (in + 2 * pad - k) / stride + 1;
}

}  // namespace

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  check_shape(shape_);
  data_.assign(shape_size(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  check_shape(shape_);
  if (data_.size() != shape_size(shape_))
    throw ShapeError("data length " + std::to_string(data_.size()) + " does not match shape " +
                     to_string(shape_));
}

Tensor Tensor::normal(Shape shape, double sigma, Rng& rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.data_) v = rng.normal(sigma);
  return t;
}

Tensor Tensor::uniform(Shape shape, double a, double b, Rng& rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.data_) v = rng.uniform(a, b);
  return t;
}

std::size_t Tensor::offset(std::initializer_list<std::size_t> idx) const {
  if (idx.size() != shape_.size())
    throw ShapeError("index rank " + std::to_string(idx.size()) + " vs tensor rank " +
                     std::to_string(shape_.size()));
  std::size_t off = 0;
  std::size_t axis = 0;
  for (auto i : idx) {
    if (i >= shape_[axis]) throw ShapeError("index out of range on axis " + std::to_string(axis));
    off = off * shape_[axis] + i;
    ++axis;
  }
  return off;
}

double& Tensor::at(std::initializer_list<std::size_t> idx) { return data_[offset(idx)]; }
double Tensor::at(std::initializer_list<std::size_t> idx) const { return data_[offset(idx)]; }

Tensor Tensor::reshaped(Shape shape) const {
  check_shape(shape);
  if (shape_size(shape) != size())
    throw ShapeError("cannot reshape " + to_string(shape_) + " to " + to_string(shape));
  return Tensor(std::move(shape), data_);
}

Tensor Tensor::slice0(std::size_t begin, std::size_t count) const {
  if (count == 0 || begin + count > shape_[0]) throw ShapeError("slice0 out of range");
  const std::size_t stride = size() / shape_[0];
  Shape s = shape_;
  s[0] = count;
  return Tensor(std::move(s), std::vector<double>(data_.begin() + begin * stride,
                                                  data_.begin() + (begin + count) * stride));
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Tensor add(const Tensor& a, const Tensor& b) { return zip(a, b, "add", std::plus<>()); }
Tensor sub(const Tensor& a, const Tensor& b) { return zip(a, b, "sub", std::minus<>()); }
Tensor mul(const Tensor& a, const Tensor& b) { return zip(a, b, "mul", std::multiplies<>()); }

Tensor add(const Tensor& a, double c) {
  Tensor out = a;
  for (auto& v : out.data()) v += c;
  return out;
}

Tensor scale(const Tensor& a, double c) {
  Tensor out = a;
  for (auto& v : out.data()) v *= c;
  return out;
}

void add_inplace(Tensor& a, const Tensor& b) {
  require_same(a, b, "add_inplace");
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
}

double dot(const Tensor& a, const Tensor& b) {
  require_same(a, b, "dot");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

void gemm(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n,
          bool accumulate) {
  MapC A(a, m, k);
  MapC B(b, k, n);
  Map C(c, m, n);
  if (accumulate)
    C.noalias() += A * B;
  else
    C.noalias() = A * B;
}

void gemm_at(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate) {
  MapC A(a, k, m);
  MapC B(b, k, n);
  Map C(c, m, n);
  if (accumulate)
    C.noalias() += A.transpose() * B;
  else
    C.noalias() = A.transpose() * B;
}

void gemm_bt(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate) {
  MapC A(a, m, k);
  MapC B(b, n, k);
  Map C(c, m, n);
  if (accumulate)
    C.noalias() += A * B.transpose();
  else
    C.noalias() = A * B.transpose();
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2)
    throw ShapeError("matmul expects rank-2 operands, got " + to_string(a.shape()) + " and " +
                     to_string(b.shape()));
  if (a.dim(1) != b.dim(0))
    throw ShapeError("matmul inner dimension mismatch " + to_string(a.shape()) + " x " +
                     to_string(b.shape()));
  Tensor out({a.dim(0), b.dim(1)});
  gemm(a.raw(), b.raw(), out.raw(), a.dim(0), a.dim(1), b.dim(1));
  return out;
}

std::size_t ConvGeometry::out_h() const { return conv_out(height, kernel_h, stride, pad); }
std::size_t ConvGeometry::out_w() const { return conv_out(width, kernel_w, stride, pad); }

void im2col_raw(const double* x, const ConvGeometry& g, double* cols, std::size_t ld) {
  const std::size_t oh = g.out_h(), ow = g.out_w();
  if (ld == 0) ld = oh * ow;
  const auto H = static_cast<long>(g.height), W = static_cast<long>(g.width);
  const auto pad = static_cast<long>(g.pad), stride = static_cast<long>(g.stride);
  double* next_row = cols;
  for (std::size_t c = 0; c < g.channels; ++c) {
    const double* plane = x + c * g.height * g.width;
    for (std::size_t ki = 0; ki < g.kernel_h; ++ki) {
      for (std::size_t kj = 0; kj < g.kernel_w; ++kj, next_row += ld) {
        double* dst = next_row;
        for (std::size_t oy = 0; oy < oh; ++oy) {
          const long iy = static_cast<long>(oy) * stride - pad + static_cast<long>(ki);
          if (iy < 0 || iy >= H) {
            std::fill(dst, dst + ow, 0.0);
            dst += ow;
            continue;
          }
          const double* row = plane + iy * W;
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const long ix = static_cast<long>(ox) * stride - pad + static_cast<long>(kj);
            *dst++ = (ix >= 0 && ix < W) ? row[ix] : 0.0;
          }
        }
      }
    }
  }
}

void col2im_raw(const double* cols, const ConvGeometry& g, double* x, std::size_t ld) {
  const std::size_t oh = g.out_h(), ow = g.out_w();
  if (ld == 0) ld = oh * ow;
  const auto H = static_cast<long>(g.height), W = static_cast<long>(g.width);
  const auto pad = static_cast<long>(g.pad), stride = static_cast<long>(g.stride);
  const double* next_row = cols;
  for (std::size_t c = 0; c < g.channels; ++c) {
    double* plane = x + c * g.height * g.width;
    for (std::size_t ki = 0; ki < g.kernel_h; ++ki) {
      for (std::size_t kj = 0; kj < g.kernel_w; ++kj, next_row += ld) {
        const double* src = next_row;
        for (std::size_t oy = 0; oy < oh; ++oy) {
          const long iy = static_cast<long>(oy) * stride - pad + static_cast<long>(ki);
          if (iy < 0 || iy >= H) {
            src += ow;
            continue;
          }
          double* row = plane + iy * W;
          for (std::size_t ox = 0; ox < ow; ++ox, ++src) {
            const long ix = static_cast<long>(ox) * stride - pad + static_cast<long>(kj);
            if (ix >= 0 && ix < W) row[ix] += *src;
          }
        }
      }
    }
  }
}

Tensor im2col(const Tensor& x, std::size_t kh, std::size_t kw, std::size_t stride, std::size_t pad) {
  if (x.rank() != 3) throw ShapeError("im2col expects [C,H,W], got " + to_string(x.shape()));
  ConvGeometry g{x.dim(0), x.dim(1), x.dim(2), kh, kw, stride, pad};
  if (kh == 0 || kw == 0) throw ShapeError("kernel size must be >= 1");
  Tensor cols({g.channels * kh * kw, g.out_h() * g.out_w()});
  im2col_raw(x.raw(), g, cols.raw());
  return cols;
}

Tensor col2im(const Tensor& cols, std::size_t c, std::size_t h, std::size_t w, std::size_t kh,
              std::size_t kw, std::size_t stride, std::size_t pad) {
  if (kh == 0 || kw == 0) throw ShapeError("kernel size must be >= 1");
  ConvGeometry g{c, h, w, kh, kw, stride, pad};
  const Shape expected{c * kh * kw, g.out_h() * g.out_w()};
  if (cols.shape() != expected)
    throw ShapeError("col2im: columns " + to_string(cols.shape()) + " inconsistent with expected " +
                     to_string(expected));
  Tensor x({c, h, w});
  col2im_raw(cols.raw(), g, x.raw());
  return x;
}

double sum(const Tensor& x) { return std::accumulate(x.data().begin(), x.data().end(), 0.0); }

double mean(const Tensor& x) { return sum(x) / static_cast<double>(x.size()); }

std::size_t argmax(std::span<const double> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

std::size_t argmax(const Tensor& x) { return argmax(x.data()); }

namespace {

struct AxisSplit {
  std::size_t outer, len, inner;
  Shape reduced;
};

AxisSplit split_axis(const Shape& s, std::size_t axis) {
  if (axis >= s.size())
    throw ShapeError("axis " + std::to_string(axis) + " invalid for shape " + to_string(s));
  AxisSplit r{1, s[axis], 1, {}};
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  for (std::size_t i = 0; i < s.size(); ++i)
    if (i != axis) r.reduced.push_back(s[i]);
  if (r.reduced.empty()) r.reduced.push_back(1);
  return r;
}

}  // namespace

Tensor sum(const Tensor& x, std::size_t axis) {
  const auto sp = split_axis(x.shape(), axis);
  Tensor out(sp.reduced);
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t l = 0; l < sp.len; ++l)
      for (std::size_t i = 0; i < sp.inner; ++i)
        out[o * sp.inner + i] += x[(o * sp.len + l) * sp.inner + i];
  return out;
}

Tensor mean(const Tensor& x, std::size_t axis) {
  const auto len = x.shape().at(axis < x.rank() ? axis : 0);
  Tensor s = sum(x, axis);
  return scale(s, 1.0 / static_cast<double>(len));
}

std::vector<std::size_t> argmax(const Tensor& x, std::size_t axis) {
  const auto sp = split_axis(x.shape(), axis);
  std::vector<std::size_t> out(sp.outer * sp.inner, 0);
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t i = 0; i < sp.inner; ++i) {
      std::size_t best = 0;
      double best_v = x[o * sp.len * sp.inner + i];
      for (std::size_t l = 1; l < sp.len; ++l) {
        double v = x[(o * sp.len + l) * sp.inner + i];
        if (v > best_v) {
          best_v = v;
          best = l;
        }
      }
      out[o * sp.inner + i] = best;
    }
  return out;
}

void write_tensor(std::ostream& os, const Tensor& t) {
  if (t.rank() > 255) throw FormatError("tensor rank exceeds 255");
  binio::put_magic(os, "SWTN");
  binio::put<std::uint8_t>(os, kTensorFormatVersion);
  binio::put<std::uint8_t>(os, static_cast<std::uint8_t>(t.rank()));
  for (auto d : t.shape()) {
    if (d > 0xFFFFFFFFu) throw FormatError("tensor dimension exceeds u32");
    binio::put<std::uint32_t>(os, static_cast<std::uint32_t>(d));
  }
  if constexpr (std::endian::native == std::endian::little) {
    os.write(reinterpret_cast<const char*>(t.raw()), static_cast<std::streamsize>(t.size() * 8));
  } else {
    for (double v : t.data()) binio::put_f64(os, v);
  }
}

Tensor read_tensor(std::istream& is) {
  binio::expect_magic(is, "SWTN");
  const auto version = binio::get<std::uint8_t>(is);
  if (version != kTensorFormatVersion)
    throw FormatError("unsupported tensor format version " + std::to_string(version));
  const auto rank = binio::get<std::uint8_t>(is);
  if (rank == 0) throw FormatError("tensor of rank 0");
  Shape shape(rank);
  for (auto& d : shape) {
    d = binio::get<std::uint32_t>(is);
    if (d == 0) throw FormatError("tensor dimension of size 0");
  }
  std::vector<double> data(shape_size(shape));
  if constexpr (std::endian::native == std::endian::little) {
    if (!is.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size() * 8)))
      throw FormatError("unexpected end of file in tensor data");
  } else {
    for (auto& v : data) v = binio::get_f64(is);
  }
  return Tensor(std::move(shape), std::move(data));
}

}  // namespace swiden
