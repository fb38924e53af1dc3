#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "swiden/error.hpp"
#include "swiden/rng.hpp"

namespace swiden {

using Shape = std::vector<std::size_t>;

std::string to_string(const Shape& shape);
std::size_t shape_size(const Shape& shape);

/// Dense row-major array of doubles. The shape is fixed at construction;
/// elements are mutated in place only by the operation that owns the tensor.
/// Image tensors are channel-first: [C,H,W], batched [N,C,H,W].
class Tensor {
 public:
  /// Constant fill. Throws ShapeError on an empty shape or a zero dimension.
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0); }
  static Tensor normal(Shape shape, double sigma, Rng& rng);
  static Tensor uniform(Shape shape, double a, double b, Rng& rng);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const { return data_.size(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  double* raw() { return data_.data(); }
  const double* raw() const { return data_.data(); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  /// Element access by multi-index; bounds checked.
  double& at(std::initializer_list<std::size_t> idx);
  double at(std::initializer_list<std::size_t> idx) const;

  /// Copy with a different shape of the same size.
  Tensor reshaped(Shape shape) const;

  /// Contiguous slab [begin, begin+count) along axis 0.
  Tensor slice0(std::size_t begin, std::size_t count) const;

  void fill(double v);
  bool all_finite() const;

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  std::size_t offset(std::initializer_list<std::size_t> idx) const;

  Shape shape_;
  std::vector<double> data_;
};

// Elementwise ops. Binary tensor ops require equal shapes (no broadcasting).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, double c);
Tensor scale(const Tensor& a, double c);
/// a += b in place.
void add_inplace(Tensor& a, const Tensor& b);

double dot(const Tensor& a, const Tensor& b);

/// [M,K] x [K,N] -> [M,N].
Tensor matmul(const Tensor& a, const Tensor& b);

/// Raw row-major GEMM kernels shared by the layers: C (+)= op(A) op(B).
/// `accumulate` selects C += ... instead of C = ... .
void gemm(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
          std::size_t n, bool accumulate = false);
void gemm_at(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate = false);  // A stored [K,M]
void gemm_bt(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate = false);  // B stored [N,K]

struct ConvGeometry {
  std::size_t channels, height, width;
  std::size_t kernel_h, kernel_w;
  std::size_t stride = 1;
  std::size_t pad = 0;

  /// floor((H + 2 pad - kh) / stride) + 1; throws ShapeError when < 1.
  std::size_t out_h() const;
  std::size_t out_w() const;
};

/// Lower one [C,H,W] image into [C*kh*kw, OH*OW] columns. Rows are ordered
/// (c, ki, kj); columns are output positions in row-major order.
Tensor im2col(const Tensor& x, std::size_t kh, std::size_t kw, std::size_t stride,
              std::size_t pad);
/// Adjoint of im2col: scatter-adds columns back into a [C,H,W] image.
Tensor col2im(const Tensor& cols, std::size_t c, std::size_t h, std::size_t w, std::size_t kh,
              std::size_t kw, std::size_t stride, std::size_t pad);

// Pointer kernels used by Conv2d. `cols` has C*kh*kw rows of OH*OW values,
// consecutive rows `ld` doubles apart (0 means OH*OW), so a batch can share
// one column matrix.
void im2col_raw(const double* x, const ConvGeometry& g, double* cols, std::size_t ld = 0);
void col2im_raw(const double* cols, const ConvGeometry& g, double* x, std::size_t ld = 0);  // accumulates into x

// Reductions.
double sum(const Tensor& x);
double mean(const Tensor& x);
/// Flat argmax; ties go to the lowest index.
std::size_t argmax(const Tensor& x);
std::size_t argmax(std::span<const double> v);
/// Reduce along one axis; the axis is removed from the result (a rank-1
/// input yields shape [1]).
Tensor sum(const Tensor& x, std::size_t axis);
Tensor mean(const Tensor& x, std::size_t axis);
std::vector<std::size_t> argmax(const Tensor& x, std::size_t axis);

// Binary tensor format: "SWTN", version u8 (=1), rank u8, dims u32 LE, data f64 LE.
inline constexpr std::uint8_t kTensorFormatVersion = 1;
void write_tensor(std::ostream& os, const Tensor& t);
Tensor read_tensor(std::istream& is);

}  // namespace swiden
