#pragma once

#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace mesp {

using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);
Shape row_major_strides(const Shape& shape);

// Dense row-major float32 array. A default-constructed tensor has rank 0 and
// no elements; every constructed tensor has strictly positive axis lengths.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<float> data);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, float value);
  static Tensor scalar(float value) { return full({1}, value); }

  const Shape& shape() const noexcept { return shape_; }
  std::int64_t rank() const noexcept {
    return static_cast<std::int64_t>(shape_.size());
  }
  std::int64_t dim(std::int64_t axis) const;
  std::int64_t numel() const noexcept {
    return static_cast<std::int64_t>(data_.size());
  }
  bool empty() const noexcept { return data_.empty(); }

  std::span<const float> data() const noexcept { return data_; }
  std::span<float> data() noexcept { return data_; }
  const float* ptr() const noexcept { return data_.data(); }
  float* ptr() noexcept { return data_.data(); }

  float operator[](std::int64_t i) const { return data_[static_cast<size_t>(i)]; }
  float& operator[](std::int64_t i) { return data_[static_cast<size_t>(i)]; }

  // Multi-index element access with bounds checking.
  float at(std::initializer_list<std::int64_t> index) const;
  float& at(std::initializer_list<std::int64_t> index);

  // Scalar value of a single-element tensor.
  float item() const;

  bool bitwise_equal(const Tensor& other) const;

 private:
  std::int64_t offset_of(std::initializer_list<std::int64_t> index) const;

  Shape shape_;
  std::vector<float> data_;
};

void check_same_shape(const Tensor& a, const Tensor& b, const char* what);

// Pure relabeling; flat data order is unchanged.
Tensor reshape(const Tensor& t, Shape new_shape);

// out.shape[i] = t.shape[axis_order[i]]; data is physically re-laid-out.
Tensor permute(const Tensor& t, std::span<const std::int64_t> axis_order);
Tensor permute(const Tensor& t, std::initializer_list<std::int64_t> axis_order);
std::vector<std::int64_t> inverse_permutation(
    std::span<const std::int64_t> axis_order);

enum class ElementwiseOp { kAdd, kHadamard };

Tensor elementwise(const Tensor& a, const Tensor& b, ElementwiseOp op);
inline Tensor add(const Tensor& a, const Tensor& b) {
  return elementwise(a, b, ElementwiseOp::kAdd);
}
inline Tensor hadamard(const Tensor& a, const Tensor& b) {
  return elementwise(a, b, ElementwiseOp::kHadamard);
}

Tensor scale(const Tensor& t, float factor);

// In-place accumulation, used by gradient bookkeeping.
void add_into(Tensor& dst, const Tensor& src);

// Reductions accumulate in double and round once.
double sum(const Tensor& t);
double mean(const Tensor& t);

// Slices along axis 0: rows [begin, end).
Tensor slice_rows(const Tensor& t, std::int64_t begin, std::int64_t end);
// Slice [begin, end) along axis 1 of a tensor with rank >= 2.
Tensor slice_axis1(const Tensor& t, std::int64_t begin, std::int64_t end);
// Concatenation along axis 1; all other axes must agree.
Tensor concat_axis1(std::span<const Tensor> parts);
// Stacks equally-shaped tensors along a new leading axis.
Tensor stack(std::span<const Tensor> parts);

bool all_finite(const Tensor& t);

}  // namespace mesp
