#include "mesp/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>

#include "mesp/error.hpp"

namespace mesp {

std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ')';
  return os.str();
}

Shape row_major_strides(const Shape& shape) {
  Shape strides(shape.size(), 1);
  for (std::int64_t i = static_cast<std::int64_t>(shape.size()) - 2; i >= 0; --i) {
    strides[i] = strides[i + 1] * shape[i + 1];
  }
  return strides;
}

namespace {

void validate_shape(const Shape& shape) {
  if (shape.empty()) fail(ErrorKind::kInvalidShape, "tensor shape must have rank >= 1");
  for (auto d : shape) {
    if (d <= 0) {
      fail(ErrorKind::kInvalidShape,
           "axis lengths must be positive, got " + shape_to_string(shape));
    }
  }
}

}  // namespace

Tensor::Tensor(Shape shape) : shape_(std::move(shape)) {
  validate_shape(shape_);
  data_.assign(static_cast<size_t>(shape_numel(shape_)), 0.0f);
}

Tensor::Tensor(Shape shape, std::vector<float> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  validate_shape(shape_);
  if (static_cast<std::int64_t>(data_.size()) != shape_numel(shape_)) {
    fail(ErrorKind::kInvalidShape,
         "data length " + std::to_string(data_.size()) + " does not match shape " +
             shape_to_string(shape_));
  }
}

Tensor Tensor::full(Shape shape, float value) {
  Tensor t(std::move(shape));
  std::fill(t.data_.begin(), t.data_.end(), value);
  return t;
}

std::int64_t Tensor::dim(std::int64_t axis) const {
  if (axis < 0) axis += rank();
  if (axis < 0 || axis >= rank()) {
    fail(ErrorKind::kInvalidArgument, "axis " + std::to_string(axis) +
                                          " out of range for shape " +
                                          shape_to_string(shape_));
  }
  return shape_[static_cast<size_t>(axis)];
}

std::int64_t Tensor::offset_of(std::initializer_list<std::int64_t> index) const {
  if (static_cast<std::int64_t>(index.size()) != rank()) {
    fail(ErrorKind::kInvalidArgument, "index rank does not match tensor rank");
  }
  std::int64_t offset = 0;
  size_t axis = 0;
  for (auto i : index) {
    if (i < 0 || i >= shape_[axis]) {
      fail(ErrorKind::kInvalidArgument, "index out of range for shape " +
                                            shape_to_string(shape_));
    }
    offset = offset * shape_[axis] + i;
    ++axis;
  }
  return offset;
}

float Tensor::at(std::initializer_list<std::int64_t> index) const {
  return data_[static_cast<size_t>(offset_of(index))];
}

float& Tensor::at(std::initializer_list<std::int64_t> index) {
  return data_[static_cast<size_t>(offset_of(index))];
}

float Tensor::item() const {
  if (numel() != 1) {
    fail(ErrorKind::kInvalidShape,
         "item() requires a single-element tensor, got " + shape_to_string(shape_));
  }
  return data_[0];
}

bool Tensor::bitwise_equal(const Tensor& other) const {
  return shape_ == other.shape_ &&
         std::memcmp(data_.data(), other.data_.data(), data_.size() * sizeof(float)) == 0;
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    fail(ErrorKind::kInvalidShape, std::string(what) + ": shape mismatch " +
                                       shape_to_string(a.shape()) + " vs " +
                                       shape_to_string(b.shape()));
  }
}

Tensor reshape(const Tensor& t, Shape new_shape) {
  if (shape_numel(new_shape) != t.numel()) {
    fail(ErrorKind::kInvalidShape, "cannot reshape " + shape_to_string(t.shape()) +
                                       " to " + shape_to_string(new_shape));
  }
  return Tensor(std::move(new_shape), std::vector<float>(t.data().begin(), t.data().end()));
}

std::vector<std::int64_t> inverse_permutation(std::span<const std::int64_t> axis_order) {
  std::vector<std::int64_t> inverse(axis_order.size(), -1);
  for (size_t i = 0; i < axis_order.size(); ++i) {
    const auto a = axis_order[i];
    if (a < 0 || a >= static_cast<std::int64_t>(axis_order.size()) ||
        inverse[static_cast<size_t>(a)] != -1) {
      fail(ErrorKind::kInvalidArgument, "axis order is not a permutation");
    }
    inverse[static_cast<size_t>(a)] = static_cast<std::int64_t>(i);
  }
  return inverse;
}

Tensor permute(const Tensor& t, std::span<const std::int64_t> axis_order) {
  if (static_cast<std::int64_t>(axis_order.size()) != t.rank()) {
    fail(ErrorKind::kInvalidArgument, "permutation length " +
                                          std::to_string(axis_order.size()) +
                                          " does not match rank " +
                                          std::to_string(t.rank()));
  }
  inverse_permutation(axis_order);  // validates

  const auto rank = static_cast<size_t>(t.rank());
  Shape out_shape(rank);
  const Shape in_strides = row_major_strides(t.shape());
  // Stride in the input for each output axis.
  Shape gather_strides(rank);
  for (size_t i = 0; i < rank; ++i) {
    out_shape[i] = t.shape()[static_cast<size_t>(axis_order[i])];
    gather_strides[i] = in_strides[static_cast<size_t>(axis_order[i])];
  }

  Tensor out(out_shape);
  std::vector<std::int64_t> index(rank, 0);
  std::int64_t src = 0;
  const float* in = t.ptr();
  float* dst = out.ptr();
  const std::int64_t n = out.numel();
  for (std::int64_t k = 0; k < n; ++k) {
    dst[k] = in[src];
    for (std::int64_t axis = static_cast<std::int64_t>(rank) - 1; axis >= 0; --axis) {
      const auto a = static_cast<size_t>(axis);
      if (++index[a] < out_shape[a]) {
        src += gather_strides[a];
        break;
      }
      src -= gather_strides[a] * (out_shape[a] - 1);
      index[a] = 0;
    }
  }
  return out;
}

Tensor permute(const Tensor& t, std::initializer_list<std::int64_t> axis_order) {
  std::vector<std::int64_t> order(axis_order);
  return permute(t, std::span<const std::int64_t>(order));
}

Tensor elementwise(const Tensor& a, const Tensor& b, ElementwiseOp op) {
  check_same_shape(a, b, op == ElementwiseOp::kAdd ? "add" : "hadamard");
  Tensor out(a.shape());
  const float* pa = a.ptr();
  const float* pb = b.ptr();
  float* po = out.ptr();
  const std::int64_t n = a.numel();
  if (op == ElementwiseOp::kAdd) {
    for (std::int64_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
  } else {
    for (std::int64_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
  }
  return out;
}

Tensor scale(const Tensor& t, float factor) {
  Tensor out(t.shape());
  for (std::int64_t i = 0; i < t.numel(); ++i) out[i] = t[i] * factor;
  return out;
}

void add_into(Tensor& dst, const Tensor& src) {
  check_same_shape(dst, src, "add_into");
  float* pd = dst.ptr();
  const float* ps = src.ptr();
  for (std::int64_t i = 0; i < dst.numel(); ++i) pd[i] += ps[i];
}

double sum(const Tensor& t) {
  double acc = 0.0;
  for (float v : t.data()) acc += v;
  return acc;
}

double mean(const Tensor& t) {
  if (t.numel() == 0) fail(ErrorKind::kInvalidShape, "mean of empty tensor");
  return sum(t) / static_cast<double>(t.numel());
}

Tensor slice_rows(const Tensor& t, std::int64_t begin, std::int64_t end) {
  if (t.rank() < 1 || begin < 0 || end > t.dim(0) || begin >= end) {
    fail(ErrorKind::kInvalidArgument, "row slice [" + std::to_string(begin) + "," +
                                          std::to_string(end) + ") out of range for " +
                                          shape_to_string(t.shape()));
  }
  const std::int64_t row = t.numel() / t.dim(0);
  Shape shape = t.shape();
  shape[0] = end - begin;
  std::vector<float> data(t.data().begin() + begin * row, t.data().begin() + end * row);
  return Tensor(std::move(shape), std::move(data));
}

Tensor slice_axis1(const Tensor& t, std::int64_t begin, std::int64_t end) {
  if (t.rank() < 2 || begin < 0 || end > t.dim(1) || begin >= end) {
    fail(ErrorKind::kInvalidArgument, "axis-1 slice [" + std::to_string(begin) + "," +
                                          std::to_string(end) + ") out of range for " +
                                          shape_to_string(t.shape()));
  }
  const std::int64_t outer = t.dim(0);
  const std::int64_t inner = t.numel() / (outer * t.dim(1));
  Shape shape = t.shape();
  shape[1] = end - begin;
  Tensor out(shape);
  float* dst = out.ptr();
  for (std::int64_t o = 0; o < outer; ++o) {
    const float* src = t.ptr() + (o * t.dim(1) + begin) * inner;
    std::copy(src, src + (end - begin) * inner, dst);
    dst += (end - begin) * inner;
  }
  return out;
}

Tensor concat_axis1(std::span<const Tensor> parts) {
  if (parts.empty()) fail(ErrorKind::kInvalidArgument, "concat of zero tensors");
  const Tensor& first = parts[0];
  if (first.rank() < 2) fail(ErrorKind::kInvalidShape, "concat_axis1 requires rank >= 2");
  Shape shape = first.shape();
  shape[1] = 0;
  for (const auto& p : parts) {
    Shape probe = p.shape();
    if (probe.size() == shape.size()) probe[1] = 0;
    if (probe != shape) {
      fail(ErrorKind::kInvalidShape, "concat shape mismatch: " + shape_to_string(p.shape()));
    }
  }
  for (const auto& p : parts) shape[1] += p.dim(1);
  Tensor out(shape);
  const std::int64_t outer = shape[0];
  const std::int64_t inner = out.numel() / (outer * shape[1]);
  float* dst = out.ptr();
  for (std::int64_t o = 0; o < outer; ++o) {
    for (const auto& p : parts) {
      const std::int64_t len = p.dim(1) * inner;
      const float* src = p.ptr() + o * len;
      std::copy(src, src + len, dst);
      dst += len;
    }
  }
  return out;
}

Tensor stack(std::span<const Tensor> parts) {
  if (parts.empty()) fail(ErrorKind::kInvalidArgument, "stack of zero tensors");
  Shape shape;
  shape.push_back(static_cast<std::int64_t>(parts.size()));
  shape.insert(shape.end(), parts[0].shape().begin(), parts[0].shape().end());
  std::vector<float> data;
  data.reserve(static_cast<size_t>(shape_numel(shape)));
  for (const auto& p : parts) {
    check_same_shape(parts[0], p, "stack");
    data.insert(data.end(), p.data().begin(), p.data().end());
  }
  return Tensor(std::move(shape), std::move(data));
}

bool all_finite(const Tensor& t) {
  return std::all_of(t.data().begin(), t.data().end(),
                     [](float v) { return std::isfinite(v); });
}

}  // namespace mesp
