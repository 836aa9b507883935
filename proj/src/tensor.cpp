#include "neurex/tensor.hpp"

#include <limits>
#include <utility>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "neurex/error.hpp"

namespace neurex {

MatrixView::MatrixView(std::span<const float> data, std::size_t rows,
                       std::size_t cols)
    : data_(data), rows_(rows), cols_(cols) {
  if (rows * cols != data.size()) {
    fail(ErrorCode::kInvalidShape,
         fmt::format("matrix view {}x{} over {} elements", rows, cols,
                     data.size()));
  }
}

std::string shape_string(const Tensor::Shape& dims) {
  return fmt::format("[{}]", fmt::join(dims, ","));
}

std::size_t checked_element_count(const Tensor::Shape& dims) {
  if (dims.empty()) fail(ErrorCode::kInvalidShape, "tensor needs ndim >= 1");
  std::uint64_t count = 1;
  for (const auto extent : dims) {
    if (extent == 0) {
      fail(ErrorCode::kInvalidShape,
           fmt::format("zero extent in shape {}", shape_string(dims)));
    }
    // Bound by bytes so the payload size stays representable too.
    constexpr std::uint64_t kLimit =
        std::numeric_limits<std::uint64_t>::max() / sizeof(float);
    if (count > kLimit / extent) {
      fail(ErrorCode::kInvalidShape,
           fmt::format("extent overflow in shape {}", shape_string(dims)));
    }
    count *= extent;
  }
  if (count > std::numeric_limits<std::size_t>::max() / sizeof(float)) {
    fail(ErrorCode::kInvalidShape, "tensor too large for address space");
  }
  return static_cast<std::size_t>(count);
}

Tensor::Tensor(Shape dims, std::vector<float> data)
    : dims_(std::move(dims)), data_(std::move(data)) {
  const auto count = checked_element_count(dims_);
  if (count != data_.size()) {
    fail(ErrorCode::kInvalidShape,
         fmt::format("shape {} needs {} elements, got {}", neurex::shape_string(dims_),
                     count, data_.size()));
  }
}

Tensor Tensor::zeros(Shape dims) {
  const auto count = checked_element_count(dims);
  return Tensor(std::move(dims), std::vector<float>(count, 0.0f));
}

Tensor Tensor::vector(std::vector<float> data) {
  Shape dims{static_cast<std::uint64_t>(data.size())};
  return Tensor(std::move(dims), std::move(data));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols,
                      std::vector<float> data) {
  return Tensor({rows, cols}, std::move(data));
}

std::size_t Tensor::stride0() const {
  if (dims_.empty()) return 0;
  return data_.size() / dims_[0];
}

std::span<const float> Tensor::slice0(std::size_t i) const {
  const auto stride = stride0();
  return std::span<const float>(data_).subspan(i * stride, stride);
}

MatrixView Tensor::as_matrix() const {
  if (dims_.empty()) return {};
  return MatrixView(data_, dims_[0], stride0());
}

std::string Tensor::shape_string() const { return neurex::shape_string(dims_); }

}  // namespace neurex
