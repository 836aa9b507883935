#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace neurex {

// Read-only row-major 2-D view over contiguous floats.
class MatrixView {
 public:
  MatrixView() = default;
  MatrixView(std::span<const float> data, std::size_t rows, std::size_t cols);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::span<const float> row(std::size_t r) const {
    return data_.subspan(r * cols_, cols_);
  }
  float operator()(std::size_t r, std::size_t c) const {
    return data_[r * cols_ + c];
  }
  std::span<const float> data() const noexcept { return data_; }

 private:
  std::span<const float> data_;
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
};

// Dense row-major f32 array with at least one dimension, every extent >= 1.
class Tensor {
 public:
  using Shape = std::vector<std::uint64_t>;

  Tensor() = default;
  // Throws Error(kInvalidShape) if the shape is illegal or disagrees with
  // data.size().
  Tensor(Shape dims, std::vector<float> data);

  static Tensor zeros(Shape dims);
  static Tensor vector(std::vector<float> data);
  static Tensor matrix(std::size_t rows, std::size_t cols,
                       std::vector<float> data);

  std::size_t ndim() const noexcept { return dims_.size(); }
  const Shape& dims() const noexcept { return dims_; }
  std::uint64_t dim(std::size_t axis) const { return dims_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<const float> data() const noexcept { return data_; }
  std::span<float> mutable_data() noexcept { return data_; }

  // Size of one slice along axis 0.
  std::size_t stride0() const;
  std::span<const float> slice0(std::size_t i) const;

  // Collapses all trailing axes: shape [a, b, c] becomes a x (b*c).
  MatrixView as_matrix() const;

  std::string shape_string() const;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape dims_;
  std::vector<float> data_;
};

// Product of extents, or throws on empty shape, zero extent, or overflow.
std::size_t checked_element_count(const Tensor::Shape& dims);

std::string shape_string(const Tensor::Shape& dims);

}  // namespace neurex
