#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <vector>

#include <fmt/format.h>

#include "neurex/error.hpp"

namespace neurex {

// Indices of the n largest values, ordered by value descending with ties
// going to the smaller index.
template <typename T>
std::vector<std::size_t> top_indices(std::span<const T> values, std::size_t n) {
  if (n > values.size()) {
    fail(ErrorCode::kInvalidArgument,
         fmt::format("cannot select {} of {} values", n, values.size()));
  }
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      fail(ErrorCode::kInvalidArgument, fmt::format("non-finite value at index {}", i));
    }
  }
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto before = [&](std::size_t a, std::size_t b) {
    return values[a] > values[b] || (values[a] == values[b] && a < b);
  };
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n),
                    order.end(), before);
  order.resize(n);
  return order;
}

}  // namespace neurex
