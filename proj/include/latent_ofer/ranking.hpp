#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <vector>

namespace latent_ofer {

// Indices of the `k` largest values, highest first. Equal values keep
// ascending index order, so the lower index wins at a cutoff tie.
template <typename T>
std::vector<int> top_k_indices(std::span<const T> values, std::size_t k) {
  std::vector<int> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return values[a] > values[b]; });
  order.resize(std::min(k, order.size()));
  return order;
}

// Number of patches selected by a proportion: round(p * n), half away from zero.
inline int proportion_count(double proportion, int n) {
  return static_cast<int>(std::lround(proportion * static_cast<double>(n)));
}

}  // namespace latent_ofer
