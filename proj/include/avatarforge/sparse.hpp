#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

namespace avatarforge {

/// Compressed sparse rows. Used both as remesh provenance (new vertex as a
/// weighted blend of old vertices) and as the gather plan of the autodiff
/// `gather` op (bilinear taps, barycentric interpolation, umbrella operator).
struct SparseRows {
  std::size_t num_cols = 0;
  std::vector<std::size_t> offsets{0};
  std::vector<std::size_t> cols;
  std::vector<double> weights;

  std::size_t num_rows() const { return offsets.size() - 1; }

  void add_row(std::span<const std::pair<std::size_t, double>> entries) {
    for (const auto& [c, w] : entries) {
      cols.push_back(c);
      weights.push_back(w);
    }
    offsets.push_back(cols.size());
  }

  void add_row(std::initializer_list<std::pair<std::size_t, double>> entries) {
    add_row(std::span<const std::pair<std::size_t, double>>(entries.begin(), entries.size()));
  }

  void add_empty_row() { offsets.push_back(cols.size()); }

  std::size_t row_begin(std::size_t r) const { return offsets[r]; }
  std::size_t row_end(std::size_t r) const { return offsets[r + 1]; }

  static SparseRows identity(std::size_t n) {
    SparseRows s;
    s.num_cols = n;
    s.cols.reserve(n);
    s.weights.reserve(n);
    for (std::size_t i = 0; i < n; ++i) s.add_row({{i, 1.0}});
    return s;
  }
};

/// (outer ∘ inner): applying the result equals applying `inner` then `outer`.
SparseRows compose(const SparseRows& outer, const SparseRows& inner);

/// Dense apply: out[r, :] = sum_k w_k * src[col_k, :], src row-major with `width` columns.
void apply_rows(const SparseRows& rows, std::span<const double> src, std::size_t width,
                std::span<double> out);

}  // namespace avatarforge
