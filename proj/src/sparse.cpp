#include "avatarforge/sparse.hpp"

#include <algorithm>
#include <map>

namespace avatarforge {

SparseRows compose(const SparseRows& outer, const SparseRows& inner) {
  SparseRows out;
  out.num_cols = inner.num_cols;
  std::map<std::size_t, double> acc;
  std::vector<std::pair<std::size_t, double>> row;
  for (std::size_t r = 0; r < outer.num_rows(); ++r) {
    acc.clear();
    for (std::size_t k = outer.row_begin(r); k < outer.row_end(r); ++k) {
      const std::size_t mid = outer.cols[k];
      for (std::size_t q = inner.row_begin(mid); q < inner.row_end(mid); ++q)
        acc[inner.cols[q]] += outer.weights[k] * inner.weights[q];
    }
    row.assign(acc.begin(), acc.end());
    out.add_row(row);
  }
  return out;
}

void apply_rows(const SparseRows& rows, std::span<const double> src, std::size_t width,
                std::span<double> out) {
  std::fill(out.begin(), out.end(), 0.0);
  for (std::size_t r = 0; r < rows.num_rows(); ++r) {
    double* dst = out.data() + r * width;
    for (std::size_t k = rows.row_begin(r); k < rows.row_end(r); ++k) {
      const double w = rows.weights[k];
      const double* s = src.data() + rows.cols[k] * width;
      for (std::size_t c = 0; c < width; ++c) dst[c] += w * s[c];
    }
  }
}

}  // namespace avatarforge
