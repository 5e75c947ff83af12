#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "dho2/errors.hpp"

namespace dho2 {

/// Flattened parameter-space vector. All role-specific vectors (parameters,
/// gradients, multipliers, update directions) share this representation.
using Vector = std::vector<double>;

/// Dense column-major matrix with few columns and possibly many rows.
/// Column access is contiguous, which is what the Lanczos basis needs.
class TallMatrix {
 public:
  TallMatrix() = default;
  TallMatrix(std::size_t rows, std::size_t cols)
      : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }

  double& operator()(std::size_t i, std::size_t j) noexcept { return data_[j * rows_ + i]; }
  double operator()(std::size_t i, std::size_t j) const noexcept { return data_[j * rows_ + i]; }

  std::span<double> col(std::size_t j) noexcept { return {data_.data() + j * rows_, rows_}; }
  std::span<const double> col(std::size_t j) const noexcept {
    return {data_.data() + j * rows_, rows_};
  }

  Vector col_vector(std::size_t j) const { return Vector(col(j).begin(), col(j).end()); }
  void set_col(std::size_t j, std::span<const double> v) noexcept {
    for (std::size_t i = 0; i < rows_; ++i) data_[j * rows_ + i] = v[i];
  }

  const std::vector<double>& data() const noexcept { return data_; }
  std::vector<double>& data() noexcept { return data_; }

  /// Copy of the leading column block.
  TallMatrix left_cols(std::size_t k) const;

  bool operator==(const TallMatrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// Symmetric tridiagonal matrix; only the diagonal and one off-diagonal are
/// stored, so symmetry holds by construction.
struct TridiagMatrix {
  Vector diag;     // length dim
  Vector offdiag;  // length dim-1

  TridiagMatrix() = default;
  explicit TridiagMatrix(std::size_t dim) : diag(dim, 0.0), offdiag(dim > 0 ? dim - 1 : 0, 0.0) {}

  std::size_t dim() const noexcept { return diag.size(); }

  /// Copy of the leading k-by-k block.
  TridiagMatrix leading_block(std::size_t k) const;

  bool operator==(const TridiagMatrix&) const = default;
};

namespace linalg {

bool all_finite(std::span<const double> v) noexcept;

/// Inner product with a fixed left-to-right accumulation order. Bitwise
/// deterministic for identical inputs, which the distributed-vs-single
/// equivalence tests rely on.
double dot(std::span<const double> a, std::span<const double> b);

double norm2(std::span<const double> v);
double norm_inf(std::span<const double> v) noexcept;

void axpy(double alpha, std::span<const double> x, std::span<double> y);
void scale(std::span<double> v, double alpha) noexcept;
Vector add(std::span<const double> a, std::span<const double> b);
Vector sub(std::span<const double> a, std::span<const double> b);
Vector scaled(std::span<const double> v, double alpha);

/// coeffs = M^T x over the leading `active_cols` columns; remaining entries 0.
Vector matvec_transpose(const TallMatrix& m, std::span<const double> x, std::size_t active_cols);
Vector matvec_transpose(const TallMatrix& m, std::span<const double> x);

/// y = M c over the leading `active_cols` columns.
Vector matvec(const TallMatrix& m, std::span<const double> c, std::size_t active_cols);
Vector matvec(const TallMatrix& m, std::span<const double> c);

/// C = A * B (A: r x k, B as TallMatrix k x c).
TallMatrix matmul(const TallMatrix& a, const TallMatrix& b);

/// h - D (D^T h) over the leading `active_cols` columns of D.
/// `flops`, when given, is incremented by the multiply/add count.
Vector project_out(std::span<const double> h, const TallMatrix& d, std::size_t active_cols,
                   std::int64_t* flops = nullptr);

struct TridiagEig {
  Vector values;       // ascending
  TallMatrix vectors;  // orthonormal columns, vectors.col(j) pairs with values[j]
};

/// Eigendecomposition of a symmetric tridiagonal matrix by the implicit-shift
/// QL iteration with accumulated rotations. Dimensions here are small (the
/// Lanczos iteration count), so the O(dim^3) vector accumulation is fine.
TridiagEig tridiag_eig(const TridiagMatrix& b);

}  // namespace linalg
}  // namespace dho2
