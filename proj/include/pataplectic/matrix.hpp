#pragma once

#include <optional>
#include <vector>

#include "pataplectic/expr.hpp"

namespace pataplectic {

/// Dense square or rectangular matrix of symbolic entries, row-major.
class ExprMatrix {
 public:
  ExprMatrix() = default;
  ExprMatrix(int rows, int cols) : rows_(rows), cols_(cols), data_(static_cast<std::size_t>(rows * cols)) {}
  static ExprMatrix identity(int size);

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  Expr& operator()(int r, int c) { return data_[static_cast<std::size_t>(r * cols_ + c)]; }
  const Expr& operator()(int r, int c) const { return data_[static_cast<std::size_t>(r * cols_ + c)]; }

  friend ExprMatrix operator*(const ExprMatrix& a, const ExprMatrix& b);
  friend bool operator==(const ExprMatrix& a, const ExprMatrix& b) = default;

  bool is_diagonal() const;
  Expr determinant() const;
  /// Adjugate divided by the determinant; nullopt when the determinant is
  /// symbolically zero.
  std::optional<ExprMatrix> inverse() const;

 private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<Expr> data_;
};

}  // namespace pataplectic
