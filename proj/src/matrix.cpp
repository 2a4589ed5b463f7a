#include "pataplectic/matrix.hpp"

#include <bit>
#include <stdexcept>
#include <unordered_map>

namespace pataplectic {
namespace {

// Laplace expansion over the rows in `rows`, memoized on the set of columns
// still available.
class MinorExpander {
 public:
  MinorExpander(const ExprMatrix& m, std::vector<int> rows) : m_(m), rows_(std::move(rows)) {}

  Expr det(unsigned mask) {
    int depth = static_cast<int>(rows_.size()) - std::popcount(mask);
    if (depth == static_cast<int>(rows_.size())) return Expr(1);
    auto it = memo_.find(mask);
    if (it != memo_.end()) return it->second;
    int r = rows_[static_cast<std::size_t>(depth)];
    Expr total;
    int position = 0;
    for (int c = 0; c < m_.cols(); ++c) {
      if (!(mask & (1u << c))) continue;
      const Expr& a = m_(r, c);
      if (!a.is_zero()) {
        Expr sub = det(mask & ~(1u << c));
        if (!sub.is_zero()) total += (position % 2 ? -a : a) * sub;
      }
      ++position;
    }
    memo_.emplace(mask, total);
    return total;
  }

 private:
  const ExprMatrix& m_;
  std::vector<int> rows_;
  std::unordered_map<unsigned, Expr> memo_;
};

}  // namespace

ExprMatrix ExprMatrix::identity(int size) {
  ExprMatrix m(size, size);
  for (int i = 0; i < size; ++i) m(i, i) = Expr(1);
  return m;
}

ExprMatrix operator*(const ExprMatrix& a, const ExprMatrix& b) {
  if (a.cols_ != b.rows_) throw std::invalid_argument("matrix shape mismatch");
  ExprMatrix out(a.rows_, b.cols_);
  for (int i = 0; i < a.rows_; ++i)
    for (int j = 0; j < b.cols_; ++j) {
      Expr s;
      for (int l = 0; l < a.cols_; ++l)
        if (!a(i, l).is_zero() && !b(l, j).is_zero()) s += a(i, l) * b(l, j);
      out(i, j) = s;
    }
  return out;
}

bool ExprMatrix::is_diagonal() const {
  for (int i = 0; i < rows_; ++i)
    for (int j = 0; j < cols_; ++j)
      if (i != j && !(*this)(i, j).is_zero()) return false;
  return true;
}

Expr ExprMatrix::determinant() const {
  if (rows_ != cols_) throw std::invalid_argument("determinant of non-square matrix");
  if (rows_ > 16) throw std::invalid_argument("symbolic determinant limited to 16x16");
  std::vector<int> rows;
  for (int i = 0; i < rows_; ++i) rows.push_back(i);
  MinorExpander e(*this, rows);
  return e.det((1u << cols_) - 1);
}

std::optional<ExprMatrix> ExprMatrix::inverse() const {
  if (rows_ != cols_) throw std::invalid_argument("inverse of non-square matrix");
  const int m = rows_;
  ExprMatrix out(m, m);
  if (is_diagonal()) {
    for (int i = 0; i < m; ++i) {
      if ((*this)(i, i).is_zero()) return std::nullopt;
      out(i, i) = (*this)(i, i).pow(-1);
    }
    return out;
  }
  Expr det = determinant();
  if (det.is_zero()) return std::nullopt;
  Expr inv_det = det.pow(-1);
  const unsigned full = (1u << m) - 1;
  for (int i = 0; i < m; ++i) {
    std::vector<int> rows;
    for (int r = 0; r < m; ++r)
      if (r != i) rows.push_back(r);
    MinorExpander e(*this, rows);
    for (int j = 0; j < m; ++j) {
      Expr minor = e.det(full & ~(1u << j));
      if (minor.is_zero()) continue;
      // inverse(j, i) = (-1)^(i+j) M_ij / det
      out(j, i) = ((i + j) % 2 ? -minor : minor) * inv_det;
    }
  }
  return out;
}

}  // namespace pataplectic
