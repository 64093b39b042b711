#pragma once

// Dense kernels shared by the whole pipeline. Everything here is a pure
// function of its arguments, so concurrent calls are safe.

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <cmath>
#include <sstream>

#include "covsel/errors.hpp"

namespace covsel {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
// Instance-by-feature data (cluster masses, coordinates, design rows) is
// stored row-major so per-instance rows are contiguous.
using RowMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Square symmetric matrices share the dense column-major representation;
// symmetry is checked where it matters.
using SymMatrix = Matrix;

struct EigenDecomp {
  Vector values;   // descending
  Matrix vectors;  // orthonormal columns, vectors.col(k) pairs with values(k)
};

template <typename Derived>
bool all_finite(const Eigen::MatrixBase<Derived>& m) {
  return m.allFinite();
}

inline double symmetry_defect(const Matrix& a) {
  return (a - a.transpose()).cwiseAbs().maxCoeff();
}

inline bool is_symmetric(const Matrix& a) {
  if (a.rows() != a.cols()) return false;
  if (a.size() == 0) return true;
  const double scale = 1.0 + a.cwiseAbs().maxCoeff();
  return symmetry_defect(a) <= 1e-10 * scale;
}

namespace detail {

inline void require_square_finite(const Matrix& a, const char* op) {
  if (a.rows() != a.cols() || a.rows() == 0) {
    std::ostringstream os;
    os << op << ": expected a non-empty square matrix, got " << a.rows() << "x"
       << a.cols();
    throw InputError(os.str());
  }
  if (!a.allFinite()) {
    throw InputError(std::string(op) + ": matrix has non-finite entries");
  }
}

}  // namespace detail

// Symmetric eigendecomposition, eigenvalues descending. Eigen's
// tridiagonalization + implicit QL is deterministic for identical input.
// Eigenvector signs are fixed so the largest-magnitude component of each
// column is positive; repeated runs and different call sites agree.
inline EigenDecomp sym_eig(const SymMatrix& a) {
  detail::require_square_finite(a, "sym_eig");
  if (!is_symmetric(a)) {
    std::ostringstream os;
    os << "sym_eig: matrix is not symmetric (max defect "
       << symmetry_defect(a) << ")";
    throw InputError(os.str());
  }
  const Matrix sym = 0.5 * (a + a.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> solver(sym);
  if (solver.info() != Eigen::Success) {
    throw NumericalError("sym_eig: eigensolver did not converge");
  }
  const Eigen::Index n = a.rows();
  EigenDecomp out{Vector(n), Matrix(n, n)};
  for (Eigen::Index k = 0; k < n; ++k) {
    out.values(k) = solver.eigenvalues()(n - 1 - k);
    out.vectors.col(k) = solver.eigenvectors().col(n - 1 - k);
    Eigen::Index arg = 0;
    out.vectors.col(k).cwiseAbs().maxCoeff(&arg);
    if (out.vectors(arg, k) < 0) out.vectors.col(k) *= -1.0;
  }
  return out;
}

// U diag(f(lambda)) U^T for an existing decomposition.
template <typename F>
Matrix spectral_map(const EigenDecomp& eig, F&& f) {
  Vector mapped(eig.values.size());
  for (Eigen::Index k = 0; k < mapped.size(); ++k) mapped(k) = f(eig.values(k));
  Matrix out = eig.vectors * mapped.asDiagonal() * eig.vectors.transpose();
  return 0.5 * (out + out.transpose());
}

// Eigenvalue floor below which a matrix is treated as singular.
inline double pd_floor(const SymMatrix& a) {
  return 1e-12 * a.trace() / static_cast<double>(a.rows());
}

// A^p for symmetric positive definite A. Fails loudly at the PD floor
// instead of clamping.
inline SymMatrix mat_power(const SymMatrix& a, double p) {
  const EigenDecomp eig = sym_eig(a);
  const double floor = pd_floor(a);
  const double smallest = eig.values(eig.values.size() - 1);
  if (!(smallest > floor)) {
    std::ostringstream os;
    os << "mat_power: eigenvalue " << smallest
       << " is at or below the positive-definite floor " << floor;
    throw SingularityError(os.str(), smallest);
  }
  return spectral_map(eig, [p](double v) { return std::pow(v, p); });
}

// Solves (A + ridge I) X = B by Cholesky.
inline Matrix ridge_solve(const SymMatrix& a, const Matrix& b, double ridge) {
  detail::require_square_finite(a, "ridge_solve");
  if (!(ridge >= 0.0)) throw InputError("ridge_solve: ridge must be >= 0");
  if (b.rows() != a.rows()) {
    std::ostringstream os;
    os << "ridge_solve: right-hand side has " << b.rows()
       << " rows, matrix has " << a.rows();
    throw InputError(os.str());
  }
  Matrix reg = a;
  reg.diagonal().array() += ridge;
  Eigen::LLT<Matrix> llt(reg);
  if (llt.info() != Eigen::Success) {
    throw SingularityError(
        "ridge_solve: regularized matrix is not positive definite");
  }
  return llt.solve(b);
}

// log det of a symmetric positive definite matrix via Cholesky.
inline double log_det_spd(const SymMatrix& a) {
  Eigen::LLT<Matrix> llt(a);
  if (llt.info() != Eigen::Success) {
    throw SingularityError("log_det_spd: matrix is not positive definite");
  }
  const auto& l = llt.matrixLLT();
  double acc = 0.0;
  for (Eigen::Index i = 0; i < a.rows(); ++i) acc += std::log(l(i, i));
  return 2.0 * acc;
}

// Inverse of a symmetric positive definite matrix via Cholesky.
inline Matrix inverse_spd(const SymMatrix& a) {
  Eigen::LLT<Matrix> llt(a);
  if (llt.info() != Eigen::Success) {
    throw SingularityError("inverse_spd: matrix is not positive definite");
  }
  Matrix inv = llt.solve(Matrix::Identity(a.rows(), a.cols()));
  return 0.5 * (inv + inv.transpose());
}

}  // namespace covsel
