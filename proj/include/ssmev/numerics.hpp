#pragma once

#include <complex>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ssmev {

using cplx = std::complex<double>;

// Dense row-major matrix. Values are plain data; copying is cheap enough for
// the sizes used here (P, H <= a few hundred).
template <typename T>
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, T fill = T{})
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<T> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw std::invalid_argument("Matrix: data size does not match shape");
    }
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = T(1);
    return m;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  const T& operator()(std::size_t r, std::size_t c) const {
    return data_[r * cols_ + c];
  }

  std::span<T> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const T> row(std::size_t r) const {
    return {data_.data() + r * cols_, cols_};
  }

  std::vector<T>& data() { return data_; }
  const std::vector<T>& data() const { return data_; }

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

using RMatrix = Matrix<double>;
using CMatrix = Matrix<cplx>;

struct HermitianEigResult {
  std::vector<double> eigenvalues;  // ascending
  CMatrix eigenvectors;             // columns, unitary
};

class ConvergenceError : public std::runtime_error {
 public:
  ConvergenceError(const std::string& what, double residual)
      : std::runtime_error(what), residual_(residual) {}
  double residual() const { return residual_; }

 private:
  double residual_;
};

bool all_finite(std::span<const double> v);
bool all_finite(std::span<const cplx> v);

// First L samples of the zero-padded linear convolution of two length-L
// sequences, computed with a radix-2 FFT.
std::vector<double> fft_convolve(std::span<const double> signal,
                                 std::span<const double> kernel);
std::vector<cplx> fft_convolve(std::span<const cplx> signal,
                               std::span<const cplx> kernel);

// In-place iterative radix-2 FFT. data.size() must be a power of two.
void fft_inplace(std::vector<cplx>& data, bool inverse);

std::size_t next_pow2(std::size_t n);

// Cyclic Jacobi eigensolver for complex Hermitian matrices.
HermitianEigResult hermitian_eig(const CMatrix& h, int max_sweeps = 100);

// N logarithmically spaced points on [lo, hi] with exact endpoints.
std::vector<double> log_grid(double lo, double hi, std::size_t n);

// Matrix helpers used across modules.
CMatrix conj_transpose(const CMatrix& m);
CMatrix matmul(const CMatrix& a, const CMatrix& b);
double max_abs(const CMatrix& m);
double max_abs_diff(const CMatrix& a, const CMatrix& b);

}  // namespace ssmev
