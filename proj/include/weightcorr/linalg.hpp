#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

namespace weightcorr {

/// Dense row-major matrix of doubles. Never empty; every entry is finite
/// when constructed from data.
class Matrix {
 public:
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
  Matrix(std::initializer_list<std::initializer_list<double>> rows);

  static Matrix identity(std::size_t n);
  static Matrix diagonal(std::span<const double> values);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool is_square() const noexcept { return rows_ == cols_; }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }

  std::vector<double> column(std::size_t c) const;
  Matrix transposed() const;

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_;
  std::size_t cols_;
  std::vector<double> data_;
};

Matrix operator*(const Matrix& a, const Matrix& b);
Matrix operator-(const Matrix& a, const Matrix& b);
Matrix operator*(double s, const Matrix& m);

/// Convolution filter bank of shape (out_channels, in_channels, f, f).
/// Each (filter, input channel) kernel is a contiguous f*f block, which is
/// the column z of the reshaped f^2 x in_channels filter matrix.
class FilterTensor {
 public:
  FilterTensor(std::size_t kernel, std::size_t in_channels, std::size_t out_channels,
               double fill = 0.0);
  FilterTensor(std::size_t kernel, std::size_t in_channels, std::size_t out_channels,
               std::vector<double> data);

  std::size_t kernel() const noexcept { return kernel_; }
  std::size_t in_channels() const noexcept { return in_; }
  std::size_t out_channels() const noexcept { return out_; }
  std::size_t size() const noexcept { return data_.size(); }
  std::size_t kernel_area() const noexcept { return kernel_ * kernel_; }

  double& operator()(std::size_t out, std::size_t in, std::size_t ky, std::size_t kx) {
    return data_[((out * in_ + in) * kernel_ + ky) * kernel_ + kx];
  }
  double operator()(std::size_t out, std::size_t in, std::size_t ky, std::size_t kx) const {
    return data_[((out * in_ + in) * kernel_ + ky) * kernel_ + kx];
  }

  /// The f*f kernel linking input channel `in` to filter `out`.
  std::span<const double> channel_column(std::size_t out, std::size_t in) const;
  std::span<double> channel_column(std::size_t out, std::size_t in);

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }

  /// (f^2 * in_channels) x out_channels matrix whose column i is filter i.
  Matrix as_matrix() const;

  bool operator==(const FilterTensor&) const = default;

 private:
  std::size_t kernel_;
  std::size_t in_;
  std::size_t out_;
  std::vector<double> data_;
};

struct SpectralNormResult {
  double value = 0.0;
  std::size_t iterations = 0;
  bool converged = false;
};

inline constexpr double kSpectralTolerance = 1e-10;
inline constexpr std::size_t kSpectralMaxIter = 1000;
inline constexpr double kCosineEpsilon = 1e-12;

double dot(std::span<const double> u, std::span<const double> v);
double norm2(std::span<const double> u);

double frobenius_norm(const Matrix& m);

/// Largest singular value by power iteration on m^T m. The start vector is
/// drawn from a PRNG seeded by the matrix shape, so the result is
/// reproducible. `converged` is false when max_iter was exhausted.
SpectralNormResult spectral_norm(const Matrix& m, double tol = kSpectralTolerance,
                                 std::size_t max_iter = kSpectralMaxIter);

/// u.v / (|u| |v|); 0 when either norm is below kCosineEpsilon.
double cosine_similarity(std::span<const double> u, std::span<const double> v);

Matrix kronecker(const Matrix& a, const Matrix& b);

/// LU with partial pivoting. Singular input yields 0.
double determinant(const Matrix& m);

/// Lower-triangular Cholesky factor. Throws NumericError if not positive
/// definite.
Matrix cholesky(const Matrix& m);

/// KL(N(mu_q, sigma_q) || N(mu_p, sigma_p)) for dense covariances.
double gaussian_kl(std::span<const double> mu_q, const Matrix& sigma_q,
                   std::span<const double> mu_p, const Matrix& sigma_p);

}  // namespace weightcorr
