#include "weightcorr/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "weightcorr/errors.hpp"

namespace weightcorr {
namespace {

void require_non_empty(std::size_t rows, std::size_t cols) {
  if (rows == 0 || cols == 0) {
    throw UsageError("matrix must be non-empty, got " + std::to_string(rows) + "x" +
                     std::to_string(cols));
  }
}

void require_finite(std::span<const double> data) {
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (!std::isfinite(data[i])) {
      throw UsageError("non-finite entry at flat index " + std::to_string(i));
    }
  }
}

// Solves L x = b in place for lower-triangular L.
void forward_substitute(const Matrix& lower, std::span<double> b) {
  const std::size_t n = lower.rows();
  for (std::size_t i = 0; i < n; ++i) {
    double acc = b[i];
    for (std::size_t k = 0; k < i; ++k) acc -= lower(i, k) * b[k];
    b[i] = acc / lower(i, i);
  }
}

}  // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_() {
  require_non_empty(rows, cols);
  if (!std::isfinite(fill)) throw UsageError("non-finite fill value");
  data_.assign(rows * cols, fill);
}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  require_non_empty(rows, cols);
  if (data_.size() != rows * cols) {
    throw UsageError("matrix data length " + std::to_string(data_.size()) +
                     " does not match shape " + std::to_string(rows) + "x" +
                     std::to_string(cols));
  }
  require_finite(data_);
}

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows)
    : rows_(rows.size()), cols_(rows.size() == 0 ? 0 : rows.begin()->size()), data_() {
  require_non_empty(rows_, cols_);
  data_.reserve(rows_ * cols_);
  for (const auto& row : rows) {
    if (row.size() != cols_) throw UsageError("ragged matrix literal");
    data_.insert(data_.end(), row.begin(), row.end());
  }
  require_finite(data_);
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::diagonal(std::span<const double> values) {
  Matrix m(values.size(), values.size());
  for (std::size_t i = 0; i < values.size(); ++i) m(i, i) = values[i];
  require_finite(m.data());
  return m;
}

std::vector<double> Matrix::column(std::size_t c) const {
  std::vector<double> out(rows_);
  for (std::size_t r = 0; r < rows_; ++r) out[r] = (*this)(r, c);
  return out;
}

Matrix Matrix::transposed() const {
  Matrix t(cols_, rows_);
  for (std::size_t r = 0; r < rows_; ++r)
    for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
  return t;
}

Matrix operator*(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) throw UsageError("matrix product shape mismatch");
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      for (std::size_t j = 0; j < b.cols(); ++j) out(i, j) += aik * b(k, j);
    }
  return out;
}

Matrix operator-(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw UsageError("matrix difference shape mismatch");
  }
  Matrix out = a;
  auto od = out.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < od.size(); ++i) od[i] -= bd[i];
  return out;
}

Matrix operator*(double s, const Matrix& m) {
  Matrix out = m;
  for (double& v : out.data()) v *= s;
  return out;
}

FilterTensor::FilterTensor(std::size_t kernel, std::size_t in_channels,
                           std::size_t out_channels, double fill)
    : FilterTensor(kernel, in_channels, out_channels,
                   std::vector<double>(kernel * kernel * in_channels * out_channels, fill)) {}

FilterTensor::FilterTensor(std::size_t kernel, std::size_t in_channels,
                           std::size_t out_channels, std::vector<double> data)
    : kernel_(kernel), in_(in_channels), out_(out_channels), data_(std::move(data)) {
  if (kernel_ == 0 || in_ == 0 || out_ == 0) {
    throw UsageError("filter tensor dimensions must be >= 1");
  }
  if (data_.size() != kernel_ * kernel_ * in_ * out_) {
    throw UsageError("filter tensor data length " + std::to_string(data_.size()) +
                     " does not match f^2*in*out = " +
                     std::to_string(kernel_ * kernel_ * in_ * out_));
  }
  require_finite(data_);
}

std::span<const double> FilterTensor::channel_column(std::size_t out, std::size_t in) const {
  return std::span<const double>(data_).subspan((out * in_ + in) * kernel_area(), kernel_area());
}

std::span<double> FilterTensor::channel_column(std::size_t out, std::size_t in) {
  return std::span<double>(data_).subspan((out * in_ + in) * kernel_area(), kernel_area());
}

Matrix FilterTensor::as_matrix() const {
  const std::size_t rows = kernel_area() * in_;
  Matrix m(rows, out_);
  for (std::size_t o = 0; o < out_; ++o)
    for (std::size_t r = 0; r < rows; ++r) m(r, o) = data_[o * rows + r];
  return m;
}

double dot(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) throw UsageError("dot: length mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) acc += u[i] * v[i];
  return acc;
}

double norm2(std::span<const double> u) { return std::sqrt(dot(u, u)); }

double frobenius_norm(const Matrix& m) { return norm2(m.data()); }

SpectralNormResult spectral_norm(const Matrix& m, double tol, std::size_t max_iter) {
  if (!(tol > 0.0)) throw UsageError("spectral_norm: tol must be positive");
  if (max_iter < 1) throw UsageError("spectral_norm: max_iter must be >= 1");

  const std::size_t n = m.cols();
  // iterate on m / scale so huge entries do not overflow the squared norms
  double scale = 0.0;
  for (double x : m.data()) scale = std::max(scale, std::abs(x));
  if (scale == 0.0 || !std::isfinite(scale)) scale = 1.0;
  std::seed_seq seq{static_cast<std::uint64_t>(m.rows()), static_cast<std::uint64_t>(n)};
  std::mt19937_64 rng(seq);
  std::uniform_real_distribution<double> unif(-1.0, 1.0);
  std::vector<double> v(n);
  for (double& x : v) x = unif(rng);
  double vn = norm2(v);
  for (double& x : v) x /= vn;

  std::vector<double> mv(m.rows());
  std::vector<double> mtmv(n);
  SpectralNormResult result;
  double previous = -1.0;
  for (std::size_t it = 1; it <= max_iter; ++it) {
    std::fill(mv.begin(), mv.end(), 0.0);
    for (std::size_t r = 0; r < m.rows(); ++r)
      for (std::size_t c = 0; c < n; ++c) mv[r] += m(r, c) / scale * v[c];
    const double estimate = norm2(mv);
    result.value = estimate * scale;
    result.iterations = it;
    if (estimate == 0.0) {
      result.converged = true;
      return result;
    }
    if (previous >= 0.0 && std::abs(estimate - previous) < tol * std::max(1.0, estimate)) {
      result.converged = true;
      return result;
    }
    previous = estimate;

    std::fill(mtmv.begin(), mtmv.end(), 0.0);
    for (std::size_t r = 0; r < m.rows(); ++r)
      for (std::size_t c = 0; c < n; ++c) mtmv[c] += m(r, c) / scale * mv[r];
    vn = norm2(mtmv);
    if (vn == 0.0) {
      result.converged = true;
      return result;
    }
    for (std::size_t c = 0; c < n; ++c) v[c] = mtmv[c] / vn;
  }
  return result;
}

double cosine_similarity(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) {
    throw UsageError("cosine_similarity: length mismatch (" + std::to_string(u.size()) +
                     " vs " + std::to_string(v.size()) + ")");
  }
  const double nu = norm2(u);
  const double nv = norm2(v);
  if (nu < kCosineEpsilon || nv < kCosineEpsilon) return 0.0;
  return dot(u, v) / (nu * nv);
}

Matrix kronecker(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows() * b.rows(), a.cols() * b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) {
      const double aij = a(i, j);
      for (std::size_t k = 0; k < b.rows(); ++k)
        for (std::size_t l = 0; l < b.cols(); ++l)
          out(i * b.rows() + k, j * b.cols() + l) = aij * b(k, l);
    }
  return out;
}

double determinant(const Matrix& m) {
  if (!m.is_square()) throw UsageError("determinant: matrix must be square");
  const std::size_t n = m.rows();
  Matrix lu = m;
  double det = 1.0;
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t pivot = k;
    for (std::size_t r = k + 1; r < n; ++r)
      if (std::abs(lu(r, k)) > std::abs(lu(pivot, k))) pivot = r;
    if (lu(pivot, k) == 0.0) return 0.0;
    if (pivot != k) {
      for (std::size_t c = 0; c < n; ++c) std::swap(lu(k, c), lu(pivot, c));
      det = -det;
    }
    const double diag = lu(k, k);
    det *= diag;
    for (std::size_t r = k + 1; r < n; ++r) {
      const double factor = lu(r, k) / diag;
      if (factor == 0.0) continue;
      for (std::size_t c = k + 1; c < n; ++c) lu(r, c) -= factor * lu(k, c);
    }
  }
  return det;
}

Matrix cholesky(const Matrix& m) {
  if (!m.is_square()) throw UsageError("cholesky: matrix must be square");
  const std::size_t n = m.rows();
  Matrix lower(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    double d = m(j, j);
    for (std::size_t k = 0; k < j; ++k) d -= lower(j, k) * lower(j, k);
    if (!(d > 0.0)) {
      throw NumericError("cholesky: matrix is not positive definite (pivot " +
                         std::to_string(j) + ")");
    }
    const double ljj = std::sqrt(d);
    lower(j, j) = ljj;
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = m(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= lower(i, k) * lower(j, k);
      lower(i, j) = s / ljj;
    }
  }
  return lower;
}

namespace {

void require_symmetric(const Matrix& m, const char* name) {
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = i + 1; j < m.cols(); ++j) {
      const double scale = std::max(std::abs(m(i, j)), std::abs(m(j, i)));
      if (std::abs(m(i, j) - m(j, i)) > 1e-12 * scale)
        throw UsageError(std::string("gaussian_kl: ") + name + " is not symmetric at (" +
                         std::to_string(i) + ", " + std::to_string(j) + ")");
    }
}

}  // namespace

double gaussian_kl(std::span<const double> mu_q, const Matrix& sigma_q,
                   std::span<const double> mu_p, const Matrix& sigma_p) {
  const std::size_t k = mu_q.size();
  if (mu_p.size() != k || sigma_q.rows() != k || sigma_q.cols() != k || sigma_p.rows() != k ||
      sigma_p.cols() != k) {
    throw UsageError("gaussian_kl: dimension mismatch");
  }
  require_symmetric(sigma_q, "sigma_q");
  require_symmetric(sigma_p, "sigma_p");
  const Matrix lp = cholesky(sigma_p);
  const Matrix lq = cholesky(sigma_q);

  // tr(P^-1 Q) = |Lp^-1 Lq|_F^2, solved column by column.
  double trace = 0.0;
  std::vector<double> col(k);
  for (std::size_t j = 0; j < k; ++j) {
    for (std::size_t i = 0; i < k; ++i) col[i] = lq(i, j);
    forward_substitute(lp, col);
    trace += dot(col, col);
  }

  std::vector<double> diff(k);
  for (std::size_t i = 0; i < k; ++i) diff[i] = mu_q[i] - mu_p[i];
  forward_substitute(lp, diff);
  const double mahalanobis = dot(diff, diff);

  double log_det_p = 0.0;
  double log_det_q = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    log_det_p += 2.0 * std::log(lp(i, i));
    log_det_q += 2.0 * std::log(lq(i, i));
  }
  return 0.5 * (trace + mahalanobis - static_cast<double>(k) + log_det_p - log_det_q);
}

}  // namespace weightcorr
