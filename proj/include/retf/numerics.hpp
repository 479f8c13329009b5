#ifndef RETF_NUMERICS_HPP
#define RETF_NUMERICS_HPP

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <utility>

namespace retf {

/// Dense row-major matrix. All model weights and activations use Mat<double>.
template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Matrix = Mat<double>;

template <typename Derived>
std::string shape_string(const Eigen::EigenBase<Derived>& m) {
  std::ostringstream os;
  os << m.rows() << "x" << m.cols();
  return os.str();
}

namespace detail {

template <typename Scalar>
Mat<Scalar> matmul_kernel(const Mat<Scalar>& a, const Mat<Scalar>& b) {
  if (a.cols() != b.rows()) {
    throw std::invalid_argument("matmul: shape mismatch " + shape_string(a) + " * " +
                                shape_string(b));
  }
  const Eigen::Index n = a.rows();
  const Eigen::Index inner = a.cols();
  const Eigen::Index m = b.cols();
  Mat<Scalar> c = Mat<Scalar>::Zero(n, m);
  if (inner == 0) return c;
  for (Eigen::Index i = 0; i < n; ++i) {
    Scalar* out = c.data() + i * m;
    const Scalar* b0 = b.data();
    const Scalar a0 = a(i, 0);
    for (Eigen::Index j = 0; j < m; ++j) out[j] = a0 * b0[j];
    for (Eigen::Index k = 1; k < inner; ++k) {
      const Scalar aik = a(i, k);
      const Scalar* brow = b.data() + k * m;
      for (Eigen::Index j = 0; j < m; ++j) out[j] += aik * brow[j];
    }
  }
  return c;
}

// Binds plain row-major matrices by reference, evaluates anything else.
template <typename Derived>
decltype(auto) as_row_major(const Eigen::MatrixBase<Derived>& m) {
  using Plain = Mat<typename Derived::Scalar>;
  if constexpr (std::is_same_v<Derived, Plain>) {
    return static_cast<const Plain&>(m.derived());
  } else {
    return Plain(m);
  }
}

}  // namespace detail

/// Product a*b. Each output element is accumulated over k in ascending order,
/// starting from the k = 0 term, so results are bit-stable across runs.
/// Accepts expressions (transposes, blocks); they are evaluated first.
template <typename DerivedA, typename DerivedB>
auto matmul(const Eigen::MatrixBase<DerivedA>& a, const Eigen::MatrixBase<DerivedB>& b) {
  using Scalar = typename DerivedA::Scalar;
  static_assert(std::is_same_v<Scalar, typename DerivedB::Scalar>, "matmul: scalar mismatch");
  const auto& lhs = detail::as_row_major(a);
  const auto& rhs = detail::as_row_major(b);
  return detail::matmul_kernel<Scalar>(lhs, rhs);
}

/// a * b^T as row dot products. Same summation order as matmul(a, b.transpose()),
/// hence bit-identical to it.
template <typename DerivedA, typename DerivedB>
auto matmul_transposed(const Eigen::MatrixBase<DerivedA>& a_in,
                       const Eigen::MatrixBase<DerivedB>& b_in) {
  using Scalar = typename DerivedA::Scalar;
  const auto& a = detail::as_row_major(a_in);
  const auto& b = detail::as_row_major(b_in);
  if (a.cols() != b.cols()) {
    throw std::invalid_argument("matmul_transposed: shape mismatch " + shape_string(a) +
                                " * (" + shape_string(b) + ")^T");
  }
  const Eigen::Index n = a.rows();
  const Eigen::Index inner = a.cols();
  const Eigen::Index m = b.rows();
  Mat<Scalar> c = Mat<Scalar>::Zero(n, m);
  if (inner == 0) return c;
  for (Eigen::Index i = 0; i < n; ++i) {
    const Scalar* arow = a.data() + i * inner;
    for (Eigen::Index j = 0; j < m; ++j) {
      const Scalar* brow = b.data() + j * inner;
      Scalar acc = arow[0] * brow[0];
      for (Eigen::Index k = 1; k < inner; ++k) acc += arow[k] * brow[k];
      c(i, j) = acc;
    }
  }
  return c;
}

/// Row-wise softmax with max subtraction.
template <typename Derived>
auto softmax_rows(const Eigen::MatrixBase<Derived>& m) {
  using Scalar = typename Derived::Scalar;
  if (m.cols() < 1) throw std::invalid_argument("softmax_rows: matrix has no columns");
  Mat<Scalar> out(m.rows(), m.cols());
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    Scalar hi = m(i, 0);
    for (Eigen::Index j = 1; j < m.cols(); ++j) hi = std::max(hi, Scalar(m(i, j)));
    Scalar sum = 0;
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      out(i, j) = std::exp(m(i, j) - hi);
      sum += out(i, j);
    }
    for (Eigen::Index j = 0; j < m.cols(); ++j) out(i, j) /= sum;
  }
  return out;
}

template <typename Derived>
auto relu(const Eigen::MatrixBase<Derived>& m) {
  using Scalar = typename Derived::Scalar;
  Mat<Scalar> out = m.cwiseMax(Scalar(0));
  return out;
}

/// SplitMix64 generator state.
struct RngState {
  std::uint64_t state = 0;

  std::uint64_t next() {
    state += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  /// Uniform in [0, 1) with 53 random bits.
  double next_unit() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) {
    if (!(lo < hi)) throw std::invalid_argument("rng_uniform: requires lo < hi");
    const double v = lo + (hi - lo) * next_unit();
    // lo + (hi - lo) * u can round up to hi for very narrow intervals.
    return v < hi ? v : std::nextafter(hi, lo);
  }

  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) { return next() % n; }
};

inline std::pair<double, RngState> rng_uniform(RngState state, double lo, double hi) {
  const double v = state.uniform(lo, hi);
  return {v, state};
}

}  // namespace retf

#endif  // RETF_NUMERICS_HPP
