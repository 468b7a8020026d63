#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <limits>

namespace pomp {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

inline constexpr double kDefaultEpsilon = 1e-9;

// v / max(||v||_2, eps)
inline Vector l2_normalize(const Vector& v, double epsilon = kDefaultEpsilon) {
  return v / std::max(v.norm(), epsilon);
}

// Gradient of l2_normalize w.r.t. its input, given the upstream gradient and
// the forward input.
inline Vector l2_normalize_backward(const Vector& input, const Vector& upstream,
                                    double epsilon = kDefaultEpsilon) {
  const double norm = input.norm();
  if (norm <= epsilon) return upstream / epsilon;
  const Vector out = input / norm;
  return (upstream - out * out.dot(upstream)) / norm;
}

// Numerically stable softmax (max logit subtracted).
inline Vector softmax(const Vector& logits) {
  if (logits.size() == 0) return logits;
  const double shift = logits.maxCoeff();
  Vector e = (logits.array() - shift).exp().matrix();
  return e / e.sum();
}

// Index of the largest entry; ties go to the lowest index.
inline Eigen::Index argmax(const Vector& v) {
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

}  // namespace pomp
