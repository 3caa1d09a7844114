#pragma once

#include <cmath>
#include <span>

#include "richrep/errors.hpp"
#include "richrep/types.hpp"

namespace richrep {

/// A scalar loss and its gradient with respect to the second (student /
/// prediction) argument.
struct LossGrad {
  double loss = 0.0;
  Matrix grad;
};

inline void check_temperature(double tau) {
  if (!(tau > 0.0) || !std::isfinite(tau)) {
    throw ParameterError("temperature must be positive and finite, got " + std::to_string(tau));
  }
}

/// Row-wise log softmax of logits / tau, max-subtracted.
inline Matrix log_softmax_rows(const Matrix& logits, double tau = 1.0) {
  check_temperature(tau);
  Matrix z = logits / tau;
  const Vector mx = z.rowwise().maxCoeff();
  z.colwise() -= mx;
  const Vector lse = z.array().exp().rowwise().sum().log().matrix();
  z.colwise() -= lse;
  return z;
}

inline Matrix softmax_rows(const Matrix& logits, double tau = 1.0) {
  Matrix p = log_softmax_rows(logits, tau).array().exp().matrix();
  // renormalize so every row sums to 1 up to one rounding
  p = p.array().colwise() / p.rowwise().sum().array();
  return p;
}

/// s_tau(v)_i = exp(v_i / tau) / sum_k exp(v_k / tau).
inline Vector softmax_temperature(const Vector& v, double tau) {
  if (!v.allFinite()) throw DataError("softmax: non-finite input");
  return softmax_rows(Matrix(v.transpose()), tau).row(0).transpose();
}

/// Per-row cross-entropy values and the gradient of their plain sum.
struct RowLosses {
  Vector loss;
  Matrix grad;
};

inline RowLosses cross_entropy_rows(const Matrix& logits, std::span<const int> labels) {
  check_labels(labels, logits.rows(), logits.cols());
  const Matrix logp = log_softmax_rows(logits);
  RowLosses out{Vector(logits.rows()), logp.array().exp().matrix()};
  for (Index r = 0; r < logits.rows(); ++r) {
    const auto y = static_cast<Index>(labels[static_cast<std::size_t>(r)]);
    out.loss(r) = -logp(r, y);
    out.grad(r, y) -= 1.0;
  }
  return out;
}

/// Mean over rows of -log softmax(logits)[label].
inline LossGrad cross_entropy_loss(const Matrix& logits, std::span<const int> labels) {
  RowLosses rows = cross_entropy_rows(logits, labels);
  const double n = static_cast<double>(logits.rows());
  return {rows.loss.sum() / n, rows.grad / n};
}

/// tau^2 * KL(s_tau(teacher) || s_tau(student)), mean over rows. Teacher is
/// held fixed; the gradient is with respect to the student logits only.
inline LossGrad kl_distill_loss(const Matrix& teacher, const Matrix& student, double tau) {
  check_temperature(tau);
  if (teacher.rows() != student.rows() || teacher.cols() != student.cols()) {
    throw ShapeError("kl_distill_loss: teacher and student shapes differ");
  }
  const Matrix logp = log_softmax_rows(teacher, tau);
  const Matrix logq = log_softmax_rows(student, tau);
  const Matrix p = logp.array().exp().matrix();
  const Matrix q = logq.array().exp().matrix();
  const double n = static_cast<double>(student.rows());
  // Each row's KL is clamped at zero against rounding when p == q.
  double total = 0.0;
  for (Index r = 0; r < p.rows(); ++r) {
    total += std::max(0.0, (p.row(r).array() * (logp.row(r) - logq.row(r)).array()).sum());
  }
  return {tau * tau * total / n, (q - p) * (tau / n)};
}

/// (1 - alpha) * CE(student, labels) + alpha * tau^2 * KL(teacher || student).
inline LossGrad ce_kl_distill_loss(const Matrix& teacher, const Matrix& student,
                                   std::span<const int> labels, double alpha, double tau) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) {
    throw ParameterError("alpha must lie in [0, 1], got " + std::to_string(alpha));
  }
  if (alpha == 0.0) {
    check_temperature(tau);
    return cross_entropy_loss(student, labels);
  }
  if (alpha == 1.0) return kl_distill_loss(teacher, student, tau);
  const LossGrad ce = cross_entropy_loss(student, labels);
  const LossGrad kl = kl_distill_loss(teacher, student, tau);
  return {(1.0 - alpha) * ce.loss + alpha * kl.loss, (1.0 - alpha) * ce.grad + alpha * kl.grad};
}

/// Mean over rows of 1 - cos(teacher_row, student_row).
inline LossGrad cosine_distill_loss(const Matrix& teacher, const Matrix& student) {
  if (teacher.rows() != student.rows() || teacher.cols() != student.cols()) {
    throw ShapeError("cosine_distill_loss: teacher and student shapes differ");
  }
  const double n = static_cast<double>(student.rows());
  LossGrad out{0.0, Matrix(student.rows(), student.cols())};
  for (Index r = 0; r < student.rows(); ++r) {
    const double tn = teacher.row(r).norm();
    const double sn = student.row(r).norm();
    if (!(tn > 0.0) || !(sn > 0.0)) throw DomainError("cosine_distill_loss: zero-norm row");
    const auto t_hat = teacher.row(r) / tn;
    const auto s_hat = student.row(r) / sn;
    const double c = std::clamp(t_hat.dot(s_hat), -1.0, 1.0);
    out.loss += 1.0 - c;
    out.grad.row(r) = -(t_hat - c * s_hat) / (sn * n);
  }
  out.loss /= n;
  return out;
}

}  // namespace richrep
