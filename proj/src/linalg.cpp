#include "fastjm/linalg.hpp"

#include <cmath>
#include <sstream>

#include "fastjm/errors.hpp"

namespace fastjm {

SpdFactor::SpdFactor(const Mat& a, std::string_view what) {
  if (a.rows() != a.cols() || a.rows() == 0) {
    throw FitError(std::string(what) + " must be a non-empty square matrix");
  }
  if (!a.allFinite()) {
    throw FitError(std::string(what) + " has non-finite entries:\n" + format_matrix(a));
  }
  Eigen::LLT<Mat> llt(symmetrized(a));
  if (llt.info() != Eigen::Success) {
    throw FitError(std::string(what) + " is not positive definite:\n" + format_matrix(a));
  }
  lower_ = llt.matrixL();
  const double min_diag = lower_.diagonal().minCoeff();
  if (!(min_diag > 0.0)) {
    throw FitError(std::string(what) + " is not positive definite:\n" + format_matrix(a));
  }
  log_det_ = 2.0 * lower_.diagonal().array().log().sum();
  inverse_ = llt.solve(Mat::Identity(a.rows(), a.cols()));
  inverse_ = symmetrized(inverse_);
}

Vec SpdFactor::solve(const Vec& rhs) const {
  Vec y = lower_.triangularView<Eigen::Lower>().solve(rhs);
  return lower_.transpose().triangularView<Eigen::Upper>().solve(y);
}

double SpdFactor::quad_form_inv(const Vec& x) const {
  Vec y = lower_.triangularView<Eigen::Lower>().solve(x);
  return y.squaredNorm();
}

bool is_spd(const Mat& m) {
  if (m.rows() != m.cols() || m.rows() == 0 || !m.allFinite()) return false;
  Eigen::LLT<Mat> llt(symmetrized(m));
  if (llt.info() != Eigen::Success) return false;
  Mat l = llt.matrixL();
  return l.diagonal().minCoeff() > 0.0;
}

std::string format_matrix(const Mat& m) {
  std::ostringstream os;
  os.precision(10);
  os << m;
  return os.str();
}

Vec vech(const Mat& m) {
  const Eigen::Index q = m.rows();
  Vec out(q * (q + 1) / 2);
  Eigen::Index k = 0;
  for (Eigen::Index r = 0; r < q; ++r)
    for (Eigen::Index c = 0; c <= r; ++c) out(k++) = m(r, c);
  return out;
}

Mat unvech(const Vec& v, Eigen::Index dim) {
  Mat m(dim, dim);
  Eigen::Index k = 0;
  for (Eigen::Index r = 0; r < dim; ++r)
    for (Eigen::Index c = 0; c <= r; ++c) {
      m(r, c) = v(k);
      m(c, r) = v(k);
      ++k;
    }
  return m;
}

}  // namespace fastjm
