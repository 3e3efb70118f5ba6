#pragma once

#include <vector>

#include "fastjm/linalg.hpp"
#include "fastjm/lmm.hpp"
#include "fastjm/model.hpp"

namespace fastjm {

// Gauss-Hermite rule for the weight exp(-x^2).
struct GhRule1d {
  int order = 0;
  std::vector<double> nodes;    // ascending
  std::vector<double> weights;  // positive
};

GhRule1d gh_rule(int order);

// Cartesian product of a 1-D rule over dim coordinates.
struct QuadratureGrid {
  int dim = 0;
  Mat points;           // size() x dim abscissas c_t
  Vec log_weight_adj;   // sum log w + ||c_t||^2
  Eigen::Index size() const { return points.rows(); }
};

inline constexpr Eigen::Index kMaxGridSize = 1'000'000;

QuadratureGrid tensor_grid(const GhRule1d& rule, int dim);

enum class QuadMode { standard, pseudo_adaptive };

// Evaluation points for one subject plus log|det| of the affine map from c_t.
struct NodeSet {
  Mat points;  // size() x q
  double log_jacobian = 0.0;
};

// sqrt(2) L c_t with L L' = Sigma.
NodeSet standard_nodes(const QuadratureGrid& grid, const Mat& Sigma);
// b_tilde + sqrt(2) H_inv_sqrt c_t.
NodeSet pseudo_adaptive_nodes(const QuadratureGrid& grid, const Vec& b_tilde, const Mat& H_inv_sqrt);

// Dispatch on mode; pseudo-adaptive requires eb, standard requires Sigma.
NodeSet subject_nodes(QuadMode mode, const QuadratureGrid& grid, const Mat& Sigma,
                      const EbSubject* eb);

// Survival quantities for one subject at its observed time.
struct SurvivalAtT {
  std::vector<double> cum_hazard;  // Lambda_k(T), per cause
  double log_jump = 0.0;           // log dLambda_{D}(T) when the subject had an event
};

struct SubjectMoments {
  double marginal_loglik = 0.0;
  Vec Eb;
  Mat Ebb;
  std::vector<double> Eexp;   // E exp(nu_k' b)
  std::vector<Vec> Ebexp;     // E b exp(nu_k' b)
  std::vector<Mat> Ebbexp;    // E b b' exp(nu_k' b)
};

// Posterior expectations by quadrature with log-sum-exp normalization.
// If weights_out is non-null it receives the normalized posterior weights
// (length grid.size()).
SubjectMoments posterior_moments(const Subject& subject, const ParameterSet& params,
                                 const SpdFactor& prior, const NodeSet& nodes,
                                 const QuadratureGrid& grid, const SurvivalAtT& surv,
                                 double* weights_out = nullptr);

}  // namespace fastjm
