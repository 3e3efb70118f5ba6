#pragma once

#include <memory>
#include <string>
#include <vector>

#include "fastjm/linalg.hpp"
#include "fastjm/lmm.hpp"
#include "fastjm/model.hpp"
#include "fastjm/parallel.hpp"
#include "fastjm/quadrature.hpp"
#include "fastjm/scan_kernels.hpp"

namespace fastjm {

enum class ConvergenceMetric { relative_param_change, loglik_change };

// Which implementation of the risk-set and hazard-lookup primitives to use.
// naive = per-query global search and per-knot refiltering (quadratic).
enum class Backend { scan, naive };

struct EmConfig {
  QuadMode quad_mode = QuadMode::pseudo_adaptive;
  int n_q = 6;
  double tol = 1e-4;
  int max_iter = 300;
  ConvergenceMetric metric = ConvergenceMetric::relative_param_change;
  Backend backend = Backend::scan;
  bool record_trajectory = false;
  double lmm_tol = 1e-6;
  int lmm_max_iter = 500;
  int threads = 0;  // 0: thread_cap()

  void validate() const;
  int worker_count() const { return threads > 0 ? threads : thread_cap(); }
};

// Fixed quadrature state for a fit. In pseudo-adaptive mode the per-subject
// nodes are built once from the empirical Bayes estimates and never change;
// in standard mode nodes follow the current Sigma and are rebuilt per E-step.
struct QuadSetup {
  QuadMode mode = QuadMode::pseudo_adaptive;
  QuadratureGrid grid;
  std::vector<NodeSet> subject_nodes;  // pseudo-adaptive only
};

QuadSetup make_quad_setup(const Dataset& data, QuadMode mode, int n_q, const EBayesState* eb);

struct EStepResult {
  std::vector<SubjectMoments> moments;
  double loglik = 0.0;
  Mat weights;          // G x n posterior weights, empty unless requested
  NodeSet shared_nodes;  // nodes used in standard mode

  const NodeSet& nodes(const QuadSetup& setup, std::size_t i) const {
    return setup.mode == QuadMode::standard ? shared_nodes : setup.subject_nodes[i];
  }
};

// Lambda_k(T_i) for every cause (outer index k-1) and subject, one lookup pass
// per cause.
std::vector<std::vector<double>> cumulative_hazard_at_T(const Dataset& data,
                                                        const ParameterSet& params,
                                                        Backend backend,
                                                        scan::OpCount* ops = nullptr);

EStepResult e_step(const Dataset& data, const ParameterSet& params, const QuadSetup& setup,
                   Backend backend = Backend::scan, bool keep_weights = false,
                   int threads = thread_cap());

struct RegressionUpdate {
  Vec beta;
  double sigma2 = 0.0;
};

RegressionUpdate m_step_regression(const Dataset& data, const std::vector<SubjectMoments>& moments);

Mat m_step_sigma(const std::vector<SubjectMoments>& moments);

// Breslow jumps d_kj / sum_{r in R(t_kj)} a_r with a_r = exp(w_r'gamma_k) Eexp_r.
BaselineHazard m_step_baseline(const Dataset& data, const std::vector<SubjectMoments>& moments,
                               const ParameterSet& params, int cause,
                               Backend backend = Backend::scan, scan::OpCount* ops = nullptr);

// Gradient and negative Hessian of the expected complete log-likelihood in
// theta_k = (gamma_k, nu_k), at the parameters the moments were computed
// under, holding the given baseline fixed.
struct SurvivalDerivatives {
  Vec score;
  Mat information;
};

SurvivalDerivatives survival_derivatives(const Dataset& data,
                                         const std::vector<SubjectMoments>& moments,
                                         const ParameterSet& params, int cause,
                                         const BaselineHazard& baseline,
                                         Backend backend = Backend::scan,
                                         scan::OpCount* ops = nullptr);

// One Newton step for (gamma_k, nu_k), halved up to 10 times while it would
// lower Q; the old values are kept if no trial step helps. post must carry
// weights.
CauseParams m_step_survival(const Dataset& data, const EStepResult& post, const QuadSetup& setup,
                            const ParameterSet& params, int cause, const BaselineHazard& baseline,
                            Backend backend = Backend::scan);

// Expected complete-data log-likelihood Q(params) under the posterior weights
// in post (which must carry weights).
double expected_complete_loglik(const Dataset& data, const ParameterSet& params,
                                const EStepResult& post, const QuadSetup& setup);

// (beta, vech Sigma, sigma2, gamma_1..gamma_K, nu_1..nu_K).
Vec parametric_vector(const ParameterSet& params);

struct PhaseTiming {
  double lmm = 0.0;
  double e_step = 0.0;
  double m_step = 0.0;
  double se = 0.0;
};

struct FitResult {
  ParameterSet params;
  std::vector<double> loglik_trace;
  int iterations = 0;
  bool converged = false;
  std::vector<SubjectMoments> moments;  // at params
  PhaseTiming timing;
  std::vector<Vec> trajectory;  // parametric_vector per iteration, starting values first
  LmmFit lmm;
  std::shared_ptr<const QuadSetup> quad;
  EmConfig config;
  std::vector<std::string> warnings;
};

// Full fit: standalone LMM, empirical Bayes nodes, then EM.
FitResult em_fit(const Dataset& data, const EmConfig& config = {});

// Starting values: LMM estimates, gamma = nu = 0 and Nelson-Aalen baselines.
ParameterSet initial_parameters(const Dataset& data, const LmmFit& lmm);

}  // namespace fastjm
