#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "fastjm/linalg.hpp"
#include "fastjm/model.hpp"

namespace fastjm {

// Design: Y_ij = b0 + b1 t + b2 x2 + u0 + u1 t + e at visits t = 0, 1, ...;
// cause-specific hazards lambda0_k exp(gamma_k'(x1, x2) + nu_k'u) with
// x1 ~ N(2, 1), x2 ~ Bernoulli(0.5); censoring exponential with mean censor_mean.
struct SimConfig {
  int n = 500;
  Vec beta = (Vec(3) << 5.0, 1.0, 2.0).finished();
  double sigma2 = 0.5;
  Mat Sigma = (Mat(2, 2) << 0.5, 0.0, 0.0, 0.25).finished();
  std::vector<Vec> gamma = {(Vec(2) << 0.5, 0.5).finished(), (Vec(2) << -0.5, 0.5).finished()};
  std::vector<Vec> nu = {(Vec(2) << 1.0, 1.0).finished(), (Vec(2) << -1.0, 0.5).finished()};
  std::vector<double> lambda0 = {0.05, 0.1};
  double censor_mean = 20.0;
  int max_visits = 30;
  std::uint64_t seed = 1;

  int n_causes() const { return static_cast<int>(lambda0.size()); }
  void validate() const;
};

// Parametric truth (baselines left empty).
ParameterSet sim_truth(const SimConfig& config);

// Subject i draws from its own stream keyed by (seed, i), so a subject's data
// does not depend on n or on the thread count.
Dataset simulate_dataset(const SimConfig& config);

// mt19937_64 seeded through splitmix64. The distribution transforms are
// written out here (std distributions differ between standard libraries).
class SubjectRng {
 public:
  SubjectRng(std::uint64_t seed, std::uint64_t stream);
  double uniform();  // open interval (0, 1)
  double normal();
  double exponential(double mean);

 private:
  std::mt19937_64 engine_;
};

}  // namespace fastjm
