#include "fastjm/simulate.hpp"

#include <cmath>
#include <numbers>

#include "fastjm/errors.hpp"
#include "fastjm/parallel.hpp"

namespace fastjm {

namespace {

std::uint64_t splitmix64(std::uint64_t& x) {
  std::uint64_t z = (x += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::uint64_t child_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t x = seed;
  const std::uint64_t a = splitmix64(x);
  x = a ^ (stream * 0xD1B54A32D192ED03ULL);
  return splitmix64(x);
}

// Symmetric square root that tolerates a singular (even zero) Sigma.
Mat psd_sqrt(const Mat& m) {
  Eigen::SelfAdjointEigenSolver<Mat> eig(symmetrized(m));
  const Vec root = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return eig.eigenvectors() * root.asDiagonal() * eig.eigenvectors().transpose();
}

}  // namespace

SubjectRng::SubjectRng(std::uint64_t seed, std::uint64_t stream)
    : engine_(child_seed(seed, stream)) {}

double SubjectRng::uniform() {
  // 53 random bits, shifted off zero.
  return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53;
}

double SubjectRng::normal() {
  const double u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

double SubjectRng::exponential(double mean) { return -mean * std::log(uniform()); }

void SimConfig::validate() const {
  if (n < 1) throw std::invalid_argument("simulation n must be at least 1");
  if (beta.size() != 3) throw DimensionError("beta", 3, static_cast<std::size_t>(beta.size()));
  if (Sigma.rows() != 2 || Sigma.cols() != 2) {
    throw DimensionError("Sigma", 2, static_cast<std::size_t>(Sigma.rows()));
  }
  if (!(sigma2 >= 0.0)) throw std::invalid_argument("simulation sigma2 must be nonnegative");
  if (lambda0.empty()) throw std::invalid_argument("simulation needs at least one cause");
  const auto K = lambda0.size();
  if (gamma.size() != K) throw DimensionError("gamma", K, gamma.size());
  if (nu.size() != K) throw DimensionError("nu", K, nu.size());
  for (std::size_t k = 0; k < K; ++k) {
    if (!(lambda0[k] > 0.0)) throw std::invalid_argument("lambda0 must be positive");
    if (gamma[k].size() != 2) throw DimensionError("gamma", 2, gamma[k].size());
    if (nu[k].size() != 2) throw DimensionError("nu", 2, nu[k].size());
  }
  if (!(censor_mean > 0.0)) throw std::invalid_argument("censor_mean must be positive");
  if (max_visits < 1) throw std::invalid_argument("max_visits must be at least 1");
  Eigen::SelfAdjointEigenSolver<Mat> eig(symmetrized(Sigma));
  if (eig.eigenvalues().minCoeff() < -1e-12 || (Sigma - Sigma.transpose()).norm() > 1e-12) {
    throw std::invalid_argument("simulation Sigma must be symmetric positive semidefinite");
  }
}

ParameterSet sim_truth(const SimConfig& config) {
  config.validate();
  ParameterSet p;
  p.beta = config.beta;
  p.sigma2 = config.sigma2;
  p.Sigma = config.Sigma;
  p.causes.resize(config.lambda0.size());
  for (std::size_t k = 0; k < p.causes.size(); ++k) {
    p.causes[k].gamma = config.gamma[k];
    p.causes[k].nu = config.nu[k];
  }
  return p;
}

Dataset simulate_dataset(const SimConfig& config) {
  config.validate();
  const auto n = static_cast<std::size_t>(config.n);
  const auto K = config.lambda0.size();
  const Mat root = psd_sqrt(config.Sigma);
  const double sd = std::sqrt(config.sigma2);

  std::vector<Subject> subjects(n);
  parallel_for(n, [&](std::size_t i) {
    SubjectRng rng(config.seed, i);
    Subject& s = subjects[i];
    s.id = std::to_string(i + 1);
    const double x1 = 2.0 + rng.normal();
    const double x2 = rng.uniform() < 0.5 ? 1.0 : 0.0;
    Vec z(2);
    z << rng.normal(), rng.normal();
    const Vec b = root * z;
    s.surv_covariates = (Vec(2) << x1, x2).finished();

    std::vector<double> h(K);
    double total = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      h[k] = config.lambda0[k] * std::exp(config.gamma[k].dot(s.surv_covariates) + config.nu[k].dot(b));
      total += h[k];
    }
    const double event_time = rng.exponential(1.0 / total);
    const double pick = rng.uniform() * total;
    int cause = static_cast<int>(K);
    double acc = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      acc += h[k];
      if (pick < acc) {
        cause = static_cast<int>(k) + 1;
        break;
      }
    }
    const double censor = rng.exponential(config.censor_mean);
    if (event_time <= censor) {
      s.obs_time = event_time;
      s.cause = cause;
    } else {
      s.obs_time = censor;
      s.cause = 0;
    }

    for (int j = 0; j < config.max_visits && j <= s.obs_time; ++j) {
      const double t = j;
      LongitudinalObs o;
      o.time = t;
      o.fixed_design = (Vec(3) << 1.0, t, x2).finished();
      o.random_design = (Vec(2) << 1.0, t).finished();
      o.response = o.fixed_design.dot(config.beta) + o.random_design.dot(b) + sd * rng.normal();
      s.obs.push_back(std::move(o));
    }
  });

  ColumnNames names{{"(intercept)", "time", "x2"}, {"(intercept)", "time"}, {"x1", "x2"}};
  return Dataset(std::move(subjects), static_cast<int>(K), Dims{3, 2, 2}, std::move(names));
}

}  // namespace fastjm
