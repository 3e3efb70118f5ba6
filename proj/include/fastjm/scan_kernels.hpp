#pragma once

// Linear-scan primitives over descending event times and descending observed
// times. All three kernels are generic over an additive value type (double,
// Eigen vectors, Eigen matrices); the caller supplies the zero element.
//
// Tie convention, used consistently everywhere: a query time equal to a knot
// is in that knot's risk set and picks up that knot's value (right-continuous
// step functions, risk set R(t) = {r : T_r >= t}).

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace fastjm::scan {

// Instrumented operation counter: comparisons made while merging the two
// sorted sequences and element additions into accumulators.
struct OpCount {
  std::uint64_t comparisons = 0;
  std::uint64_t additions = 0;

  std::uint64_t total() const { return comparisons + additions; }
  OpCount& operator+=(const OpCount& o) {
    comparisons += o.comparisons;
    additions += o.additions;
    return *this;
  }
};

namespace detail {

inline bool has_nan(double x) { return std::isnan(x); }

template <class Derived>
bool has_nan(const Eigen::MatrixBase<Derived>& x) {
  return x.hasNaN();
}

inline void count_cmp(OpCount* ops) {
  if (ops) ++ops->comparisons;
}
inline void count_add(OpCount* ops) {
  if (ops) ++ops->additions;
}

}  // namespace detail

// Strictly descending check; throws std::invalid_argument naming the first
// offending position.
inline void validate_descending_knots(std::span<const double> times) {
  for (std::size_t j = 1; j < times.size(); ++j) {
    if (!(times[j] < times[j - 1])) {
      throw std::invalid_argument("knot times not strictly descending at index " +
                                  std::to_string(j));
    }
  }
}

template <class T>
struct DescendingKnots {
  std::vector<double> times;
  std::vector<T> payload;

  void validate() const {
    if (times.size() != payload.size()) {
      throw std::invalid_argument("knot payload length " + std::to_string(payload.size()) +
                                  " does not match knot count " + std::to_string(times.size()));
    }
    validate_descending_knots(times);
  }
};

// Observed times sorted in nonincreasing order together with the map from
// sorted position back to the original (subject) index.
class DescendingQueries {
 public:
  DescendingQueries() = default;

  DescendingQueries(std::vector<double> sorted_times, std::vector<std::size_t> index_map)
      : times_(std::move(sorted_times)), index_(std::move(index_map)) {
    validate();
  }

  // Sorts once; ties are broken by original index.
  static DescendingQueries from_times(std::span<const double> times) {
    return from_times(times, [](std::size_t a, std::size_t b) { return a < b; });
  }

  template <class TieLess>
  static DescendingQueries from_times(std::span<const double> times, TieLess tie_less) {
    std::vector<std::size_t> order(times.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      if (times[a] != times[b]) return times[a] > times[b];
      return tie_less(a, b);
    });
    std::vector<double> sorted(times.size());
    for (std::size_t k = 0; k < order.size(); ++k) sorted[k] = times[order[k]];
    return DescendingQueries(std::move(sorted), std::move(order));
  }

  const std::vector<double>& times() const { return times_; }
  const std::vector<std::size_t>& index() const { return index_; }
  std::size_t size() const { return times_.size(); }

  void validate() const {
    if (times_.size() != index_.size()) {
      throw std::invalid_argument("query index map length does not match query count");
    }
    for (std::size_t k = 0; k < times_.size(); ++k) {
      if (std::isnan(times_[k])) {
        throw std::invalid_argument("query time is NaN at position " + std::to_string(k));
      }
      if (k > 0 && times_[k] > times_[k - 1]) {
        throw std::invalid_argument("query times not in descending order at position " +
                                    std::to_string(k));
      }
    }
    std::vector<char> seen(index_.size(), 0);
    for (std::size_t k = 0; k < index_.size(); ++k) {
      if (index_[k] >= index_.size() || seen[index_[k]]) {
        throw std::invalid_argument("query index map is not a permutation at position " +
                                    std::to_string(k));
      }
      seen[index_[k]] = 1;
    }
  }

 private:
  std::vector<double> times_;
  std::vector<std::size_t> index_;
};

// Evaluates a right-continuous step function given by its values at
// descending knots, for every query, in one merged pass:
//   T >= t_1                  -> payload[0]
//   t_{j+1} <= T < t_j        -> payload[j+1]
//   T < t_last                -> zero
// Output is indexed by original (subject) position.
template <class T>
std::vector<T> step_lookup_scan(std::span<const double> knot_times, std::span<const T> payload,
                                const DescendingQueries& queries, const T& zero,
                                OpCount* ops = nullptr) {
  if (knot_times.size() != payload.size()) {
    throw std::invalid_argument("step_lookup_scan: payload length does not match knots");
  }
  validate_descending_knots(knot_times);

  const std::vector<double>& qt = queries.times();
  const std::vector<std::size_t>& qi = queries.index();
  const std::size_t m = knot_times.size();

  std::vector<T> out(qt.size(), zero);
  std::size_t j = 0;
  for (std::size_t r = 0; r < qt.size(); ++r) {
    const double t = qt[r];
    while (j < m) {
      detail::count_cmp(ops);
      if (knot_times[j] > t) {
        ++j;
      } else {
        break;
      }
    }
    if (j < m) out[qi[r]] = payload[j];
  }
  return out;
}

template <class T>
std::vector<T> step_lookup_scan(const DescendingKnots<T>& knots, const DescendingQueries& queries,
                                const T& zero, OpCount* ops = nullptr) {
  return step_lookup_scan<T>(knots.times, knots.payload, queries, zero, ops);
}

// Risk-set sums: for each knot t_j (descending), sum of contributions over
// R(t_j) = {r : T_r >= t_j}. Contributions are indexed by subject; they are
// visited in descending-time order and each is added exactly once.
template <class T>
std::vector<T> suffix_riskset_sums(std::span<const T> contributions,
                                   const DescendingQueries& queries,
                                   std::span<const double> knot_times, const T& zero,
                                   OpCount* ops = nullptr) {
  if (contributions.size() != queries.size()) {
    throw std::invalid_argument("suffix_riskset_sums: contribution count does not match queries");
  }
  validate_descending_knots(knot_times);

  const std::vector<double>& qt = queries.times();
  const std::vector<std::size_t>& qi = queries.index();

  std::vector<T> out;
  out.reserve(knot_times.size());
  T acc = zero;
  std::size_t r = 0;
  for (double t : knot_times) {
    while (r < qt.size()) {
      detail::count_cmp(ops);
      if (qt[r] >= t) {
        const T& a = contributions[qi[r]];
        if (detail::has_nan(a)) {
          throw std::invalid_argument("suffix_riskset_sums: NaN contribution for subject " +
                                      std::to_string(qi[r]));
        }
        acc += a;
        detail::count_add(ops);
        ++r;
      } else {
        break;
      }
    }
    out.push_back(acc);
  }
  return out;
}

// B(T_i) = sum over knots t_j <= T_i of per_knot[j], for every query.
// One backward pass builds B at the knots, one merged pass maps to queries.
template <class T>
std::vector<T> prefix_event_accumulate(std::span<const T> per_knot,
                                       std::span<const double> knot_times,
                                       const DescendingQueries& queries, const T& zero,
                                       OpCount* ops = nullptr) {
  if (per_knot.size() != knot_times.size()) {
    throw std::invalid_argument("prefix_event_accumulate: per-knot length does not match knots");
  }
  validate_descending_knots(knot_times);

  const std::size_t m = knot_times.size();
  std::vector<T> cumulative(m, zero);
  T acc = zero;
  for (std::size_t j = m; j-- > 0;) {
    acc += per_knot[j];
    detail::count_add(ops);
    cumulative[j] = acc;
  }
  return step_lookup_scan<T>(knot_times, std::span<const T>(cumulative), queries, zero, ops);
}

}  // namespace fastjm::scan
