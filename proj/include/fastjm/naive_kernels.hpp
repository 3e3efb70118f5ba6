#pragma once

// Reference ("before") versions of the scan kernels: a global search per
// query and a full re-filtering of subjects per knot. Same contracts as the
// kernels in scan_kernels.hpp, deliberately quadratic. Used as test oracles
// and as the slow backend in benchmarks.

#include <span>
#include <stdexcept>
#include <vector>

#include "fastjm/scan_kernels.hpp"

namespace fastjm::naive {

using scan::OpCount;

// Query times in subject order; output in subject order.
template <class T>
std::vector<T> step_lookup(std::span<const double> knot_times, std::span<const T> payload,
                           std::span<const double> query_times, const T& zero,
                           OpCount* ops = nullptr) {
  if (knot_times.size() != payload.size()) {
    throw std::invalid_argument("naive::step_lookup: payload length does not match knots");
  }
  scan::validate_descending_knots(knot_times);
  std::vector<T> out(query_times.size(), zero);
  for (std::size_t i = 0; i < query_times.size(); ++i) {
    // Largest knot not exceeding T_i, found by searching all knots.
    std::size_t best = knot_times.size();
    for (std::size_t j = 0; j < knot_times.size(); ++j) {
      scan::detail::count_cmp(ops);
      if (knot_times[j] <= query_times[i] &&
          (best == knot_times.size() || knot_times[j] > knot_times[best])) {
        best = j;
      }
    }
    if (best < knot_times.size()) out[i] = payload[best];
  }
  return out;
}

template <class T>
std::vector<T> suffix_riskset_sums(std::span<const T> contributions,
                                   std::span<const double> query_times,
                                   std::span<const double> knot_times, const T& zero,
                                   OpCount* ops = nullptr) {
  if (contributions.size() != query_times.size()) {
    throw std::invalid_argument("naive::suffix_riskset_sums: contribution count mismatch");
  }
  scan::validate_descending_knots(knot_times);
  for (std::size_t r = 0; r < contributions.size(); ++r) {
    if (scan::detail::has_nan(contributions[r])) {
      throw std::invalid_argument("naive::suffix_riskset_sums: NaN contribution for subject " +
                                  std::to_string(r));
    }
  }
  std::vector<T> out;
  out.reserve(knot_times.size());
  for (double t : knot_times) {
    T acc = zero;
    for (std::size_t r = 0; r < query_times.size(); ++r) {
      scan::detail::count_cmp(ops);
      if (query_times[r] >= t) {
        acc += contributions[r];
        scan::detail::count_add(ops);
      }
    }
    out.push_back(acc);
  }
  return out;
}

template <class T>
std::vector<T> prefix_event_accumulate(std::span<const T> per_knot,
                                       std::span<const double> knot_times,
                                       std::span<const double> query_times, const T& zero,
                                       OpCount* ops = nullptr) {
  if (per_knot.size() != knot_times.size()) {
    throw std::invalid_argument("naive::prefix_event_accumulate: per-knot length mismatch");
  }
  scan::validate_descending_knots(knot_times);
  std::vector<T> out(query_times.size(), zero);
  for (std::size_t i = 0; i < query_times.size(); ++i) {
    T acc = zero;
    // Ascending-time order, matching the backward cumulative pass of the scan.
    for (std::size_t j = knot_times.size(); j-- > 0;) {
      scan::detail::count_cmp(ops);
      if (knot_times[j] <= query_times[i]) {
        acc += per_knot[j];
        scan::detail::count_add(ops);
      }
    }
    out[i] = acc;
  }
  return out;
}

}  // namespace fastjm::naive
