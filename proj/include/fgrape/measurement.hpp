// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <vector>

#include "fgrape/qcore.hpp"

namespace fgrape::channels {

// A family of measurement (Kraus) operators indexed by outcome, either a
// finite label set or a uniform lattice of real outcomes. Families built from
// parametrized gates also carry per-parameter derivative operators so the
// score-function and pathwise gradient terms can be assembled downstream.
struct MeasurementFamily {
  enum class Kind { Discrete, Continuous };
  Kind kind = Kind::Discrete;

  // Discrete: outcome labels and M(m) in matching order.
  std::vector<int> outcomes;
  std::vector<qcore::ComplexMatrix> ops;
  std::vector<std::vector<qcore::ComplexMatrix>> dops;  // [outcome][param]

  // Set when every M(m) is diagonal in the computational basis; `diag` holds
  // the (real) diagonals and `ddiag` their parameter derivatives. Lets the
  // sampler and the tape work in O(dim) per outcome.
  bool diagonal = false;
  std::vector<std::vector<double>> diag;                // [outcome][i]
  std::vector<std::vector<std::vector<double>>> ddiag;  // [outcome][param][i]

  // Continuous: uniform outcome lattice m_0..m_{points-1} on [lo, hi] with
  // operator density; M(m)^dag M(m) integrates to I over dm (Euler sum).
  double lattice_lo = 0.0, lattice_hi = 0.0;
  std::size_t lattice_points = 0;
  std::function<qcore::ComplexMatrix(double)> op_of;
  // Gaussian-readout fast path: when set, M(m) = diag(sqrt(q(m - sigma_i)))
  // with q the normal density of width noise_std; keeps sampling alloc-free.
  std::vector<double> cont_sigma;
  double noise_std = 1.0;

  double lattice_spacing() const {
    return lattice_points > 1 ? (lattice_hi - lattice_lo) / double(lattice_points - 1) : 0.0;
  }
  double lattice_m(std::size_t i) const { return lattice_lo + lattice_spacing() * double(i); }
};

}  // namespace fgrape::channels
