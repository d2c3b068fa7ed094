// SPDX-License-Identifier: Apache-2.0

#include "fgrape/channels.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace fgrape::channels {

using qcore::ComplexMatrix;
using qcore::DensityMatrix;
using qcore::HilbertLayout;
using qcore::Ket;

namespace {

void check_unitary_contract(const ComplexMatrix& u) {
  if (u.rows() != u.cols()) throw DimensionError("apply_unitary: non-square operator");
  const std::size_t n = u.rows();
  if (n <= 32) {
    if (!u.is_unitary(1e-8)) throw StateError("apply_unitary: operator is not unitary within 1e-8");
    return;
  }
  for (std::size_t i = 0; i < n; ++i) {
    double row = 0.0, col = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      row += std::norm(u(i, j));
      col += std::norm(u(j, i));
    }
    if (std::abs(row - 1.0) > 2e-8 || std::abs(col - 1.0) > 2e-8)
      throw StateError("apply_unitary: operator is not unitary within 1e-8");
  }
}

// kappa-scaled decay superoperator L(rho) = a rho a^dag - {n, rho}/2 applied
// in O(dim^2): the ladder shift moves both indices up one Fock level. The
// adjoint map a^dag X a - {n, X}/2 shifts them down instead.
void decay_superop(const HilbertLayout& l, const ComplexMatrix& rho, ComplexMatrix& out,
                   bool adjoint = false) {
  const std::size_t N = l.fock_cutoff, Q = l.qdim();
  for (std::size_t m = 0; m < N; ++m) {
    for (std::size_t n = 0; n < N; ++n) {
      double damp = -0.5 * static_cast<double>(m + n);
      double lift;
      std::size_t sm, sn;
      if (adjoint) {
        lift = (m >= 1 && n >= 1) ? std::sqrt(static_cast<double>(m * n)) : 0.0;
        sm = m - 1;
        sn = n - 1;
      } else {
        lift = (m + 1 < N && n + 1 < N) ? std::sqrt(static_cast<double>((m + 1) * (n + 1))) : 0.0;
        sm = m + 1;
        sn = n + 1;
      }
      for (std::size_t b = 0; b < Q; ++b) {
        for (std::size_t c = 0; c < Q; ++c) {
          cxd v = damp * rho(l.index(m, b), l.index(n, c));
          if (lift != 0.0) v += lift * rho(l.index(sm, b), l.index(sn, c));
          out(l.index(m, b), l.index(n, c)) = v;
        }
      }
    }
  }
}

double gauss_density(double x) {
  return std::exp(-0.5 * x * x) / std::sqrt(2.0 * kPi);
}

// Per-outcome probabilities; diagonal fast path when available.
std::vector<double> outcome_probs(const DensityMatrix& rho, const MeasurementFamily& fam) {
  std::vector<double> p(fam.diagonal ? fam.diag.size() : fam.ops.size(), 0.0);
  if (fam.diagonal) {
    for (std::size_t o = 0; o < fam.diag.size(); ++o) {
      double s = 0.0;
      for (std::size_t i = 0; i < rho.dim(); ++i)
        s += fam.diag[o][i] * fam.diag[o][i] * std::real(rho.matrix()(i, i));
      p[o] = s;
    }
  } else {
    for (std::size_t o = 0; o < fam.ops.size(); ++o) {
      ComplexMatrix t = fam.ops[o] * rho.matrix();
      p[o] = std::real(qcore::trace_prod(t, fam.ops[o].dagger()));
    }
  }
  return p;
}

DensityMatrix post_state(const DensityMatrix& rho, const MeasurementFamily& fam, std::size_t o,
                         double prob) {
  const std::size_t d = rho.dim();
  ComplexMatrix post(d, d);
  if (fam.diagonal) {
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j)
        post(i, j) = fam.diag[o][i] * fam.diag[o][j] * rho.matrix()(i, j);
  } else {
    post = fam.ops[o] * rho.matrix() * fam.ops[o].dagger();
  }
  double tr = std::real(post.trace());
  if (tr <= 0.0) throw NumericalError("measurement: post state has non-positive trace");
  post *= cxd(1.0 / tr, 0.0);
  (void)prob;
  return DensityMatrix::from_unchecked(std::move(post));
}

MeasurementEvent make_event(const DensityMatrix& rho, const MeasurementFamily& fam, std::size_t o,
                            double prob) {
  MeasurementEvent ev;
  ev.outcome_index = o;
  ev.outcome = static_cast<double>(fam.outcomes[o]);
  ev.probability = prob;
  ev.log_prob = std::log(prob);
  ev.post = post_state(rho, fam, o, prob);
  return ev;
}

}  // namespace

void validate_family(const MeasurementFamily& fam, std::size_t dim) {
  if (fam.kind == MeasurementFamily::Kind::Discrete) {
    if (fam.diagonal) {
      for (std::size_t i = 0; i < dim; ++i) {
        double s = 0.0;
        for (const auto& d : fam.diag) s += d[i] * d[i];
        if (std::abs(s - 1.0) > 1e-10)
          throw StateError("measurement family violates completeness (diagonal sum)");
      }
      return;
    }
    ComplexMatrix sum(dim, dim);
    for (const auto& m : fam.ops) ComplexMatrix::mul_acc(sum, m.dagger(), m);
    for (std::size_t i = 0; i < dim; ++i) sum(i, i) -= 1.0;
    if (sum.max_abs() > 1e-10)
      throw StateError("measurement family violates completeness (sum M^dag M != I)");
    return;
  }
  // Continuous: Euler sum over the lattice within 1e-4 of the identity.
  if (!fam.op_of || fam.lattice_points < 2)
    throw ConfigError("continuous measurement family needs a lattice and operator_fn");
  double h = fam.lattice_spacing();
  ComplexMatrix sum(dim, dim);
  for (std::size_t i = 0; i < fam.lattice_points; ++i) {
    ComplexMatrix m = fam.op_of(fam.lattice_m(i));
    ComplexMatrix::mul_acc(sum, m.dagger(), m, cxd(h, 0.0));
  }
  for (std::size_t i = 0; i < dim; ++i) sum(i, i) -= 1.0;
  if (sum.max_abs() > 1e-4)
    throw StateError("continuous family violates completeness (Euler sum deviates)");
}

DensityMatrix apply_unitary(const DensityMatrix& rho, const ComplexMatrix& u) {
  if (u.cols() != rho.dim()) throw DimensionError("apply_unitary: dimension mismatch");
  check_unitary_contract(u);
  return DensityMatrix::from_unchecked(u * rho.matrix() * u.dagger());
}

Ket apply_unitary(const Ket& psi, const ComplexMatrix& u) {
  if (u.cols() != psi.dim()) throw DimensionError("apply_unitary: dimension mismatch");
  check_unitary_contract(u);
  return qcore::apply(u, psi);
}

ComplexMatrix lindblad_rk4_raw(const HilbertLayout& l, const ComplexMatrix& x,
                               const DissipationSpec& spec, bool adjoint) {
  l.validate();
  if (x.rows() != l.dim() || x.cols() != l.dim())
    throw DimensionError("lindblad_rk4: dimension mismatch");
  if (spec.kappa_t < 0.0) throw StateError("lindblad_rk4: kappa_t must be non-negative");
  if (spec.kappa_t == 0.0) return x;
  std::size_t steps = spec.rk4_steps;
  if (steps == 0) steps = static_cast<std::size_t>(std::ceil(spec.kappa_t / 0.05));
  double dt = spec.kappa_t / static_cast<double>(steps);

  const std::size_t D = l.dim();
  ComplexMatrix r = x;
  ComplexMatrix k1(D, D), k2(D, D), k3(D, D), k4(D, D), tmp(D, D);
  auto staged = [&](const ComplexMatrix& k, double w) {
    for (std::size_t i = 0; i < D; ++i)
      for (std::size_t j = 0; j < D; ++j) tmp(i, j) = r(i, j) + w * k(i, j);
  };
  for (std::size_t s = 0; s < steps; ++s) {
    decay_superop(l, r, k1, adjoint);
    staged(k1, 0.5 * dt);
    decay_superop(l, tmp, k2, adjoint);
    staged(k2, 0.5 * dt);
    decay_superop(l, tmp, k3, adjoint);
    staged(k3, dt);
    decay_superop(l, tmp, k4, adjoint);
    double w = dt / 6.0;
    for (std::size_t i = 0; i < D; ++i)
      for (std::size_t j = 0; j < D; ++j)
        r(i, j) += w * (k1(i, j) + 2.0 * k2(i, j) + 2.0 * k3(i, j) + k4(i, j));
  }
  return r;
}

DensityMatrix lindblad_rk4(const HilbertLayout& l, const DensityMatrix& rho,
                           const DissipationSpec& spec) {
  if (rho.dim() != l.dim()) throw DimensionError("lindblad_rk4: dimension mismatch");
  return DensityMatrix::from_unchecked(lindblad_rk4_raw(l, rho.matrix(), spec));
}

MeasurementEvent measure_discrete(const DensityMatrix& rho, const MeasurementFamily& fam,
                                  double rng_draw, double floor_eps) {
  if (fam.kind != MeasurementFamily::Kind::Discrete)
    throw ConfigError("measure_discrete: family is not discrete");
  validate_family(fam, rho.dim());
  std::vector<double> p = outcome_probs(rho, fam);

  double kept_total = 0.0;
  bool excluded = false;
  for (double v : p) {
    if (v < floor_eps)
      excluded = true;
    else
      kept_total += v;
  }
  if (kept_total <= 0.0) throw NumericalError("measure_discrete: all outcomes below floor");
  if (excluded)
    warn("measure_discrete: outcome below probability floor excluded from sampling");

  double target = rng_draw * kept_total, cum = 0.0;
  std::size_t pick = fam.outcomes.size();
  for (std::size_t o = 0; o < p.size(); ++o) {
    if (p[o] < floor_eps) continue;
    cum += p[o];
    if (target <= cum) {
      pick = o;
      break;
    }
  }
  if (pick == fam.outcomes.size()) {  // roundoff at the top of the CDF
    for (std::size_t o = p.size(); o-- > 0;)
      if (p[o] >= floor_eps) {
        pick = o;
        break;
      }
  }
  return make_event(rho, fam, pick, p[pick]);
}

MeasurementEvent measure_forced(const DensityMatrix& rho, const MeasurementFamily& fam,
                                std::size_t outcome_index) {
  if (fam.kind != MeasurementFamily::Kind::Discrete)
    throw ConfigError("measure_forced: family is not discrete");
  if (outcome_index >= fam.outcomes.size())
    throw ConfigError("measure_forced: outcome index out of range");
  std::vector<double> p = outcome_probs(rho, fam);
  if (p[outcome_index] <= 0.0)
    throw StateError("measure_forced: forced outcome has zero probability");
  return make_event(rho, fam, outcome_index, p[outcome_index]);
}

MeasurementEvent measure_continuous_reparam(const DensityMatrix& rho, const MeasurementFamily& fam,
                                            double z) {
  if (fam.kind != MeasurementFamily::Kind::Continuous)
    throw ConfigError("measure_continuous_reparam: family is not continuous");
  const bool diag_path = !fam.cont_sigma.empty();
  if (!diag_path) validate_family(fam, rho.dim());  // builders validate the diagonal kind once
  const std::size_t n = fam.lattice_points;
  const double h = fam.lattice_spacing();

  auto density_at = [&](double m) {
    if (diag_path) {
      double s = 0.0;
      for (std::size_t i = 0; i < rho.dim(); ++i)
        s += gauss_density((m - fam.cont_sigma[i]) / fam.noise_std) / fam.noise_std *
             std::real(rho.matrix()(i, i));
      return s;
    }
    ComplexMatrix mop = fam.op_of(m);
    ComplexMatrix t = mop * rho.matrix();
    return std::real(qcore::trace_prod(t, mop.dagger()));
  };
  std::vector<double> dens(n);
  for (std::size_t i = 0; i < n; ++i) dens[i] = density_at(fam.lattice_m(i));
  std::vector<double> cum(n, 0.0);
  for (std::size_t i = 1; i < n; ++i) cum[i] = cum[i - 1] + 0.5 * h * (dens[i - 1] + dens[i]);

  double msample;
  if (z >= cum.back()) {
    warn("measure_continuous_reparam: draw beyond covered mass, clamped to lattice edge");
    msample = fam.lattice_hi;
  } else if (z <= 0.0) {
    msample = fam.lattice_lo;
  } else {
    std::size_t hi = std::size_t(std::upper_bound(cum.begin(), cum.end(), z) - cum.begin());
    std::size_t lo = hi - 1;
    double span = cum[hi] - cum[lo];
    double frac = span > 0.0 ? (z - cum[lo]) / span : 0.0;
    msample = fam.lattice_m(lo) + h * frac;
  }

  double density = density_at(msample);
  if (density <= 0.0)
    throw NumericalError("measure_continuous_reparam: zero density at sampled outcome");
  ComplexMatrix post(rho.dim(), rho.dim());
  if (diag_path) {
    std::vector<double> md(rho.dim());
    for (std::size_t i = 0; i < rho.dim(); ++i)
      md[i] = std::sqrt(gauss_density((msample - fam.cont_sigma[i]) / fam.noise_std) /
                        fam.noise_std);
    for (std::size_t i = 0; i < rho.dim(); ++i)
      for (std::size_t j = 0; j < rho.dim(); ++j) post(i, j) = md[i] * md[j] * rho.matrix()(i, j);
  } else {
    ComplexMatrix mop = fam.op_of(msample);
    post = mop * rho.matrix() * mop.dagger();
  }
  post *= cxd(1.0 / std::real(post.trace()), 0.0);

  MeasurementEvent ev;
  ev.outcome_index = 0;
  ev.outcome = msample;
  ev.probability = density;
  ev.log_prob = std::log(density);
  ev.post = DensityMatrix::from_unchecked(std::move(post));
  return ev;
}

MeasurementFamily continuous_qubit_readout(const HilbertLayout& l, std::size_t slot, double lo,
                                           double hi, std::size_t points) {
  l.validate();
  std::vector<double> sigma(l.dim(), 0.0);
  if (l.qubit_slots == 0) {
    if (l.fock_cutoff != 2)
      throw LayoutError("continuous_qubit_readout: slotless layout must be two-level");
    sigma[0] = 1.0;
    sigma[1] = -1.0;
  } else {
    if (slot >= l.qubit_slots)
      throw LayoutError("continuous_qubit_readout: slot out of range");
    for (std::size_t i = 0; i < l.dim(); ++i)
      sigma[i] = l.slot_bit(l.bits_of(i), slot) == 0 ? 1.0 : -1.0;
  }
  MeasurementFamily fam;
  fam.kind = MeasurementFamily::Kind::Continuous;
  fam.lattice_lo = lo;
  fam.lattice_hi = hi;
  fam.lattice_points = points;
  std::size_t dim = l.dim();
  fam.op_of = [sigma, dim](double m) {
    ComplexMatrix op(dim, dim);
    for (std::size_t i = 0; i < dim; ++i) op(i, i) = std::sqrt(gauss_density(m - sigma[i]));
    return op;
  };
  fam.cont_sigma = sigma;
  validate_family(fam, dim);
  return fam;
}

StepElem StepElem::unitary(ComplexMatrix m) {
  StepElem e;
  e.kind = Kind::Unitary;
  e.u = std::move(m);
  return e;
}

StepElem StepElem::dissipation_of(DissipationSpec d) {
  StepElem e;
  e.kind = Kind::Dissipation;
  e.dissipation = d;
  return e;
}

StepElem StepElem::measurement(MeasurementFamily f) {
  StepElem e;
  e.kind = Kind::Measurement;
  e.family = std::move(f);
  return e;
}

StepElem StepElem::reward_tap(std::function<double(const DensityMatrix&)> fn) {
  StepElem e;
  e.kind = Kind::RewardTap;
  e.reward = std::move(fn);
  return e;
}

TrajectoryResult trajectory_step(const HilbertLayout& l, DensityMatrix rho,
                                 const std::vector<StepElem>& plan, Rng& rng,
                                 const std::vector<std::size_t>* forced_outcomes) {
  TrajectoryResult out;
  std::size_t forced_used = 0;
  for (const StepElem& e : plan) {
    switch (e.kind) {
      case StepElem::Kind::Unitary:
        rho = apply_unitary(rho, e.u);
        break;
      case StepElem::Kind::Dissipation:
        rho = lindblad_rk4(l, rho, e.dissipation);
        break;
      case StepElem::Kind::Measurement: {
        MeasurementEvent ev;
        if (e.family.kind == MeasurementFamily::Kind::Continuous) {
          if (forced_outcomes)
            throw ConfigError("trajectory_step: continuous measurements cannot be forced");
          ev = measure_continuous_reparam(rho, e.family, rng.uniform());
        } else if (forced_outcomes) {
          if (forced_used >= forced_outcomes->size())
            throw ConfigError("trajectory_step: not enough forced outcomes for the plan");
          ev = measure_forced(rho, e.family, (*forced_outcomes)[forced_used++]);
        } else {
          ev = measure_discrete(rho, e.family, rng.uniform());
        }
        rho = ev.post;
        out.log_prob += ev.log_prob;
        out.events.push_back(std::move(ev));
        break;
      }
      case StepElem::Kind::RewardTap:
        out.rewards.push_back(e.reward(rho));
        break;
    }
  }
  out.rho = std::move(rho);
  return out;
}

}  // namespace fgrape::channels
