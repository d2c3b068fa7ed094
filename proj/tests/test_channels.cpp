// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <vector>

#include "fgrape/channels.hpp"
#include "fgrape/gates.hpp"

using namespace fgrape;
using namespace fgrape::channels;
using qcore::ComplexMatrix;
using qcore::DensityMatrix;
using qcore::HilbertLayout;
using qcore::Ket;

namespace {

ComplexMatrix random_unitary(Rng& rng, std::size_t n) {
  ComplexMatrix m(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) m(i, j) = cxd(rng.gauss(), rng.gauss());
  ComplexMatrix h(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) h(i, j) = 0.5 * (m(i, j) + std::conj(m(j, i)));
  return qcore::eig_hermitian(h).vectors;
}

DensityMatrix random_density(Rng& rng, std::size_t n) {
  ComplexMatrix m(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) m(i, j) = cxd(rng.gauss(), rng.gauss());
  ComplexMatrix rho = m * m.dagger();
  rho *= cxd(1.0, 0.0) / rho.trace();
  return DensityMatrix::from_unchecked(std::move(rho));
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

}  // namespace

TEST_CASE("apply_unitary preserves what it should") {
  Rng rng(31);
  DensityMatrix rho = random_density(rng, 8);
  CHECK((apply_unitary(rho, ComplexMatrix::identity(8)).matrix() - rho.matrix()).max_abs() <
        1e-14);

  ComplexMatrix u = random_unitary(rng, 8);
  DensityMatrix moved = apply_unitary(rho, u);
  CHECK(std::abs(qcore::purity(moved) - qcore::purity(rho)) < 1e-10);
  CHECK(std::abs(std::real(moved.matrix().trace()) - 1.0) < 1e-12);

  Ket target = Ket::basis(8, 3);
  Ket moved_target = apply_unitary(target, u);
  CHECK(std::abs(qcore::fidelity(moved, moved_target) - qcore::fidelity(rho, target)) < 1e-10);

  CHECK_THROWS_AS(apply_unitary(rho, ComplexMatrix::identity(8) * cxd(2.0, 0.0)), StateError);
  // large-dimension path uses the row/column norm check
  DensityMatrix big = random_density(rng, 40);
  CHECK_THROWS_AS(apply_unitary(big, ComplexMatrix::identity(40) * cxd(0.5, 0.0)), StateError);
}

TEST_CASE("lindblad decay of the one-photon state") {
  HilbertLayout l{6, 0};
  DensityMatrix one = DensityMatrix::pure(Ket::basis(6, 1));
  CHECK((lindblad_rk4(l, one, {0.0, 0}).matrix() - one.matrix()).max_abs() == 0.0);

  for (double kt : {0.1, 0.3, 1.0}) {
    DensityMatrix out = lindblad_rk4(l, one, {kt, 0});
    double p1 = std::real(out.matrix()(1, 1));
    CHECK(std::abs(p1 - std::exp(-kt)) / std::exp(-kt) < 1e-6);
    CHECK(std::abs(std::real(out.matrix().trace()) - 1.0) < 1e-9);
    CHECK((out.matrix() - out.matrix().dagger()).max_abs() < 1e-10);
  }
}

TEST_CASE("mean photon number decays exponentially for any state") {
  HilbertLayout l{25, 0};
  auto ops = qcore::build_operators(l);
  // a deliberately non-trivial mixed initial state
  qcore::StateSpec cs;
  cs.kind = qcore::StateKind::Coherent;
  cs.alpha = cxd(1.3, 0.4);
  qcore::StateSpec ts;
  ts.kind = qcore::StateKind::Thermal;
  ts.nbar = 1.0;
  ComplexMatrix mix = qcore::build_state(l, cs).dm.matrix() * cxd(0.5, 0.0) +
                      qcore::build_state(l, ts).dm.matrix() * cxd(0.5, 0.0);
  DensityMatrix rho = DensityMatrix::from(std::move(mix));
  double n0 = std::real(qcore::trace_prod(rho.matrix(), ops.number));
  double kt = 0.37;
  DensityMatrix out = lindblad_rk4(l, rho, {kt, 0});
  double nt = std::real(qcore::trace_prod(out.matrix(), ops.number));
  CHECK(std::abs(nt - n0 * std::exp(-kt)) / (n0 * std::exp(-kt)) < 1e-6);
}

TEST_CASE("lindblad acts on the cavity while qubit slots spectate") {
  HilbertLayout l{4, 1};
  Ket psi(8);
  psi[l.index(1, 1)] = 1.0;  // |1> x |e>
  DensityMatrix out = lindblad_rk4(l, DensityMatrix::pure(psi), {0.5, 0});
  // photon decays, qubit stays excited
  double pg = 0.0, pe = 0.0;
  for (std::size_t n = 0; n < 4; ++n) {
    pg += std::real(out.matrix()(l.index(n, 0), l.index(n, 0)));
    pe += std::real(out.matrix()(l.index(n, 1), l.index(n, 1)));
  }
  CHECK(pe > 1.0 - 1e-9);
  CHECK(pg < 1e-9);
  CHECK(std::abs(std::real(out.matrix()(l.index(1, 1), l.index(1, 1))) - std::exp(-0.5)) < 1e-6);
}

TEST_CASE("rk4 convergence order on step halving") {
  HilbertLayout l{12, 0};
  DensityMatrix rho = DensityMatrix::pure(Ket::basis(12, 7));
  DensityMatrix ref = lindblad_rk4(l, rho, {1.0, 512});
  std::vector<double> lndt, lnerr;
  for (std::size_t steps : {4u, 8u, 16u}) {
    DensityMatrix out = lindblad_rk4(l, rho, {1.0, steps});
    lndt.push_back(std::log(1.0 / double(steps)));
    lnerr.push_back(std::log((out.matrix() - ref.matrix()).frob_norm()));
  }
  // least-squares slope of ln(err) vs ln(dt)
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    mx += lndt[i] / 3.0;
    my += lnerr[i] / 3.0;
  }
  double num = 0, den = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    num += (lndt[i] - mx) * (lnerr[i] - my);
    den += (lndt[i] - mx) * (lndt[i] - mx);
  }
  CHECK(num / den >= 3.8);
}

TEST_CASE("discrete measurement on fock states") {
  HilbertLayout l{8, 0};
  auto fam = gates::dispersive_povm(l, kPi / 2.0, 0.0);

  warning_log().clear();
  MeasurementEvent ev = measure_discrete(DensityMatrix::pure(Ket::basis(8, 0)), fam, 0.4);
  CHECK(ev.outcome == 1.0);
  CHECK(std::abs(ev.probability - 1.0) < 1e-12);
  CHECK(std::abs(ev.log_prob) < 1e-12);
  CHECK(std::abs(std::real(ev.post.matrix()(0, 0)) - 1.0) < 1e-12);

  // |1><1| forces the sin outcome: P(-1) = sin^2(pi/2) = 1
  MeasurementEvent odd = measure_discrete(DensityMatrix::pure(Ket::basis(8, 1)), fam, 0.0);
  CHECK(odd.outcome == -1.0);
  CHECK(std::abs(odd.probability - 1.0) < 1e-12);
  // the excluded zero-probability outcome triggered the floor warning
  CHECK(!warning_log().empty());
  warning_log().clear();

  // probabilities over outcomes always sum to one
  Rng rng(77);
  for (int rep = 0; rep < 10; ++rep) {
    DensityMatrix rho = random_density(rng, 8);
    auto f2 = gates::dispersive_povm(l, rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0));
    double p0 = measure_discrete(rho, f2, 0.0).probability;
    MeasurementEvent last = measure_discrete(rho, f2, 0.999999);
    double total = last.outcome_index == 0 ? p0 : p0 + last.probability;
    if (last.outcome_index != 0) CHECK(std::abs(total - 1.0) < 1e-10);
  }
}

TEST_CASE("inverse-cdf tie resolves to the lower-index outcome") {
  HilbertLayout l{2, 0};
  auto fam = gates::dispersive_povm(l, kPi / 2.0, 0.0);
  Ket plus = Ket::from({cxd(1.0 / std::sqrt(2.0), 0.0), cxd(1.0 / std::sqrt(2.0), 0.0)});
  MeasurementEvent ev = measure_discrete(DensityMatrix::pure(plus), fam, 0.5);
  CHECK(ev.outcome_index == 0);  // P(+1) = 0.5 exactly, tie goes low
  CHECK(std::abs(ev.probability - 0.5) < 1e-12);
}

TEST_CASE("unconditional channel equals the weighted outcome average") {
  HilbertLayout l{10, 0};
  Rng rng(11);
  for (int rep = 0; rep < 5; ++rep) {
    DensityMatrix rho = random_density(rng, 10);
    auto fam = gates::dispersive_povm(l, rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0));
    ComplexMatrix avg(10, 10), direct(10, 10);
    for (std::size_t o = 0; o < 2; ++o) {
      MeasurementEvent ev = measure_forced(rho, fam, o);
      avg += ev.post.matrix() * cxd(ev.probability, 0.0);
      ComplexMatrix::mul_acc(direct, fam.ops[o] * rho.matrix(), fam.ops[o].dagger());
    }
    CHECK((avg - direct).max_abs() < 1e-10);
    DensityMatrix::from(avg);  // still a valid density matrix
  }
}

TEST_CASE("reparametrized sampling: uniform density is linear in z") {
  MeasurementFamily fam;
  fam.kind = MeasurementFamily::Kind::Continuous;
  fam.lattice_lo = 0.0;
  fam.lattice_hi = 1.0;
  fam.lattice_points = 101;
  // scaled so the lattice completeness sum is exactly the identity
  const double q = 1.0 / 1.01;
  fam.op_of = [q](double) { return ComplexMatrix::identity(2) * cxd(std::sqrt(q), 0.0); };
  DensityMatrix rho = DensityMatrix::pure(Ket::basis(2, 0));
  for (double z : {0.05, 0.33, 0.5, 0.91}) {
    MeasurementEvent ev = measure_continuous_reparam(rho, fam, z);
    CHECK(std::abs(ev.outcome - z / q) < 1e-12);  // flat density: m = z / q
    CHECK(std::abs(ev.probability - q) < 1e-12);
    CHECK(std::abs(ev.log_prob - std::log(q)) < 1e-12);
  }
}

TEST_CASE("gaussian readout of a definite qubit matches N(+1,1)") {
  HilbertLayout l{2, 0};
  auto fam = continuous_qubit_readout(l);
  DensityMatrix up = DensityMatrix::pure(Ket::basis(2, 0));  // sigma = +1
  const std::size_t n = 100000;
  std::vector<double> samples(n);
  Rng rng(404);
  for (std::size_t i = 0; i < n; ++i)
    samples[i] = measure_continuous_reparam(up, fam, rng.uniform()).outcome;
  std::sort(samples.begin(), samples.end());
  double ks = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double f = normal_cdf(samples[i] - 1.0);
    ks = std::max(ks, std::abs(f - double(i) / n));
    ks = std::max(ks, std::abs(f - double(i + 1) / n));
  }
  CHECK(ks < 0.01);
}

TEST_CASE("gaussian readout of the equal superposition is a symmetric mixture") {
  HilbertLayout l{2, 0};
  auto fam = continuous_qubit_readout(l);
  Ket plus = Ket::from({cxd(1.0 / std::sqrt(2.0), 0.0), cxd(1.0 / std::sqrt(2.0), 0.0)});
  DensityMatrix rho = DensityMatrix::pure(plus);

  const std::size_t n = 100000;
  Rng rng(505);
  double sum = 0.0;
  std::vector<std::size_t> counts(14, 0);
  std::vector<double> edges = {-6.0, -3.5, -2.9, -2.3, -1.7, -1.1, -0.5, 0.0,
                               0.5,  1.1,  1.7,  2.3,  2.9,  3.5,  6.0};
  for (std::size_t i = 0; i < n; ++i) {
    double m = measure_continuous_reparam(rho, fam, rng.uniform()).outcome;
    sum += m;
    std::size_t b = std::size_t(std::upper_bound(edges.begin(), edges.end(), m) - edges.begin());
    if (b == 0) b = 1;
    if (b > 14) b = 14;
    counts[b - 1]++;
  }
  // E[m] = 0 within 3 standard errors; mixture variance = 2
  double se = std::sqrt(2.0 / double(n));
  CHECK(std::abs(sum / double(n)) < 3.0 * se);

  // chi-squared agreement with the two-Gaussian mixture at the 5% level
  double chi2 = 0.0;
  for (std::size_t b = 0; b < 14; ++b) {
    double p = 0.5 * (normal_cdf(edges[b + 1] - 1.0) - normal_cdf(edges[b] - 1.0)) +
               0.5 * (normal_cdf(edges[b + 1] + 1.0) - normal_cdf(edges[b] + 1.0));
    double expect = p * double(n);
    chi2 += (counts[b] - expect) * (counts[b] - expect) / expect;
  }
  CHECK(chi2 < 22.36);  // chi2_0.95 with 13 dof
}

TEST_CASE("draws beyond the covered lattice mass clamp with a warning") {
  HilbertLayout l{2, 0};
  auto fam = continuous_qubit_readout(l);
  DensityMatrix up = DensityMatrix::pure(Ket::basis(2, 0));
  warning_log().clear();
  MeasurementEvent ev = measure_continuous_reparam(up, fam, 1.0 - 1e-12);
  CHECK(ev.outcome == 6.0);
  CHECK(!warning_log().empty());
  warning_log().clear();
}

TEST_CASE("violated completeness is rejected") {
  MeasurementFamily bad;
  bad.kind = MeasurementFamily::Kind::Discrete;
  bad.outcomes = {0};
  bad.ops = {ComplexMatrix::identity(4) * cxd(0.5, 0.0)};
  DensityMatrix rho = DensityMatrix::pure(Ket::basis(4, 0));
  CHECK_THROWS_AS(measure_discrete(rho, bad, 0.3), StateError);
}

TEST_CASE("trajectory step plans") {
  HilbertLayout l{8, 0};
  qcore::StateSpec ts;
  ts.kind = qcore::StateKind::Thermal;
  ts.nbar = 1.0;
  ts.leakage_tol = 0.01;  // (1/2)^8 of the thermal tail falls outside this cutoff
  DensityMatrix rho = qcore::build_state(l, ts).dm;

  Rng rng0(9);
  TrajectoryResult empty = trajectory_step(l, rho, {}, rng0);
  CHECK((empty.rho.matrix() - rho.matrix()).max_abs() == 0.0);

  // plan [dissipation, measurement, unitary] matches the manual chain
  auto fam = gates::dispersive_povm(l, 0.7, 0.2);
  ComplexMatrix u = gates::snap(l, {0.3, 1.1, -0.4}).u;
  std::vector<StepElem> plan = {StepElem::dissipation_of({0.1, 0}), StepElem::measurement(fam),
                                StepElem::unitary(u),
                                StepElem::reward_tap([](const DensityMatrix& r) {
                                  return qcore::purity(r);
                                })};
  Rng ra(123), rb(123);
  TrajectoryResult got = trajectory_step(l, rho, plan, ra);
  DensityMatrix manual = lindblad_rk4(l, rho, {0.1, 0});
  MeasurementEvent ev = measure_discrete(manual, fam, rb.uniform());
  manual = apply_unitary(ev.post, u);
  CHECK((got.rho.matrix() - manual.matrix()).max_abs() < 1e-14);
  CHECK(got.events.size() == 1);
  CHECK(got.events[0].outcome == ev.outcome);
  CHECK(got.log_prob == ev.log_prob);
  CHECK(got.rewards.size() == 1);
  CHECK(std::abs(got.rewards[0] - qcore::purity(manual)) < 1e-12);

  // repeated projective measurement gives the same outcome with certainty
  auto parity = gates::dispersive_povm(l, kPi / 2.0, 0.0);
  std::vector<StepElem> twice = {StepElem::measurement(parity), StepElem::measurement(parity)};
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    Rng r(seed);
    TrajectoryResult res = trajectory_step(l, rho, twice, r);
    CHECK(res.events[0].outcome == res.events[1].outcome);
    CHECK(std::abs(res.events[1].probability - 1.0) < 1e-10);
  }

  // forced replay reproduces the sampled branch exactly
  Rng rs(77);
  TrajectoryResult sampled = trajectory_step(l, rho, plan, rs);
  std::vector<std::size_t> forced = {sampled.events[0].outcome_index};
  Rng runused(1);
  TrajectoryResult replay = trajectory_step(l, rho, plan, runused, &forced);
  CHECK((replay.rho.matrix() - sampled.rho.matrix()).max_abs() < 1e-14);
  CHECK(replay.log_prob == sampled.log_prob);
}
