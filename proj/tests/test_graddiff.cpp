// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <vector>

#include "fgrape/graddiff.hpp"

using namespace fgrape;
using namespace fgrape::graddiff;
using qcore::ComplexMatrix;
using qcore::HilbertLayout;

namespace {

ComplexMatrix projector(std::size_t dim, std::size_t idx) {
  ComplexMatrix p(dim, dim);
  p(idx, idx) = 1.0;
  return p;
}

// exp(-i g tau sx/2)|0> measured in the z basis, rewarded on outcome +1
Program toy_qubit() {
  Program prog;
  prog.layout = HilbertLayout{2, 0};
  prog.initial.kind = qcore::StateKind::Fock;
  prog.initial.fock_n = 0;
  prog.steps = {ProgStep::gate(gates::GateFamily::SpinRotation, 0),
                ProgStep::fixed_measure(kPi / 2.0, 0.0),
                ProgStep::reward_expect(projector(2, 0))};
  prog.theta_size = 1;
  return prog;
}

Program jc_chain5() {
  Program prog;
  prog.layout = HilbertLayout{6, 1};
  prog.initial.kind = qcore::StateKind::Fock;
  prog.initial.fock_n = 0;
  prog.steps = {ProgStep::gate(gates::GateFamily::JcDrive, 0),
                ProgStep::gate(gates::GateFamily::JcInteraction, 1),
                ProgStep::gate(gates::GateFamily::JcDrive, 2),
                ProgStep::gate(gates::GateFamily::JcInteraction, 3),
                ProgStep::gate(gates::GateFamily::JcDrive, 4),
                ProgStep::reward_expect(projector(12, 4))};  // |2, g>
  prog.theta_size = 5;
  return prog;
}

// Two measurements, intermediate and terminal rewards, a purity tap: the
// densest mix of primitives the linear program format supports.
Program mixed_program() {
  Program prog;
  prog.layout = HilbertLayout{4, 1};
  prog.initial.kind = qcore::StateKind::Fock;
  prog.initial.fock_n = 1;
  prog.steps = {ProgStep::gate(gates::GateFamily::JcDrive, 0),
                ProgStep::gate(gates::GateFamily::JcInteraction, 1),
                ProgStep::measure(2),
                ProgStep::gate(gates::GateFamily::JcDrive, 4),
                ProgStep::reward_expect(projector(8, 2)),  // |1, g>
                ProgStep::fixed_measure(0.3, 0.7),
                ProgStep::reward_purity()};
  prog.theta_size = 5;
  return prog;
}

Program dissipative_program() {
  Program prog;
  prog.layout = HilbertLayout{4, 1};
  prog.initial.kind = qcore::StateKind::Thermal;
  prog.initial.nbar = 0.5;
  prog.initial.leakage_tol = 0.1;
  prog.steps = {ProgStep::gate(gates::GateFamily::JcDrive, 0),
                ProgStep::dissipate({0.2, 0}),
                ProgStep::gate(gates::GateFamily::JcInteraction, 1),
                ProgStep::measure(2),
                ProgStep::dissipate({0.1, 0}),
                ProgStep::reward_purity()};
  prog.theta_size = 4;
  return prog;
}

Program continuous_program() {
  Program prog;
  prog.layout = HilbertLayout{2, 0};
  prog.initial.kind = qcore::StateKind::Fock;
  prog.initial.fock_n = 0;
  prog.steps = {ProgStep::gate(gates::GateFamily::SpinRotation, 0),
                ProgStep::measure_continuous(),
                ProgStep::gate(gates::GateFamily::SpinRotation, 1),
                ProgStep::reward_expect(projector(2, 0))};
  prog.theta_size = 2;
  return prog;
}

double rel_diff(double a, double b) {
  double scale = std::max(std::abs(a), std::abs(b));
  return scale > 1e-12 ? std::abs(a - b) / scale : std::abs(a - b);
}

double max_rel_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, rel_diff(a[i], b[i]));
  return worst;
}

}  // namespace

TEST_CASE("open-loop chains have no score terms and pass finite differences") {
  Program prog = jc_chain5();
  std::vector<double> theta = {0.4, 0.9, -0.6, 0.3, 1.1};
  Rng rng(5);
  Recorded rec = forward_record(prog, theta, rng);
  CHECK(rec.surrogate.score_terms.empty());
  CHECK(rec.draws.discrete.empty());

  FdReport rep = finite_diff_check(prog, theta, 1e-5, {1, 2, 3});
  CHECK(rep.max_rel_err < 1e-6);
}

TEST_CASE("single-gate excitation probability matches the closed form") {
  Program prog;
  prog.layout = HilbertLayout{2, 1};
  prog.initial.kind = qcore::StateKind::Ground;
  prog.steps = {ProgStep::gate(gates::GateFamily::JcDrive, 0),
                ProgStep::reward_expect(projector(4, 1))};  // |0, e>
  prog.theta_size = 1;
  for (double th : {0.3, 1.1, 2.5, -0.7}) {
    Rng rng(1);
    Recorded rec = forward_record(prog, {th}, rng);
    CHECK(std::abs(rec.surrogate.value - std::sin(th / 2.0) * std::sin(th / 2.0)) < 1e-12);
    std::vector<double> g = rec.surrogate.gradient(rec.tape);
    CHECK(std::abs(g[0] - 0.5 * std::sin(th)) < 1e-8);
  }
}

TEST_CASE("gradient of a preserved trace is zero") {
  Program prog;
  prog.layout = HilbertLayout{4, 1};
  prog.initial.kind = qcore::StateKind::Thermal;
  prog.initial.nbar = 0.4;
  prog.initial.leakage_tol = 0.1;
  prog.use_density = true;
  prog.steps = {ProgStep::gate(gates::GateFamily::JcDrive, 0),
                ProgStep::gate(gates::GateFamily::JcInteraction, 1),
                ProgStep::reward_expect(ComplexMatrix::identity(8))};
  prog.theta_size = 2;
  Rng rng(1);
  Recorded rec = forward_record(prog, {0.8, 1.3}, rng);
  CHECK(std::abs(rec.surrogate.value - 1.0) < 1e-10);
  std::vector<double> g = rec.surrogate.gradient(rec.tape);
  CHECK(std::abs(g[0]) < 1e-12);
  CHECK(std::abs(g[1]) < 1e-12);
}

TEST_CASE("toy qubit: enumerated estimator mean equals the analytic derivative") {
  Program prog = toy_qubit();
  double theta = 0.8;
  double mean = 0.0;
  for (std::size_t o : {std::size_t(0), std::size_t(1)}) {
    DrawPlan plan;
    plan.discrete = {o};
    Rng unused(1);
    Recorded rec = forward_record(prog, {theta}, unused, &plan);
    std::vector<double> g = rec.surrogate.gradient(rec.tape);
    mean += rec.events[0].probability * g[0];
    // pathwise part alone vanishes: the post-measurement state is a fixed
    // basis vector whichever branch is taken
    std::vector<double> gp = rec.surrogate.gradient_without_score(rec.tape);
    CHECK(std::abs(gp[0]) < 1e-14);
  }
  CHECK(std::abs(mean - (-0.5 * std::sin(theta))) < 1e-12);
}

TEST_CASE("one measurement with outcome-independent control: average gradient is the "
          "derivative of the unconditional expectation") {
  Program prog;
  prog.layout = HilbertLayout{4, 0};
  prog.initial.kind = qcore::StateKind::Coherent;
  prog.initial.alpha = cxd(0.7, 0.0);
  prog.initial.leakage_tol = 0.01;
  ComplexMatrix obs = projector(4, 0);
  obs(2, 2) = 0.5;
  prog.steps = {ProgStep::measure(0), ProgStep::reward_expect(obs)};
  prog.theta_size = 2;
  std::vector<double> theta = {0.9, 0.4};

  auto averaged_gradient = [&](const std::vector<double>& th) {
    std::vector<double> acc(2, 0.0);
    for (std::size_t o : {std::size_t(0), std::size_t(1)}) {
      DrawPlan plan;
      plan.discrete = {o};
      Rng unused(1);
      Recorded rec = forward_record(prog, th, unused, &plan);
      std::vector<double> g = rec.surrogate.gradient(rec.tape);
      for (std::size_t k = 0; k < 2; ++k) acc[k] += rec.events[0].probability * g[k];
    }
    return acc;
  };
  auto unconditional = [&](const std::vector<double>& th) {
    double e = 0.0;
    for (std::size_t o : {std::size_t(0), std::size_t(1)}) {
      DrawPlan plan;
      plan.discrete = {o};
      Rng unused(1);
      Recorded rec = forward_record(prog, th, unused, &plan);
      e += rec.events[0].probability * rec.surrogate.value;
    }
    return e;
  };

  std::vector<double> avg = averaged_gradient(theta);
  for (std::size_t k = 0; k < 2; ++k) {
    std::vector<double> tp = theta, tm = theta;
    tp[k] += 1e-6;
    tm[k] -= 1e-6;
    double fd = (unconditional(tp) - unconditional(tm)) / 2e-6;
    CHECK(std::abs(avg[k] - fd) < 1e-8);
  }
}

TEST_CASE("monte-carlo estimator is unbiased; dropping the correction is not") {
  Program prog = toy_qubit();
  double theta = 0.8;
  double target = -0.5 * std::sin(theta);
  const std::size_t n = 100000;
  double sum = 0.0, sumsq = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng = Rng::for_stream(2024, i);
    Recorded rec = forward_record(prog, {theta}, rng);
    double g = rec.surrogate.gradient(rec.tape)[0];
    sum += g;
    sumsq += g * g;
  }
  double mean = sum / n;
  double se = std::sqrt((sumsq / n - mean * mean) / n);
  CHECK(std::abs(mean - target) < 3.0 * se);
  // the uncorrected pathwise estimator is identically zero here, far outside
  // the credible band of the true derivative
  CHECK(std::abs(0.0 - target) > 10.0 * se);
}

TEST_CASE("future-return coefficients keep the mean and do not inflate variance") {
  Program prog;
  prog.layout = HilbertLayout{2, 0};
  prog.initial.kind = qcore::StateKind::Fock;
  prog.initial.fock_n = 0;
  prog.steps = {ProgStep::gate(gates::GateFamily::SpinRotation, 0),
                ProgStep::reward_expect(projector(2, 0)),  // reward before the measurement
                ProgStep::fixed_measure(kPi / 2.0, 0.0),
                ProgStep::gate(gates::GateFamily::SpinRotation, 1),
                ProgStep::reward_expect(projector(2, 0))};
  prog.theta_size = 2;
  std::vector<double> theta = {0.9, 0.5};

  // exact enumeration of both estimator variants over the two branches
  double mean_fut = 0.0, mean_full = 0.0, m2_fut = 0.0, m2_full = 0.0;
  for (std::size_t o : {std::size_t(0), std::size_t(1)}) {
    DrawPlan plan;
    plan.discrete = {o};
    Rng unused(1);
    Recorded fut = forward_record(prog, theta, unused, &plan);
    double p = fut.events[0].probability;
    double gf = fut.surrogate.gradient(fut.tape)[0];
    Rng unused2(1);
    Recorded full = forward_record(prog, theta, unused2, &plan, false);
    double gl = full.surrogate.gradient(full.tape)[0];
    mean_fut += p * gf;
    mean_full += p * gl;
    m2_fut += p * gf * gf;
    m2_full += p * gl * gl;
  }
  CHECK(std::abs(mean_fut - mean_full) < 1e-12);
  double var_fut = m2_fut - mean_fut * mean_fut;
  double var_full = m2_full - mean_full * mean_full;
  CHECK(var_fut <= var_full + 1e-12);
}

TEST_CASE("finite differences pass on measurement programs and show an h plateau") {
  Program prog = mixed_program();
  std::vector<double> theta = {0.4, 0.9, 0.6, 0.3, 1.1};
  FdReport r4 = finite_diff_check(prog, theta, 1e-4, {7, 8});
  FdReport r5 = finite_diff_check(prog, theta, 1e-5, {7, 8});
  FdReport r6 = finite_diff_check(prog, theta, 1e-6, {7, 8});
  CHECK(r5.max_rel_err < 1e-6);
  CHECK(r6.max_rel_err < 1e-6);
  // truncation shrinks with h until roundoff flattens the curve
  CHECK(r5.max_rel_err <= r4.max_rel_err + 1e-9);
  CHECK(r4.max_rel_err < 1e-4);

  FdReport again = finite_diff_check(prog, theta, 1e-5, {7, 8});
  CHECK(again.max_rel_err == r5.max_rel_err);
  CHECK(again.grad == r5.grad);
  CHECK(again.fd == r5.fd);
}

TEST_CASE("sensitivity backend: zero-measurement identity program gives zero gradient") {
  Program prog;
  prog.layout = HilbertLayout{4, 0};
  prog.initial.kind = qcore::StateKind::Fock;
  prog.initial.fock_n = 1;
  prog.steps = {ProgStep::reward_expect(projector(4, 1))};
  prog.theta_size = 3;
  std::vector<double> g = sensitivity_gradient(prog, {0.1, 0.2, 0.3}, {});
  for (double v : g) CHECK(v == 0.0);
  std::vector<double> gc = adjoint_gradient(prog, {0.1, 0.2, 0.3}, {});
  for (double v : gc) CHECK(v == 0.0);
}

TEST_CASE("sensitivity backend reproduces the open-loop gate gradient") {
  Program prog = jc_chain5();
  std::vector<double> theta = {0.4, 0.9, -0.6, 0.3, 1.1};
  Rng rng(5);
  Recorded rec = forward_record(prog, theta, rng);
  std::vector<double> tape_g = rec.surrogate.gradient(rec.tape);
  std::vector<double> adj_g = sensitivity_gradient(prog, theta, rec.draws);
  CHECK(max_rel_diff(tape_g, adj_g) < 1e-8);
  CHECK(std::abs(adj_g[0] - tape_g[0]) < 1e-10);
  // no measurements: the costate route reduces to the plain gradient-ascent
  // recursion and must land on the same numbers
  std::vector<double> cs_g = adjoint_gradient(prog, theta, rec.draws);
  CHECK(max_rel_diff(tape_g, cs_g) < 1e-8);
}

TEST_CASE("both gradient routes agree on measurement programs") {
  Program prog = mixed_program();
  std::vector<double> theta = {0.4, 0.9, 0.6, 0.3, 1.1};
  for (std::uint64_t seed = 11; seed <= 14; ++seed) {
    Rng rng(seed);
    Recorded rec = forward_record(prog, theta, rng);
    std::vector<double> tape_g = rec.surrogate.gradient(rec.tape);
    std::vector<double> adj_g = sensitivity_gradient(prog, theta, rec.draws);
    CHECK(max_rel_diff(tape_g, adj_g) < 1e-8);
    std::vector<double> cs_g = adjoint_gradient(prog, theta, rec.draws);
    CHECK(max_rel_diff(tape_g, cs_g) < 1e-8);
  }
}

TEST_CASE("costate backend honors the full-return switch") {
  Program prog = mixed_program();
  std::vector<double> theta = {0.4, 0.9, 0.6, 0.3, 1.1};
  Rng rng(7);
  Recorded rec = forward_record(prog, theta, rng, nullptr, false);
  std::vector<double> tape_g = rec.surrogate.gradient(rec.tape);
  std::vector<double> cs_g = adjoint_gradient(prog, theta, rec.draws, false);
  CHECK(max_rel_diff(tape_g, cs_g) < 1e-8);
}

TEST_CASE("both gradient routes agree under dissipation") {
  Program prog = dissipative_program();
  std::vector<double> theta = {1.2, 0.7, 0.5, 0.2};
  for (std::uint64_t seed = 3; seed <= 5; ++seed) {
    Rng rng(seed);
    Recorded rec = forward_record(prog, theta, rng);
    std::vector<double> tape_g = rec.surrogate.gradient(rec.tape);
    std::vector<double> adj_g = sensitivity_gradient(prog, theta, rec.draws);
    CHECK(max_rel_diff(tape_g, adj_g) < 1e-8);
    std::vector<double> cs_g = adjoint_gradient(prog, theta, rec.draws);
    CHECK(max_rel_diff(tape_g, cs_g) < 1e-8);
  }
  FdReport rep = finite_diff_check(prog, theta, 1e-5, {3, 4});
  CHECK(rep.max_rel_err < 1e-6);
}

TEST_CASE("both gradient routes agree on continuous-outcome programs") {
  Program prog = continuous_program();
  prog.use_density = true;
  std::vector<double> theta = {1.1, 0.6};
  for (std::uint64_t seed = 21; seed <= 23; ++seed) {
    Rng rng(seed);
    Recorded rec = forward_record(prog, theta, rng);
    CHECK(rec.surrogate.score_terms.empty());
    std::vector<double> tape_g = rec.surrogate.gradient(rec.tape);
    std::vector<double> adj_g = sensitivity_gradient(prog, theta, rec.draws);
    CHECK(max_rel_diff(tape_g, adj_g) < 1e-8);
    std::vector<double> cs_g = adjoint_gradient(prog, theta, rec.draws);
    CHECK(max_rel_diff(tape_g, cs_g) < 1e-8);
  }
  FdReport rep = finite_diff_check(prog, theta, 1e-5, {21});
  CHECK(rep.max_rel_err < 1e-6);
}

TEST_CASE("reparametrized continuous outcomes: pathwise mean matches a binned sum") {
  Program prog = continuous_program();
  std::vector<double> theta = {1.1, 0.6};

  // quadrature over the unit draw gives the estimator mean
  const std::size_t nz = 4001;
  std::vector<double> mean_g(2, 0.0);
  for (std::size_t i = 0; i < nz; ++i) {
    DrawPlan plan;
    plan.continuous_z = {(static_cast<double>(i) + 0.5) / nz};
    Rng unused(1);
    Recorded rec = forward_record(prog, theta, unused, &plan);
    std::vector<double> g = rec.surrogate.gradient(rec.tape);
    for (std::size_t k = 0; k < 2; ++k) mean_g[k] += g[k] / nz;
  }

  // independently enumerate E[R] with a finely binned outcome integral:
  // trapezoid over the readout lattice of tr(O W rho(theta) W)
  auto enumerated = [&](const std::vector<double>& th) {
    gates::GateResult g1 = gates::spin_rotation(1.0, {th[0]});
    gates::GateResult g2 = gates::spin_rotation(1.0, {th[1]});
    ComplexMatrix rho(2, 2);
    rho(0, 0) = 1.0;
    rho = g1.u * rho * g1.u.dagger();
    const std::size_t pts = 401;
    double lo = -6.0, hi = 6.0, h = (hi - lo) / (pts - 1);
    double total = 0.0;
    for (std::size_t p = 0; p < pts; ++p) {
      double m = lo + h * p;
      double w0 = std::exp(-0.25 * (m - 1.0) * (m - 1.0)) / std::pow(2.0 * kPi, 0.25);
      double w1 = std::exp(-0.25 * (m + 1.0) * (m + 1.0)) / std::pow(2.0 * kPi, 0.25);
      ComplexMatrix b(2, 2);
      b(0, 0) = w0 * w0 * rho(0, 0);
      b(0, 1) = w0 * w1 * rho(0, 1);
      b(1, 0) = w1 * w0 * rho(1, 0);
      b(1, 1) = w1 * w1 * rho(1, 1);
      ComplexMatrix after = g2.u * b * g2.u.dagger();
      double weight = (p == 0 || p == pts - 1) ? 0.5 : 1.0;
      total += weight * h * std::real(after(0, 0));
    }
    return total;
  };
  for (std::size_t k = 0; k < 2; ++k) {
    std::vector<double> tp = theta, tm = theta;
    tp[k] += 1e-6;
    tm[k] -= 1e-6;
    double fd = (enumerated(tp) - enumerated(tm)) / 2e-6;
    CHECK(std::abs(mean_g[k] - fd) < 1e-3);
  }
}

TEST_CASE("eigenvalue node: spectral adjoint passes finite differences, degeneracy guards") {
  HilbertLayout l{4, 0};
  ComplexMatrix base(4, 4);
  Rng rng(9);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) base(i, j) = cxd(rng.gauss(), rng.gauss());
  ComplexMatrix herm = base * base.dagger();
  herm *= cxd(1.0 / std::real(herm.trace()), 0.0);

  auto lambda2_of = [&](double th) {
    Tape tape;
    std::size_t leaf = tape.leaf_theta({th});
    std::size_t rho = tape.const_mat(herm);
    std::size_t ctrl = tape.slice_vec(leaf, 0, 1);
    gates::GateResult g = gates::jc_interaction(HilbertLayout{2, 1}, {th});
    std::size_t rot = tape.gate_dm(rho, ctrl, g);
    std::size_t ev = tape.eigvals(rot);
    std::size_t out = tape.vec_get(ev, 2);
    return std::pair<Tape, std::size_t>(std::move(tape), out);
  };
  auto [tape, out] = lambda2_of(0.7);
  std::vector<double> g = tape.backward({{out, 1.0}});
  auto [tp, op] = lambda2_of(0.7 + 1e-6);
  auto [tm, om] = lambda2_of(0.7 - 1e-6);
  double fd = (tp.scalar(op) - tm.scalar(om)) / 2e-6;
  CHECK(std::abs(g[0] - fd) < 1e-6);

  Tape dtape;
  dtape.leaf_theta({0.0});
  std::size_t ident = dtape.const_mat(ComplexMatrix::identity(3));
  std::size_t ev2 = dtape.eigvals(ident);
  std::size_t s = dtape.vec_get(ev2, 0);
  CHECK_THROWS_AS(dtape.backward({{s, 1.0}}), GradientError);
}

TEST_CASE("diagnostics: construction and backward failures carry names") {
  Program bad;
  bad.layout = HilbertLayout{4, 1};
  bad.initial.kind = qcore::StateKind::Ground;
  ProgStep st = ProgStep::gate(gates::GateFamily::DispersiveMeas, 0);
  bad.steps = {st};
  bad.theta_size = 2;
  Rng rng(1);
  CHECK_THROWS_AS(forward_record(bad, {0.1, 0.2}, rng), ConfigError);

  Program prog = toy_qubit();
  Rng rng2(1);
  Recorded rec = forward_record(prog, {0.8}, rng2);
  double nan = std::nan("");
  try {
    rec.tape.backward({{rec.surrogate.reward_nodes[0], nan}});
    CHECK(false);
  } catch (const GradientError& e) {
    CHECK(std::string(e.what()).find("expect") != std::string::npos);
  }
}

TEST_CASE("network-style primitives differentiate correctly") {
  // a tiny two-layer rectifier network driven off the state vector, checked
  // against finite differences end to end
  std::vector<double> theta = {0.4,  -0.3, 0.2, 0.7,  -0.5, 0.1, 0.6, -0.2,
                               0.05, -0.4, 0.3, 0.15, 0.25, -0.1};
  auto build = [&](const std::vector<double>& th) {
    Tape tape;
    std::size_t leaf = tape.leaf_theta(th);
    ComplexMatrix psi(2, 1);
    psi(0, 0) = cxd(0.6, 0.0);
    psi(1, 0) = cxd(0.0, 0.8);
    std::size_t state = tape.const_mat(psi);
    std::size_t x = tape.mat_to_vec(state);           // length 4
    std::size_t w1 = tape.slice_vec(leaf, 0, 8);      // 2 x 4
    std::size_t b1 = tape.slice_vec(leaf, 8, 2);
    std::size_t h1 = tape.vrelu(tape.vadd(tape.matvec(w1, x, 2, 4), b1));
    std::size_t w2 = tape.slice_vec(leaf, 10, 2);     // 1 x 2
    std::size_t b2 = tape.slice_vec(leaf, 12, 1);
    std::size_t gate_in = tape.vadd(tape.matvec(w2, h1, 1, 2), b2);
    std::size_t act = tape.vtanh(tape.vsigmoid(gate_in));
    std::size_t mixed = tape.vmul(act, tape.vone_minus(act));
    std::size_t dropped = tape.vmul_const(mixed, {1.25});
    std::size_t out = tape.vec_get(dropped, 0);
    return std::pair<Tape, std::size_t>(std::move(tape), out);
  };
  auto [tape, out] = build(theta);
  std::vector<double> g = tape.backward({{out, 1.0}});
  for (std::size_t k = 0; k < theta.size(); ++k) {
    std::vector<double> tpv = theta, tmv = theta;
    tpv[k] += 1e-6;
    tmv[k] -= 1e-6;
    auto [tp, op] = build(tpv);
    auto [tm, om] = build(tmv);
    double fd = (tp.scalar(op) - tm.scalar(om)) / 2e-6;
    CHECK(std::abs(g[k] - fd) < 1e-8);
  }
  // the unused 13th entry, if any, stays zero
  CHECK(g.size() == theta.size());
}
