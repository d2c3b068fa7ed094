// SPDX-License-Identifier: Apache-2.0
#include "fgrape/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <sstream>
#include <utility>

#include "fgrape/training.hpp"

namespace fgrape::tasks {
namespace {

using controllers::Controller;
using controllers::ControllerKind;
using controllers::ControllerSpec;
using controllers::ParameterVector;
using qcore::ComplexMatrix;
using qcore::HilbertLayout;
using qcore::Ket;
using qcore::StateKind;
using qcore::StateSpec;

// Text-valued overrides with typed accessors. Keys are consumed as they are
// read; anything left over at finish() is a typo and fails loudly.
class OverrideReader {
 public:
  OverrideReader(std::string task, std::map<std::string, std::string> kv)
      : task_(std::move(task)), kv_(std::move(kv)) {}

  double num(const std::string& key, double fallback) {
    auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    const std::string text = it->second;
    kv_.erase(it);
    char* end = nullptr;
    double v = std::strtod(text.c_str(), &end);
    if (end == text.c_str() || *end != '\0')
      throw ConfigError(task_ + ": override " + key + "=" + text + " is not a number");
    return v;
  }

  std::size_t count(const std::string& key, std::size_t fallback) {
    double v = num(key, static_cast<double>(fallback));
    if (v < 0.0 || v != std::floor(v))
      throw ConfigError(task_ + ": override " + key + " must be a whole count");
    return static_cast<std::size_t>(v);
  }

  bool flag(const std::string& key, bool fallback) {
    auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    const std::string text = it->second;
    kv_.erase(it);
    if (text == "1" || text == "true" || text == "on") return true;
    if (text == "0" || text == "false" || text == "off") return false;
    throw ConfigError(task_ + ": override " + key + "=" + text + " is not a boolean");
  }

  std::string text(const std::string& key, std::string fallback) {
    auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    std::string v = it->second;
    kv_.erase(it);
    return v;
  }

  void finish() const {
    if (kv_.empty()) return;
    std::ostringstream os;
    os << task_ << ": unknown override key";
    if (kv_.size() > 1) os << 's';
    for (const auto& [k, v] : kv_) os << " '" << k << "'";
    throw ConfigError(os.str());
  }

 private:
  std::string task_;
  std::map<std::string, std::string> kv_;
};

Ket embed_cavity_ket(const HilbertLayout& l, const Ket& cav) {
  if (cav.dim() != l.fock_cutoff)
    throw DimensionError("task target: cavity amplitude count does not match the cutoff");
  Ket full(l.dim());
  for (std::size_t n = 0; n < l.fock_cutoff; ++n) full[l.index(n, 0)] = cav[n];
  return full;
}

double parse_number(const std::string& text, const std::string& what) {
  char* end = nullptr;
  double v = std::strtod(text.c_str(), &end);
  if (end == text.c_str() || *end != '\0')
    throw ConfigError(what + ": '" + text + "' is not a number");
  return v;
}

// Target grammar: "fock:<n>", "sup:<n,n,...>" (equal weights), "kitten2:<a>"
// and "kitten4:<a>". Returned as cavity amplitudes at the given cutoff.
Ket cavity_target(const std::string& text, std::size_t cutoff, const std::string& task) {
  const std::string what = task + ": target";
  const auto pos = text.find(':');
  const std::string kind = text.substr(0, pos);
  const std::string arg = pos == std::string::npos ? std::string() : text.substr(pos + 1);
  if (kind == "fock") {
    const double n = parse_number(arg, what);
    if (n < 0.0 || n != std::floor(n) || n >= static_cast<double>(cutoff))
      throw ConfigError(what + ": Fock level out of range for cutoff");
    return Ket::basis(cutoff, static_cast<std::size_t>(n));
  }
  if (kind == "sup") {
    Ket k(cutoff);
    std::stringstream ss(arg);
    std::string item;
    bool any = false;
    while (std::getline(ss, item, ',')) {
      const double n = parse_number(item, what);
      if (n < 0.0 || n != std::floor(n) || n >= static_cast<double>(cutoff))
        throw ConfigError(what + ": Fock level out of range for cutoff");
      k[static_cast<std::size_t>(n)] += 1.0;
      any = true;
    }
    if (!any) throw ConfigError(what + ": empty superposition");
    k.normalize();
    return k;
  }
  if (kind == "kitten2" || kind == "kitten4") {
    StateSpec s;
    s.kind = kind == "kitten2" ? StateKind::Kitten2 : StateKind::Kitten4;
    s.alpha = parse_number(arg, what);
    qcore::StateBuild b = qcore::build_state(HilbertLayout{cutoff, 0}, s);
    return b.ket;
  }
  throw ConfigError(what + ": unknown form '" + text + "'");
}

// ---------------------------------------------------------------------------
// Catalog builders. Each also fills controller depth/arity so the kind can be
// switched by override without re-deriving the outcome-tree shape.

TaskSpec make_open_loop_jc_prep(OverrideReader& ov) {
  TaskSpec t;
  t.name = "open_loop_jc_prep";
  const std::size_t cutoff = ov.count("cutoff", 20);
  const std::size_t N = ov.count("horizon", 2);
  const std::string target = ov.text("target", "fock:2");
  t.layout = HilbertLayout{cutoff, 1};
  t.initial.kind = StateKind::Ground;
  t.horizon = N;
  t.reward = RewardMode::FinalFidelity;
  t.plan.push_back(PlanElem::control_eval());
  for (std::size_t j = 0; j < N; ++j) {
    t.plan.push_back(PlanElem::gate(gates::GateFamily::JcDrive, 2 * j));
    t.plan.push_back(PlanElem::gate(gates::GateFamily::JcInteraction, 2 * j + 1));
  }
  Ket tgt = embed_cavity_ket(t.layout, cavity_target(target, cutoff, t.name));
  t.plan.push_back(PlanElem::reward_expect(tgt.outer()));
  t.controller.kind = ControllerKind::Table;
  t.controller.out_arity = 2 * N;
  t.controller.depth = 0;
  t.controller.arity = 2;
  t.enumeration = true;  // measurement-free: a single deterministic branch
  t.batch_size = 1;
  return t;
}

TaskSpec make_purification(OverrideReader& ov) {
  TaskSpec t;
  t.name = "purification";
  const std::size_t cutoff = ov.count("cutoff", 40);
  const std::size_t J = ov.count("measurements", 4);
  if (J == 0) throw ConfigError("purification: need at least one measurement");
  t.layout = HilbertLayout{cutoff, 0};
  t.initial.kind = StateKind::Thermal;
  t.initial.nbar = ov.num("nbar", 2.0);
  t.use_density = true;
  t.horizon = J;
  t.reward = RewardMode::FinalPurity;
  for (std::size_t j = 0; j < J; ++j) {
    t.plan.push_back(PlanElem::control_eval());
    t.plan.push_back(PlanElem::measure(0));
  }
  t.plan.push_back(PlanElem::reward_purity());
  t.controller.kind = ControllerKind::Table;
  t.controller.out_arity = 2;
  t.controller.depth = J - 1;
  t.controller.arity = 2;
  t.enumeration = true;
  t.batch_size = 16;
  return t;
}

TaskSpec make_feedback_prep_thermal(OverrideReader& ov) {
  TaskSpec t;
  t.name = "feedback_prep_thermal";
  const std::size_t cutoff = ov.count("cutoff", 20);
  const std::size_t N = ov.count("horizon", 4);
  const std::string target = ov.text("target", "sup:1,2,3");
  t.layout = HilbertLayout{cutoff, 1};
  t.initial.kind = StateKind::Thermal;
  t.initial.nbar = ov.num("nbar", 1.0);
  t.use_density = true;
  t.horizon = N;
  t.reward = RewardMode::FinalFidelity;
  // Adaptive measurement, then the two-gate feedback unitary. The emission
  // preceding a measurement carries its phases; the emission that has seen
  // the fresh outcome drives the gates of the same step.
  t.plan.push_back(PlanElem::control_eval());
  for (std::size_t j = 0; j < N; ++j) {
    t.plan.push_back(PlanElem::measure(0));
    t.plan.push_back(PlanElem::control_eval());
    t.plan.push_back(PlanElem::gate(gates::GateFamily::JcDrive, 2));
    t.plan.push_back(PlanElem::gate(gates::GateFamily::JcInteraction, 3));
  }
  Ket tgt = embed_cavity_ket(t.layout, cavity_target(target, cutoff, t.name));
  t.plan.push_back(PlanElem::reward_expect(tgt.outer()));
  t.controller.kind = ControllerKind::Table;
  t.controller.out_arity = 4;
  t.controller.depth = N;
  t.controller.arity = 2;
  t.enumeration = false;
  t.batch_size = 10;
  return t;
}

TaskSpec make_stabilize_jc(OverrideReader& ov) {
  TaskSpec t;
  t.name = "stabilize_jc";
  const std::size_t cutoff = ov.count("cutoff", 10);
  const std::size_t N = ov.count("horizon", 4);
  const std::size_t substeps = ov.count("substeps", 1);
  if (substeps == 0) throw ConfigError("stabilize_jc: need at least one control substep");
  const double ktm = ov.num("kappa_tm", 0.05);
  const double ktc = ov.num("kappa_tc", 0.0);
  const std::string target = ov.text("target", "fock:1");
  t.layout = HilbertLayout{cutoff, 1};
  Ket tgt = embed_cavity_ket(t.layout, cavity_target(target, cutoff, t.name));
  t.initial.kind = StateKind::Fock;
  if (target.rfind("fock:", 0) != 0)
    throw ConfigError("stabilize_jc: stabilization starts in the target, which must be a Fock state");
  t.initial.fock_n = static_cast<int>(parse_number(target.substr(5), t.name));
  t.use_density = true;
  t.horizon = N;
  t.reward = RewardMode::FinalFidelity;
  t.plan.push_back(PlanElem::control_eval());
  for (std::size_t j = 0; j < N; ++j) {
    t.plan.push_back(PlanElem::dissipate(channels::DissipationSpec{ktm, 0}));
    t.plan.push_back(PlanElem::measure(0));
    t.plan.push_back(PlanElem::control_eval());
    for (std::size_t s = 0; s < substeps; ++s) {
      if (ktc > 0.0) t.plan.push_back(PlanElem::dissipate(channels::DissipationSpec{ktc, 0}));
      t.plan.push_back(PlanElem::gate(gates::GateFamily::JcDrive, 2 + 2 * s));
      t.plan.push_back(PlanElem::gate(gates::GateFamily::JcInteraction, 3 + 2 * s));
    }
  }
  t.plan.push_back(PlanElem::reward_expect(tgt.outer()));
  t.controller.kind = ControllerKind::Table;
  t.controller.out_arity = 2 + 2 * substeps;
  t.controller.depth = N;
  t.controller.arity = 2;
  t.enumeration = true;
  t.batch_size = 16;
  return t;
}

TaskSpec make_stabilize_snap(OverrideReader& ov) {
  TaskSpec t;
  t.name = "stabilize_snap";
  const std::size_t cutoff = ov.count("cutoff", 30);
  const std::size_t N = ov.count("horizon", 2);
  if (N == 0) throw ConfigError("stabilize_snap: need at least one step");
  const std::size_t n_snap = ov.count("n_snap", 15);
  const double ktm = ov.num("kappa_tm", 0.01);
  const double ktc = ov.num("kappa_tc", 0.0);
  const double alpha = ov.num("alpha", 2.0);
  std::ostringstream def;
  def << "kitten2:" << alpha;
  const std::string target = ov.text("target", def.str());
  t.layout = HilbertLayout{cutoff, 0};
  Ket tgt = cavity_target(target, cutoff, t.name);
  // stabilization starts in the target state
  if (target.rfind("kitten2:", 0) == 0) {
    t.initial.kind = StateKind::Kitten2;
    t.initial.alpha = parse_number(target.substr(8), t.name);
  } else if (target.rfind("kitten4:", 0) == 0) {
    t.initial.kind = StateKind::Kitten4;
    t.initial.alpha = parse_number(target.substr(8), t.name);
  } else {
    throw ConfigError("stabilize_snap: target must be a kitten state");
  }
  t.use_density = true;
  t.horizon = N;
  t.reward = RewardMode::MeanFidelity;
  gates::FamilyConfig fc;
  fc.n_snap = n_snap;
  const ComplexMatrix proj = tgt.outer();
  for (std::size_t j = 0; j < N; ++j) {
    t.plan.push_back(PlanElem::dissipate(channels::DissipationSpec{ktm, 0}));
    t.plan.push_back(PlanElem::fixed_measure(0.5 * kPi, 0.0));  // photon parity
    if (ktc > 0.0) t.plan.push_back(PlanElem::dissipate(channels::DissipationSpec{ktc, 0}));
    t.plan.push_back(PlanElem::control_eval());
    t.plan.push_back(PlanElem::gate(gates::GateFamily::SnapBlock, 0, fc));
    t.plan.push_back(PlanElem::reward_expect(proj, 1.0 / static_cast<double>(N)));
  }
  t.controller.kind = ControllerKind::Recurrent;
  t.controller.out_arity = 2 + n_snap;
  t.controller.depth = N;
  t.controller.arity = 2;
  t.controller.input_dim = 1;
  t.controller.hidden = {30, 30, 30};
  t.controller.last_bias = 0.1;
  t.enumeration = false;
  t.batch_size = 16;
  return t;
}

TaskSpec make_gkp_prep(OverrideReader& ov) {
  TaskSpec t;
  t.name = "gkp_prep";
  const std::size_t cutoff = ov.count("cutoff", 40);
  const std::size_t N = ov.count("horizon", 4);
  const std::size_t n_snap = ov.count("n_snap", 10);
  const double delta = ov.num("delta", 0.5);
  t.layout = HilbertLayout{cutoff, 0};
  t.initial.kind = StateKind::Ground;
  t.initial.delta = delta;
  t.horizon = N;
  t.reward = RewardMode::FinalStabilizer;
  gates::FamilyConfig fc;
  fc.n_snap = n_snap;
  for (std::size_t j = 0; j < N; ++j) {
    t.plan.push_back(PlanElem::control_eval());
    t.plan.push_back(PlanElem::gate(gates::GateFamily::SnapBlock, 0, fc));
  }
  // Hermitian-symmetrized stabilizer pair; expectation 1 exactly on the code
  // manifold, so the final reward doubles as the preparation score.
  ComplexMatrix sx = qcore::gkp_stabilizer_x(cutoff, delta);
  ComplexMatrix sp = qcore::gkp_stabilizer_p(cutoff, delta);
  ComplexMatrix obs = (sx + sx.dagger() + sp + sp.dagger()) * cxd(0.25, 0.0);
  t.plan.push_back(PlanElem::reward_expect(std::move(obs)));
  t.controller.kind = ControllerKind::Recurrent;
  t.controller.out_arity = 2 + n_snap;
  t.controller.depth = 0;
  t.controller.arity = 2;
  t.controller.input_dim = 1;
  t.controller.hidden = {30, 30, 30};
  t.controller.last_bias = 0.1;
  t.controller.time_index_input = true;
  t.enumeration = true;  // measurement-free
  t.batch_size = 1;
  return t;
}

TaskSpec make_spin_uncertain(OverrideReader& ov) {
  TaskSpec t;
  t.name = "spin_uncertain";
  const std::size_t N = ov.count("horizon", 2);
  if (N == 0) throw ConfigError("spin_uncertain: need at least one pulse");
  const double gbar = ov.num("gbar", 1.0);
  const double sigma = ov.num("sigma", 0.2);
  const std::size_t quad = ov.count("quad_nodes", 41);
  t.layout = HilbertLayout{2, 0};
  t.initial.kind = StateKind::Ground;
  t.horizon = N;
  t.reward = RewardMode::FinalFidelity;
  for (std::size_t j = 0; j < N; ++j) {
    t.plan.push_back(PlanElem::control_eval());
    t.plan.push_back(PlanElem::spin_gate(0));
    t.plan.push_back(PlanElem::fixed_measure(0.5 * kPi, 0.0));  // projective z readout
  }
  ComplexMatrix excited(2, 2);
  excited(1, 1) = 1.0;
  t.plan.push_back(PlanElem::reward_expect(std::move(excited)));
  t.model_g = gbar;
  UncertaintySpec u;
  u.constant = "g";
  u.mean = gbar;
  u.std = sigma;
  u.quad_nodes = quad;
  t.uncertainty = u;
  t.controller.kind = ControllerKind::Table;
  t.controller.out_arity = 1;
  t.controller.depth = N - 1;
  t.controller.arity = 2;
  t.enumeration = true;
  t.batch_size = 10000;
  return t;
}

// Controller overrides shared by every task. Switching the kind keeps the
// task's outcome-tree shape (depth/arity) and emission width.
void apply_common_overrides(TaskSpec& t, OverrideReader& ov) {
  t.batch_size = ov.count("batch", t.batch_size);
  t.enumeration = ov.flag("enumeration", t.enumeration);
  t.controller.memoryless = ov.flag("memoryless", t.controller.memoryless);
  t.controller.last_bias = ov.num("last_bias", t.controller.last_bias);
  const std::string hidden = ov.text("hidden", "");
  if (!hidden.empty()) {
    std::vector<std::size_t> widths;
    std::stringstream ss(hidden);
    std::string item;
    while (std::getline(ss, item, ',')) {
      const double w = parse_number(item, t.name + ": hidden");
      if (w < 1.0 || w != std::floor(w))
        throw ConfigError(t.name + ": hidden widths must be positive counts");
      widths.push_back(static_cast<std::size_t>(w));
    }
    t.controller.hidden = std::move(widths);
  }
  const std::string kind = ov.text("controller", "");
  if (kind.empty()) return;
  const bool open_loop = std::none_of(t.plan.begin(), t.plan.end(), [](const PlanElem& e) {
    return e.kind == PlanElem::Kind::Measure || e.kind == PlanElem::Kind::MeasureContinuous;
  });
  if (kind == "table") {
    t.controller.kind = ControllerKind::Table;
  } else if (kind == "dense") {
    t.controller.kind = ControllerKind::Dense;
    // the executor feeds the split real/imag state: a ket for pure closed
    // plans, the full density matrix otherwise
    const bool density =
        t.use_density ||
        (t.initial.kind == StateKind::Thermal && t.initial.nbar > 0.0) ||
        std::any_of(t.plan.begin(), t.plan.end(), [](const PlanElem& e) {
          return e.kind == PlanElem::Kind::Dissipate ||
                 (e.kind == PlanElem::Kind::RewardTap && e.purity);
        });
    const std::size_t d = t.layout.dim();
    t.controller.input_dim = density ? 2 * d * d : 2 * d;
  } else if (kind == "recurrent") {
    t.controller.kind = ControllerKind::Recurrent;
    t.controller.input_dim = 1;
    t.controller.time_index_input = open_loop;
  } else {
    throw ConfigError(t.name + ": unknown controller kind '" + kind + "'");
  }
}

}  // namespace

std::size_t TaskSpec::control_width() const {
  std::size_t width = 0;
  for (const PlanElem& e : plan) {
    if (e.fixed) continue;
    std::size_t arity = 0;
    if (e.kind == PlanElem::Kind::Gate)
      arity = gates::family_arity(e.family, e.fc);
    else if (e.kind == PlanElem::Kind::Measure)
      arity = 2;
    else
      continue;
    width = std::max(width, e.ctrl_offset + arity);
  }
  return width;
}

TaskSpec build_task(const std::string& name, const std::map<std::string, std::string>& overrides) {
  OverrideReader ov(name, overrides);
  TaskSpec t;
  if (name == "open_loop_jc_prep")
    t = make_open_loop_jc_prep(ov);
  else if (name == "purification")
    t = make_purification(ov);
  else if (name == "feedback_prep_thermal")
    t = make_feedback_prep_thermal(ov);
  else if (name == "stabilize_jc")
    t = make_stabilize_jc(ov);
  else if (name == "stabilize_snap")
    t = make_stabilize_snap(ov);
  else if (name == "gkp_prep")
    t = make_gkp_prep(ov);
  else if (name == "spin_uncertain")
    t = make_spin_uncertain(ov);
  else
    throw ConfigError("build_task: unknown task '" + name + "'");
  apply_common_overrides(t, ov);
  ov.finish();
  return t;
}

std::vector<std::string> task_names() {
  return {"open_loop_jc_prep", "purification", "feedback_prep_thermal", "stabilize_jc",
          "stabilize_snap",    "gkp_prep",     "spin_uncertain"};
}

std::pair<std::vector<double>, std::vector<double>> gauss_quadrature(std::size_t n, double mean,
                                                                     double std) {
  if (n == 0) throw ConfigError("gauss_quadrature: need at least one node");
  if (std < 0.0) throw ConfigError("gauss_quadrature: negative spread");
  // Golub-Welsch on the Hermite Jacobi matrix: nodes are its eigenvalues,
  // weights the squared first components of the eigenvectors.
  qcore::ComplexMatrix jac(n, n);
  for (std::size_t i = 0; i + 1 < n; ++i) {
    double off = std::sqrt(static_cast<double>(i + 1) / 2.0);
    jac(i, i + 1) = off;
    jac(i + 1, i) = off;
  }
  qcore::EigHerm eig = qcore::eig_hermitian(jac);
  std::vector<double> nodes(n), weights(n);
  double wsum = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    nodes[k] = mean + std * std::sqrt(2.0) * eig.values[k];
    weights[k] = std::norm(eig.vectors(0, k));
    wsum += weights[k];
  }
  // the squared components already sum to one; renormalize against roundoff
  for (double& w : weights) w /= wsum;
  return {std::move(nodes), std::move(weights)};
}

std::vector<std::pair<double, double>> law_eberly_solve(const qcore::Ket& target) {
  const std::size_t dim = target.dim();
  if (dim == 0) throw StateError("law-eberly: empty target");
  if (std::abs(target.norm() - 1.0) > 1e-8)
    throw StateError("law-eberly: target must be normalized");
  for (std::size_t n = 0; n < dim; ++n)
    if (std::abs(std::imag(target[n])) > 1e-10)
      throw StateError("law-eberly: this realization handles real cavity amplitudes only");

  // In the resonant ladder from vacuum with real controls, amplitudes on
  // |n,g> stay real (x) and on |n,e> purely imaginary (i y). Both gate
  // families act as plane rotations on (x, y) pairs: the drive turns every
  // (x_n, y_n) by alpha/2, the interaction every (x_n, y_{n-1}) by
  // beta sqrt(n)/2. Running backward from the target, each step's angles
  // follow from zeroing the top g then the top e amplitude.
  std::vector<double> x(dim), y(dim, 0.0);
  for (std::size_t n = 0; n < dim; ++n) x[n] = std::real(target[n]);

  std::size_t top = 0;
  for (std::size_t n = dim; n-- > 0;)
    if (std::abs(x[n]) > 1e-12) {
      top = n;
      break;
    }
  std::vector<std::pair<double, double>> seq(top);

  auto rot = [](double& a, double& b, double angle) {
    const double c = std::cos(angle), s = std::sin(angle);
    const double na = c * a + s * b, nb = -s * a + c * b;
    a = na;
    b = nb;
  };

  for (std::size_t j = top; j >= 1; --j) {
    // interaction: zero the g amplitude at Fock j
    double t = 0.0;
    if (x[j] != 0.0 || y[j - 1] != 0.0) t = std::atan2(x[j], y[j - 1]);
    const double beta = 2.0 * t / std::sqrt(static_cast<double>(j));
    for (std::size_t n = 1; n < dim; ++n)
      rot(x[n], y[n - 1], -0.5 * beta * std::sqrt(static_cast<double>(n)));
    // drive: zero the e amplitude at Fock j-1
    double s = 0.0;
    if (x[j - 1] != 0.0 || y[j - 1] != 0.0) s = std::atan2(-y[j - 1], x[j - 1]);
    for (std::size_t n = 0; n < dim; ++n) rot(x[n], y[n], -s);
    seq[j - 1] = {2.0 * s, beta};
  }

  double residue = y[0] * y[0];
  for (std::size_t n = 1; n < dim; ++n) residue += x[n] * x[n] + y[n] * y[n];
  if (std::abs(std::abs(x[0]) - 1.0) > 1e-8 || residue > 1e-16)
    throw NumericalError("law-eberly: backward recursion failed to reach the vacuum");
  // x[0] = -1 leaves a global sign; the prepared state matches up to phase.
  return seq;
}

controllers::ParameterVector analytic_purification_strategy(std::size_t J,
                                                            const controllers::Controller& table) {
  if (J == 0) throw ConfigError("purification strategy: need at least one measurement");
  const ControllerSpec& cs = table.spec();
  if (cs.kind != ControllerKind::Table || cs.memoryless || cs.arity != 2)
    throw ConfigError("purification strategy: needs a plain binary lookup table");
  if (cs.out_arity < 2 || cs.depth + 1 < J)
    throw ConfigError("purification strategy: table too small for the measurement count");

  ParameterVector theta = controllers::controller_init(cs, 0).second;
  std::fill(theta.values.begin(), theta.values.end(), 0.0);

  // Measurement j+1 at a node of level j: the phase gamma halves each level,
  // and delta re-centers the known residue class n_j (bits d_i of the history,
  // least significant first) so the next outcome reads one more binary digit
  // of the photon number.
  for (std::size_t level = 0; level < J; ++level) {
    const std::size_t combos = std::size_t(1) << level;
    for (std::size_t code = 0; code < combos; ++code) {
      std::vector<std::size_t> hist(level);
      std::size_t residue = 0;
      for (std::size_t i = 0; i < level; ++i) {
        hist[i] = (code >> i) & 1u;
        residue += hist[i] << i;
      }
      const double denom = static_cast<double>(std::size_t(1) << (level + 1));
      const std::size_t node = table.table_index(hist);
      theta.values[node * cs.out_arity + 0] = kPi / denom;
      theta.values[node * cs.out_arity + 1] = -2.0 * kPi * static_cast<double>(residue) / denom;
    }
  }
  return theta;
}

double spin_fidelity_closed_form(const std::vector<double>& tau, double g,
                                 const std::optional<UncertaintySpec>& unc,
                                 std::size_t quad_nodes) {
  auto point = [&tau](double gv) {
    double p = 1.0;
    for (double t : tau) {
      const double c = std::cos(0.5 * gv * t);
      p *= c * c;
    }
    return 1.0 - p;
  };
  if (!unc || unc->std <= 0.0) return point(g);
  const auto [nodes, weights] = gauss_quadrature(quad_nodes == 0 ? 41 : quad_nodes, unc->mean,
                                                 unc->std);
  double acc = 0.0;
  for (std::size_t k = 0; k < nodes.size(); ++k) acc += weights[k] * point(nodes[k]);
  return acc;
}

controllers::ParameterVector spin_smart_init(const controllers::Controller& table,
                                             std::uint64_t seed) {
  const ControllerSpec& cs = table.spec();
  if (cs.kind != ControllerKind::Table || cs.memoryless || cs.out_arity != 1)
    throw ConfigError("spin_smart_init: needs a plain one-output lookup table");
  ParameterVector theta = controllers::controller_init(cs, 0).second;
  std::fill(theta.values.begin(), theta.values.end(), 0.0);
  Rng rng(seed);
  // pi-pulse durations with jitter along the all-(+1) branch, zero elsewhere
  for (std::size_t level = 0; level <= cs.depth; ++level) {
    const std::vector<std::size_t> hist(level, 0);
    theta.values[table.table_index(hist)] = kPi + rng.uniform();
  }
  return theta;
}

controllers::ParameterVector spin_random_init(const controllers::Controller& table,
                                              std::uint64_t seed) {
  const ControllerSpec& cs = table.spec();
  if (cs.kind != ControllerKind::Table)
    throw ConfigError("spin_random_init: needs a lookup table");
  ParameterVector theta = controllers::controller_init(cs, 0).second;
  Rng rng(seed);
  for (double& v : theta.values) v = rng.uniform(-2.0 * kPi, 2.0 * kPi);
  return theta;
}

std::pair<double, std::vector<double>> exact_enumeration_return(
    const TaskSpec& task, const controllers::Controller& ctl, const std::vector<double>& theta) {
  std::vector<training::Sampled> branches = training::enumerate_branches(task, ctl, theta);
  // The branch weights are the exact outcome probabilities, so the weighted
  // average of the per-branch surrogate gradients telescopes into the true
  // derivative of the expected return: within each sibling group the
  // probability-weighted score terms sum to d(sum P) of rewards already
  // banked, which the full outcome sum turns into the product-rule terms.
  training::GradientEstimate est = training::estimate_gradient(branches, nullptr);
  return {est.mean_return, std::move(est.grad)};
}

double gkp_stabilizer_mean(const qcore::HilbertLayout& l, const qcore::ComplexMatrix& rho,
                           double delta) {
  if (l.qubit_slots != 0)
    throw LayoutError("gkp stabilizer: cavity-only layouts");
  if (rho.rows() != l.dim() || rho.cols() != l.dim())
    throw DimensionError("gkp stabilizer: state dimension does not match the layout");
  ComplexMatrix sx = qcore::gkp_stabilizer_x(l.dim(), delta);
  ComplexMatrix sp = qcore::gkp_stabilizer_p(l.dim(), delta);
  ComplexMatrix obs = (sx + sx.dagger() + sp + sp.dagger()) * cxd(0.25, 0.0);
  return std::real(qcore::trace_prod(rho, obs));
}

}  // namespace fgrape::tasks
