// SPDX-License-Identifier: Apache-2.0
#include "fgrape/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace fgrape::training {

using graddiff::DrawPlan;
using graddiff::kNoNode;
using graddiff::Tape;
using nlohmann::json;
using qcore::ComplexMatrix;

namespace {

double diag_weight(const ComplexMatrix& v, std::size_t i) {
  return v.cols() == 1 ? std::norm(v(i, 0)) : std::real(v(i, i));
}

}  // namespace

Sampled run_trajectory(const tasks::TaskSpec& task, const controllers::Controller& ctl,
                       const std::vector<double>& theta, Rng& rng, const ExecOptions& opt) {
  task.layout.validate();
  if (theta.size() != ctl.param_count())
    throw DimensionError("run_trajectory: parameter count does not match the controller");
  const std::size_t width = task.control_width();
  if (width > ctl.spec().out_arity)
    throw ConfigError("run_trajectory: plan consumes more control components than the "
                      "controller emits");
  const double g = std::isnan(opt.g) ? task.model_g : opt.g;
  const std::size_t D = task.layout.dim();

  qcore::StateBuild init = qcore::build_state(task.layout, task.initial);
  bool needs_dm = task.use_density || !init.pure;
  for (const tasks::PlanElem& e : task.plan)
    if (e.kind == tasks::PlanElem::Kind::Dissipate ||
        (e.kind == tasks::PlanElem::Kind::RewardTap && e.purity))
      needs_dm = true;
  const bool is_ket = !needs_dm;

  Sampled out;
  out.traj.model_g = g;
  Tape& tape = out.tape;
  const std::size_t th = tape.leaf_theta(theta);
  std::size_t state;
  if (is_ket) {
    ComplexMatrix psi(D, 1);
    for (std::size_t i = 0; i < D; ++i) psi(i, 0) = init.ket[i];
    state = tape.const_mat(std::move(psi));
  } else {
    state = tape.const_mat(init.pure ? qcore::DensityMatrix::pure(init.ket).matrix()
                                     : init.dm.matrix());
  }

  controllers::EvalState cst = ctl.start_trajectory(&rng, opt.training);
  const bool is_table = ctl.spec().kind == controllers::ControllerKind::Table;
  std::size_t cur = kNoNode;
  double last_outcome = 0.0;
  std::size_t meas_count = 0, replay_d = 0, replay_c = 0;

  auto controls_slice = [&](const tasks::PlanElem& e, std::size_t arity) {
    if (cur == kNoNode)
      throw ConfigError("run_trajectory: plan consumes controls before any emission");
    return tape.slice_vec(cur, e.ctrl_offset, arity);
  };

  for (const tasks::PlanElem& e : task.plan) {
    switch (e.kind) {
      case tasks::PlanElem::Kind::ControlEval: {
        std::size_t input = kNoNode;
        if (ctl.spec().kind == controllers::ControllerKind::Dense)
          input = tape.mat_to_vec(state);
        cur = ctl.eval(tape, th, cst, input, last_outcome);
        out.traj.controls.push_back(tape.rvec(cur));
        break;
      }
      case tasks::PlanElem::Kind::Gate: {
        std::size_t ctrl;
        std::vector<double> vals;
        if (e.fixed) {
          ctrl = tape.const_vec(e.fixed_vals);
          vals = e.fixed_vals;
        } else {
          ctrl = controls_slice(e, gates::family_arity(e.family, e.fc));
          vals = tape.rvec(ctrl);
        }
        gates::GateResult gr =
            graddiff::build_family_gate(task.layout, e.family, e.fc, e.slot, g, vals);
        state = is_ket ? tape.gate_ket(state, ctrl, gr) : tape.gate_dm(state, ctrl, gr);
        break;
      }
      case tasks::PlanElem::Kind::Measure: {
        std::size_t ctrl;
        std::vector<double> vals;
        if (e.fixed) {
          ctrl = tape.const_vec(e.fixed_vals);
          vals = e.fixed_vals;
        } else {
          ctrl = controls_slice(e, 2);
          vals = tape.rvec(ctrl);
        }
        channels::MeasurementFamily fam =
            gates::dispersive_povm(task.layout, vals[0], vals[1]);

        const ComplexMatrix& sv = tape.mat(state);
        std::vector<double> probs(fam.diag.size(), 0.0);
        for (std::size_t o = 0; o < fam.diag.size(); ++o)
          for (std::size_t i = 0; i < D; ++i)
            probs[o] += fam.diag[o][i] * fam.diag[o][i] * diag_weight(sv, i);

        std::size_t o;
        if (opt.replay != nullptr && replay_d < opt.replay->discrete.size()) {
          o = opt.replay->discrete[replay_d++];
          if (o >= probs.size())
            throw ConfigError("run_trajectory: replayed outcome index out of range");
        } else {
          double total = 0.0;
          for (double p : probs) total += p;
          double target = rng.uniform() * total;
          double cum = 0.0;
          o = probs.size() - 1;
          for (std::size_t c = 0; c < probs.size(); ++c) {
            if (probs[c] < 1e-15 * total) continue;
            cum += probs[c];
            if (target <= cum) {
              o = c;
              break;
            }
          }
        }
        if (probs[o] <= 0.0)
          throw GradientError("run_trajectory: zero-probability branch requested");

        std::size_t pnode = is_ket
                                ? tape.povm_prob_ket(state, ctrl, fam.diag[o], fam.ddiag[o])
                                : tape.povm_prob_dm(state, ctrl, fam.diag[o], fam.ddiag[o]);
        std::size_t logp = tape.log_of(pnode);
        std::size_t post = is_ket
                               ? tape.povm_post_ket(state, ctrl, fam.diag[o], fam.ddiag[o])
                               : tape.povm_post_dm(state, ctrl, fam.diag[o], fam.ddiag[o]);
        state = is_ket ? tape.ket_renorm(post, pnode) : tape.dm_scale_inv(post, pnode);

        graddiff::SurrogateScalar::Score sc;
        sc.logp_node = logp;
        sc.meas_ordinal = meas_count;
        out.surrogate.score_terms.push_back(sc);

        out.traj.meas_probs.push_back(std::move(probs));
        out.traj.outcomes.push_back(fam.outcomes[o]);
        out.traj.draws.discrete.push_back(o);
        out.traj.log_prob += tape.scalar(logp);
        if (is_table) ctl.push_outcome(cst, o);
        last_outcome = fam.outcomes[o];
        ++meas_count;
        break;
      }
      case tasks::PlanElem::Kind::MeasureContinuous: {
        std::vector<double> sigma = graddiff::readout_sigma(task.layout);
        double z;
        if (opt.replay != nullptr && replay_c < opt.replay->continuous_z.size())
          z = opt.replay->continuous_z[replay_c++];
        else
          z = rng.uniform();
        const double h = (graddiff::kReadoutHi - graddiff::kReadoutLo) /
                         static_cast<double>(graddiff::kReadoutPoints - 1);
        std::size_t dens = tape.cont_density(state, sigma, 1.0, graddiff::kReadoutLo,
                                             graddiff::kReadoutHi, graddiff::kReadoutPoints);
        std::size_t cum = tape.cum_trapz(dens, h);
        std::size_t m = tape.pwl_invert(cum, z, h, graddiff::kReadoutLo);
        std::size_t pnode = tape.cont_prob(state, m, sigma, 1.0);
        std::size_t post = tape.cont_post(state, m, sigma, 1.0);
        state = is_ket ? tape.ket_renorm(post, pnode) : tape.dm_scale_inv(post, pnode);

        out.traj.outcomes.push_back(tape.scalar(m));
        out.traj.draws.continuous_z.push_back(z);
        out.traj.log_prob += std::log(tape.scalar(pnode));
        last_outcome = tape.scalar(m);
        ++meas_count;
        break;
      }
      case tasks::PlanElem::Kind::Dissipate: {
        if (is_ket)
          throw StateError("run_trajectory: dissipation requires the density representation");
        state = tape.lindblad(state, task.layout, e.diss);
        break;
      }
      case tasks::PlanElem::Kind::RewardTap: {
        std::size_t r;
        if (e.purity)
          r = tape.purity(state);
        else
          r = is_ket ? tape.expect_ket_const(state, e.observable)
                     : tape.expect_const(state, e.observable);
        out.surrogate.reward_nodes.push_back(r);
        out.surrogate.reward_weights.push_back(e.weight);
        double val = e.weight * tape.scalar(r);
        out.surrogate.value += val;
        out.traj.rewards.push_back(val);
        out.traj.reward_meas_before.push_back(meas_count);
        break;
      }
    }
  }

  for (graddiff::SurrogateScalar::Score& sc : out.surrogate.score_terms) {
    double a = 0.0;
    for (std::size_t k = 0; k < out.traj.rewards.size(); ++k) {
      bool future = out.traj.reward_meas_before[k] > sc.meas_ordinal;
      if (!opt.future_returns_only || future) a += out.traj.rewards[k];
    }
    sc.coeff = a;
  }
  out.traj.ret = out.surrogate.value;

  const ComplexMatrix& fin = tape.mat(state);
  if (is_ket) {
    ComplexMatrix dm(D, D);
    for (std::size_t i = 0; i < D; ++i)
      for (std::size_t j = 0; j < D; ++j) dm(i, j) = fin(i, 0) * std::conj(fin(j, 0));
    out.traj.final_state = std::move(dm);
  } else {
    out.traj.final_state = fin;
  }
  return out;
}

std::vector<Sampled> sample_batch(const tasks::TaskSpec& task, const controllers::Controller& ctl,
                                  const std::vector<double>& theta, std::size_t batch_size,
                                  std::uint64_t seed) {
  if (batch_size == 0) throw ConfigError("sample_batch: batch size must be positive");
  std::vector<Sampled> batch;
  batch.reserve(batch_size);
  for (std::size_t i = 0; i < batch_size; ++i) {
    Rng rng = Rng::for_stream(seed, i);
    ExecOptions opt;
    if (task.uncertainty && task.uncertainty->quad_nodes == 0)
      opt.g = task.uncertainty->mean + task.uncertainty->std * rng.gauss();
    batch.push_back(run_trajectory(task, ctl, theta, rng, opt));
  }
  return batch;
}

std::vector<Sampled> enumerate_branches(const tasks::TaskSpec& task,
                                        const controllers::Controller& ctl,
                                        const std::vector<double>& theta,
                                        std::size_t max_branches) {
  std::vector<std::pair<double, double>> gw;  // (g, weight)
  if (task.uncertainty && task.uncertainty->std > 0.0) {
    if (task.uncertainty->quad_nodes == 0)
      throw ConfigError("enumerate_branches: uncertain constants need quadrature nodes");
    auto [nodes, weights] =
        tasks::gauss_quadrature(task.uncertainty->quad_nodes, task.uncertainty->mean,
                                task.uncertainty->std);
    for (std::size_t q = 0; q < nodes.size(); ++q) gw.push_back({nodes[q], weights[q]});
  } else {
    gw.push_back({task.model_g, 1.0});
  }

  std::vector<Sampled> result;
  for (auto [gq, wq] : gw) {
    std::vector<std::vector<std::size_t>> stack = {{}};
    while (!stack.empty()) {
      std::vector<std::size_t> prefix = std::move(stack.back());
      stack.pop_back();

      DrawPlan plan;
      plan.discrete = prefix;
      ExecOptions opt;
      opt.replay = &plan;
      opt.training = false;
      opt.g = gq;
      Rng rng(0x5bd1e995u);  // consumed only past the forced prefix
      Sampled s = run_trajectory(task, ctl, theta, rng, opt);

      if (!s.traj.draws.continuous_z.empty())
        throw ConfigError("enumerate_branches: continuous outcomes cannot be enumerated");

      if (s.traj.draws.discrete.size() == prefix.size()) {
        double w = wq;
        for (std::size_t j = 0; j < prefix.size(); ++j) {
          double tot = 0.0;
          for (double p : s.traj.meas_probs[j]) tot += p;
          w *= s.traj.meas_probs[j][prefix[j]] / tot;
        }
        s.weight = w;
        result.push_back(std::move(s));
        if (result.size() > max_branches)
          throw ConfigError("enumerate_branches: branch count exceeds the cap");
      } else {
        const std::vector<double>& probs = s.traj.meas_probs[prefix.size()];
        double tot = 0.0;
        for (double p : probs) tot += p;
        // descend right-to-left so the left branch pops first
        for (std::size_t o = probs.size(); o-- > 0;) {
          if (probs[o] <= 1e-15 * tot) continue;  // prune dead branches
          std::vector<std::size_t> child = prefix;
          child.push_back(o);
          stack.push_back(std::move(child));
        }
      }
    }
  }
  return result;
}

graddiff::Program branch_program(const tasks::TaskSpec& task, const controllers::Controller& ctl,
                                 const Trajectory& traj) {
  const controllers::ControllerSpec& cs = ctl.spec();
  if (cs.kind != controllers::ControllerKind::Table)
    throw ConfigError("branch_program: lookup-table controllers only");
  if (task.control_width() > cs.out_arity)
    throw ConfigError("branch_program: plan is wider than the controller emission");

  graddiff::Program prog;
  prog.layout = task.layout;
  prog.initial = task.initial;
  prog.use_density = task.use_density;
  prog.theta_size = ctl.param_count();

  std::vector<std::size_t> hist;
  std::size_t node = 0, consumed = 0;
  bool have_node = false;
  for (const tasks::PlanElem& e : task.plan) {
    switch (e.kind) {
      case tasks::PlanElem::Kind::ControlEval:
        node = ctl.table_index(hist);
        have_node = true;
        break;
      case tasks::PlanElem::Kind::Gate: {
        graddiff::ProgStep ps;
        if (e.fixed) {
          ps = graddiff::ProgStep::fixed_gate(e.family, e.fixed_vals, e.fc, e.slot);
        } else {
          if (!have_node)
            throw ConfigError("branch_program: plan consumes controls before any emission");
          ps = graddiff::ProgStep::gate(e.family, node * cs.out_arity + e.ctrl_offset, e.fc,
                                        e.slot);
        }
        if (e.uses_model_g) ps.spin_g = traj.model_g;
        prog.steps.push_back(std::move(ps));
        break;
      }
      case tasks::PlanElem::Kind::Measure: {
        if (e.fixed) {
          prog.steps.push_back(graddiff::ProgStep::fixed_measure(e.fixed_vals[0], e.fixed_vals[1]));
        } else {
          if (!have_node)
            throw ConfigError("branch_program: plan consumes controls before any emission");
          prog.steps.push_back(graddiff::ProgStep::measure(node * cs.out_arity + e.ctrl_offset));
        }
        if (consumed >= traj.draws.discrete.size())
          throw ConfigError("branch_program: trajectory does not cover the plan's measurements");
        hist.push_back(traj.draws.discrete[consumed++]);
        break;
      }
      case tasks::PlanElem::Kind::MeasureContinuous:
        prog.steps.push_back(graddiff::ProgStep::measure_continuous());
        break;
      case tasks::PlanElem::Kind::Dissipate:
        prog.steps.push_back(graddiff::ProgStep::dissipate(e.diss));
        break;
      case tasks::PlanElem::Kind::RewardTap:
        if (e.purity) {
          if (e.weight != 1.0)
            throw ConfigError("branch_program: weighted purity taps are not representable");
          prog.steps.push_back(graddiff::ProgStep::reward_purity());
        } else {
          prog.steps.push_back(
              graddiff::ProgStep::reward_expect(e.observable * cxd(e.weight, 0.0)));
        }
        break;
    }
  }
  return prog;
}

double ValueTable::value(const std::string& key) const {
  auto it = v_.find(key);
  return it == v_.end() ? 0.0 : it->second;
}

std::string ValueTable::key_of(const DrawPlan& draws, std::size_t len) {
  std::string k;
  for (std::size_t i = 0; i < len && i < draws.discrete.size(); ++i) {
    if (i) k.push_back('|');
    k += std::to_string(draws.discrete[i]);
  }
  return k;
}

void ValueTable::update(const std::vector<Sampled>& batch) {
  // synchronous sweep: all targets against the pre-sweep table, then one
  // relaxation per visited state
  struct Acc {
    double wsum = 0.0, target = 0.0;
  };
  std::map<std::string, Acc> acc;
  for (const Sampled& s : batch) {
    const std::size_t M = s.traj.draws.discrete.size();
    for (std::size_t o = 0; o < M; ++o) {
      double r = 0.0;
      for (std::size_t k = 0; k < s.traj.rewards.size(); ++k)
        if (s.traj.reward_meas_before[k] == o + 1) r += s.traj.rewards[k];
      double succ = (o + 1 == M) ? 0.0 : value(key_of(s.traj.draws, o + 1));
      Acc& a = acc[key_of(s.traj.draws, o)];
      a.wsum += s.weight;
      a.target += s.weight * (r + discount_ * succ);
    }
  }
  for (auto& [key, a] : acc) {
    double mean_target = a.target / a.wsum;
    double& v = v_[key];
    v += alpha_ * (mean_target - v);
  }
}

GradientEstimate estimate_gradient(const std::vector<Sampled>& batch,
                                   const ValueTable* baseline) {
  if (batch.empty()) throw ConfigError("estimate_gradient: empty batch");
  GradientEstimate est;

  double wsum = 0.0, mean = 0.0;
  for (const Sampled& s : batch) {
    wsum += s.weight;
    mean += s.weight * s.traj.ret;
  }
  mean /= wsum;
  double var = 0.0;
  for (const Sampled& s : batch)
    var += s.weight * (s.traj.ret - mean) * (s.traj.ret - mean);
  est.mean_return = mean;
  est.std_return = std::sqrt(var / wsum);

  for (std::size_t t = 0; t < batch.size(); ++t) {
    const Sampled& s = batch[t];
    graddiff::SurrogateScalar surr = s.surrogate;
    if (baseline != nullptr) {
      const std::size_t M = s.traj.draws.discrete.size();
      for (std::size_t i = 0; i < surr.score_terms.size(); ++i) {
        graddiff::SurrogateScalar::Score& sc = surr.score_terms[i];
        double r = 0.0;
        for (std::size_t k = 0; k < s.traj.rewards.size(); ++k)
          if (s.traj.reward_meas_before[k] == sc.meas_ordinal + 1) r += s.traj.rewards[k];
        double succ =
            (i + 1 == M) ? 0.0 : baseline->value(ValueTable::key_of(s.traj.draws, i + 1));
        double cur = baseline->value(ValueTable::key_of(s.traj.draws, i));
        sc.coeff = r + baseline->discount() * succ - cur;
      }
    }
    std::vector<double> g = surr.gradient(s.tape);
    if (est.grad.empty()) est.grad.assign(g.size(), 0.0);
    if (g.size() != est.grad.size())
      throw DimensionError("estimate_gradient: inconsistent parameter counts in the batch");
    for (double v : g)
      if (!std::isfinite(v)) {
        std::ostringstream os;
        os << "estimate_gradient: non-finite gradient in trajectory " << t
           << " (return " << s.traj.ret << ", outcomes";
        for (std::size_t o : s.traj.draws.discrete) os << ' ' << o;
        os << ", controls";
        for (const auto& c : s.traj.controls)
          for (double cv : c) os << ' ' << cv;
        os << ")";
        throw NumericalError(os.str());
      }
    for (std::size_t k = 0; k < g.size(); ++k) est.grad[k] += s.weight * g[k];
  }
  for (double& v : est.grad) v /= wsum;
  return est;
}

std::vector<double> clip_gradient(std::vector<double> g, double clipvalue, double clipnorm) {
  for (double& v : g) v = std::clamp(v, -clipvalue, clipvalue);
  double norm = 0.0;
  for (double v : g) norm += v * v;
  norm = std::sqrt(norm);
  if (norm > clipnorm && norm > 0.0)
    for (double& v : g) v *= clipnorm / norm;
  return g;
}

void adam_step(AdamState& st, std::vector<double>& theta, const std::vector<double>& grad) {
  if (theta.size() != grad.size()) throw DimensionError("adam_step: shape mismatch");
  if (st.m.empty()) {
    st.m.assign(theta.size(), 0.0);
    st.v.assign(theta.size(), 0.0);
  }
  if (st.m.size() != theta.size()) throw DimensionError("adam_step: stale moment vectors");
  std::vector<double> g = clip_gradient(grad, st.clipvalue, st.clipnorm);
  ++st.step;
  const double lr = st.learning_rate * std::pow(st.lr_decay, static_cast<double>(st.step - 1));
  const double c1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
  const double c2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
  for (std::size_t k = 0; k < theta.size(); ++k) {
    st.m[k] = st.beta1 * st.m[k] + (1.0 - st.beta1) * g[k];
    st.v[k] = st.beta2 * st.v[k] + (1.0 - st.beta2) * g[k] * g[k];
    double mhat = st.m[k] / c1;
    double vhat = st.v[k] / c2;
    theta[k] += lr * mhat / (std::sqrt(vhat) + st.epsilon);
  }
}

TrainResult train(const tasks::TaskSpec& task, const controllers::Controller& ctl,
                  const controllers::ParameterVector& theta0, const TrainConfig& cfg) {
  TrainResult res;
  res.theta = theta0;
  res.best_theta = theta0;
  res.best_return = -std::numeric_limits<double>::infinity();
  res.adam.learning_rate = cfg.learning_rate;
  res.adam.lr_decay = cfg.lr_decay;

  ValueTable table(cfg.baseline_alpha, cfg.discount);
  const std::size_t batch = cfg.batch_size ? cfg.batch_size : task.batch_size;
  std::optional<double> target = cfg.target_return ? cfg.target_return : task.target_return;

  for (std::size_t it = 1; it <= cfg.iterations; ++it) {
    auto t0 = std::chrono::steady_clock::now();
    std::vector<Sampled> samples =
        task.enumeration
            ? enumerate_branches(task, ctl, res.theta.values)
            : sample_batch(task, ctl, res.theta.values, batch,
                           splitmix64(cfg.seed ^ splitmix64(it)));
    GradientEstimate est = estimate_gradient(samples, cfg.use_baseline ? &table : nullptr);
    if (!std::isfinite(est.mean_return))
      throw NumericalError("train: non-finite return at iteration " + std::to_string(it));
    if (cfg.use_baseline) table.update(samples);
    adam_step(res.adam, res.theta.values, est.grad);

    CurveRow row;
    row.iteration = it;
    row.mean_return = est.mean_return;
    row.std_return = est.std_return;
    if (!cfg.deterministic) {
      auto t1 = std::chrono::steady_clock::now();
      row.wall_ms =
          std::chrono::duration_cast<std::chrono::milliseconds>(t1 - t0).count();
    }
    res.curve.push_back(row);
    if (est.mean_return > res.best_return) {
      res.best_return = est.mean_return;
      res.best_theta = res.theta;
      res.best_iteration = it;
    }
    if (target && est.mean_return >= *target) break;
  }
  return res;
}

void write_curve_csv(const std::string& path, const std::vector<CurveRow>& curve) {
  std::ofstream f(path);
  if (!f) throw ConfigError("write_curve_csv: cannot open '" + path + "'");
  f << "iteration,mean_return,std_return,wall_ms\n";
  f.precision(17);
  for (const CurveRow& r : curve)
    f << r.iteration << ',' << r.mean_return << ',' << r.std_return << ',' << r.wall_ms
      << '\n';
}

std::string checkpoint_json(const controllers::Controller& ctl,
                            const controllers::ParameterVector& theta, const AdamState& adam) {
  json j;
  j["schema"] = "fgrape-checkpoint-v1";
  j["strategy"] = json::parse(controllers::export_strategy(ctl, theta));
  json a;
  a["m"] = adam.m;
  a["v"] = adam.v;
  a["step"] = adam.step;
  a["learning_rate"] = adam.learning_rate;
  a["beta1"] = adam.beta1;
  a["beta2"] = adam.beta2;
  a["epsilon"] = adam.epsilon;
  a["clipnorm"] = adam.clipnorm;
  a["clipvalue"] = adam.clipvalue;
  a["lr_decay"] = adam.lr_decay;
  j["adam"] = std::move(a);
  return j.dump(2);
}

std::pair<controllers::ParameterVector, AdamState> restore_checkpoint(
    const std::string& text, const controllers::Controller& ctl) {
  json j;
  try {
    j = json::parse(text);
  } catch (const std::exception& e) {
    throw ConfigError(std::string("restore_checkpoint: malformed document: ") + e.what());
  }
  if (!j.contains("schema") || j["schema"] != "fgrape-checkpoint-v1")
    throw ConfigError("restore_checkpoint: unknown schema id");
  auto [c, pv] = controllers::import_strategy(j.at("strategy").dump());
  if (c.param_count() != ctl.param_count())
    throw ConfigError("restore_checkpoint: controller structure mismatch");
  const json& a = j.at("adam");
  AdamState adam;
  adam.m = a.at("m").get<std::vector<double>>();
  adam.v = a.at("v").get<std::vector<double>>();
  adam.step = a.at("step").get<std::size_t>();
  adam.learning_rate = a.at("learning_rate").get<double>();
  adam.beta1 = a.at("beta1").get<double>();
  adam.beta2 = a.at("beta2").get<double>();
  adam.epsilon = a.at("epsilon").get<double>();
  adam.clipnorm = a.at("clipnorm").get<double>();
  adam.clipvalue = a.at("clipvalue").get<double>();
  adam.lr_decay = a.at("lr_decay").get<double>();
  if (!adam.m.empty() && adam.m.size() != ctl.param_count())
    throw ConfigError("restore_checkpoint: moment size mismatch");
  return {std::move(pv), std::move(adam)};
}

}  // namespace fgrape::training
