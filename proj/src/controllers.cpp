// SPDX-License-Identifier: Apache-2.0
#include "fgrape/controllers.hpp"

#include <cmath>
#include <stdexcept>

#include "json.hpp"

namespace fgrape::controllers {

using nlohmann::json;

const ParameterVector::Slice& ParameterVector::find(const std::string& name) const {
  for (const Slice& s : slices)
    if (s.name == name) return s;
  throw ConfigError("parameter vector: no slice named '" + name + "'");
}

void ParameterVector::check_partition() const {
  std::size_t pos = 0;
  for (const Slice& s : slices) {
    if (s.offset != pos)
      throw LayoutError("parameter slices gap or overlap at '" + s.name + "'");
    pos += s.size;
  }
  if (pos != values.size())
    throw LayoutError("parameter slices do not cover the whole vector");
}

Controller::Controller(ControllerSpec spec) : spec_(std::move(spec)) {
  if (spec_.out_arity == 0) throw ConfigError("controller: out_arity must be positive");
  switch (spec_.kind) {
    case ControllerKind::Table:
      if (spec_.arity < 2) throw ConfigError("controller: table arity must be at least 2");
      break;
    case ControllerKind::Dense:
      if (spec_.hidden.empty()) throw ConfigError("controller: dense net needs hidden widths");
      if (spec_.input_dim == 0) throw ConfigError("controller: dense net needs an input width");
      break;
    case ControllerKind::Recurrent:
      if (spec_.hidden.empty()) throw ConfigError("controller: recurrent net needs cell widths");
      if (spec_.input_dim != 1)
        throw ConfigError("controller: recurrent nets consume a single real per step");
      break;
  }
  if (spec_.dropout < 0.0 || spec_.dropout >= 1.0)
    throw ConfigError("controller: dropout rate must lie in [0, 1)");
  build_layout();
}

std::size_t Controller::node_count() const {
  if (spec_.memoryless) return spec_.depth + 1;
  std::size_t n = 0, level = 1;
  for (std::size_t d = 0; d <= spec_.depth; ++d) {
    n += level;
    level *= spec_.arity;
  }
  return n;
}

void Controller::build_layout() {
  layout_.clear();
  meta_.clear();
  total_ = 0;
  auto add = [&](std::string name, std::size_t rows, std::size_t cols, SliceMeta::Init init) {
    layout_.push_back({std::move(name), total_, rows * cols});
    meta_.push_back({rows, cols, init});
    total_ += rows * cols;
  };
  switch (spec_.kind) {
    case ControllerKind::Table: {
      const std::size_t n = node_count();
      const char* stem = spec_.memoryless ? "level" : "node";
      for (std::size_t k = 0; k < n; ++k)
        add(stem + std::to_string(k), spec_.out_arity, 1, SliceMeta::Init::Table);
      break;
    }
    case ControllerKind::Dense: {
      std::vector<std::size_t> widths;
      widths.push_back(spec_.input_dim);
      widths.insert(widths.end(), spec_.hidden.begin(), spec_.hidden.end());
      widths.push_back(spec_.out_arity);
      for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
        bool last = l + 2 == widths.size();
        add("w" + std::to_string(l), widths[l + 1], widths[l], SliceMeta::Init::Fan);
        add("b" + std::to_string(l), widths[l + 1], 1,
            last ? SliceMeta::Init::LastBias : SliceMeta::Init::Zero);
      }
      break;
    }
    case ControllerKind::Recurrent: {
      std::size_t in = spec_.input_dim;
      for (std::size_t l = 0; l < spec_.hidden.size(); ++l) {
        const std::size_t h = spec_.hidden[l];
        const std::string t = std::to_string(l);
        add("wz" + t, h, in, SliceMeta::Init::Fan);
        add("uz" + t, h, h, SliceMeta::Init::Fan);
        add("bz" + t, h, 1, SliceMeta::Init::Zero);
        add("wr" + t, h, in, SliceMeta::Init::Fan);
        add("ur" + t, h, h, SliceMeta::Init::Fan);
        add("br" + t, h, 1, SliceMeta::Init::Zero);
        add("wh" + t, h, in, SliceMeta::Init::Fan);
        add("uh" + t, h, h, SliceMeta::Init::Fan);
        add("bh" + t, h, 1, SliceMeta::Init::Zero);
        in = h;
      }
      add("wo", spec_.out_arity, in, SliceMeta::Init::Fan);
      add("bo", spec_.out_arity, 1, SliceMeta::Init::LastBias);
      break;
    }
  }
}

ParameterVector Controller::init(std::uint64_t seed) const {
  ParameterVector pv;
  pv.slices = layout_;
  pv.values.assign(total_, 0.0);
  Rng rng(seed);
  for (std::size_t i = 0; i < layout_.size(); ++i) {
    const ParameterVector::Slice& s = layout_[i];
    const SliceMeta& m = meta_[i];
    switch (m.init) {
      case SliceMeta::Init::Zero:
        break;
      case SliceMeta::Init::LastBias:
        for (std::size_t k = 0; k < s.size; ++k) pv.values[s.offset + k] = spec_.last_bias;
        break;
      case SliceMeta::Init::Fan: {
        double limit = std::sqrt(6.0 / static_cast<double>(m.rows + m.cols));
        for (std::size_t k = 0; k < s.size; ++k)
          pv.values[s.offset + k] = (2.0 * rng.uniform() - 1.0) * limit;
        break;
      }
      case SliceMeta::Init::Table:
        for (std::size_t k = 0; k < s.size; ++k) pv.values[s.offset + k] = rng.uniform() * kPi;
        break;
    }
  }
  pv.check_partition();
  return pv;
}

EvalState Controller::start_trajectory(Rng* rng, bool training) const {
  EvalState st;
  if (spec_.kind == ControllerKind::Recurrent && training && spec_.dropout > 0.0) {
    if (rng == nullptr) throw ConfigError("controller: dropout sampling needs an rng");
    const double keep = 1.0 - spec_.dropout;
    std::size_t in = spec_.input_dim;
    for (std::size_t h : spec_.hidden) {
      std::vector<double> mask(in, 0.0);
      for (double& v : mask)
        if (rng->uniform() < keep) v = 1.0 / keep;
      st.dropout_masks.push_back(std::move(mask));
      in = h;
    }
  }
  return st;
}

std::size_t Controller::table_index(const std::vector<std::size_t>& history) const {
  const std::size_t level = history.size();
  if (level > spec_.depth)
    throw ConfigError("lookup table: history length exceeds the table depth");
  if (spec_.memoryless) return level;
  std::size_t offset = 0, width = 1, pos = 0;
  for (std::size_t n = 0; n < level; ++n) {
    offset += width;
    width *= spec_.arity;
    pos = pos * spec_.arity + history[n];
  }
  return offset + pos;
}

void Controller::push_outcome(EvalState& st, std::size_t branch) const {
  if (branch >= spec_.arity) throw ConfigError("lookup table: outcome branch out of range");
  st.history.push_back(branch);
}

std::size_t Controller::slice_node(Tape& tape, std::size_t theta_node,
                                   const std::string& name) const {
  for (const ParameterVector::Slice& s : layout_)
    if (s.name == name) return tape.slice_vec(theta_node, s.offset, s.size);
  throw ConfigError("controller: no slice named '" + name + "'");
}

std::size_t Controller::eval(Tape& tape, std::size_t theta_node, EvalState& st,
                             std::size_t state_vec, double outcome) const {
  switch (spec_.kind) {
    case ControllerKind::Table: {
      std::size_t idx;
      if (spec_.memoryless) {
        if (st.step > spec_.depth)
          throw ConfigError("lookup table: more control slots than levels");
        idx = st.step;
      } else {
        idx = table_index(st.history);
      }
      ++st.step;
      return tape.slice_vec(theta_node, layout_[idx].offset, layout_[idx].size);
    }
    case ControllerKind::Dense: {
      if (state_vec == kNoNode)
        throw ConfigError("controller: dense nets need a state vector input");
      if (tape.rvec(state_vec).size() != spec_.input_dim)
        throw DimensionError("controller: state vector width does not match the input layer");
      std::size_t x = state_vec;
      std::size_t in = spec_.input_dim;
      const std::size_t layers = spec_.hidden.size() + 1;
      for (std::size_t l = 0; l < layers; ++l) {
        const std::size_t outw = l < spec_.hidden.size() ? spec_.hidden[l] : spec_.out_arity;
        const std::string t = std::to_string(l);
        std::size_t y = tape.matvec(slice_node(tape, theta_node, "w" + t), x, outw, in);
        y = tape.vadd(y, slice_node(tape, theta_node, "b" + t));
        x = l + 1 < layers ? tape.vrelu(y) : y;
        in = outw;
      }
      ++st.step;
      return x;
    }
    case ControllerKind::Recurrent: {
      double fed = spec_.time_index_input
                       ? static_cast<double>(st.step) /
                             static_cast<double>(spec_.depth == 0 ? 1 : spec_.depth)
                       : outcome;
      std::size_t x = tape.const_vec({fed});
      if (st.hidden.empty())
        for (std::size_t h : spec_.hidden)
          st.hidden.push_back(tape.const_vec(std::vector<double>(h, 0.0)));
      std::size_t in = spec_.input_dim;
      for (std::size_t l = 0; l < spec_.hidden.size(); ++l) {
        const std::size_t h = spec_.hidden[l];
        const std::string t = std::to_string(l);
        if (!st.dropout_masks.empty()) x = tape.vmul_const(x, st.dropout_masks[l]);
        std::size_t hp = st.hidden[l];
        auto gate = [&](const char* w, const char* u, const char* b) {
          std::size_t a = tape.matvec(slice_node(tape, theta_node, w + t), x, h, in);
          a = tape.vadd(a, tape.matvec(slice_node(tape, theta_node, u + t), hp, h, h));
          return tape.vadd(a, slice_node(tape, theta_node, b + t));
        };
        std::size_t z = tape.vsigmoid(gate("wz", "uz", "bz"));
        std::size_t r = tape.vsigmoid(gate("wr", "ur", "br"));
        // reset applied to the previous hidden state before its transform
        std::size_t cand = tape.matvec(slice_node(tape, theta_node, "wh" + t), x, h, in);
        cand = tape.vadd(cand, tape.matvec(slice_node(tape, theta_node, "uh" + t),
                                           tape.vmul(r, hp), h, h));
        cand = tape.vtanh(tape.vadd(cand, slice_node(tape, theta_node, "bh" + t)));
        std::size_t hn =
            tape.vadd(tape.vmul(z, hp), tape.vmul(tape.vone_minus(z), cand));
        st.hidden[l] = hn;
        x = hn;
        in = h;
      }
      std::size_t out = tape.matvec(slice_node(tape, theta_node, "wo"), x, spec_.out_arity, in);
      out = tape.vadd(out, slice_node(tape, theta_node, "bo"));
      ++st.step;
      return out;
    }
  }
  throw ConfigError("controller: unknown kind");
}

std::pair<Controller, ParameterVector> controller_init(const ControllerSpec& spec,
                                                       std::uint64_t seed) {
  Controller c(spec);
  ParameterVector pv = c.init(seed);
  return {std::move(c), std::move(pv)};
}

namespace {
const char* kSchemaId = "fgrape-strategy-v1";

std::string kind_tag(ControllerKind k) {
  switch (k) {
    case ControllerKind::Table: return "table";
    case ControllerKind::Dense: return "dense";
    case ControllerKind::Recurrent: return "recurrent";
  }
  return "?";
}
}  // namespace

std::string export_strategy(const Controller& c, const ParameterVector& theta) {
  const ControllerSpec& s = c.spec();
  json j;
  j["schema"] = kSchemaId;
  j["kind"] = kind_tag(s.kind);
  j["out_arity"] = s.out_arity;
  j["depth"] = s.depth;
  j["arity"] = s.arity;
  j["memoryless"] = s.memoryless;
  j["input_dim"] = s.input_dim;
  j["hidden"] = s.hidden;
  j["last_bias"] = s.last_bias;
  j["time_index_input"] = s.time_index_input;
  j["dropout"] = s.dropout;
  json slices = json::array();
  for (const ParameterVector::Slice& sl : theta.slices)
    slices.push_back({{"name", sl.name}, {"offset", sl.offset}, {"size", sl.size}});
  j["slices"] = std::move(slices);
  j["values"] = theta.values;
  return j.dump(2);
}

std::pair<Controller, ParameterVector> import_strategy(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const std::exception& e) {
    throw ConfigError(std::string("strategy import: malformed document: ") + e.what());
  }
  if (!j.contains("schema") || j["schema"] != kSchemaId)
    throw ConfigError("strategy import: unknown schema id");
  ControllerSpec s;
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "table")
    s.kind = ControllerKind::Table;
  else if (kind == "dense")
    s.kind = ControllerKind::Dense;
  else if (kind == "recurrent")
    s.kind = ControllerKind::Recurrent;
  else
    throw ConfigError("strategy import: unknown controller kind '" + kind + "'");
  s.out_arity = j.at("out_arity").get<std::size_t>();
  s.depth = j.at("depth").get<std::size_t>();
  s.arity = j.at("arity").get<std::size_t>();
  s.memoryless = j.at("memoryless").get<bool>();
  s.input_dim = j.at("input_dim").get<std::size_t>();
  s.hidden = j.at("hidden").get<std::vector<std::size_t>>();
  s.last_bias = j.at("last_bias").get<double>();
  s.time_index_input = j.at("time_index_input").get<bool>();
  s.dropout = j.at("dropout").get<double>();
  Controller c(s);
  ParameterVector pv;
  pv.slices = c.layout();
  pv.values = j.at("values").get<std::vector<double>>();
  if (pv.values.size() != c.param_count())
    throw ConfigError("strategy import: value count does not match the structure");
  const json& slices = j.at("slices");
  if (slices.size() != pv.slices.size())
    throw ConfigError("strategy import: slice map does not match the declared structure");
  for (std::size_t i = 0; i < pv.slices.size(); ++i) {
    const json& f = slices[i];
    if (f.at("name") != pv.slices[i].name || f.at("offset") != pv.slices[i].offset ||
        f.at("size") != pv.slices[i].size)
      throw ConfigError("strategy import: slice map does not match the declared structure");
  }
  pv.check_partition();
  return {std::move(c), std::move(pv)};
}

}  // namespace fgrape::controllers
