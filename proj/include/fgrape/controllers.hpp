// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "fgrape/common.hpp"
#include "fgrape/graddiff.hpp"

namespace fgrape::controllers {

using graddiff::kNoNode;
using graddiff::Tape;

// Flat trainable vector. The named slices tile the vector exactly; tables get
// one slice per tree node, networks one per layer kernel or bias.
struct ParameterVector {
  struct Slice {
    std::string name;
    std::size_t offset = 0;
    std::size_t size = 0;
  };
  std::vector<double> values;
  std::vector<Slice> slices;

  std::size_t size() const { return values.size(); }
  const Slice& find(const std::string& name) const;
  // LayoutError unless the slices partition [0, size()) without gap or overlap.
  void check_partition() const;
};

enum class ControllerKind { Table, Dense, Recurrent };

struct ControllerSpec {
  ControllerKind kind = ControllerKind::Table;
  std::size_t out_arity = 2;  // control components emitted per call

  // tables: a depth-N outcome tree serves N measurements, that is N+1 control
  // slots counting the root; memoryless keeps a single entry per level
  std::size_t depth = 4;
  std::size_t arity = 2;
  bool memoryless = false;

  // networks
  std::size_t input_dim = 1;  // dense: 2 d^2 split-state reals; recurrent: 1
  std::vector<std::size_t> hidden = {30, 30};  // dense widths or recurrent stack
  double last_bias = kPi;
  bool time_index_input = false;  // recurrent open-loop flavor consumes j/N
  double dropout = 0.0;           // input-to-hidden rate, training only
};

// Per-trajectory evaluation context. Recurrent hidden states live on the tape
// (node ids), so one trajectory must keep writing to one tape.
struct EvalState {
  std::vector<std::size_t> hidden;   // node ids, one per recurrent layer
  std::vector<std::size_t> history;  // outcome branch indices, tables only
  std::size_t step = 0;              // eval calls made so far
  std::vector<std::vector<double>> dropout_masks;  // per layer, inverted scale
};

// Maps measurement histories (tables), split states (dense nets) or outcome
// streams (recurrent nets) to control vectors, differentiably in theta.
class Controller {
 public:
  explicit Controller(ControllerSpec spec);

  const ControllerSpec& spec() const { return spec_; }
  const std::vector<ParameterVector::Slice>& layout() const { return layout_; }
  std::size_t param_count() const { return total_; }
  // table entry count: sum of arity^n over levels, or depth+1 when memoryless
  std::size_t node_count() const;

  // Freshly sampled parameters; bit-identical across runs for equal seeds.
  // Table entries are uniform in (0, pi); network kernels use the symmetric
  // fan-based uniform scheme, biases zero except the final layer's.
  ParameterVector init(std::uint64_t seed) const;

  // New per-trajectory context. With training set and a dropout rate, samples
  // the inverted input masks (held fixed for the whole trajectory).
  EvalState start_trajectory(Rng* rng = nullptr, bool training = false) const;

  // One control emission, written onto the tape. `theta_node` is the leaf
  // holding this controller's parameters laid out per layout(). Tables route
  // on st.history; dense nets read `state_vec` (a mat_to_vec node); recurrent
  // nets consume `outcome` as a single detached real, or the scaled time
  // index when the spec says so. Returns the control vector's node id.
  std::size_t eval(Tape& tape, std::size_t theta_node, EvalState& st,
                   std::size_t state_vec = kNoNode, double outcome = 0.0) const;

  // Record a measured branch so the next table read routes to its child.
  void push_outcome(EvalState& st, std::size_t branch) const;

  // Breadth-first node index for a history of outcome branches; the first
  // branch of each measurement is the left child. ConfigError past the depth.
  std::size_t table_index(const std::vector<std::size_t>& history) const;

 private:
  ControllerSpec spec_;
  std::vector<ParameterVector::Slice> layout_;
  // per-slice shape and init rule, parallel to layout_
  struct SliceMeta {
    std::size_t rows = 0, cols = 0;
    enum class Init { Zero, LastBias, Fan, Table } init = Init::Zero;
  };
  std::vector<SliceMeta> meta_;
  std::size_t total_ = 0;
  void build_layout();
  std::size_t slice_node(Tape& tape, std::size_t theta_node, const std::string& name) const;
};

std::pair<Controller, ParameterVector> controller_init(const ControllerSpec& spec,
                                                       std::uint64_t seed);

// Versioned strategy snapshot: controller structure plus parameters as
// structured text. import rejects unknown schema ids with ConfigError.
std::string export_strategy(const Controller& c, const ParameterVector& theta);
std::pair<Controller, ParameterVector> import_strategy(const std::string& text);

}  // namespace fgrape::controllers
