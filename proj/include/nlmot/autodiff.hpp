#pragma once

// Static computation graph over dense row-major matrices with reverse-mode
// differentiation, plus the Adam optimizer.
//
// A graph is built once with fixed shapes (shape checks happen at build
// time), then evaluated any number of times with different input bindings.
// Activations for token sequences use a [batch * tokens, features] layout,
// sample-major.

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace nlmot {

using Tensor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Index = Eigen::Index;

/// Named tensors, e.g. model parameters or gradients keyed by parameter name.
using TensorMap = std::map<std::string, Tensor, std::less<>>;

struct NodeId {
  int index = -1;
  bool valid() const { return index >= 0; }
  bool operator==(const NodeId&) const = default;
};

enum class OpKind {
  input,
  constant,
  matmul,
  add,         // b is tiled over the leading axis of a
  sub,         // same shapes
  mul,         // b is tiled over the leading axis of a
  scale,
  sigmoid,
  silu,
  softmax,     // over the last axis
  concat,      // over the last axis
  slice,       // column range
  mean,        // all entries -> 1x1
  layer_norm,  // over the last axis, no affine
  smooth_l1,
  tile_rows,
  attention,   // fused multi-head scaled dot-product attention
  concat_tokens,
  select_token,
};

const char* to_string(OpKind kind);

class Graph {
 public:
  /// Declares a named input of fixed shape, bound at every forward call.
  NodeId input(std::string name, Index rows, Index cols);
  NodeId constant(Tensor value, std::string name = {});

  NodeId matmul(NodeId a, NodeId b);
  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  NodeId scale(NodeId a, double factor);
  NodeId sigmoid(NodeId a);
  NodeId silu(NodeId a);
  NodeId softmax(NodeId a);
  NodeId concat(NodeId a, NodeId b);
  NodeId slice(NodeId a, Index col_begin, Index col_count);
  NodeId mean(NodeId a);
  NodeId layer_norm(NodeId a, double epsilon = 1e-5);
  NodeId smooth_l1(NodeId a);
  NodeId tile_rows(NodeId a, Index repeats);
  /// q, k, v: [batch * tokens, dim]; heads must divide dim.
  NodeId attention(NodeId q, NodeId k, NodeId v, Index tokens, Index heads);
  /// Interleaves per-sample token groups: [B*ta, d] + [B*tb, d] -> [B*(ta+tb), d].
  NodeId concat_tokens(NodeId a, NodeId b, Index tokens_a, Index tokens_b);
  /// Picks token `which` of every sample: [B*tokens, d] -> [B, d].
  NodeId select_token(NodeId a, Index tokens, Index which);

  /// Binds every declared input by name and evaluates all nodes in order.
  /// Throws shape_mismatch for a missing or misshaped binding and numeric
  /// when a node produces a non-finite value.
  void forward(const TensorMap& bindings);
  void forward(const std::map<std::string, const Tensor*, std::less<>>& bindings);

  /// Reverse accumulation from a 1x1 output. Requires a prior forward().
  void backward(NodeId output);

  const Tensor& value(NodeId id) const;
  const Tensor& grad(NodeId id) const;
  Index rows(NodeId id) const;
  Index cols(NodeId id) const;
  OpKind kind(NodeId id) const;
  const std::string& name(NodeId id) const;

  NodeId find_input(std::string_view name) const;
  std::vector<NodeId> inputs() const;
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    OpKind kind;
    std::vector<int> args;
    Index rows = 0;
    Index cols = 0;
    std::string name;
    double scalar = 0.0;   // scale factor, layer-norm epsilon
    Index attr0 = 0;       // slice begin / tokens / repeats
    Index attr1 = 0;       // slice count / heads / tokens_b / which
    Tensor value;
    Tensor grad;
    Tensor cache;          // op-specific saved state
  };

  NodeId push(Node node);
  const Node& node(NodeId id) const;
  std::string describe(int index) const;
  void evaluate(int index);
  void propagate(int index);

  std::vector<Node> nodes_;
  bool evaluated_ = false;
};

// ---------------------------------------------------------------------------
// Adam

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  AdamConfig config;
  TensorMap first_moment;
  TensorMap second_moment;
  std::int64_t step = 0;
};

/// One bias-corrected Adam update of every parameter that has a gradient.
/// Throws invalid_input on shape mismatch or a non-positive learning rate.
void adam_step(TensorMap& params, const TensorMap& grads, AdamState& state,
               double learning_rate);

// ---------------------------------------------------------------------------
// Finite-difference gradient check

struct GradientCheckEntry {
  std::string parameter;
  Index row = 0;
  Index col = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double relative_error = 0.0;
};

struct GradientCheckReport {
  double max_relative_error = 0.0;
  std::size_t checked = 0;
  std::vector<GradientCheckEntry> flagged;
  bool ok() const { return flagged.empty(); }
};

/// Relative error |a - n| / max(|a|, |n|, floor). The floor keeps components
/// whose true gradient is ~0 from dividing rounding noise by zero.
double gradient_relative_error(double analytic, double numeric, double floor = 1e-6);

/// Compares `grads` against central differences of `loss` at `params`.
/// `loss` is evaluated with perturbed copies; `params` is restored afterwards.
GradientCheckReport finite_difference_check(
    const std::function<double(const TensorMap&)>& loss, TensorMap& params,
    const TensorMap& grads, double h, double tolerance);

}  // namespace nlmot
