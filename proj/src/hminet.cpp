#include "nlmot/hminet.hpp"

#include <cmath>
#include <random>

#include "nlmot/error.hpp"

namespace nlmot {

std::string to_string(BranchVariant v) {
  return v == BranchVariant::one_branch ? "OB" : "TB";
}

std::string to_string(ConditionVariant v) {
  switch (v) {
    case ConditionVariant::box: return "B";
    case ConditionVariant::motion: return "M";
    case ConditionVariant::full: return "I";
  }
  return "I";
}

BranchVariant parse_branch_variant(const std::string& s) {
  if (s == "OB") return BranchVariant::one_branch;
  if (s == "TB") return BranchVariant::two_branch;
  throw Error(ErrorKind::invalid_config, "variant must be OB or TB, got '" + s + "'");
}

ConditionVariant parse_condition_variant(const std::string& s) {
  if (s == "B") return ConditionVariant::box;
  if (s == "M") return ConditionVariant::motion;
  if (s == "I") return ConditionVariant::full;
  throw Error(ErrorKind::invalid_config, "condition_variant must be B, M or I, got '" + s + "'");
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& why) {
    throw Error(ErrorKind::invalid_config, "model." + field + ": " + why);
  };
  if (token_dim < 1) fail("token_dim", "must be >= 1");
  if (n_heads < 1) fail("n_heads", "must be >= 1");
  if (token_dim % n_heads != 0) fail("token_dim", "must be divisible by n_heads");
  if (token_dim % 2 != 0) fail("token_dim", "must be even (sinusoidal time embedding)");
  if (n_condition_layers < 1) fail("n_condition_layers", "must be >= 1");
  if (n_fusion_blocks < 1) fail("n_fusion_blocks", "must be >= 1");
  if (history_length < 1) fail("history_length", "must be >= 1");
  if (!(motion_scale > 0.0) || !std::isfinite(motion_scale)) {
    fail("motion_scale", "must be positive and finite");
  }
}

Tensor condition_input_rows(const ConditionWindow& window, const ModelConfig& config) {
  Tensor rows = window.rows;
  switch (config.condition_variant) {
    case ConditionVariant::box:
      rows.rightCols(4).setZero();
      break;
    case ConditionVariant::motion:
      rows.leftCols(4).setZero();
      break;
    case ConditionVariant::full:
      break;
  }
  rows.rightCols(4) *= config.motion_scale;
  return rows;
}

Tensor time_embedding(const Eigen::Ref<const Eigen::VectorXd>& t, int dim) {
  const int half = dim / 2;
  Tensor out(t.size(), dim);
  for (Index i = 0; i < t.size(); ++i) {
    for (int k = 0; k < half; ++k) {
      const double freq = std::exp(-std::log(10000.0) * k / half);
      const double arg = 1000.0 * t[i] * freq;
      out(i, k) = std::sin(arg);
      out(i, half + k) = std::cos(arg);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Graph construction

HmiNetGraph::HmiNetGraph(const ModelConfig& config, Index batch)
    : config_(config), batch_(batch) {
  config_.validate();
  if (batch < 1) throw Error(ErrorKind::invalid_input, "batch size must be >= 1");
  const Index d = config_.token_dim;
  const Index n = config_.history_length;
  Graph& g = graph_;

  // Condition encoder: class token followed by n embedded history rows.
  embedding_input_ = g.input("condition", batch * n, 8);
  NodeId rows = linear(embedding_input_, "cond_embed", 8, d);
  if (config_.position_encoding) rows = g.add(rows, param("cond_pos", n, d));
  NodeId cls = g.tile_rows(param("class_token", 1, d), batch);
  NodeId tokens = g.concat_tokens(cls, rows, 1, n);
  for (int l = 0; l < config_.n_condition_layers; ++l) {
    tokens = attention_block(tokens, n + 1, "cond." + std::to_string(l));
  }
  tokens = norm(tokens, "cond_norm");
  condition_embedding_ = g.select_token(tokens, n + 1, 0);

  // Noisy motion feature with the diffusion time folded in.
  NodeId noisy = g.input("noisy_motion", batch, 4);
  NodeId motion = linear(g.silu(linear(noisy, "motion_in.0", 4, d)), "motion_in.1", d, d);
  NodeId time = g.input("time", batch, d);
  motion = g.add(motion, linear(time, "time_embed", d, d));

  first_fusion_ = motion_fusion(condition_embedding_, motion, "fuse.0");

  // Stacked attention + fusion over [E_ce; fused motion].
  NodeId pair = g.concat_tokens(condition_embedding_, first_fusion_, 1, 1);
  for (int k = 0; k < config_.n_fusion_blocks; ++k) {
    const std::string prefix = "fusion." + std::to_string(k);
    pair = attention_block(pair, 2, prefix);
    NodeId cond_tok = g.select_token(pair, 2, 0);
    NodeId motion_tok = g.select_token(pair, 2, 1);
    motion_tok = motion_fusion(condition_embedding_, motion_tok, prefix + ".mfl");
    pair = g.concat_tokens(cond_tok, motion_tok, 1, 1);
  }

  NodeId head = norm(g.select_token(pair, 2, 1), "head_norm");
  head = g.silu(linear(head, "head.0", d, d));
  const Index out_dim = config_.variant == BranchVariant::two_branch ? 8 : 4;
  output_ = linear(head, "head.1", d, out_dim);
}

NodeId HmiNetGraph::param(const std::string& name, Index rows, Index cols) {
  NodeId id = graph_.input(name, rows, cols);
  parameters_.push_back(id);
  return id;
}

NodeId HmiNetGraph::linear(NodeId x, const std::string& prefix, Index in, Index out) {
  NodeId w = param(prefix + ".weight", in, out);
  NodeId b = param(prefix + ".bias", 1, out);
  return graph_.add(graph_.matmul(x, w), b);
}

NodeId HmiNetGraph::norm(NodeId x, const std::string& prefix) {
  const Index d = config_.token_dim;
  NodeId y = graph_.layer_norm(x);
  y = graph_.mul(y, param(prefix + ".gain", 1, d));
  return graph_.add(y, param(prefix + ".bias", 1, d));
}

// Pre-norm transformer block: x + MHSA(LN(x)), then x + FFN(LN(x)).
NodeId HmiNetGraph::attention_block(NodeId x, Index tokens, const std::string& prefix) {
  Graph& g = graph_;
  const Index d = config_.token_dim;
  NodeId a = norm(x, prefix + ".ln1");
  NodeId q = linear(a, prefix + ".attn.q", d, d);
  NodeId k = linear(a, prefix + ".attn.k", d, d);
  NodeId v = linear(a, prefix + ".attn.v", d, d);
  NodeId o = g.attention(q, k, v, tokens, config_.n_heads);
  x = g.add(x, linear(o, prefix + ".attn.out", d, d));
  NodeId f = norm(x, prefix + ".ln2");
  f = linear(g.silu(linear(f, prefix + ".ff1", d, 4 * d)), prefix + ".ff2", 4 * d, d);
  return g.add(x, f);
}

// sigmoid(MLP_scale(E)) * motion + MLP_shift(E)
NodeId HmiNetGraph::motion_fusion(NodeId condition, NodeId motion, const std::string& prefix) {
  Graph& g = graph_;
  const Index d = config_.token_dim;
  NodeId gate = g.sigmoid(linear(condition, prefix + ".scale", d, d));
  NodeId shift = linear(condition, prefix + ".shift", d, d);
  return g.add(g.mul(gate, motion), shift);
}

void HmiNetGraph::attach_loss(bool z_squared_error) {
  if (loss_.valid()) throw Error(ErrorKind::invalid_input, "loss already attached");
  Graph& g = graph_;
  if (config_.variant == BranchVariant::one_branch) {
    NodeId target = g.input("target", batch_, 4);
    loss_ = g.mean(g.smooth_l1(g.sub(output_, target)));
    return;
  }
  NodeId target = g.input("target", batch_, 8);
  NodeId dc = g.sub(g.slice(output_, 0, 4), g.slice(target, 0, 4));
  NodeId dz = g.sub(g.slice(output_, 4, 4), g.slice(target, 4, 4));
  NodeId lz = z_squared_error ? g.mean(g.mul(dz, dz)) : g.mean(g.smooth_l1(dz));
  loss_ = g.add(g.mean(g.smooth_l1(dc)), lz);
}

void HmiNetGraph::forward(const ModelParameters& params, const TensorMap& extra) {
  std::map<std::string, const Tensor*, std::less<>> bindings;
  for (const NodeId p : parameters_) {
    const std::string& name = graph_.name(p);
    auto it = params.find(name);
    if (it == params.end()) {
      throw Error(ErrorKind::invalid_input, "missing model parameter '" + name + "'");
    }
    bindings.emplace(name, &it->second);
  }
  for (const auto& [k, v] : extra) bindings.emplace(k, &v);
  graph_.forward(bindings);
}

TensorMap HmiNetGraph::parameter_gradients() const {
  TensorMap grads;
  for (const NodeId p : parameters_) grads.emplace(graph_.name(p), graph_.grad(p));
  return grads;
}

// ---------------------------------------------------------------------------
// Parameters

std::vector<std::pair<std::string, std::pair<Index, Index>>> parameter_shapes(
    const ModelConfig& config) {
  HmiNetGraph net(config, 1);
  std::vector<std::pair<std::string, std::pair<Index, Index>>> shapes;
  for (const NodeId p : net.parameters()) {
    shapes.push_back({net.graph().name(p), {net.graph().rows(p), net.graph().cols(p)}});
  }
  return shapes;
}

ModelParameters init_params(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  ModelParameters params;
  const double token_bound = 1.0 / std::sqrt(static_cast<double>(config.token_dim));
  std::vector<std::pair<std::string, std::pair<Index, Index>>> shapes = parameter_shapes(config);
  // Weight fan-in is needed for the matching bias, which is declared right after.
  Index last_fan_in = 1;
  for (const auto& [name, shape] : shapes) {
    const auto [rows, cols] = shape;
    Tensor t(rows, cols);
    auto ends_with = [&](const char* suffix) {
      const std::string s(suffix);
      return name.size() >= s.size() && name.compare(name.size() - s.size(), s.size(), s) == 0;
    };
    if (ends_with(".gain")) {
      t.setOnes();
    } else if (name.find("norm") != std::string::npos || name.find(".ln") != std::string::npos) {
      t.setZero();
    } else {
      double bound = token_bound;
      if (ends_with(".weight")) {
        last_fan_in = rows;
        bound = 1.0 / std::sqrt(static_cast<double>(rows));
      } else if (ends_with(".bias")) {
        bound = 1.0 / std::sqrt(static_cast<double>(last_fan_in));
      }
      std::uniform_real_distribution<double> dist(-bound, bound);
      for (Index i = 0; i < t.size(); ++i) t.data()[i] = dist(rng);
    }
    params.emplace(name, std::move(t));
  }
  return params;
}

// ---------------------------------------------------------------------------
// Inference

HmiNet::HmiNet(ModelConfig config, ModelParameters params)
    : config_(config), params_(std::move(params)) {
  config_.validate();
  for (const auto& [name, shape] : parameter_shapes(config_)) {
    auto it = params_.find(name);
    if (it == params_.end()) {
      throw Error(ErrorKind::invalid_input, "missing model parameter '" + name + "'");
    }
    if (it->second.rows() != shape.first || it->second.cols() != shape.second) {
      throw Error(ErrorKind::shape_mismatch, "parameter '" + name + "' has the wrong shape");
    }
  }
}

HmiNetGraph& HmiNet::graph_for(Index batch) {
  auto& slot = graphs_[batch];
  if (!slot) slot = std::make_unique<HmiNetGraph>(config_, batch);
  return *slot;
}

namespace {

TensorMap network_inputs(std::span<const ConditionWindow> windows,
                         const Eigen::Ref<const Eigen::MatrixX4d>& noisy,
                         const Eigen::Ref<const Eigen::VectorXd>& t, const ModelConfig& config) {
  const Index batch = static_cast<Index>(windows.size());
  const Index n = config.history_length;
  if (noisy.rows() != batch || t.size() != batch) {
    throw Error(ErrorKind::invalid_input, "batch sizes of windows, motions and times differ");
  }
  Tensor condition(batch * n, 8);
  for (Index b = 0; b < batch; ++b) {
    if (windows[b].length() != n) {
      throw Error(ErrorKind::invalid_input, "condition window has " +
                                                std::to_string(windows[b].length()) +
                                                " rows, expected " + std::to_string(n));
    }
    condition.middleRows(b * n, n) = condition_input_rows(windows[b], config);
  }
  TensorMap inputs;
  inputs.emplace("condition", std::move(condition));
  inputs.emplace("noisy_motion", Tensor(noisy));
  inputs.emplace("time", time_embedding(t, config.token_dim));
  return inputs;
}

}  // namespace

TargetBatch HmiNet::predict(std::span<const ConditionWindow> windows,
                            const Eigen::Ref<const Eigen::MatrixX4d>& noisy,
                            const Eigen::Ref<const Eigen::VectorXd>& t) {
  TargetBatch out;
  const Index batch = static_cast<Index>(windows.size());
  if (batch == 0) {
    out.c_hat.resize(0, 4);
    return out;
  }
  HmiNetGraph& net = graph_for(batch);
  net.forward(params_, network_inputs(windows, noisy, t, config_));
  const Tensor& y = net.graph().value(net.output());
  out.c_hat = y.leftCols(4);
  if (config_.variant == BranchVariant::two_branch) out.z_hat = y.rightCols(4);
  return out;
}

Eigen::VectorXd embed_condition(const ConditionWindow& window, const ModelParameters& params,
                                const ModelConfig& config) {
  HmiNetGraph net(config, 1);
  const Eigen::Matrix<double, 1, 4> noisy = Eigen::Matrix<double, 1, 4>::Zero();
  const Eigen::VectorXd t = Eigen::VectorXd::Ones(1);
  net.forward(params, network_inputs(std::span(&window, 1), noisy, t, config));
  return net.graph().value(net.condition_embedding()).row(0).transpose();
}

Eigen::VectorXd fuse_motion(const Eigen::VectorXd& condition_embedding,
                            const Eigen::Vector4d& noisy_motion, const ModelParameters& params,
                            const ModelConfig& config) {
  const Index d = config.token_dim;
  if (condition_embedding.size() != d) {
    throw Error(ErrorKind::invalid_input, "condition embedding has the wrong width");
  }
  auto p = [&](const std::string& name) -> const Tensor& {
    auto it = params.find(name);
    if (it == params.end()) {
      throw Error(ErrorKind::invalid_input, "missing model parameter '" + name + "'");
    }
    return it->second;
  };
  auto lin = [&](const Eigen::RowVectorXd& x, const std::string& prefix) -> Eigen::RowVectorXd {
    return x * p(prefix + ".weight") + p(prefix + ".bias");
  };
  auto silu = [](const Eigen::RowVectorXd& x) -> Eigen::RowVectorXd {
    return x.array() / (1.0 + (-x.array()).exp());
  };
  const Eigen::RowVectorXd e = condition_embedding.transpose();
  const Eigen::RowVectorXd m =
      lin(silu(lin(noisy_motion.transpose(), "motion_in.0")), "motion_in.1");
  const Eigen::RowVectorXd gate = lin(e, "fuse.0.scale").unaryExpr([](double x) {
    return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
  });
  const Eigen::RowVectorXd fused = gate.cwiseProduct(m) + lin(e, "fuse.0.shift");
  if (!fused.allFinite()) throw Error(ErrorKind::numeric, "motion fusion produced non-finite values");
  return fused.transpose();
}

PredictedTarget predict_target(const Eigen::Vector4d& noisy_motion, double t,
                               const ConditionWindow& window, const ModelParameters& params,
                               const ModelConfig& config) {
  if (!(t >= kMinDiffusionTime && t <= 1.0)) {
    throw Error(ErrorKind::invalid_input, "diffusion time must lie in [t_min, 1]");
  }
  HmiNetGraph net(config, 1);
  const Eigen::Matrix<double, 1, 4> noisy = noisy_motion.transpose();
  const Eigen::VectorXd tv = Eigen::VectorXd::Constant(1, t);
  net.forward(params, network_inputs(std::span(&window, 1), noisy, tv, config));
  const Tensor& y = net.graph().value(net.output());
  PredictedTarget out;
  out.c_hat = y.row(0).head<4>().transpose();
  if (config.variant == BranchVariant::two_branch) out.z_hat = y.row(0).tail<4>().transpose();
  return out;
}

}  // namespace nlmot
