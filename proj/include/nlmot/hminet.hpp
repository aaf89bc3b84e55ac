#pragma once

// Historical memory information network: attention encoder over the
// condition window, motion fusion layers, and the prediction head that
// estimates the attenuation constant c (and the noise z for the two-branch
// variant).

#include <Eigen/Core>

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nlmot/autodiff.hpp"
#include "nlmot/core.hpp"

namespace nlmot {

/// Smallest diffusion time used in training and accepted at inference.
inline constexpr double kMinDiffusionTime = 1e-3;

/// one-branch predicts c only; two-branch predicts c and z.
enum class BranchVariant { one_branch, two_branch };

/// Which half of each condition row the network sees: box only, motion only,
/// or the full motion-info row.
enum class ConditionVariant { box, motion, full };

std::string to_string(BranchVariant v);
std::string to_string(ConditionVariant v);
BranchVariant parse_branch_variant(const std::string& s);
ConditionVariant parse_condition_variant(const std::string& s);

struct ModelConfig {
  int token_dim = 64;
  int n_heads = 8;
  int n_condition_layers = 2;
  int n_fusion_blocks = 2;
  int history_length = 5;
  BranchVariant variant = BranchVariant::one_branch;
  ConditionVariant condition_variant = ConditionVariant::full;
  bool position_encoding = true;
  /// Multiplier taking normalized per-frame motion into diffusion space.
  /// A power of two so the mapping is exact in floating point.
  double motion_scale = 16.0;

  /// Throws ErrorKind::invalid_config naming the offending field.
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

using ModelParameters = TensorMap;

/// History rows ordered most recent first: [I_{f-1}; I_{f-2}; ...; I_{f-n}].
struct ConditionWindow {
  Eigen::Matrix<double, Eigen::Dynamic, 8, Eigen::RowMajor> rows;

  Index length() const { return rows.rows(); }
};

struct PredictedTarget {
  Eigen::Vector4d c_hat = Eigen::Vector4d::Zero();
  std::optional<Eigen::Vector4d> z_hat;
};

/// Batched network outputs, one row per sample.
struct TargetBatch {
  Eigen::Matrix<double, Eigen::Dynamic, 4, Eigen::RowMajor> c_hat;
  std::optional<Eigen::Matrix<double, Eigen::Dynamic, 4, Eigen::RowMajor>> z_hat;
};

/// Anything that estimates the reverse-process targets from a noisy motion.
/// Inputs and outputs live in diffusion space (normalized motion times
/// `motion_scale()`).
class TargetModel {
 public:
  virtual ~TargetModel() = default;
  virtual BranchVariant variant() const = 0;
  virtual double motion_scale() const = 0;
  virtual int history_length() const = 0;
  /// noisy: [B, 4]; t: [B]; windows.size() == B.
  virtual TargetBatch predict(std::span<const ConditionWindow> windows,
                              const Eigen::Ref<const Eigen::MatrixX4d>& noisy,
                              const Eigen::Ref<const Eigen::VectorXd>& t) = 0;
};

/// Deterministic scaled-uniform initialization for every parameter the
/// network graph declares.
ModelParameters init_params(const ModelConfig& config, std::uint64_t seed);

/// Names and shapes the network expects, in graph declaration order.
std::vector<std::pair<std::string, std::pair<Index, Index>>> parameter_shapes(
    const ModelConfig& config);

/// Applies the condition variant mask and motion scaling: the exact [n, 8]
/// matrix that enters the embedding layer.
Tensor condition_input_rows(const ConditionWindow& window, const ModelConfig& config);

/// Sinusoidal embedding of diffusion time, one row per sample.
Tensor time_embedding(const Eigen::Ref<const Eigen::VectorXd>& t, int dim);

/// The network graph for a fixed batch size.
///
/// Inputs: "condition" [B*n, 8], "noisy_motion" [B, 4], "time" [B, token_dim]
/// plus every parameter. For training, `attach_loss` adds "target" [B, 4]
/// (or [B, 8] for the two-branch variant: c then z) and a scalar loss node.
class HmiNetGraph {
 public:
  HmiNetGraph(const ModelConfig& config, Index batch);

  /// z_squared_error: supervise the z head with squared error instead of
  /// smooth-L1.
  void attach_loss(bool z_squared_error = false);

  Graph& graph() { return graph_; }
  const Graph& graph() const { return graph_; }
  const ModelConfig& config() const { return config_; }
  Index batch() const { return batch_; }

  NodeId embedding_input() const { return embedding_input_; }
  NodeId condition_embedding() const { return condition_embedding_; }
  NodeId first_fusion() const { return first_fusion_; }
  NodeId output() const { return output_; }
  NodeId loss() const { return loss_; }
  const std::vector<NodeId>& parameters() const { return parameters_; }

  /// Evaluates the graph; `extra` supplies non-parameter inputs.
  void forward(const ModelParameters& params, const TensorMap& extra);
  /// Gradients of the attached loss for every parameter.
  TensorMap parameter_gradients() const;

 private:
  NodeId param(const std::string& name, Index rows, Index cols);
  NodeId linear(NodeId x, const std::string& prefix, Index in, Index out);
  NodeId norm(NodeId x, const std::string& prefix);
  NodeId attention_block(NodeId x, Index tokens, const std::string& prefix);
  NodeId motion_fusion(NodeId condition, NodeId motion, const std::string& prefix);

  ModelConfig config_;
  Index batch_;
  Graph graph_;
  std::vector<NodeId> parameters_;
  NodeId embedding_input_;
  NodeId condition_embedding_;
  NodeId first_fusion_;
  NodeId output_;
  NodeId loss_;
};

/// Model parameters plus lazily built inference graphs. Not safe for
/// concurrent use; copy per thread.
class HmiNet final : public TargetModel {
 public:
  HmiNet(ModelConfig config, ModelParameters params);

  BranchVariant variant() const override { return config_.variant; }
  double motion_scale() const override { return config_.motion_scale; }
  int history_length() const override { return config_.history_length; }
  TargetBatch predict(std::span<const ConditionWindow> windows,
                      const Eigen::Ref<const Eigen::MatrixX4d>& noisy,
                      const Eigen::Ref<const Eigen::VectorXd>& t) override;

  const ModelConfig& config() const { return config_; }
  const ModelParameters& parameters() const { return params_; }

 private:
  HmiNetGraph& graph_for(Index batch);

  ModelConfig config_;
  ModelParameters params_;
  std::map<Index, std::unique_ptr<HmiNetGraph>> graphs_;
};

/// Single-sample conveniences over HmiNetGraph with batch 1.
Eigen::VectorXd embed_condition(const ConditionWindow& window, const ModelParameters& params,
                                const ModelConfig& config);
Eigen::VectorXd fuse_motion(const Eigen::VectorXd& condition_embedding,
                            const Eigen::Vector4d& noisy_motion, const ModelParameters& params,
                            const ModelConfig& config);
PredictedTarget predict_target(const Eigen::Vector4d& noisy_motion, double t,
                               const ConditionWindow& window, const ModelParameters& params,
                               const ModelConfig& config);

}  // namespace nlmot
