#pragma once

// Two-branch segmentation network: a shallow Spatial Path at stride 8, a
// Context Path (backbone, attention refinement, global-pool tail, U-shape
// decoder), a fusion stage and prediction heads, plus the joint loss.

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "bisenet/backbone.hpp"
#include "bisenet/executor.hpp"
#include "bisenet/graph.hpp"
#include "bisenet/ops.hpp"
#include "bisenet/param_store.hpp"

namespace bisenet {

enum class Fusion { kSum, kFfm };
enum class ContextFusion { kUShape8s, kUShape4s };
enum class ArmGate { kSigmoid, kRelu };
enum class AuxTap { kRaw, kRefined };
enum class LossMode { kPlain, kBootstrap };
enum class LossResolution { kDownsampleLabels, kUpsampleLogits };

std::string_view to_string(Fusion v);
std::string_view to_string(ContextFusion v);
std::string_view to_string(ArmGate v);
std::string_view to_string(AuxTap v);
std::string_view to_string(LossMode v);
std::string_view to_string(LossResolution v);

struct BiSeNetConfig {
  std::int64_t num_classes = 19;
  std::array<std::int64_t, 3> sp_channels{64, 64, 128};
  std::int64_t cp_channels = 128;     // common width of the context decoder
  std::int64_t ffm_channels = 256;
  std::int64_t ffm_reduction = 4;
  std::int64_t head_channels = 64;    // main head 3x3 conv width
  bool use_spatial_path = true;
  Fusion fusion = Fusion::kFfm;
  bool use_global_pool = true;
  bool use_arm = true;
  ContextFusion context_fusion = ContextFusion::kUShape8s;
  ArmGate arm_gate = ArmGate::kSigmoid;
  AuxTap aux_tap = AuxTap::kRefined;
  double aux_loss_weight = 1.0;       // alpha
  LossMode loss_mode = LossMode::kPlain;
  LossResolution loss_resolution = LossResolution::kDownsampleLabels;
  double bootstrap_keep_fraction = kBootstrapKeepFraction;
  std::int64_t bootstrap_min_kept = kBootstrapMinKept;
  std::int32_t ignore_index = kIgnoreLabel;
  // Reference backbone with a 512-wide stride-32 stage: carries the
  // parameter mass of the full model while staying inside its FLOP budget.
  BackboneConfig backbone = default_model_backbone();

  // Throws kConfig naming the offending field.
  void validate() const;
  // Width of the feature entering the main head.
  std::int64_t fused_channels() const;
  friend bool operator==(const BiSeNetConfig&, const BiSeNetConfig&) = default;
};

// The six component rows of the ablation table, in table order.
enum class AblationRow { kCp, kCpSpSum, kCpSpFfm, kCpSpFfmGp, kCpSpFfmArm, kFull };
inline constexpr std::array<AblationRow, 6> kAblationRows{AblationRow::kCp,         AblationRow::kCpSpSum,
                                                          AblationRow::kCpSpFfm,    AblationRow::kCpSpFfmGp,
                                                          AblationRow::kCpSpFfmArm, AblationRow::kFull};
std::string_view to_string(AblationRow row);
BiSeNetConfig ablation_config(AblationRow row, BiSeNetConfig base = {});

// Value names used in the network graph.
namespace val {
inline constexpr const char* kImage = "image";
inline constexpr const char* kSpatial = "sp.conv3.relu";
inline constexpr const char* kAttention16 = "cp.arm16.gate";
inline constexpr const char* kAttention32 = "cp.arm32.gate";
inline constexpr const char* kFused = "ffm.out";
inline constexpr const char* kLogits = "head.main.cls";
inline constexpr const char* kAux16 = "head.aux16";
inline constexpr const char* kAux32 = "head.aux32";
}  // namespace val

// Sub-network builders; each appends layers and returns its output value.
std::string build_spatial_path(GraphBuilder& b, const std::string& in, const BiSeNetConfig& cfg);
// gap -> conv1x1 -> BN -> gate; the gate output is `<name>.gate`.
std::string build_arm(GraphBuilder& b, const std::string& name, const std::string& in, ArmGate gate);
struct ContextOutputs {
  std::string context;  // stride 8
  std::string tap16;
  std::string tap32;
};
ContextOutputs build_context_path(GraphBuilder& b, const std::string& in, const BiSeNetConfig& cfg);
std::string build_ffm(GraphBuilder& b, const std::string& sp, const std::string& cp, const BiSeNetConfig& cfg);

// Whole network with input "image"; includes the aux heads.
Graph build_bisenet(const BiSeNetConfig& cfg);

template <typename T>
struct ForwardArtifacts {
  BasicTensor<T> main_logits;               // stride 8
  std::vector<BasicTensor<T>> aux_logits;   // stride 16, 32 (train mode, alpha > 0)
  BasicTensor<T> fused_feature;
  std::vector<BasicTensor<T>> attention_vectors;  // (n, c, 1, 1) per ARM
};

// Graph plus executor for one configuration.
template <typename T>
class BasicModel {
 public:
  explicit BasicModel(BiSeNetConfig cfg);

  const BiSeNetConfig& config() const { return cfg_; }
  const Graph& graph() const { return exec_.graph(); }
  Executor<T>& executor() { return exec_; }

  // Outputs required for training (main + aux logits when alpha > 0).
  std::vector<std::string> train_outputs() const;

  ForwardArtifacts<T> forward(BasicParamStore<T>& store, const BasicTensor<T>& x, Mode mode);
  // Main logits only; reuses the executor's planned buffers.
  const BasicTensor<T>& infer(BasicParamStore<T>& store, const BasicTensor<T>& x);

 private:
  BiSeNetConfig cfg_;
  Executor<T> exec_;
  std::vector<std::string> infer_outputs_;
  std::map<std::string, const BasicTensor<T>*> feed_;
};

using Model = BasicModel<float>;

// Standalone evaluation of the pieces (build a graph, run it once).
template <typename T>
BasicTensor<T> spatial_path(const BasicTensor<T>& x, BasicParamStore<T>& store, const BiSeNetConfig& cfg,
                            Mode mode);
template <typename T>
BasicTensor<T> arm(const BasicTensor<T>& feature, BasicParamStore<T>& store, const std::string& name,
                   ArmGate gate = ArmGate::kSigmoid, Mode mode = Mode::kInfer);
template <typename T>
struct ContextPathResult {
  BasicTensor<T> context;
  BasicTensor<T> tap16;
  BasicTensor<T> tap32;
};
template <typename T>
ContextPathResult<T> context_path(const BasicTensor<T>& x, BasicParamStore<T>& store, const BiSeNetConfig& cfg,
                                  Mode mode);
template <typename T>
BasicTensor<T> ffm(const BasicTensor<T>& sp, const BasicTensor<T>& cp, BasicParamStore<T>& store,
                   const BiSeNetConfig& cfg, Mode mode);
template <typename T>
ForwardArtifacts<T> bisenet_forward(const BasicTensor<T>& x, BasicParamStore<T>& store, const BiSeNetConfig& cfg,
                                    Mode mode);

template <typename T>
struct JointLoss {
  double total = 0.0;  // L = lp + alpha * (l2 + l3)
  double lp = 0.0;
  double l2 = 0.0;
  double l3 = 0.0;
  BasicTensor<T> grad_main;
  BasicTensor<T> grad_aux16;  // empty without aux logits
  BasicTensor<T> grad_aux32;
};

// Labels are at input resolution. aux16 / aux32 may be null (then l2 = l3 = 0).
template <typename T>
JointLoss<T> joint_loss(const BasicTensor<T>& main_logits, const BasicTensor<T>* aux16,
                        const BasicTensor<T>* aux32, const LabelMap& labels, const BiSeNetConfig& cfg);

// Upsamples stride-8 logits by 8 and takes the per-pixel argmax (ties go to
// the lowest class id).
template <typename T>
LabelMap predict_full_res(const BasicTensor<T>& main_logits, std::int64_t input_h, std::int64_t input_w);
// Allocation-free variant given reusable buffers.
template <typename T>
void predict_full_res_into(const BasicTensor<T>& main_logits, BasicTensor<T>& upsampled, LabelMap& out);

}  // namespace bisenet
