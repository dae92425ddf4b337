#include "bisenet/bisenet.hpp"

#include <algorithm>

namespace bisenet {

std::string_view to_string(Fusion v) { return v == Fusion::kSum ? "sum" : "ffm"; }
std::string_view to_string(ContextFusion v) {
  return v == ContextFusion::kUShape8s ? "ushape8s" : "ushape4s";
}
std::string_view to_string(ArmGate v) { return v == ArmGate::kSigmoid ? "sigmoid" : "relu"; }
std::string_view to_string(AuxTap v) { return v == AuxTap::kRaw ? "raw" : "refined"; }
std::string_view to_string(LossMode v) { return v == LossMode::kPlain ? "plain" : "bootstrap"; }
std::string_view to_string(LossResolution v) {
  return v == LossResolution::kDownsampleLabels ? "downsample_labels" : "upsample_logits";
}

std::string_view to_string(AblationRow row) {
  switch (row) {
    case AblationRow::kCp: return "CP";
    case AblationRow::kCpSpSum: return "CP+SP(Sum)";
    case AblationRow::kCpSpFfm: return "CP+SP(FFM)";
    case AblationRow::kCpSpFfmGp: return "CP+SP(FFM)+GP";
    case AblationRow::kCpSpFfmArm: return "CP+SP(FFM)+ARM";
    case AblationRow::kFull: return "CP+SP(FFM)+GP+ARM";
  }
  return "?";
}

BiSeNetConfig ablation_config(AblationRow row, BiSeNetConfig base) {
  base.use_spatial_path = row != AblationRow::kCp;
  base.fusion = row == AblationRow::kCpSpSum ? Fusion::kSum : Fusion::kFfm;
  base.use_global_pool = row == AblationRow::kCpSpFfmGp || row == AblationRow::kFull;
  base.use_arm = row == AblationRow::kCpSpFfmArm || row == AblationRow::kFull;
  return base;
}

void BiSeNetConfig::validate() const {
  const auto bad = [](const std::string& msg) { fail(ErrorKind::kConfig, msg); };
  if (num_classes < 2) bad("model.num_classes must be >= 2");
  for (auto c : sp_channels)
    if (c < 1) bad("model.sp_channels must be >= 1");
  if (cp_channels < 1) bad("model.cp_channels must be >= 1");
  if (ffm_channels < 1) bad("model.ffm_channels must be >= 1");
  if (head_channels < 1) bad("model.head_channels must be >= 1");
  if (ffm_reduction < 1 || ffm_channels % ffm_reduction != 0)
    bad("model.ffm_reduction must divide model.ffm_channels");
  if (!(aux_loss_weight >= 0.0)) bad("model.aux_loss_weight must be >= 0");
  if (!(bootstrap_keep_fraction > 0.0 && bootstrap_keep_fraction <= 1.0))
    bad("model.bootstrap_keep_fraction must be in (0, 1]");
  if (bootstrap_min_kept < 1) bad("model.bootstrap_min_kept must be >= 1");
  if (ignore_index >= 0 && ignore_index < num_classes) bad("model.ignore_index collides with a class id");
  backbone.validate();
}

std::int64_t BiSeNetConfig::fused_channels() const { return use_spatial_path ? ffm_channels : cp_channels; }

// ---------------------------------------------------------------------------

std::string build_spatial_path(GraphBuilder& b, const std::string& in, const BiSeNetConfig& cfg) {
  auto v = b.conv_bn_relu("sp.conv1", in, cfg.sp_channels[0], 3, 2);
  v = b.conv_bn_relu("sp.conv2", v, cfg.sp_channels[1], 3, 2);
  return b.conv_bn_relu("sp.conv3", v, cfg.sp_channels[2], 3, 2);
}

std::string build_arm(GraphBuilder& b, const std::string& name, const std::string& in, ArmGate gate) {
  auto v = b.gap(name + ".gap", in);
  v = b.conv(name + ".conv", v, b.channels(in), 1);
  v = b.bn(name + ".bn", v);
  v = gate == ArmGate::kSigmoid ? b.sigmoid(name + ".gate", v) : b.relu(name + ".gate", v);
  return b.mul(name, in, v);
}

ContextOutputs build_context_path(GraphBuilder& b, const std::string& in, const BiSeNetConfig& cfg) {
  const auto taps = build_backbone(b, in, cfg.backbone);
  const std::int64_t cp = cfg.cp_channels;
  ContextOutputs out;

  std::string r32 = taps.feat32;
  std::string r16 = taps.feat16;
  if (cfg.use_arm) {
    r32 = build_arm(b, "cp.arm32", taps.feat32, cfg.arm_gate);
    r16 = build_arm(b, "cp.arm16", taps.feat16, cfg.arm_gate);
  }
  out.tap32 = cfg.aux_tap == AuxTap::kRefined ? r32 : taps.feat32;
  out.tap16 = cfg.aux_tap == AuxTap::kRefined ? r16 : taps.feat16;

  if (cfg.use_global_pool) {
    auto g = b.gap("cp.gp.pool", taps.feat32);
    g = b.conv_bn_relu("cp.gp", g, b.channels(taps.feat32), 1);
    r32 = b.add("cp.gp.add", r32, g);
  }
  auto v = b.conv_bn_relu("cp.proj32", r32, cp, 1);
  v = b.upsample("cp.up32", v, 2);
  v = b.add("cp.sum16", v, b.conv_bn_relu("cp.proj16", r16, cp, 1));
  v = b.conv_bn_relu("cp.refine16", v, cp, 3);
  v = b.upsample("cp.up16", v, 2);
  if (cfg.context_fusion == ContextFusion::kUShape4s) {
    v = b.add("cp.sum8", v, b.conv_bn_relu("cp.proj8", taps.feat8, cp, 1));
    v = b.conv_bn_relu("cp.refine8", v, cp, 3);
    v = b.upsample("cp.up8", v, 2);
    v = b.add("cp.sum4", v, b.conv_bn_relu("cp.proj4", taps.feat4, cp, 1));
    v = b.conv_bn_relu("cp.refine4", v, cp, 3);
    v = b.conv_bn_relu("cp.align", v, cp, 3, 2);
  }
  out.context = v;
  return out;
}

std::string build_ffm(GraphBuilder& b, const std::string& sp, const std::string& cp, const BiSeNetConfig& cfg) {
  const std::int64_t c = cfg.ffm_channels;
  if (cfg.fusion == Fusion::kSum) {
    auto s = b.conv("ffm.sum.sp", sp, c, 1);
    auto t = b.conv("ffm.sum.cp", cp, c, 1);
    auto v = b.add("ffm.sum.add", s, t);
    v = b.bn("ffm.sum.bn", v);
    return b.relu(val::kFused, v);
  }
  auto f = b.concat("ffm.concat", {sp, cp});
  f = b.conv_bn_relu("ffm.fuse", f, c, 1);
  auto w = b.gap("ffm.gap", f);
  w = b.conv("ffm.se1", w, c / cfg.ffm_reduction, 1);
  w = b.relu("ffm.se1.relu", w);
  w = b.conv("ffm.se2", w, c, 1);
  w = b.sigmoid("ffm.gate", w);
  auto m = b.mul("ffm.mul", f, w);
  return b.add(val::kFused, f, m);
}

Graph build_bisenet(const BiSeNetConfig& cfg) {
  cfg.validate();
  GraphBuilder b;
  b.input(val::kImage, cfg.backbone.input_channels);
  const auto ctx = build_context_path(b, val::kImage, cfg);
  std::string fused = ctx.context;
  if (cfg.use_spatial_path) {
    const auto sp = build_spatial_path(b, val::kImage, cfg);
    fused = build_ffm(b, sp, ctx.context, cfg);
  }
  auto v = b.conv_bn_relu("head.main", fused, cfg.head_channels, 3);
  b.conv(val::kLogits, v, cfg.num_classes, 1, 1, 1, true);
  b.conv(val::kAux16, ctx.tap16, cfg.num_classes, 1, 1, 1, true);
  b.conv(val::kAux32, ctx.tap32, cfg.num_classes, 1, 1, 1, true);
  return b.release();
}

namespace {

std::string fused_value(const BiSeNetConfig& cfg) {
  if (cfg.use_spatial_path) return val::kFused;
  return cfg.context_fusion == ContextFusion::kUShape8s ? "cp.up16" : "cp.align.relu";
}

}  // namespace

// ---------------------------------------------------------------------------

template <typename T>
BasicModel<T>::BasicModel(BiSeNetConfig cfg) : cfg_(std::move(cfg)), exec_(build_bisenet(cfg_)) {
  infer_outputs_ = {val::kLogits};
  feed_[val::kImage] = nullptr;
}

template <typename T>
std::vector<std::string> BasicModel<T>::train_outputs() const {
  if (cfg_.aux_loss_weight > 0.0) return {val::kLogits, val::kAux16, val::kAux32};
  return {val::kLogits};
}

template <typename T>
ForwardArtifacts<T> BasicModel<T>::forward(BasicParamStore<T>& store, const BasicTensor<T>& x, Mode mode) {
  require_multiple(x.shape(), 32, "network input");
  std::vector<std::string> outs = mode == Mode::kTrain ? train_outputs() : infer_outputs_;
  const std::string fused = fused_value(cfg_);
  outs.push_back(fused);
  if (cfg_.use_arm) {
    outs.push_back(val::kAttention16);
    outs.push_back(val::kAttention32);
  }
  exec_.forward(store, {{val::kImage, &x}}, mode, outs);
  ForwardArtifacts<T> a;
  a.main_logits = exec_.value(val::kLogits);
  if (mode == Mode::kTrain && cfg_.aux_loss_weight > 0.0) {
    a.aux_logits.push_back(exec_.value(val::kAux16));
    a.aux_logits.push_back(exec_.value(val::kAux32));
  }
  a.fused_feature = exec_.value(fused);
  if (cfg_.use_arm) {
    a.attention_vectors.push_back(exec_.value(val::kAttention16));
    a.attention_vectors.push_back(exec_.value(val::kAttention32));
  }
  return a;
}

template <typename T>
const BasicTensor<T>& BasicModel<T>::infer(BasicParamStore<T>& store, const BasicTensor<T>& x) {
  require_multiple(x.shape(), 32, "network input");
  feed_.begin()->second = &x;
  exec_.forward(store, feed_, Mode::kInfer, infer_outputs_);
  return exec_.value(val::kLogits);
}

// ---------------------------------------------------------------------------

template <typename T>
BasicTensor<T> spatial_path(const BasicTensor<T>& x, BasicParamStore<T>& store, const BiSeNetConfig& cfg,
                            Mode mode) {
  require_multiple(x.shape(), 8, "spatial path input");
  GraphBuilder b;
  b.input("image", x.shape().c);
  const auto out = build_spatial_path(b, "image", cfg);
  Executor<T> ex(b.release());
  ex.forward(store, {{"image", &x}}, mode, {out});
  return ex.value(out);
}

template <typename T>
BasicTensor<T> arm(const BasicTensor<T>& feature, BasicParamStore<T>& store, const std::string& name,
                   ArmGate gate, Mode mode) {
  GraphBuilder b;
  b.input("feature", feature.shape().c);
  const auto out = build_arm(b, name, "feature", gate);
  Executor<T> ex(b.release());
  ex.forward(store, {{"feature", &feature}}, mode, {out});
  return ex.value(out);
}

template <typename T>
ContextPathResult<T> context_path(const BasicTensor<T>& x, BasicParamStore<T>& store, const BiSeNetConfig& cfg,
                                  Mode mode) {
  require_multiple(x.shape(), 32, "context path input");
  GraphBuilder b;
  b.input("image", x.shape().c);
  const auto out = build_context_path(b, "image", cfg);
  Executor<T> ex(b.release());
  ex.forward(store, {{"image", &x}}, mode, {out.context, out.tap16, out.tap32});
  return ContextPathResult<T>{ex.value(out.context), ex.value(out.tap16), ex.value(out.tap32)};
}

template <typename T>
BasicTensor<T> ffm(const BasicTensor<T>& sp, const BasicTensor<T>& cp, BasicParamStore<T>& store,
                   const BiSeNetConfig& cfg, Mode mode) {
  const Shape& a = sp.shape();
  const Shape& c = cp.shape();
  if (a.n != c.n || a.h != c.h || a.w != c.w)
    fail(ErrorKind::kShape, "ffm: spatial path " + a.str() + " and context path " + c.str() + " differ");
  GraphBuilder b;
  b.input("sp", a.c);
  b.input("cp", c.c);
  const auto out = build_ffm(b, "sp", "cp", cfg);
  Executor<T> ex(b.release());
  ex.forward(store, {{"sp", &sp}, {"cp", &cp}}, mode, {out});
  return ex.value(out);
}

template <typename T>
ForwardArtifacts<T> bisenet_forward(const BasicTensor<T>& x, BasicParamStore<T>& store, const BiSeNetConfig& cfg,
                                    Mode mode) {
  BasicModel<T> model(cfg);
  return model.forward(store, x, mode);
}

// ---------------------------------------------------------------------------

namespace {

template <typename T>
LossResult<T> pixel_loss(const BasicTensor<T>& logits, const LabelMap& labels, const BiSeNetConfig& cfg) {
  if (cfg.loss_mode == LossMode::kBootstrap)
    return bootstrap_ce_loss(logits, labels, cfg.bootstrap_keep_fraction, cfg.bootstrap_min_kept,
                             cfg.ignore_index);
  return softmax_ce_loss(logits, labels, cfg.ignore_index);
}

template <typename T>
LossResult<T> head_loss(const BasicTensor<T>& logits, const LabelMap& labels, std::int64_t stride,
                        const BiSeNetConfig& cfg) {
  const Shape& s = logits.shape();
  if (labels.n != s.n || labels.h != s.h * stride || labels.w != s.w * stride)
    fail(ErrorKind::kShape, "labels (" + std::to_string(labels.n) + "," + std::to_string(labels.h) + "," +
                                std::to_string(labels.w) + ") do not match logits " + s.str() + " at stride " +
                                std::to_string(stride));
  if (cfg.loss_resolution == LossResolution::kDownsampleLabels)
    return pixel_loss(logits, downsample_labels(labels, stride), cfg);
  const int f = static_cast<int>(stride);
  LossResult<T> r = pixel_loss(bilinear_upsample(logits, f), labels, cfg);
  r.grad = bilinear_upsample_backward(r.grad, f, s);
  return r;
}

template <typename T>
void scale(BasicTensor<T>& t, double k) {
  const T kk = static_cast<T>(k);
  for (auto& v : t.data()) v *= kk;
}

}  // namespace

template <typename T>
JointLoss<T> joint_loss(const BasicTensor<T>& main_logits, const BasicTensor<T>* aux16,
                        const BasicTensor<T>* aux32, const LabelMap& labels, const BiSeNetConfig& cfg) {
  if (main_logits.shape().c != cfg.num_classes)
    fail(ErrorKind::kShape, "main logits have " + std::to_string(main_logits.shape().c) + " channels");
  JointLoss<T> out;
  auto main = head_loss(main_logits, labels, 8, cfg);
  out.lp = main.loss;
  out.grad_main = std::move(main.grad);
  const double alpha = cfg.aux_loss_weight;
  if (aux16) {
    auto r = head_loss(*aux16, labels, 16, cfg);
    out.l2 = r.loss;
    out.grad_aux16 = std::move(r.grad);
    scale(out.grad_aux16, alpha);
  }
  if (aux32) {
    auto r = head_loss(*aux32, labels, 32, cfg);
    out.l3 = r.loss;
    out.grad_aux32 = std::move(r.grad);
    scale(out.grad_aux32, alpha);
  }
  out.total = alpha == 0.0 ? out.lp : out.lp + alpha * (out.l2 + out.l3);
  return out;
}

template <typename T>
void predict_full_res_into(const BasicTensor<T>& main_logits, BasicTensor<T>& upsampled, LabelMap& out) {
  bilinear_upsample_into(main_logits, 8, upsampled);
  const Shape& s = upsampled.shape();
  out.n = s.n;
  out.h = s.h;
  out.w = s.w;
  out.data.resize(static_cast<std::size_t>(s.n * s.h * s.w));
  const std::int64_t hw = s.spatial();
  for (std::int64_t n = 0; n < s.n; ++n) {
    const T* base = upsampled.ptr() + n * s.c * hw;
    std::int32_t* dst = out.data.data() + n * hw;
    for (std::int64_t i = 0; i < hw; ++i) {
      std::int32_t best = 0;
      T best_v = base[i];
      for (std::int64_t c = 1; c < s.c; ++c) {
        const T v = base[c * hw + i];
        if (v > best_v) {
          best_v = v;
          best = static_cast<std::int32_t>(c);
        }
      }
      dst[i] = best;
    }
  }
}

template <typename T>
LabelMap predict_full_res(const BasicTensor<T>& main_logits, std::int64_t input_h, std::int64_t input_w) {
  const Shape& s = main_logits.shape();
  if (s.h * 8 != input_h || s.w * 8 != input_w)
    fail(ErrorKind::kShape, "logits " + s.str() + " are not stride 8 of " + std::to_string(input_h) + "x" +
                                std::to_string(input_w));
  BasicTensor<T> up;
  LabelMap out;
  predict_full_res_into(main_logits, up, out);
  return out;
}

#define BISENET_INSTANTIATE(T)                                                                               \
  template class BasicModel<T>;                                                                             \
  template BasicTensor<T> spatial_path<T>(const BasicTensor<T>&, BasicParamStore<T>&, const BiSeNetConfig&,  \
                                          Mode);                                                            \
  template BasicTensor<T> arm<T>(const BasicTensor<T>&, BasicParamStore<T>&, const std::string&, ArmGate,  \
                                 Mode);                                                                     \
  template ContextPathResult<T> context_path<T>(const BasicTensor<T>&, BasicParamStore<T>&,                 \
                                                const BiSeNetConfig&, Mode);                                \
  template BasicTensor<T> ffm<T>(const BasicTensor<T>&, const BasicTensor<T>&, BasicParamStore<T>&,         \
                                 const BiSeNetConfig&, Mode);                                               \
  template ForwardArtifacts<T> bisenet_forward<T>(const BasicTensor<T>&, BasicParamStore<T>&,               \
                                                  const BiSeNetConfig&, Mode);                              \
  template JointLoss<T> joint_loss<T>(const BasicTensor<T>&, const BasicTensor<T>*, const BasicTensor<T>*,  \
                                      const LabelMap&, const BiSeNetConfig&);                               \
  template void predict_full_res_into<T>(const BasicTensor<T>&, BasicTensor<T>&, LabelMap&);                \
  template LabelMap predict_full_res<T>(const BasicTensor<T>&, std::int64_t, std::int64_t);

BISENET_INSTANTIATE(float)
BISENET_INSTANTIATE(double)

}  // namespace bisenet
