#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "smallobj/box.hpp"
#include "smallobj/cbam.hpp"
#include "smallobj/dcm.hpp"
#include "smallobj/ops.hpp"
#include "smallobj/rng.hpp"
#include "smallobj/tensor.hpp"

namespace smallobj {

struct Anchor {
    double w = 0.0;
    double h = 0.0;
};

// Hand-set anchor table scaled to the input resolution; [scale][anchor],
// scales ordered stride 8, 16, 32.
std::array<std::array<Anchor, 3>, 3> default_anchors(int input_size);

struct ModelConfig {
    int input_size = 640;
    double width = 0.25;                  // channel multiplier
    std::array<int, 5> blocks{1, 1, 2, 2, 1};
    int num_classes = 4;
    int fusion_channels = -1;             // -1: auto (256 * width); 0: fusion disabled
    std::array<std::array<Anchor, 3>, 3> anchors = default_anchors(640);

    // Base channel count scaled by the width multiplier, at least 1.
    int ch(int base) const;
    bool fusion_enabled() const { return fusion_channels != 0; }
    int resolved_fusion_channels() const;
    void validate() const;  // throws std::invalid_argument
};

struct FeaturePyramid {
    Tensor r1;  // stride 2 tap
    Tensor r2;  // stride 4 tap
    Tensor r3;  // stride 8 tap (same tensor as c3)
    Tensor c3;  // stride 8
    Tensor c4;  // stride 16
    Tensor c5;  // stride 32
};

struct ResidualBlock {
    ConvSpec squeeze;  // 1x1, C -> C/2
    ConvSpec expand;   // 3x3, C/2 -> C
};

struct BackboneStage {
    ConvSpec down;  // 3x3 stride 2
    std::vector<ResidualBlock> blocks;
};

struct BackboneParams {
    ConvSpec stem;  // 3x3 stride 1
    std::array<BackboneStage, 5> stages;
    DcmParams dcm;  // applied to the deepest stage output
};

struct FusionParams {
    CbamParams cbam_r1;
    CbamParams cbam_r2;
    CbamParams cbam_r3;
    std::vector<double> scale_r1_a;  // l2-normalize scales, one per channel
    std::vector<double> scale_r1_b;
    std::vector<double> scale_r2;
    ConvSpec proj_r1;  // 1x1 to fusion channels
    ConvSpec proj_r2;  // 1x1 to fusion channels
    ConvSpec mix;      // 3x3 after concat
};

struct NeckParams {
    ConvSpec lat5;  // 1x1 on C5
    ConvSpec td5;   // 1x1 before upsample to stride 16
    ConvSpec lat4;  // 1x1 after the stride-16 concat
    ConvSpec td4;   // 1x1 before upsample to stride 8
    ConvSpec lat3;  // 1x1 after the stride-8 concat
    DcmParams dcm;  // stride-8 branch, before its head
};

struct HeadParams {
    ConvSpec reduce;    // 1x1, leaky
    ConvSpec cls1;      // 3x3, mish
    ConvSpec cls2;      // 3x3, mish
    ConvSpec cls_proj;  // 1x1 -> 3 * num_classes
    ConvSpec reg1;      // 3x3, mish
    ConvSpec reg2;      // 3x3, mish
    ConvSpec reg_proj;  // 1x1 -> 3 * 5 (tx, ty, tw, th, objectness)
};

struct ModelParams {
    BackboneParams backbone;
    std::optional<FusionParams> fusion;  // absent when fusion is disabled
    NeckParams neck;
    std::array<HeadParams, 3> heads;  // stride 8, 16, 32
};

// One detection scale: class map (3*num_classes channels) and regression map
// (15 channels, anchor-major [a][tx,ty,tw,th,obj]).
struct RawPrediction {
    Tensor cls_map;
    Tensor reg_map;
    int grid = 0;
    int stride = 0;
};

ModelParams make_model_params(const ModelConfig& config, Rng& rng);
ModelParams make_model_params_zero(const ModelConfig& config);

// Visits every trainable scalar in declaration order.
void for_each_param(ModelParams& params, const std::function<void(double&)>& fn);
void for_each_param(const ModelParams& params, const std::function<void(double)>& fn);
std::size_t param_count(const ModelParams& params);

// Hash of the canonical config serialization; stored in the weights header
// so a file can't be loaded into a mismatched architecture.
std::uint64_t config_hash(const ModelConfig& config);

void save_params(const ModelParams& params, const ModelConfig& config,
                 const std::string& path);
ModelParams load_params(const ModelConfig& config, const std::string& path);

FeaturePyramid backbone_forward(const Tensor& image, const ModelConfig& config,
                                const BackboneParams& params);

// r1/r2/r3 at strides 2/4/8 of the same input; output at stride 8 with
// the fusion channel count.
Tensor fusion_forward(const Tensor& r1, const Tensor& r2, const Tensor& r3,
                      const FusionParams& params);

// Top-down path; `fused` (may be null) joins the stride-8 concat. Returns
// per-scale features ordered stride 8, 16, 32.
std::array<Tensor, 3> neck_forward(const FeaturePyramid& pyramid,
                                   const Tensor* fused,
                                   const NeckParams& params);

RawPrediction head_forward(const Tensor& feat, const HeadParams& params,
                           int num_classes, int stride);

std::array<RawPrediction, 3> model_forward(const Tensor& image,
                                           const ModelConfig& config,
                                           const ModelParams& params);

// Anchor decode: center (sigmoid(t)+cell)*stride, size anchor*e^t, score
// sigmoid(obj)*sigmoid(best class logit); boxes clipped to [0, input_size],
// detections below score_floor or with empty clipped area dropped.
std::vector<Detection> decode_predictions(const std::array<RawPrediction, 3>& raw,
                                          const ModelConfig& config,
                                          double score_floor);

}  // namespace smallobj
