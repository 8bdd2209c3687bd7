#include "smallobj/arch.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <stdexcept>
#include <utility>

#include "json.hpp"

namespace smallobj {

namespace {

Tensor add(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) throw std::invalid_argument("add: shape mismatch");
    Tensor y = a;
    for (std::size_t i = 0; i < y.size(); ++i) y.data()[i] += b.data()[i];
    return y;
}

Tensor cbl(const Tensor& x, const ConvSpec& conv, Activation act) {
    return activation(conv2d(x, conv), act);
}

// One fusion downsample step: summed 2x2 max- and avg-pools, then
// scaled l2 normalization across channels.
Tensor fusion_downsample(const Tensor& x, const std::vector<double>& scale) {
    Tensor pooled = add(pool2d(x, PoolKind::Max, 2, 2), pool2d(x, PoolKind::Avg, 2, 2));
    return l2_normalize(pooled, scale);
}

template <typename ConvT, typename F>
void visit_conv(ConvT& c, F& f) {
    for (auto& v : c.weights) f(v);
    for (auto& v : c.bias) f(v);
}

template <typename LinT, typename F>
void visit_linear(LinT& l, F& f) {
    for (auto& v : l.weights) f(v);
    for (auto& v : l.bias) f(v);
}

template <typename CbamT, typename F>
void visit_cbam(CbamT& c, F& f) {
    visit_linear(c.w0, f);
    visit_linear(c.w1, f);
    visit_conv(c.spatial, f);
}

template <typename DcmT, typename F>
void visit_dcm(DcmT& d, F& f) {
    for (auto& s : d.stages) visit_conv(s, f);
    visit_conv(d.mix, f);
}

// Declaration order; save/load and param_count all rely on this walk.
template <typename ParamsT, typename F>
void walk(ParamsT& p, F f) {
    visit_conv(p.backbone.stem, f);
    for (auto& stage : p.backbone.stages) {
        visit_conv(stage.down, f);
        for (auto& blk : stage.blocks) {
            visit_conv(blk.squeeze, f);
            visit_conv(blk.expand, f);
        }
    }
    visit_dcm(p.backbone.dcm, f);
    if (p.fusion) {
        auto& fu = *p.fusion;
        visit_cbam(fu.cbam_r1, f);
        visit_cbam(fu.cbam_r2, f);
        visit_cbam(fu.cbam_r3, f);
        for (auto& v : fu.scale_r1_a) f(v);
        for (auto& v : fu.scale_r1_b) f(v);
        for (auto& v : fu.scale_r2) f(v);
        visit_conv(fu.proj_r1, f);
        visit_conv(fu.proj_r2, f);
        visit_conv(fu.mix, f);
    }
    visit_conv(p.neck.lat5, f);
    visit_conv(p.neck.td5, f);
    visit_conv(p.neck.lat4, f);
    visit_conv(p.neck.td4, f);
    visit_conv(p.neck.lat3, f);
    visit_dcm(p.neck.dcm, f);
    for (auto& h : p.heads) {
        visit_conv(h.reduce, f);
        visit_conv(h.cls1, f);
        visit_conv(h.cls2, f);
        visit_conv(h.cls_proj, f);
        visit_conv(h.reg1, f);
        visit_conv(h.reg2, f);
        visit_conv(h.reg_proj, f);
    }
}

void put_u64(std::ostream& out, std::uint64_t v) {
    char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    out.write(b, 8);
}

bool get_u64(std::istream& in, std::uint64_t& v) {
    unsigned char b[8];
    if (!in.read(reinterpret_cast<char*>(b), 8)) return false;
    v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return true;
}

void put_f32(std::ostream& out, float f) {
    std::uint32_t u = std::bit_cast<std::uint32_t>(f);
    char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((u >> (8 * i)) & 0xff);
    out.write(b, 4);
}

bool get_f32(std::istream& in, float& f) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4)) return false;
    std::uint32_t u = 0;
    for (int i = 0; i < 4; ++i) u |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    f = std::bit_cast<float>(u);
    return true;
}

constexpr char kWeightsMagic[8] = {'S', 'O', 'B', 'J', 'W', '0', '0', '1'};

}  // namespace

std::array<std::array<Anchor, 3>, 3> default_anchors(int input_size) {
    static constexpr double base[3][3][2] = {
        {{10, 13}, {16, 30}, {33, 23}},
        {{30, 61}, {62, 45}, {59, 119}},
        {{116, 90}, {156, 198}, {373, 326}},
    };
    const double k = input_size / 416.0;
    std::array<std::array<Anchor, 3>, 3> out{};
    for (int s = 0; s < 3; ++s)
        for (int a = 0; a < 3; ++a)
            out[s][a] = {base[s][a][0] * k, base[s][a][1] * k};
    return out;
}

int ModelConfig::ch(int base) const {
    return std::max(1, static_cast<int>(std::lround(base * width)));
}

int ModelConfig::resolved_fusion_channels() const {
    return fusion_channels < 0 ? ch(256) : fusion_channels;
}

void ModelConfig::validate() const {
    if (input_size <= 0 || input_size % 32 != 0)
        throw std::invalid_argument("config: input size must be a positive multiple of 32");
    if (!(width > 0.0) || width > 1.0)
        throw std::invalid_argument("config: width multiplier must be in (0, 1]");
    if (num_classes < 1)
        throw std::invalid_argument("config: num_classes must be >= 1");
    for (int b : blocks)
        if (b < 0) throw std::invalid_argument("config: block counts must be >= 0");
    if (fusion_channels < -1)
        throw std::invalid_argument("config: fusion channels must be -1 (auto), 0 (off), or positive");
    for (const auto& scale : anchors)
        for (const Anchor& a : scale)
            if (!(a.w > 0.0) || !(a.h > 0.0))
                throw std::invalid_argument("config: anchors must be positive");
}

ModelParams make_model_params(const ModelConfig& config, Rng& rng) {
    config.validate();
    ModelParams p;
    const int stem = config.ch(32);
    const std::array<int, 5> sc = {config.ch(64), config.ch(128), config.ch(256),
                                   config.ch(512), config.ch(1024)};

    p.backbone.stem = make_conv(3, stem, 3, 1, 1, 1, rng);
    int prev = stem;
    for (int s = 0; s < 5; ++s) {
        p.backbone.stages[s].down = make_conv(prev, sc[s], 3, 2, 1, 1, rng);
        const int half = std::max(1, sc[s] / 2);
        for (int b = 0; b < config.blocks[s]; ++b) {
            ResidualBlock blk;
            blk.squeeze = make_conv(sc[s], half, 1, 1, 0, 1, rng);
            blk.expand = make_conv(half, sc[s], 3, 1, 1, 1, rng);
            p.backbone.stages[s].blocks.push_back(std::move(blk));
        }
        prev = sc[s];
    }
    p.backbone.dcm = make_dcm_params(sc[4], rng);

    if (config.fusion_enabled()) {
        const int fused = config.resolved_fusion_channels();
        FusionParams f;
        f.cbam_r1 = make_cbam_params(sc[0], 16, rng);
        f.cbam_r2 = make_cbam_params(sc[1], 16, rng);
        f.cbam_r3 = make_cbam_params(sc[2], 16, rng);
        f.scale_r1_a.assign(sc[0], 1.0);
        f.scale_r1_b.assign(sc[0], 1.0);
        f.scale_r2.assign(sc[1], 1.0);
        f.proj_r1 = make_conv(sc[0], fused, 1, 1, 0, 1, rng);
        f.proj_r2 = make_conv(sc[1], fused, 1, 1, 0, 1, rng);
        f.mix = make_conv(2 * fused + sc[2], fused, 3, 1, 1, 1, rng);
        p.fusion = std::move(f);
    }

    const int n4 = config.ch(256);
    const int n5 = config.ch(512);
    p.neck.lat5 = make_conv(sc[4], n5, 1, 1, 0, 1, rng);
    p.neck.td5 = make_conv(n5, n4, 1, 1, 0, 1, rng);
    p.neck.lat4 = make_conv(n4 + sc[3], n4, 1, 1, 0, 1, rng);
    p.neck.td4 = make_conv(n4, config.ch(128), 1, 1, 0, 1, rng);
    const int cat3 = config.ch(128) + sc[2] +
                     (config.fusion_enabled() ? config.resolved_fusion_channels() : 0);
    p.neck.lat3 = make_conv(cat3, n4, 1, 1, 0, 1, rng);
    p.neck.dcm = make_dcm_params(n4, rng);

    const std::array<int, 3> head_in = {n4, n4, n5};
    const int hidden = config.ch(256);
    for (int i = 0; i < 3; ++i) {
        HeadParams h;
        h.reduce = make_conv(head_in[i], hidden, 1, 1, 0, 1, rng);
        h.cls1 = make_conv(hidden, hidden, 3, 1, 1, 1, rng);
        h.cls2 = make_conv(hidden, hidden, 3, 1, 1, 1, rng);
        h.cls_proj = make_conv(hidden, 3 * config.num_classes, 1, 1, 0, 1, rng);
        h.reg1 = make_conv(hidden, hidden, 3, 1, 1, 1, rng);
        h.reg2 = make_conv(hidden, hidden, 3, 1, 1, 1, rng);
        h.reg_proj = make_conv(hidden, 15, 1, 1, 0, 1, rng);
        p.heads[i] = std::move(h);
    }
    return p;
}

ModelParams make_model_params_zero(const ModelConfig& config) {
    config.validate();
    ModelParams p;
    const int stem = config.ch(32);
    const std::array<int, 5> sc = {config.ch(64), config.ch(128), config.ch(256),
                                   config.ch(512), config.ch(1024)};

    p.backbone.stem = make_conv_zero(3, stem, 3, 1, 1, 1);
    int prev = stem;
    for (int s = 0; s < 5; ++s) {
        p.backbone.stages[s].down = make_conv_zero(prev, sc[s], 3, 2, 1, 1);
        const int half = std::max(1, sc[s] / 2);
        for (int b = 0; b < config.blocks[s]; ++b) {
            ResidualBlock blk;
            blk.squeeze = make_conv_zero(sc[s], half, 1, 1, 0, 1);
            blk.expand = make_conv_zero(half, sc[s], 3, 1, 1, 1);
            p.backbone.stages[s].blocks.push_back(std::move(blk));
        }
        prev = sc[s];
    }
    p.backbone.dcm = make_dcm_params_zero(sc[4]);

    if (config.fusion_enabled()) {
        const int fused = config.resolved_fusion_channels();
        FusionParams f;
        f.cbam_r1 = make_cbam_params_zero(sc[0], 16);
        f.cbam_r2 = make_cbam_params_zero(sc[1], 16);
        f.cbam_r3 = make_cbam_params_zero(sc[2], 16);
        f.scale_r1_a.assign(sc[0], 0.0);
        f.scale_r1_b.assign(sc[0], 0.0);
        f.scale_r2.assign(sc[1], 0.0);
        f.proj_r1 = make_conv_zero(sc[0], fused, 1, 1, 0, 1);
        f.proj_r2 = make_conv_zero(sc[1], fused, 1, 1, 0, 1);
        f.mix = make_conv_zero(2 * fused + sc[2], fused, 3, 1, 1, 1);
        p.fusion = std::move(f);
    }

    const int n4 = config.ch(256);
    const int n5 = config.ch(512);
    p.neck.lat5 = make_conv_zero(sc[4], n5, 1, 1, 0, 1);
    p.neck.td5 = make_conv_zero(n5, n4, 1, 1, 0, 1);
    p.neck.lat4 = make_conv_zero(n4 + sc[3], n4, 1, 1, 0, 1);
    p.neck.td4 = make_conv_zero(n4, config.ch(128), 1, 1, 0, 1);
    const int cat3 = config.ch(128) + sc[2] +
                     (config.fusion_enabled() ? config.resolved_fusion_channels() : 0);
    p.neck.lat3 = make_conv_zero(cat3, n4, 1, 1, 0, 1);
    p.neck.dcm = make_dcm_params_zero(n4);

    const std::array<int, 3> head_in = {n4, n4, n5};
    const int hidden = config.ch(256);
    for (int i = 0; i < 3; ++i) {
        HeadParams h;
        h.reduce = make_conv_zero(head_in[i], hidden, 1, 1, 0, 1);
        h.cls1 = make_conv_zero(hidden, hidden, 3, 1, 1, 1);
        h.cls2 = make_conv_zero(hidden, hidden, 3, 1, 1, 1);
        h.cls_proj = make_conv_zero(hidden, 3 * config.num_classes, 1, 1, 0, 1);
        h.reg1 = make_conv_zero(hidden, hidden, 3, 1, 1, 1);
        h.reg2 = make_conv_zero(hidden, hidden, 3, 1, 1, 1);
        h.reg_proj = make_conv_zero(hidden, 15, 1, 1, 0, 1);
        p.heads[i] = std::move(h);
    }
    return p;
}

void for_each_param(ModelParams& params, const std::function<void(double&)>& fn) {
    walk(params, [&](double& v) { fn(v); });
}

void for_each_param(const ModelParams& params, const std::function<void(double)>& fn) {
    walk(params, [&](const double& v) { fn(v); });
}

std::size_t param_count(const ModelParams& params) {
    std::size_t n = 0;
    for_each_param(params, [&](double) { ++n; });
    return n;
}

std::uint64_t config_hash(const ModelConfig& config) {
    nlohmann::json j;
    j["input_size"] = config.input_size;
    j["width"] = config.width;
    j["blocks"] = config.blocks;
    j["num_classes"] = config.num_classes;
    j["fusion_channels"] = config.fusion_channels;
    nlohmann::json anchors = nlohmann::json::array();
    for (const auto& scale : config.anchors)
        for (const Anchor& a : scale) anchors.push_back({a.w, a.h});
    j["anchors"] = anchors;
    const std::string bytes = j.dump();

    std::uint64_t h = 1469598103934665603ULL;  // FNV-1a 64
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

void save_params(const ModelParams& params, const ModelConfig& config,
                 const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out.write(kWeightsMagic, 8);
    put_u64(out, config_hash(config));
    put_u64(out, param_count(params));
    for_each_param(params, [&](double v) { put_f32(out, static_cast<float>(v)); });
    out.flush();
    if (!out) throw std::runtime_error("write failed: " + path);
}

ModelParams load_params(const ModelConfig& config, const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open weights file: " + path);
    char magic[8];
    if (!in.read(magic, 8) || !std::equal(magic, magic + 8, kWeightsMagic))
        throw std::runtime_error("not a weights file: " + path);
    std::uint64_t hash = 0;
    if (!get_u64(in, hash)) throw std::runtime_error("weights file truncated: " + path);
    if (hash != config_hash(config))
        throw std::runtime_error("weights file does not match the model configuration: " + path);
    ModelParams params = make_model_params_zero(config);
    std::uint64_t count = 0;
    if (!get_u64(in, count)) throw std::runtime_error("weights file truncated: " + path);
    if (count != param_count(params))
        throw std::runtime_error("weights file has wrong parameter count: " + path);
    bool truncated = false;
    for_each_param(params, [&](double& v) {
        float f = 0.0f;
        if (!get_f32(in, f)) {
            truncated = true;
            return;
        }
        v = static_cast<double>(f);
    });
    if (truncated) throw std::runtime_error("weights file truncated: " + path);
    return params;
}

FeaturePyramid backbone_forward(const Tensor& image, const ModelConfig& config,
                                const BackboneParams& params) {
    config.validate();
    if (image.channels() != 3)
        throw std::invalid_argument("backbone: expected a 3-channel image");
    if (image.height() != image.width())
        throw std::invalid_argument("backbone: image must be square");
    if (image.height() <= 0 || image.height() % 32 != 0)
        throw std::invalid_argument("backbone: image side must be a positive multiple of 32");
    for (int s = 0; s < 5; ++s) {
        if (params.stages[s].blocks.size() != static_cast<std::size_t>(config.blocks[s]))
            throw std::invalid_argument("backbone: stage block counts do not match config");
    }

    Tensor x = cbl(image, params.stem, Activation::LeakyRelu01);
    std::array<Tensor, 5> outs;
    for (int s = 0; s < 5; ++s) {
        x = cbl(x, params.stages[s].down, Activation::LeakyRelu01);
        for (const ResidualBlock& blk : params.stages[s].blocks) {
            Tensor h = cbl(x, blk.squeeze, Activation::LeakyRelu01);
            h = cbl(h, blk.expand, Activation::LeakyRelu01);
            x = add(x, h);
        }
        outs[s] = x;
    }

    FeaturePyramid pyr;
    pyr.r1 = outs[0];
    pyr.r2 = outs[1];
    pyr.r3 = outs[2];
    pyr.c3 = outs[2];
    pyr.c4 = outs[3];
    pyr.c5 = dcm_forward(outs[4], params.dcm);
    return pyr;
}

Tensor fusion_forward(const Tensor& r1, const Tensor& r2, const Tensor& r3,
                      const FusionParams& params) {
    if (r1.height() != 2 * r2.height() || r1.width() != 2 * r2.width() ||
        r2.height() != 2 * r3.height() || r2.width() != 2 * r3.width())
        throw std::invalid_argument("fusion: inputs are not at strides 2/4/8 of one image");
    if (r1.channels() != params.cbam_r1.channels ||
        r2.channels() != params.cbam_r2.channels ||
        r3.channels() != params.cbam_r3.channels)
        throw std::invalid_argument("fusion: input channels do not match parameters");

    Tensor a = cbam_apply(r1, params.cbam_r1);
    a = fusion_downsample(a, params.scale_r1_a);
    a = fusion_downsample(a, params.scale_r1_b);
    a = activation(a, Activation::Relu);
    a = conv2d(a, params.proj_r1);

    Tensor b = cbam_apply(r2, params.cbam_r2);
    b = fusion_downsample(b, params.scale_r2);
    b = activation(b, Activation::Relu);
    b = conv2d(b, params.proj_r2);

    Tensor c = cbam_apply(r3, params.cbam_r3);

    return conv2d(concat_channels({a, b, c}), params.mix);
}

std::array<Tensor, 3> neck_forward(const FeaturePyramid& pyramid,
                                   const Tensor* fused,
                                   const NeckParams& params) {
    Tensor p5 = cbl(pyramid.c5, params.lat5, Activation::LeakyRelu01);
    Tensor td = upsample_nearest(cbl(p5, params.td5, Activation::LeakyRelu01), 2);
    Tensor p4 = cbl(concat_channels({td, pyramid.c4}), params.lat4, Activation::LeakyRelu01);
    Tensor td2 = upsample_nearest(cbl(p4, params.td4, Activation::LeakyRelu01), 2);
    std::vector<Tensor> parts{td2, pyramid.c3};
    if (fused) parts.push_back(*fused);
    Tensor p3 = cbl(concat_channels(parts), params.lat3, Activation::LeakyRelu01);
    p3 = dcm_forward(p3, params.dcm);
    return {std::move(p3), std::move(p4), std::move(p5)};
}

RawPrediction head_forward(const Tensor& feat, const HeadParams& params,
                           int num_classes, int stride) {
    if (params.cls_proj.out_channels != 3 * num_classes)
        throw std::invalid_argument("head: class projection does not match num_classes");
    Tensor h = cbl(feat, params.reduce, Activation::LeakyRelu01);

    Tensor cls = cbl(h, params.cls1, Activation::Mish);
    cls = cbl(cls, params.cls2, Activation::Mish);
    cls = conv2d(cls, params.cls_proj);

    Tensor reg = cbl(h, params.reg1, Activation::Mish);
    reg = cbl(reg, params.reg2, Activation::Mish);
    reg = conv2d(reg, params.reg_proj);

    RawPrediction out;
    out.grid = feat.height();
    out.stride = stride;
    out.cls_map = std::move(cls);
    out.reg_map = std::move(reg);
    return out;
}

std::array<RawPrediction, 3> model_forward(const Tensor& image,
                                           const ModelConfig& config,
                                           const ModelParams& params) {
    config.validate();
    if (image.height() != config.input_size || image.width() != config.input_size)
        throw std::invalid_argument("model: image size does not match the configured input size");
    if (config.fusion_enabled() != params.fusion.has_value())
        throw std::invalid_argument("model: fusion parameters do not match config");

    FeaturePyramid pyr = backbone_forward(image, config, params.backbone);
    std::optional<Tensor> fused;
    if (params.fusion)
        fused = fusion_forward(pyr.r1, pyr.r2, pyr.r3, *params.fusion);
    std::array<Tensor, 3> feats =
        neck_forward(pyr, fused ? &*fused : nullptr, params.neck);

    std::array<RawPrediction, 3> out;
    for (int i = 0; i < 3; ++i)
        out[i] = head_forward(feats[i], params.heads[i], config.num_classes, 8 << i);
    return out;
}

std::vector<Detection> decode_predictions(const std::array<RawPrediction, 3>& raw,
                                          const ModelConfig& config,
                                          double score_floor) {
    config.validate();
    if (score_floor < 0)
        throw std::invalid_argument("decode: score floor must be >= 0");

    const double size = static_cast<double>(config.input_size);
    const int nc = config.num_classes;
    std::vector<Detection> dets;
    for (int sc = 0; sc < 3; ++sc) {
        const RawPrediction& r = raw[sc];
        const int grid = r.reg_map.height();
        if (r.reg_map.channels() != 15 || r.cls_map.channels() != 3 * nc ||
            r.reg_map.width() != grid || r.cls_map.height() != grid ||
            r.cls_map.width() != grid)
            throw std::invalid_argument("decode: malformed prediction maps");
        for (int a = 0; a < 3; ++a) {
            const Anchor& anchor = config.anchors[sc][a];
            for (int cy = 0; cy < grid; ++cy) {
                for (int cx = 0; cx < grid; ++cx) {
                    const double tx = r.reg_map.at(a * 5 + 0, cy, cx);
                    const double ty = r.reg_map.at(a * 5 + 1, cy, cx);
                    const double tw = r.reg_map.at(a * 5 + 2, cy, cx);
                    const double th = r.reg_map.at(a * 5 + 3, cy, cx);
                    const double obj = r.reg_map.at(a * 5 + 4, cy, cx);

                    const double bx = (sigmoid(tx) + cx) * r.stride;
                    const double by = (sigmoid(ty) + cy) * r.stride;
                    const double bw = anchor.w * std::exp(std::clamp(tw, -20.0, 20.0));
                    const double bh = anchor.h * std::exp(std::clamp(th, -20.0, 20.0));

                    int best = 0;
                    double best_logit = r.cls_map.at(a * nc, cy, cx);
                    for (int c = 1; c < nc; ++c) {
                        const double v = r.cls_map.at(a * nc + c, cy, cx);
                        if (v > best_logit) {
                            best_logit = v;
                            best = c;
                        }
                    }
                    const double score = sigmoid(obj) * sigmoid(best_logit);
                    if (score < score_floor) continue;

                    BBox box{std::clamp(bx - 0.5 * bw, 0.0, size),
                             std::clamp(by - 0.5 * bh, 0.0, size),
                             std::clamp(bx + 0.5 * bw, 0.0, size),
                             std::clamp(by + 0.5 * bh, 0.0, size)};
                    if (box.width() <= 0.0 || box.height() <= 0.0) continue;
                    dets.push_back({box, best, score});
                }
            }
        }
    }
    return dets;
}

}  // namespace smallobj
