#include "doctest.h"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <vector>

#include "smallobj/arch.hpp"
#include "smallobj/rng.hpp"

using namespace smallobj;

namespace {

Tensor random_image(Rng& rng, int c, int h, int w) {
    Tensor t(c, h, w);
    for (double& v : t.data()) v = rng.uniform();
    return t;
}

ModelConfig small_config() {
    ModelConfig mc;
    mc.input_size = 160;
    mc.anchors = default_anchors(160);
    return mc;
}

std::vector<double> dump_params(const ModelParams& p) {
    std::vector<double> out;
    out.reserve(param_count(p));
    for_each_param(p, [&](double v) { out.push_back(v); });
    return out;
}

// independent recount of the parameter budget from the channel plan
std::size_t expected_param_count(const ModelConfig& mc) {
    const auto conv = [](int in, int out, int k) {
        return static_cast<std::size_t>(out) * in * k * k + out;
    };
    const auto lin = [](int in, int out) {
        return static_cast<std::size_t>(out) * in + out;
    };
    const auto cbam = [&](int c) {
        const int hidden = std::max(1, c / 16);
        return lin(c, hidden) + lin(hidden, c) + conv(2, 1, 3);
    };
    const auto dcm = [&](int c) { return 5 * conv(c, c, 3) + conv(c, c, 1); };

    const int sc[5] = {mc.ch(64), mc.ch(128), mc.ch(256), mc.ch(512), mc.ch(1024)};
    std::size_t total = conv(3, mc.ch(32), 3);  // stem
    int prev = mc.ch(32);
    for (int s = 0; s < 5; ++s) {
        total += conv(prev, sc[s], 3);  // downsample
        const int half = std::max(1, sc[s] / 2);
        total += mc.blocks[s] * (conv(sc[s], half, 1) + conv(half, sc[s], 3));
        prev = sc[s];
    }
    total += dcm(sc[4]);

    const int f = mc.resolved_fusion_channels();
    if (mc.fusion_enabled()) {
        total += cbam(sc[0]) + cbam(sc[1]) + cbam(sc[2]);
        total += sc[0] + sc[0] + sc[1];  // the three normalize-scale vectors
        total += conv(sc[0], f, 1) + conv(sc[1], f, 1) + conv(2 * f + sc[2], f, 3);
    }

    const int n4 = mc.ch(256), n5 = mc.ch(512);
    total += conv(sc[4], n5, 1) + conv(n5, n4, 1) + conv(n4 + sc[3], n4, 1) +
             conv(n4, mc.ch(128), 1) +
             conv(mc.ch(128) + sc[2] + (mc.fusion_enabled() ? f : 0), n4, 1) +
             dcm(n4);

    const int head_in[3] = {n4, n4, n5};
    const int hidden = mc.ch(256);
    for (int i = 0; i < 3; ++i) {
        total += conv(head_in[i], hidden, 1) + 2 * conv(hidden, hidden, 3) +
                 conv(hidden, 3 * mc.num_classes, 1) + 2 * conv(hidden, hidden, 3) +
                 conv(hidden, 15, 1);
    }
    return total;
}

}  // namespace

TEST_CASE("config validation") {
    ModelConfig mc;
    CHECK_NOTHROW(mc.validate());
    mc.input_size = 100;  // not a multiple of 32
    CHECK_THROWS_AS(mc.validate(), std::invalid_argument);
    mc = {};
    mc.width = 0.0;
    CHECK_THROWS_AS(mc.validate(), std::invalid_argument);
    mc = {};
    mc.num_classes = 0;
    CHECK_THROWS_AS(mc.validate(), std::invalid_argument);
    mc = {};
    mc.fusion_channels = -2;
    CHECK_THROWS_AS(mc.validate(), std::invalid_argument);
}

TEST_CASE("channel scaling floors at one") {
    ModelConfig mc;
    CHECK(mc.ch(32) == 8);
    CHECK(mc.ch(1024) == 256);
    mc.width = 0.01;
    CHECK(mc.ch(32) == 1);
    mc.width = 1.0;
    CHECK(mc.ch(64) == 64);
}

TEST_CASE("default anchors scale with the input resolution") {
    const auto a416 = default_anchors(416);
    const auto a832 = default_anchors(832);
    CHECK(a416[0][0].w == doctest::Approx(10.0));
    CHECK(a416[2][2].h == doctest::Approx(326.0));
    for (int s = 0; s < 3; ++s)
        for (int i = 0; i < 3; ++i) {
            CHECK(a832[s][i].w == doctest::Approx(2.0 * a416[s][i].w));
            CHECK(a832[s][i].h == doctest::Approx(2.0 * a416[s][i].h));
        }
}

TEST_CASE("backbone tap strides are 2, 4, 8 and deep strides 16, 32") {
    const ModelConfig mc = small_config();
    Rng rng(601);
    const ModelParams p = make_model_params(mc, rng);
    const Tensor img = random_image(rng, 3, 160, 160);
    const FeaturePyramid pyr = backbone_forward(img, mc, p.backbone);
    CHECK(pyr.r1.height() == 80);
    CHECK(pyr.r2.height() == 40);
    CHECK(pyr.r3.height() == 20);
    CHECK(pyr.c3.height() == 20);
    CHECK(pyr.c4.height() == 10);
    CHECK(pyr.c5.height() == 5);
    // r3 and c3 are the same tap
    CHECK(pyr.r3.data() == pyr.c3.data());
    // channel plan at width 0.25
    CHECK(pyr.r1.channels() == 16);
    CHECK(pyr.r2.channels() == 32);
    CHECK(pyr.r3.channels() == 64);
    CHECK(pyr.c4.channels() == 128);
    CHECK(pyr.c5.channels() == 256);
}

TEST_CASE("backbone rejects non-multiple-of-32 and non-square inputs") {
    const ModelConfig mc = small_config();
    Rng rng(602);
    const ModelParams p = make_model_params(mc, rng);
    CHECK_THROWS_AS(backbone_forward(Tensor(3, 100, 100), mc, p.backbone),
                    std::invalid_argument);
    CHECK_THROWS_AS(backbone_forward(Tensor(3, 160, 128), mc, p.backbone),
                    std::invalid_argument);
    CHECK_THROWS_AS(backbone_forward(Tensor(1, 160, 160), mc, p.backbone),
                    std::invalid_argument);
}

TEST_CASE("fusion merges the documented tap shapes into a stride-8 map") {
    // taps for a 640 input: 16x320x320, 32x160x160, 64x80x80 -> F x 80x80
    ModelConfig mc;  // default 640
    Rng rng(603);
    const ModelParams p = make_model_params(mc, rng);
    REQUIRE(p.fusion.has_value());
    Rng irng(604);
    const Tensor r1 = random_image(irng, 16, 320, 320);
    const Tensor r2 = random_image(irng, 32, 160, 160);
    const Tensor r3 = random_image(irng, 64, 80, 80);
    const Tensor fused = fusion_forward(r1, r2, r3, *p.fusion);
    CHECK(fused.channels() == mc.resolved_fusion_channels());
    CHECK(fused.channels() == 64);  // 256 * 0.25
    CHECK(fused.height() == 80);
    CHECK(fused.width() == 80);
}

TEST_CASE("fusion concat width is twice f plus the stride-8 tap channels") {
    ModelConfig mc;
    Rng rng(605);
    const ModelParams p = make_model_params(mc, rng);
    REQUIRE(p.fusion.has_value());
    const int f = mc.resolved_fusion_channels();
    CHECK(p.fusion->mix.in_channels == 2 * f + 64);
    CHECK(p.fusion->mix.out_channels == f);
    CHECK(p.fusion->proj_r1.kernel == 1);
    CHECK(p.fusion->proj_r2.kernel == 1);
}

TEST_CASE("fusion rejects swapped or mismatched taps") {
    ModelConfig mc = small_config();
    Rng rng(606);
    const ModelParams p = make_model_params(mc, rng);
    REQUIRE(p.fusion.has_value());
    Rng irng(607);
    const Tensor r1 = random_image(irng, 16, 80, 80);
    const Tensor r2 = random_image(irng, 32, 40, 40);
    const Tensor r3 = random_image(irng, 64, 20, 20);
    CHECK_NOTHROW(fusion_forward(r1, r2, r3, *p.fusion));
    CHECK_THROWS_AS(fusion_forward(r2, r1, r3, *p.fusion), std::invalid_argument);
    CHECK_THROWS_AS(fusion_forward(r1, r3, r2, *p.fusion), std::invalid_argument);
    const Tensor wrong = random_image(irng, 16, 40, 40);  // right channels, wrong plane
    CHECK_THROWS_AS(fusion_forward(wrong, r2, r3, *p.fusion), std::invalid_argument);
}

TEST_CASE("all-zero fusion parameters produce an all-zero fused map") {
    ModelConfig mc = small_config();
    const ModelParams p = make_model_params_zero(mc);
    REQUIRE(p.fusion.has_value());
    Rng irng(608);
    const Tensor fused = fusion_forward(random_image(irng, 16, 80, 80),
                                        random_image(irng, 32, 40, 40),
                                        random_image(irng, 64, 20, 20), *p.fusion);
    for (double v : fused.data()) CHECK(v == 0.0);
}

TEST_CASE("disabling fusion changes only the stride-8 lateral width") {
    ModelConfig with = small_config();
    ModelConfig without = small_config();
    without.fusion_channels = 0;
    Rng r1(609), r2(609);
    const ModelParams pw = make_model_params(with, r1);
    const ModelParams po = make_model_params(without, r2);
    CHECK(pw.fusion.has_value());
    CHECK(!po.fusion.has_value());
    CHECK(pw.neck.lat3.in_channels ==
          po.neck.lat3.in_channels + with.resolved_fusion_channels());
    // everything else in the neck is structurally identical
    CHECK(pw.neck.lat5.in_channels == po.neck.lat5.in_channels);
    CHECK(pw.neck.lat5.out_channels == po.neck.lat5.out_channels);
    CHECK(pw.neck.td5.in_channels == po.neck.td5.in_channels);
    CHECK(pw.neck.lat4.in_channels == po.neck.lat4.in_channels);
    CHECK(pw.neck.td4.out_channels == po.neck.td4.out_channels);
    // and the heads are too
    for (int i = 0; i < 3; ++i) {
        CHECK(pw.heads[i].reduce.in_channels == po.heads[i].reduce.in_channels);
        CHECK(pw.heads[i].cls_proj.out_channels == po.heads[i].cls_proj.out_channels);
    }
}

TEST_CASE("disabled fusion still runs end to end") {
    ModelConfig mc = small_config();
    mc.fusion_channels = 0;
    Rng rng(610);
    const ModelParams p = make_model_params(mc, rng);
    const Tensor img = random_image(rng, 3, 160, 160);
    const auto raw = model_forward(img, mc, p);
    CHECK(raw[0].grid == 20);
    CHECK(raw[2].grid == 5);
}

TEST_CASE("head emits 3*nc class channels and 15 regression channels") {
    ModelConfig mc = small_config();  // nc = 4
    Rng rng(611);
    const ModelParams p = make_model_params(mc, rng);
    const Tensor feat = random_image(rng, 64, 8, 8);
    const RawPrediction out = head_forward(feat, p.heads[0], 4, 8);
    CHECK(out.cls_map.channels() == 12);
    CHECK(out.reg_map.channels() == 15);
    CHECK(out.cls_map.height() == 8);
    CHECK(out.grid == 8);
    CHECK(out.stride == 8);
    CHECK_THROWS_AS(head_forward(feat, p.heads[0], 5, 8), std::invalid_argument);
}

TEST_CASE("classification and regression branches are independent") {
    ModelConfig mc = small_config();
    Rng rng(612);
    ModelParams p = make_model_params(mc, rng);
    const Tensor feat = random_image(rng, 64, 8, 8);
    const RawPrediction base = head_forward(feat, p.heads[0], 4, 8);

    ModelParams cls_bumped = p;
    cls_bumped.heads[0].cls1.weights[0] += 0.5;
    const RawPrediction after_cls = head_forward(feat, cls_bumped.heads[0], 4, 8);
    CHECK(after_cls.reg_map.data() == base.reg_map.data());  // bitwise
    CHECK(after_cls.cls_map.data() != base.cls_map.data());

    ModelParams reg_bumped = p;
    reg_bumped.heads[0].reg2.weights[0] += 0.5;
    const RawPrediction after_reg = head_forward(feat, reg_bumped.heads[0], 4, 8);
    CHECK(after_reg.cls_map.data() == base.cls_map.data());
    CHECK(after_reg.reg_map.data() != base.reg_map.data());
}

TEST_CASE("full forward produces the stride 8/16/32 pyramid") {
    const ModelConfig mc = small_config();
    Rng rng(613);
    const ModelParams p = make_model_params(mc, rng);
    const Tensor img = random_image(rng, 3, 160, 160);
    const auto raw = model_forward(img, mc, p);
    CHECK(raw[0].grid == 20);
    CHECK(raw[1].grid == 10);
    CHECK(raw[2].grid == 5);
    CHECK(raw[0].stride == 8);
    CHECK(raw[1].stride == 16);
    CHECK(raw[2].stride == 32);
    CHECK(raw[0].cls_map.channels() == 12);
    CHECK(raw[0].reg_map.channels() == 15);
    // deterministic: same input, same bits
    const auto raw2 = model_forward(img, mc, p);
    CHECK(raw[0].cls_map.data() == raw2[0].cls_map.data());
    CHECK(raw[2].reg_map.data() == raw2[2].reg_map.data());
}

TEST_CASE("forward validates the input against the config") {
    const ModelConfig mc = small_config();
    Rng rng(614);
    const ModelParams p = make_model_params(mc, rng);
    CHECK_THROWS_AS(model_forward(Tensor(3, 128, 128), mc, p), std::invalid_argument);
}

TEST_CASE("zero parameters give all-zero prediction maps") {
    const ModelConfig mc = small_config();
    const ModelParams p = make_model_params_zero(mc);
    const auto raw = model_forward(Tensor(3, 160, 160), mc, p);
    for (const RawPrediction& r : raw) {
        for (double v : r.cls_map.data()) CHECK(v == 0.0);
        for (double v : r.reg_map.data()) CHECK(v == 0.0);
    }
}

TEST_CASE("param_count matches the independent channel-plan recount") {
    ModelConfig mc = small_config();
    Rng rng(615);
    CHECK(param_count(make_model_params(mc, rng)) == expected_param_count(mc));

    ModelConfig no_fusion = small_config();
    no_fusion.fusion_channels = 0;
    CHECK(param_count(make_model_params(no_fusion, rng)) ==
          expected_param_count(no_fusion));

    ModelConfig wide = small_config();
    wide.width = 0.5;
    wide.num_classes = 7;
    CHECK(param_count(make_model_params(wide, rng)) == expected_param_count(wide));
}

TEST_CASE("for_each_param visits a stable order and count") {
    const ModelConfig mc = small_config();
    Rng rng(616);
    ModelParams p = make_model_params(mc, rng);
    const auto a = dump_params(p);
    CHECK(a.size() == param_count(p));
    // mutate through the non-const visitor, re-dump, confirm the same slots
    std::size_t i = 0;
    for_each_param(p, [&](double& v) { v = static_cast<double>(i++); });
    const auto b = dump_params(p);
    for (std::size_t k = 0; k < b.size(); ++k) CHECK(b[k] == static_cast<double>(k));
}

TEST_CASE("weights save/load round-trips bit-exactly") {
    const ModelConfig mc = small_config();
    Rng rng(617);
    const ModelParams p = make_model_params(mc, rng);
    const auto path = std::filesystem::temp_directory_path() / "arch_roundtrip.bin";
    save_params(p, mc, path.string());
    const ModelParams q = load_params(mc, path.string());
    CHECK(dump_params(p) == dump_params(q));
    // file layout: 8-byte magic + 8-byte hash + 8-byte count + 4 bytes/param
    CHECK(std::filesystem::file_size(path) == 24 + 4 * param_count(p));
    std::filesystem::remove(path);
}

TEST_CASE("weights refuse a mismatched config or damaged file") {
    const ModelConfig mc = small_config();
    Rng rng(618);
    const ModelParams p = make_model_params(mc, rng);
    const auto path = std::filesystem::temp_directory_path() / "arch_guard.bin";
    save_params(p, mc, path.string());

    ModelConfig other = mc;
    other.num_classes = 5;
    CHECK_THROWS_AS(load_params(other, path.string()), std::runtime_error);

    // truncate
    std::filesystem::resize_file(path, std::filesystem::file_size(path) - 5);
    CHECK_THROWS_AS(load_params(mc, path.string()), std::runtime_error);

    {  // wrong magic
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        out << "NOTMAGIC" << std::string(64, '\0');
    }
    CHECK_THROWS_AS(load_params(mc, path.string()), std::runtime_error);
    CHECK_THROWS_AS(load_params(mc, "/nonexistent/weights.bin"), std::runtime_error);
    std::filesystem::remove(path);
}

TEST_CASE("config hash separates configs and is stable") {
    ModelConfig a = small_config();
    ModelConfig b = small_config();
    CHECK(config_hash(a) == config_hash(b));
    b.num_classes = 5;
    CHECK(config_hash(a) != config_hash(b));
    b = small_config();
    b.width = 0.5;
    CHECK(config_hash(a) != config_hash(b));
    b = small_config();
    b.fusion_channels = 0;
    CHECK(config_hash(a) != config_hash(b));
}

TEST_CASE("decode: zero offsets in cell (0,0) at stride 8 center on (4,4)") {
    ModelConfig mc = small_config();
    mc.num_classes = 1;
    for (auto& scale : mc.anchors)
        for (Anchor& a : scale) a = {6.0, 6.0};  // small: no border clipping

    std::array<RawPrediction, 3> raw;
    for (int s = 0; s < 3; ++s) {
        raw[s].stride = 8 << s;
        raw[s].grid = mc.input_size / raw[s].stride;
        raw[s].cls_map = Tensor(3, raw[s].grid, raw[s].grid);
        raw[s].reg_map = Tensor(15, raw[s].grid, raw[s].grid);
    }
    // light up objectness for anchor 0 of scale 0, cell (0,0) only
    raw[0].reg_map.at(4, 0, 0) = 10.0;
    raw[0].cls_map.at(0, 0, 0) = 10.0;

    const auto dets = decode_predictions(raw, mc, 0.5);
    REQUIRE(dets.size() == 1);
    CHECK(dets[0].box.center_x() == doctest::Approx(4.0).epsilon(1e-12));
    CHECK(dets[0].box.center_y() == doctest::Approx(4.0).epsilon(1e-12));
    // zero log-size offsets reproduce the anchor dimensions
    CHECK(dets[0].box.width() == doctest::Approx(6.0).epsilon(1e-12));
    CHECK(dets[0].box.height() == doctest::Approx(6.0).epsilon(1e-12));
    CHECK(dets[0].class_id == 0);
}

TEST_CASE("decode: sigmoid offsets keep centers inside their cell") {
    ModelConfig mc = small_config();
    mc.num_classes = 1;
    for (auto& scale : mc.anchors)
        for (Anchor& a : scale) a = {4.0, 4.0};
    std::array<RawPrediction, 3> raw;
    for (int s = 0; s < 3; ++s) {
        raw[s].stride = 8 << s;
        raw[s].grid = mc.input_size / raw[s].stride;
        raw[s].cls_map = Tensor(3, raw[s].grid, raw[s].grid);
        raw[s].reg_map = Tensor(15, raw[s].grid, raw[s].grid);
    }
    raw[0].reg_map.at(0, 3, 5) = 3.7;   // tx
    raw[0].reg_map.at(1, 3, 5) = -2.2;  // ty
    raw[0].reg_map.at(4, 3, 5) = 10.0;  // obj
    raw[0].cls_map.at(0, 3, 5) = 10.0;
    const auto dets = decode_predictions(raw, mc, 0.5);
    REQUIRE(dets.size() == 1);
    CHECK(dets[0].box.center_x() > 5 * 8.0);
    CHECK(dets[0].box.center_x() < 6 * 8.0);
    CHECK(dets[0].box.center_y() > 3 * 8.0);
    CHECK(dets[0].box.center_y() < 4 * 8.0);
}

TEST_CASE("decode: strongly negative objectness drops the box") {
    ModelConfig mc = small_config();
    mc.num_classes = 1;
    std::array<RawPrediction, 3> raw;
    for (int s = 0; s < 3; ++s) {
        raw[s].stride = 8 << s;
        raw[s].grid = mc.input_size / raw[s].stride;
        raw[s].cls_map = Tensor(3, raw[s].grid, raw[s].grid);
        raw[s].reg_map = Tensor(15, raw[s].grid, raw[s].grid);
        for (int a = 0; a < 3; ++a)
            for (int y = 0; y < raw[s].grid; ++y)
                for (int x = 0; x < raw[s].grid; ++x)
                    raw[s].reg_map.at(a * 5 + 4, y, x) = -1e9;
    }
    CHECK(decode_predictions(raw, mc, 0.001).empty());
}

TEST_CASE("decode: boxes are clipped to the image and kept in-range") {
    ModelConfig mc = small_config();  // default anchors are image-sized at the top scale
    Rng rng(619);
    std::array<RawPrediction, 3> raw;
    for (int s = 0; s < 3; ++s) {
        raw[s].stride = 8 << s;
        raw[s].grid = mc.input_size / raw[s].stride;
        raw[s].cls_map = Tensor(12, raw[s].grid, raw[s].grid);
        raw[s].reg_map = Tensor(15, raw[s].grid, raw[s].grid);
        for (double& v : raw[s].cls_map.data()) v = rng.uniform(-3.0, 3.0);
        for (double& v : raw[s].reg_map.data()) v = rng.uniform(-3.0, 3.0);
    }
    const auto dets = decode_predictions(raw, mc, 0.0);
    CHECK(!dets.empty());
    for (const Detection& d : dets) {
        CHECK(d.box.x_min >= 0.0);
        CHECK(d.box.y_min >= 0.0);
        CHECK(d.box.x_max <= 160.0);
        CHECK(d.box.y_max <= 160.0);
        CHECK(d.box.width() > 0.0);
        CHECK(d.score >= 0.0);
        CHECK(d.score <= 1.0);
        CHECK(d.class_id >= 0);
        CHECK(d.class_id < 4);
    }
}

TEST_CASE("decode: score is the objectness-class product and floor applies") {
    ModelConfig mc = small_config();
    mc.num_classes = 2;
    for (auto& scale : mc.anchors)
        for (Anchor& a : scale) a = {6.0, 6.0};
    std::array<RawPrediction, 3> raw;
    for (int s = 0; s < 3; ++s) {
        raw[s].stride = 8 << s;
        raw[s].grid = mc.input_size / raw[s].stride;
        raw[s].cls_map = Tensor(6, raw[s].grid, raw[s].grid);
        raw[s].reg_map = Tensor(15, raw[s].grid, raw[s].grid);
    }
    raw[0].reg_map.at(4, 2, 2) = 1.2;   // obj logit
    raw[0].cls_map.at(0, 2, 2) = -0.4;  // class 0 logit
    raw[0].cls_map.at(1, 2, 2) = 0.9;   // class 1 logit: the argmax
    const double want = sigmoid(1.2) * sigmoid(0.9);

    auto dets = decode_predictions(raw, mc, want - 1e-9);
    REQUIRE(dets.size() == 1);
    CHECK(dets[0].class_id == 1);
    CHECK(dets[0].score == doctest::Approx(want).epsilon(1e-12));
    // a floor just above the score drops it
    CHECK(decode_predictions(raw, mc, want + 1e-9).empty());
}

TEST_CASE("decode validates map shapes") {
    ModelConfig mc = small_config();
    std::array<RawPrediction, 3> raw;
    for (int s = 0; s < 3; ++s) {
        raw[s].stride = 8 << s;
        raw[s].grid = mc.input_size / raw[s].stride;
        raw[s].cls_map = Tensor(12, raw[s].grid, raw[s].grid);
        raw[s].reg_map = Tensor(15, raw[s].grid, raw[s].grid);
    }
    auto bad = raw;
    bad[1].reg_map = Tensor(14, bad[1].grid, bad[1].grid);
    CHECK_THROWS_AS(decode_predictions(bad, mc, 0.1), std::invalid_argument);
    bad = raw;
    bad[0].cls_map = Tensor(9, bad[0].grid, bad[0].grid);  // wrong class count
    CHECK_THROWS_AS(decode_predictions(bad, mc, 0.1), std::invalid_argument);
    CHECK_THROWS_AS(decode_predictions(raw, mc, -0.5), std::invalid_argument);
}
