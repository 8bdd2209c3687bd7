#include "smallobj/dcm.hpp"

#include <stdexcept>
#include <string>

namespace smallobj {

namespace {

Tensor add(const Tensor& a, const Tensor& b) {
    Tensor out = a;
    const std::vector<double>& src = b.data();
    std::vector<double>& dst = out.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    return out;
}

}  // namespace

void DcmParams::validate() const {
    if (channels <= 0) throw std::invalid_argument("dcm: channels must be positive");
    for (std::size_t i = 0; i < stages.size(); ++i) {
        const ConvSpec& s = stages[i];
        if (s.in_channels != channels || s.out_channels != channels)
            throw std::invalid_argument("dcm: stage channel mismatch");
        if (s.kernel != 3 || s.stride != 1 || s.dilation != kDilations[i] ||
            s.padding != kDilations[i])
            throw std::invalid_argument("dcm: stage " + std::to_string(i) +
                                        " must be k=3, s=1, p=d=" +
                                        std::to_string(kDilations[i]));
    }
    if (mix.in_channels != channels || mix.out_channels != channels ||
        mix.kernel != 1 || mix.stride != 1)
        throw std::invalid_argument("dcm: mix conv must be 1x1, C->C");
}

DcmParams make_dcm_params(int channels, Rng& rng) {
    DcmParams p;
    p.channels = channels;
    for (std::size_t i = 0; i < p.stages.size(); ++i) {
        int d = DcmParams::kDilations[i];
        p.stages[i] = make_conv(channels, channels, 3, 1, d, d, rng);
    }
    p.mix = make_conv(channels, channels, 1, 1, 0, 1, rng);
    return p;
}

DcmParams make_dcm_params_zero(int channels) {
    DcmParams p;
    p.channels = channels;
    for (std::size_t i = 0; i < p.stages.size(); ++i) {
        int d = DcmParams::kDilations[i];
        p.stages[i] = make_conv_zero(channels, channels, 3, 1, d, d);
    }
    p.mix = make_conv_zero(channels, channels, 1, 1, 0, 1);
    return p;
}

Tensor dcm_enhance(const Tensor& x, const DcmParams& params) {
    params.validate();
    if (x.channels() != params.channels) {
        throw std::invalid_argument(
            "dcm: input has " + std::to_string(x.channels()) +
            " channels, params expect " + std::to_string(params.channels));
    }
    Tensor y1 = activation(conv2d(x, params.stages[0]), Activation::Mish);
    Tensor y2 = activation(conv2d(y1, params.stages[1]), Activation::Mish);
    Tensor y3 = activation(conv2d(y2, params.stages[2]), Activation::Mish);
    // mirrored skips: y1 joins the second d=4 stage, y2 the final d=2 stage
    Tensor y4 = activation(conv2d(add(y3, y1), params.stages[3]), Activation::Mish);
    Tensor y5 = activation(conv2d(add(y4, y2), params.stages[4]), Activation::Mish);
    return conv2d(y5, params.mix);
}

Tensor dcm_forward(const Tensor& x, const DcmParams& params) {
    return add(x, dcm_enhance(x, params));
}

}  // namespace smallobj
