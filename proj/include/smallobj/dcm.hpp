#pragma once

#include <array>

#include "smallobj/ops.hpp"
#include "smallobj/tensor.hpp"

namespace smallobj {

// Dilated-convolution enhancement block: five 3x3 convs with dilation
// series 2,4,8,4,2 (padding = dilation, so shape is preserved), Mish after
// each, cross-layer skips into the mirrored stages, a 1x1 mix conv, and a
// residual merge with the block input.
struct DcmParams {
    static constexpr std::array<int, 5> kDilations{2, 4, 8, 4, 2};
    // Receptive field of the non-residual branch: 1 + 2*(2+4+8+4+2).
    static constexpr int kReceptiveField = 41;

    int channels = 0;
    std::array<ConvSpec, 5> stages;
    ConvSpec mix;  // 1x1

    void validate() const;
};

DcmParams make_dcm_params(int channels, Rng& rng);
DcmParams make_dcm_params_zero(int channels);

// The dilated branch alone (no residual). Support of an impulse response
// stays within kReceptiveField x kReceptiveField.
Tensor dcm_enhance(const Tensor& x, const DcmParams& params);

// x + dcm_enhance(x). Zero parameters give the exact identity.
Tensor dcm_forward(const Tensor& x, const DcmParams& params);

}  // namespace smallobj
