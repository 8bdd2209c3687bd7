#pragma once

#include <vector>

#include "smallobj/ops.hpp"
#include "smallobj/tensor.hpp"

namespace smallobj {

// Channel-then-spatial attention block. The MLP (w0 with ReLU, then w1) is
// shared by the global-avg and global-max branches; the spatial stage is a
// 3x3 conv over the stacked channel-mean and channel-max maps.
struct CbamParams {
    int channels = 0;
    int reduction = 16;
    LinearSpec w0;     // channels -> hidden
    LinearSpec w1;     // hidden -> channels
    ConvSpec spatial;  // 2 -> 1, k=3, p=1

    int hidden_dim() const { return w0.out_dim; }
    void validate() const;
};

CbamParams make_cbam_params(int channels, int reduction, Rng& rng);
CbamParams make_cbam_params_zero(int channels, int reduction);

// One weight per channel, each in (0,1).
std::vector<double> channel_attention(const Tensor& x, const CbamParams& params);

// 1-channel map in (0,1), same spatial dims as the input.
Tensor spatial_attention(const Tensor& x, const CbamParams& params);

// x * channel weights, then * spatial map. Shape preserved.
Tensor cbam_apply(const Tensor& x, const CbamParams& params);

}  // namespace smallobj
