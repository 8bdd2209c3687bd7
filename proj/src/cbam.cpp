#include "smallobj/cbam.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

namespace smallobj {

namespace {

int hidden_size(int channels, int reduction) {
    if (channels <= 0) throw std::invalid_argument("cbam: channels must be positive");
    if (reduction <= 0) throw std::invalid_argument("cbam: reduction must be positive");
    return std::max(1, channels / reduction);
}

std::vector<double> mlp(const std::vector<double>& v, const CbamParams& p) {
    std::vector<double> h = linear(v, p.w0);
    for (double& x : h) x = std::max(x, 0.0);
    return linear(h, p.w1);
}

}  // namespace

void CbamParams::validate() const {
    if (channels <= 0) throw std::invalid_argument("cbam: channels must be positive");
    if (reduction <= 0) throw std::invalid_argument("cbam: reduction must be positive");
    if (w0.in_dim != channels || w0.out_dim != hidden_size(channels, reduction))
        throw std::invalid_argument("cbam: w0 shape mismatch");
    if (w1.in_dim != w0.out_dim || w1.out_dim != channels)
        throw std::invalid_argument("cbam: w1 shape mismatch");
    if (spatial.in_channels != 2 || spatial.out_channels != 1 || spatial.kernel != 3)
        throw std::invalid_argument("cbam: spatial conv must be 2->1, k=3");
}

CbamParams make_cbam_params(int channels, int reduction, Rng& rng) {
    CbamParams p;
    p.channels = channels;
    p.reduction = reduction;
    int hidden = hidden_size(channels, reduction);
    p.w0 = make_linear(channels, hidden, rng);
    p.w1 = make_linear(hidden, channels, rng);
    p.spatial = make_conv(2, 1, 3, 1, 1, 1, rng);
    p.validate();
    return p;
}

CbamParams make_cbam_params_zero(int channels, int reduction) {
    CbamParams p;
    p.channels = channels;
    p.reduction = reduction;
    int hidden = hidden_size(channels, reduction);
    p.w0 = make_linear_zero(channels, hidden);
    p.w1 = make_linear_zero(hidden, channels);
    p.spatial = make_conv_zero(2, 1, 3, 1, 1, 1);
    return p;
}

std::vector<double> channel_attention(const Tensor& x, const CbamParams& params) {
    params.validate();
    if (x.channels() != params.channels) {
        throw std::invalid_argument(
            "channel_attention: input has " + std::to_string(x.channels()) +
            " channels, params expect " + std::to_string(params.channels));
    }
    std::vector<double> avg_branch = mlp(global_pool(x, PoolKind::Avg), params);
    std::vector<double> max_branch = mlp(global_pool(x, PoolKind::Max), params);
    std::vector<double> weights(params.channels);
    for (int c = 0; c < params.channels; ++c) {
        weights[c] = sigmoid(avg_branch[c] + max_branch[c]);
    }
    return weights;
}

Tensor spatial_attention(const Tensor& x, const CbamParams& params) {
    params.validate();
    // channel-wise mean and max maps, stacked as a 2-channel tensor
    Tensor stacked(2, x.height(), x.width());
    const double inv_c = 1.0 / x.channels();
    for (int iy = 0; iy < x.height(); ++iy) {
        for (int ix = 0; ix < x.width(); ++ix) {
            double s = 0.0;
            double m = x.at(0, iy, ix);
            for (int c = 0; c < x.channels(); ++c) {
                double v = x.at(c, iy, ix);
                s += v;
                m = std::max(m, v);
            }
            stacked.at(0, iy, ix) = s * inv_c;
            stacked.at(1, iy, ix) = m;
        }
    }
    return activation(conv2d(stacked, params.spatial), Activation::Sigmoid);
}

Tensor cbam_apply(const Tensor& x, const CbamParams& params) {
    std::vector<double> mc = channel_attention(x, params);
    Tensor weighted(x.channels(), x.height(), x.width());
    for (int c = 0; c < x.channels(); ++c)
        for (int iy = 0; iy < x.height(); ++iy)
            for (int ix = 0; ix < x.width(); ++ix)
                weighted.at(c, iy, ix) = x.at(c, iy, ix) * mc[c];

    Tensor ms = spatial_attention(weighted, params);
    Tensor out(x.channels(), x.height(), x.width());
    for (int c = 0; c < x.channels(); ++c)
        for (int iy = 0; iy < x.height(); ++iy)
            for (int ix = 0; ix < x.width(); ++ix)
                out.at(c, iy, ix) = weighted.at(c, iy, ix) * ms.at(0, iy, ix);
    return out;
}

}  // namespace smallobj
