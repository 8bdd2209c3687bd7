#pragma once

#include <vector>

#include "smallobj/rng.hpp"
#include "smallobj/tensor.hpp"

namespace smallobj {

// Square-kernel convolution parameters. Weights are laid out
// [out][in][ky][kx], one bias per output channel.
struct ConvSpec {
    int in_channels = 0;
    int out_channels = 0;
    int kernel = 1;   // odd
    int stride = 1;
    int padding = 0;
    int dilation = 1;
    std::vector<double> weights;
    std::vector<double> bias;

    int out_height(int in_height) const;
    int out_width(int in_width) const;
    std::size_t weight_count() const;
    void validate() const;  // throws std::invalid_argument
};

// He-style fan-in uniform init, values rounded to float32 so the binary
// weight format round-trips losslessly.
ConvSpec make_conv(int in_channels, int out_channels, int kernel, int stride,
                   int padding, int dilation, Rng& rng);
ConvSpec make_conv_zero(int in_channels, int out_channels, int kernel,
                        int stride, int padding, int dilation);

Tensor conv2d(const Tensor& x, const ConvSpec& spec);

enum class PoolKind { Max, Avg };

Tensor pool2d(const Tensor& x, PoolKind kind, int window, int stride);

// One value per channel: global max or mean over the spatial plane.
std::vector<double> global_pool(const Tensor& x, PoolKind kind);

enum class Activation { Sigmoid, Relu, LeakyRelu01, Mish };

Tensor activation(const Tensor& x, Activation kind);

double sigmoid(double x);
double mish(double x);  // x * tanh(softplus(x)), overflow-safe
double apply_activation(double x, Activation kind);

Tensor upsample_nearest(const Tensor& x, int factor);

Tensor concat_channels(const std::vector<Tensor>& xs);

// Per spatial location, scale the channel vector to unit Euclidean norm
// (eps-guarded) and multiply channel c by scale[c].
Tensor l2_normalize(const Tensor& x, const std::vector<double>& scale,
                    double eps = 1e-10);

// Dense affine map, weights [out][in] row-major.
struct LinearSpec {
    int in_dim = 0;
    int out_dim = 0;
    std::vector<double> weights;
    std::vector<double> bias;

    void validate() const;
};

LinearSpec make_linear(int in_dim, int out_dim, Rng& rng);
LinearSpec make_linear_zero(int in_dim, int out_dim);

std::vector<double> linear(const std::vector<double>& v, const LinearSpec& spec);

}  // namespace smallobj
