#include "smallobj/ops.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace smallobj {

namespace {

int conv_out_dim(int in, int kernel, int stride, int padding, int dilation) {
    return (in + 2 * padding - dilation * (kernel - 1) - 1) / stride + 1;
}

double he_uniform(int fan_in, Rng& rng) {
    double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    double v = rng.uniform(-bound, bound);
    return static_cast<double>(static_cast<float>(v));
}

}  // namespace

int ConvSpec::out_height(int in_height) const {
    return conv_out_dim(in_height, kernel, stride, padding, dilation);
}

int ConvSpec::out_width(int in_width) const {
    return conv_out_dim(in_width, kernel, stride, padding, dilation);
}

std::size_t ConvSpec::weight_count() const {
    return static_cast<std::size_t>(out_channels) * in_channels * kernel * kernel;
}

void ConvSpec::validate() const {
    if (in_channels <= 0 || out_channels <= 0)
        throw std::invalid_argument("conv: channel counts must be positive");
    if (kernel <= 0 || kernel % 2 == 0)
        throw std::invalid_argument("conv: kernel size must be odd and positive");
    if (stride < 1) throw std::invalid_argument("conv: stride must be >= 1");
    if (padding < 0) throw std::invalid_argument("conv: padding must be >= 0");
    if (dilation < 1) throw std::invalid_argument("conv: dilation must be >= 1");
    if (weights.size() != weight_count())
        throw std::invalid_argument("conv: weight array has wrong length");
    if (bias.size() != static_cast<std::size_t>(out_channels))
        throw std::invalid_argument("conv: bias array has wrong length");
}

ConvSpec make_conv(int in_channels, int out_channels, int kernel, int stride,
                   int padding, int dilation, Rng& rng) {
    ConvSpec spec;
    spec.in_channels = in_channels;
    spec.out_channels = out_channels;
    spec.kernel = kernel;
    spec.stride = stride;
    spec.padding = padding;
    spec.dilation = dilation;
    spec.weights.resize(spec.weight_count());
    spec.bias.assign(out_channels, 0.0);
    int fan_in = in_channels * kernel * kernel;
    for (double& w : spec.weights) w = he_uniform(fan_in, rng);
    spec.validate();
    return spec;
}

ConvSpec make_conv_zero(int in_channels, int out_channels, int kernel,
                        int stride, int padding, int dilation) {
    ConvSpec spec;
    spec.in_channels = in_channels;
    spec.out_channels = out_channels;
    spec.kernel = kernel;
    spec.stride = stride;
    spec.padding = padding;
    spec.dilation = dilation;
    spec.weights.assign(spec.weight_count(), 0.0);
    spec.bias.assign(out_channels, 0.0);
    return spec;
}

Tensor conv2d(const Tensor& x, const ConvSpec& spec) {
    spec.validate();
    if (x.channels() != spec.in_channels) {
        throw std::invalid_argument(
            "conv2d: input has " + std::to_string(x.channels()) +
            " channels, spec expects " + std::to_string(spec.in_channels));
    }
    const int out_h = spec.out_height(x.height());
    const int out_w = spec.out_width(x.width());
    if (out_h < 1 || out_w < 1) {
        throw std::invalid_argument("conv2d: non-positive output size " +
                                    std::to_string(out_h) + "x" +
                                    std::to_string(out_w));
    }

    Tensor y(spec.out_channels, out_h, out_w);
    const int in_h = x.height();
    const int in_w = x.width();
    const int k = spec.kernel;
    const double* src = x.data().data();
    double* dst = y.data().data();

    for (int oc = 0; oc < spec.out_channels; ++oc) {
        const double* wbase =
            spec.weights.data() +
            static_cast<std::size_t>(oc) * spec.in_channels * k * k;
        const double b = spec.bias[oc];
        for (int oy = 0; oy < out_h; ++oy) {
            const int iy0 = oy * spec.stride - spec.padding;
            for (int ox = 0; ox < out_w; ++ox) {
                const int ix0 = ox * spec.stride - spec.padding;
                double acc = b;
                for (int ic = 0; ic < spec.in_channels; ++ic) {
                    const double* plane =
                        src + (static_cast<std::size_t>(ic) * in_h) * in_w;
                    const double* wrow = wbase + static_cast<std::size_t>(ic) * k * k;
                    for (int ky = 0; ky < k; ++ky) {
                        const int iy = iy0 + ky * spec.dilation;
                        if (iy < 0 || iy >= in_h) continue;
                        const double* srow = plane + static_cast<std::size_t>(iy) * in_w;
                        for (int kx = 0; kx < k; ++kx) {
                            const int ix = ix0 + kx * spec.dilation;
                            if (ix < 0 || ix >= in_w) continue;
                            acc += srow[ix] * wrow[ky * k + kx];
                        }
                    }
                }
                dst[(static_cast<std::size_t>(oc) * out_h + oy) * out_w + ox] = acc;
            }
        }
    }
    require_finite(y.data(), "conv2d output");
    return y;
}

Tensor pool2d(const Tensor& x, PoolKind kind, int window, int stride) {
    if (window < 1 || stride < 1)
        throw std::invalid_argument("pool2d: window and stride must be >= 1");
    if (window > x.height() || window > x.width())
        throw std::invalid_argument("pool2d: window larger than input");

    const int out_h = (x.height() - window) / stride + 1;
    const int out_w = (x.width() - window) / stride + 1;
    Tensor y(x.channels(), out_h, out_w);
    const double inv_area = 1.0 / (static_cast<double>(window) * window);

    for (int c = 0; c < x.channels(); ++c) {
        for (int oy = 0; oy < out_h; ++oy) {
            for (int ox = 0; ox < out_w; ++ox) {
                const int y0 = oy * stride;
                const int x0 = ox * stride;
                if (kind == PoolKind::Max) {
                    double m = x.at(c, y0, x0);
                    for (int dy = 0; dy < window; ++dy)
                        for (int dx = 0; dx < window; ++dx)
                            m = std::max(m, x.at(c, y0 + dy, x0 + dx));
                    y.at(c, oy, ox) = m;
                } else {
                    double s = 0.0;
                    for (int dy = 0; dy < window; ++dy)
                        for (int dx = 0; dx < window; ++dx)
                            s += x.at(c, y0 + dy, x0 + dx);
                    y.at(c, oy, ox) = s * inv_area;
                }
            }
        }
    }
    return y;
}

std::vector<double> global_pool(const Tensor& x, PoolKind kind) {
    std::vector<double> out(x.channels());
    const std::size_t plane = static_cast<std::size_t>(x.height()) * x.width();
    for (int c = 0; c < x.channels(); ++c) {
        const double* p = x.data().data() + c * plane;
        if (kind == PoolKind::Max) {
            double m = p[0];
            for (std::size_t i = 1; i < plane; ++i) m = std::max(m, p[i]);
            out[c] = m;
        } else {
            double s = 0.0;
            for (std::size_t i = 0; i < plane; ++i) s += p[i];
            out[c] = s / static_cast<double>(plane);
        }
    }
    return out;
}

double sigmoid(double x) {
    if (x >= 0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    double e = std::exp(x);
    return e / (1.0 + e);
}

double mish(double x) {
    // softplus as max(x,0) + log1p(exp(-|x|)) so large |x| cannot overflow
    double sp = std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
    return x * std::tanh(sp);
}

double apply_activation(double x, Activation kind) {
    switch (kind) {
        case Activation::Sigmoid: return sigmoid(x);
        case Activation::Relu: return x > 0 ? x : 0.0;
        case Activation::LeakyRelu01: return x > 0 ? x : 0.1 * x;
        case Activation::Mish: return mish(x);
    }
    return x;
}

Tensor activation(const Tensor& x, Activation kind) {
    Tensor y = x;
    for (double& v : y.data()) v = apply_activation(v, kind);
    return y;
}

Tensor upsample_nearest(const Tensor& x, int factor) {
    if (factor < 1) throw std::invalid_argument("upsample: factor must be >= 1");
    if (factor == 1) return x;
    Tensor y(x.channels(), x.height() * factor, x.width() * factor);
    for (int c = 0; c < x.channels(); ++c)
        for (int oy = 0; oy < y.height(); ++oy)
            for (int ox = 0; ox < y.width(); ++ox)
                y.at(c, oy, ox) = x.at(c, oy / factor, ox / factor);
    return y;
}

Tensor concat_channels(const std::vector<Tensor>& xs) {
    if (xs.empty()) throw std::invalid_argument("concat: no inputs");
    int channels = 0;
    for (const Tensor& t : xs) {
        if (t.height() != xs[0].height() || t.width() != xs[0].width()) {
            throw std::invalid_argument("concat: spatial dims differ");
        }
        channels += t.channels();
    }
    Tensor y(channels, xs[0].height(), xs[0].width());
    double* dst = y.data().data();
    for (const Tensor& t : xs) {
        std::copy(t.data().begin(), t.data().end(), dst);
        dst += t.data().size();
    }
    return y;
}

Tensor l2_normalize(const Tensor& x, const std::vector<double>& scale,
                    double eps) {
    if (eps <= 0) throw std::invalid_argument("l2_normalize: eps must be > 0");
    if (scale.size() != static_cast<std::size_t>(x.channels()))
        throw std::invalid_argument("l2_normalize: scale length != channels");
    Tensor y(x.channels(), x.height(), x.width());
    for (int iy = 0; iy < x.height(); ++iy) {
        for (int ix = 0; ix < x.width(); ++ix) {
            double sq = 0.0;
            for (int c = 0; c < x.channels(); ++c) {
                double v = x.at(c, iy, ix);
                sq += v * v;
            }
            double inv = 1.0 / std::max(std::sqrt(sq), eps);
            for (int c = 0; c < x.channels(); ++c) {
                y.at(c, iy, ix) = x.at(c, iy, ix) * inv * scale[c];
            }
        }
    }
    return y;
}

void LinearSpec::validate() const {
    if (in_dim <= 0 || out_dim <= 0)
        throw std::invalid_argument("linear: dims must be positive");
    if (weights.size() != static_cast<std::size_t>(in_dim) * out_dim)
        throw std::invalid_argument("linear: weight array has wrong length");
    if (bias.size() != static_cast<std::size_t>(out_dim))
        throw std::invalid_argument("linear: bias array has wrong length");
}

LinearSpec make_linear(int in_dim, int out_dim, Rng& rng) {
    LinearSpec spec;
    spec.in_dim = in_dim;
    spec.out_dim = out_dim;
    spec.weights.resize(static_cast<std::size_t>(in_dim) * out_dim);
    spec.bias.assign(out_dim, 0.0);
    for (double& w : spec.weights) w = he_uniform(in_dim, rng);
    return spec;
}

LinearSpec make_linear_zero(int in_dim, int out_dim) {
    LinearSpec spec;
    spec.in_dim = in_dim;
    spec.out_dim = out_dim;
    spec.weights.assign(static_cast<std::size_t>(in_dim) * out_dim, 0.0);
    spec.bias.assign(out_dim, 0.0);
    return spec;
}

std::vector<double> linear(const std::vector<double>& v, const LinearSpec& spec) {
    spec.validate();
    if (v.size() != static_cast<std::size_t>(spec.in_dim))
        throw std::invalid_argument("linear: input length != in_dim");
    std::vector<double> out(spec.out_dim);
    for (int o = 0; o < spec.out_dim; ++o) {
        double acc = spec.bias[o];
        const double* row = spec.weights.data() + static_cast<std::size_t>(o) * spec.in_dim;
        for (int i = 0; i < spec.in_dim; ++i) acc += row[i] * v[i];
        out[o] = acc;
    }
    require_finite(out, "linear output");
    return out;
}

}  // namespace smallobj
