#include "smallobj/tensor.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace smallobj {

namespace {

void check_dims(int channels, int height, int width) {
    if (channels <= 0 || height <= 0 || width <= 0) {
        throw std::invalid_argument(
            "tensor dims must be positive, got " + std::to_string(channels) + "x" +
            std::to_string(height) + "x" + std::to_string(width));
    }
}

}  // namespace

void require_finite(const std::vector<double>& values, const char* what) {
    for (double v : values) {
        if (!std::isfinite(v)) {
            throw std::invalid_argument(std::string(what) + ": non-finite value");
        }
    }
}

Tensor::Tensor(int channels, int height, int width)
    : channels_(channels), height_(height), width_(width) {
    check_dims(channels, height, width);
    data_.assign(static_cast<std::size_t>(channels) * height * width, 0.0);
}

Tensor::Tensor(int channels, int height, int width, std::vector<double> data)
    : channels_(channels), height_(height), width_(width), data_(std::move(data)) {
    check_dims(channels, height, width);
    if (data_.size() != static_cast<std::size_t>(channels) * height * width) {
        throw std::invalid_argument("tensor data length does not match shape");
    }
    require_finite(data_, "tensor");
}

}  // namespace smallobj
