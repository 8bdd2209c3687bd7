#pragma once

#include <cstddef>
#include <vector>

namespace smallobj {

// Dense rank-3 feature map in channel-major layout:
// element (c, y, x) lives at data[(c*height + y)*width + x].
// Construction from external data rejects NaN/Inf so non-finite values
// cannot enter the pipeline.
class Tensor {
public:
    Tensor() = default;
    Tensor(int channels, int height, int width);  // zero-filled
    Tensor(int channels, int height, int width, std::vector<double> data);

    int channels() const { return channels_; }
    int height() const { return height_; }
    int width() const { return width_; }
    std::size_t size() const { return data_.size(); }

    double at(int c, int y, int x) const {
        return data_[(static_cast<std::size_t>(c) * height_ + y) * width_ + x];
    }
    double& at(int c, int y, int x) {
        return data_[(static_cast<std::size_t>(c) * height_ + y) * width_ + x];
    }

    const std::vector<double>& data() const { return data_; }
    std::vector<double>& data() { return data_; }

    bool same_shape(const Tensor& other) const {
        return channels_ == other.channels_ && height_ == other.height_ &&
               width_ == other.width_;
    }

private:
    int channels_ = 0;
    int height_ = 0;
    int width_ = 0;
    std::vector<double> data_;
};

// Throws std::invalid_argument naming `what` if any value is NaN/Inf.
void require_finite(const std::vector<double>& values, const char* what);

}  // namespace smallobj
