#pragma once

#include <string>
#include <vector>

#include "defront/tensor.hpp"

namespace defront {

// H x W x C image, values in [0,1], interleaved HWC storage.
class Image {
public:
    Image() = default;
    Image(long height, long width, long channels, double fill = 0.0)
        : h_(height), w_(width), c_(channels),
          pix_(static_cast<size_t>(height * width * channels), fill) {}

    long height() const { return h_; }
    long width() const { return w_; }
    long channels() const { return c_; }
    bool empty() const { return pix_.empty(); }

    double& at(long y, long x, long c) { return pix_[static_cast<size_t>((y * w_ + x) * c_ + c)]; }
    double at(long y, long x, long c) const { return pix_[static_cast<size_t>((y * w_ + x) * c_ + c)]; }

    // bilinear sample with edge clamping, coordinates in pixels
    double sample(double y, double x, long c) const;

    std::vector<double>& pixels() { return pix_; }
    const std::vector<double>& pixels() const { return pix_; }

    Image flipped_horizontal() const;
    Image downsample2() const;  // 2x2 box filter, dims must be even

    Tensor to_chw_tensor() const;                 // [C,H,W]
    static Image from_chw_tensor(const Tensor& t, bool clamp01 = true);

private:
    long h_ = 0, w_ = 0, c_ = 0;
    std::vector<double> pix_;
};

// 8-bit binary PPM (P6, 3 channels) / PGM (P5, 1 channel).
void save_ppm(const Image& img, const std::string& path);
Image load_ppm(const std::string& path);

}  // namespace defront
