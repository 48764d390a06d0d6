#include "defront/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "defront/errors.hpp"

namespace defront {

double Image::sample(double y, double x, long c) const {
    x = std::min(std::max(x, 0.0), static_cast<double>(w_ - 1));
    y = std::min(std::max(y, 0.0), static_cast<double>(h_ - 1));
    long x0 = static_cast<long>(std::floor(x)), y0 = static_cast<long>(std::floor(y));
    long x1 = std::min(x0 + 1, w_ - 1), y1 = std::min(y0 + 1, h_ - 1);
    double fx = x - static_cast<double>(x0), fy = y - static_cast<double>(y0);
    return (1 - fy) * ((1 - fx) * at(y0, x0, c) + fx * at(y0, x1, c)) +
           fy * ((1 - fx) * at(y1, x0, c) + fx * at(y1, x1, c));
}

Image Image::flipped_horizontal() const {
    Image out(h_, w_, c_);
    for (long y = 0; y < h_; ++y)
        for (long x = 0; x < w_; ++x)
            for (long c = 0; c < c_; ++c) out.at(y, x, c) = at(y, w_ - 1 - x, c);
    return out;
}

Image Image::downsample2() const {
    if (h_ % 2 || w_ % 2) throw ShapeMismatch("downsample2: odd image size");
    Image out(h_ / 2, w_ / 2, c_);
    for (long y = 0; y < h_ / 2; ++y)
        for (long x = 0; x < w_ / 2; ++x)
            for (long c = 0; c < c_; ++c)
                out.at(y, x, c) = 0.25 * (at(2 * y, 2 * x, c) + at(2 * y, 2 * x + 1, c) +
                                          at(2 * y + 1, 2 * x, c) + at(2 * y + 1, 2 * x + 1, c));
    return out;
}

Tensor Image::to_chw_tensor() const {
    Tensor t({c_, h_, w_});
    for (long c = 0; c < c_; ++c)
        for (long y = 0; y < h_; ++y)
            for (long x = 0; x < w_; ++x) t[(c * h_ + y) * w_ + x] = at(y, x, c);
    return t;
}

Image Image::from_chw_tensor(const Tensor& t, bool clamp01) {
    if (t.ndim() != 3) throw ShapeMismatch("from_chw_tensor: want [C,H,W], got " + shape_str(t.shape()));
    long C = t.dim(0), H = t.dim(1), W = t.dim(2);
    Image img(H, W, C);
    for (long c = 0; c < C; ++c)
        for (long y = 0; y < H; ++y)
            for (long x = 0; x < W; ++x) {
                double v = t[(c * H + y) * W + x];
                if (clamp01) v = std::min(std::max(v, 0.0), 1.0);
                img.at(y, x, c) = v;
            }
    return img;
}

void save_ppm(const Image& img, const std::string& path) {
    if (img.channels() != 3 && img.channels() != 1)
        throw IOFailure("save_ppm: only 1- or 3-channel images, got " + std::to_string(img.channels()));
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IOFailure("cannot open for write: " + path);
    f << (img.channels() == 3 ? "P6" : "P5") << "\n"
      << img.width() << " " << img.height() << "\n255\n";
    std::vector<unsigned char> row(static_cast<size_t>(img.width() * img.channels()));
    for (long y = 0; y < img.height(); ++y) {
        for (long x = 0; x < img.width(); ++x)
            for (long c = 0; c < img.channels(); ++c) {
                double v = std::min(std::max(img.at(y, x, c), 0.0), 1.0);
                row[static_cast<size_t>(x * img.channels() + c)] =
                    static_cast<unsigned char>(std::lround(v * 255.0));
            }
        f.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
    }
    if (!f) throw IOFailure("write failed: " + path);
}

namespace {
int read_pnm_token(std::istream& in) {
    // skips whitespace and '#' comments
    while (true) {
        int ch = in.peek();
        if (ch == '#') {
            std::string line;
            std::getline(in, line);
        } else if (std::isspace(ch)) {
            in.get();
        } else {
            break;
        }
    }
    int v;
    in >> v;
    return v;
}
}  // namespace

Image load_ppm(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw MissingFile(path);
    std::string magic;
    f >> magic;
    if (magic != "P6" && magic != "P5") throw IOFailure("not a binary PPM/PGM: " + path);
    long channels = magic == "P6" ? 3 : 1;
    long w = read_pnm_token(f);
    long h = read_pnm_token(f);
    long maxval = read_pnm_token(f);
    if (w <= 0 || h <= 0 || maxval != 255) throw IOFailure("unsupported PNM header: " + path);
    f.get();  // single whitespace after header
    Image img(h, w, channels);
    std::vector<unsigned char> buf(static_cast<size_t>(w * h * channels));
    f.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!f) throw IOFailure("truncated PNM: " + path);
    for (size_t i = 0; i < buf.size(); ++i) img.pixels()[i] = buf[i] / 255.0;
    return img;
}

}  // namespace defront
