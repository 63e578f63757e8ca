#include "demf/image.hpp"

#include <algorithm>
#include <numeric>

#include "demf/error.hpp"

namespace demf {

Image::Image(int rows, int cols, float fill)
    : rows_(rows), cols_(cols), pixels_(static_cast<std::size_t>(rows) * cols, fill) {
    if (rows < 0 || cols < 0) throw DataError("negative image dimensions");
}

Image::Image(int rows, int cols, std::vector<float> pixels)
    : rows_(rows), cols_(cols), pixels_(std::move(pixels)) {
    if (rows < 0 || cols < 0 || pixels_.size() != static_cast<std::size_t>(rows) * cols)
        throw DataError("pixel buffer does not match image dimensions");
}

float Image::min() const {
    if (pixels_.empty()) throw DataError("min of empty image");
    return *std::min_element(pixels_.begin(), pixels_.end());
}

float Image::max() const {
    if (pixels_.empty()) throw DataError("max of empty image");
    return *std::max_element(pixels_.begin(), pixels_.end());
}

double Image::sum() const {
    return std::accumulate(pixels_.begin(), pixels_.end(), 0.0);
}

void clamp(Image& img, float lo, float hi) {
    for (float& v : img.pixels()) v = std::clamp(v, lo, hi);
}

} // namespace demf
