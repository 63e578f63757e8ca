#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace demf {

// Single-channel 2-D float grid, row-major.
class Image {
public:
    Image() = default;
    Image(int rows, int cols, float fill = 0.0f);
    Image(int rows, int cols, std::vector<float> pixels);

    int rows() const noexcept { return rows_; }
    int cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return pixels_.size(); }
    bool empty() const noexcept { return pixels_.empty(); }

    float& operator()(int r, int c) noexcept { return pixels_[static_cast<std::size_t>(r) * cols_ + c]; }
    float operator()(int r, int c) const noexcept { return pixels_[static_cast<std::size_t>(r) * cols_ + c]; }

    std::span<float> pixels() noexcept { return pixels_; }
    std::span<const float> pixels() const noexcept { return pixels_; }

    bool same_shape(const Image& other) const noexcept {
        return rows_ == other.rows_ && cols_ == other.cols_;
    }

    float min() const;
    float max() const;
    double sum() const;

    friend bool operator==(const Image&, const Image&) = default;

private:
    int rows_ = 0;
    int cols_ = 0;
    std::vector<float> pixels_;
};

// Clamp every pixel into [lo, hi].
void clamp(Image& img, float lo = 0.0f, float hi = 1.0f);

} // namespace demf
