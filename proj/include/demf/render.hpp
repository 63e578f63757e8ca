#pragma once

#include <cstdint>
#include <filesystem>
#include <string_view>
#include <vector>

#include "demf/image.hpp"
#include "demf/slice.hpp"

namespace demf {

struct Rgb {
    std::uint8_t r = 0, g = 0, b = 0;
};

class Canvas {
public:
    Canvas(int width, int height, Rgb fill = {255, 255, 255});

    int width() const noexcept { return w_; }
    int height() const noexcept { return h_; }
    Rgb get(int x, int y) const { return px_.at(index(x, y)); }
    // Out-of-range writes are ignored.
    void set(int x, int y, Rgb c) noexcept;
    void blend(int x, int y, Rgb c, double alpha) noexcept;

    void fill_rect(int x0, int y0, int x1, int y1, Rgb c) noexcept;
    void stroke_rect(int x0, int y0, int x1, int y1, Rgb c) noexcept;
    void line(int x0, int y0, int x1, int y1, Rgb c) noexcept;
    // Upper-case 5x7 glyphs; unknown characters render as blanks.
    void text(int x, int y, std::string_view s, Rgb c, int scale = 1) noexcept;
    static int text_width(std::string_view s, int scale = 1) noexcept;

    // Grayscale image with values in [0, 1] drawn at (x, y), each pixel
    // magnified `scale` times.
    void draw_gray(int x, int y, const Image& img, int scale = 1) noexcept;
    // Heat layer alpha-blended on top of whatever is there.
    void draw_heat(int x, int y, const Image& heat, int scale, double alpha) noexcept;
    void draw_box(int x, int y, const BoundingBox& box, int scale, Rgb c) noexcept;

    void write_png(const std::filesystem::path& path) const;

private:
    std::size_t index(int x, int y) const { return static_cast<std::size_t>(y) * w_ + x; }
    int w_, h_;
    std::vector<Rgb> px_;
};

// Blue-to-red colour map for values in [0, 1].
Rgb heat_color(double v) noexcept;

// 8-bit grayscale PNG of an image in [0, 1].
void write_gray_png(const std::filesystem::path& path, const Image& img);

} // namespace demf
