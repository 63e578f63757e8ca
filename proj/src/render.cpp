#include "demf/render.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdlib>
#include <fstream>

#include <zlib.h>

#include "demf/error.hpp"

namespace demf {

namespace {

struct Glyph {
    char ch;
    std::array<const char*, 7> rows;
};

// clang-format off
const Glyph kFont[] = {
    {'0', {".###.", "#...#", "#..##", "#.#.#", "##..#", "#...#", ".###."}},
    {'1', {"..#..", ".##..", "..#..", "..#..", "..#..", "..#..", ".###."}},
    {'2', {".###.", "#...#", "....#", "...#.", "..#..", ".#...", "#####"}},
    {'3', {"####.", "....#", "....#", ".###.", "....#", "....#", "####."}},
    {'4', {"...#.", "..##.", ".#.#.", "#..#.", "#####", "...#.", "...#."}},
    {'5', {"#####", "#....", "####.", "....#", "....#", "#...#", ".###."}},
    {'6', {".###.", "#....", "#....", "####.", "#...#", "#...#", ".###."}},
    {'7', {"#####", "....#", "...#.", "..#..", ".#...", ".#...", ".#..."}},
    {'8', {".###.", "#...#", "#...#", ".###.", "#...#", "#...#", ".###."}},
    {'9', {".###.", "#...#", "#...#", ".####", "....#", "....#", ".###."}},
    {'A', {".###.", "#...#", "#...#", "#####", "#...#", "#...#", "#...#"}},
    {'B', {"####.", "#...#", "#...#", "####.", "#...#", "#...#", "####."}},
    {'C', {".###.", "#...#", "#....", "#....", "#....", "#...#", ".###."}},
    {'D', {"####.", "#...#", "#...#", "#...#", "#...#", "#...#", "####."}},
    {'E', {"#####", "#....", "#....", "####.", "#....", "#....", "#####"}},
    {'F', {"#####", "#....", "#....", "####.", "#....", "#....", "#...."}},
    {'G', {".###.", "#...#", "#....", "#.###", "#...#", "#...#", ".####"}},
    {'H', {"#...#", "#...#", "#...#", "#####", "#...#", "#...#", "#...#"}},
    {'I', {".###.", "..#..", "..#..", "..#..", "..#..", "..#..", ".###."}},
    {'J', {"..###", "...#.", "...#.", "...#.", "...#.", "#..#.", ".##.."}},
    {'K', {"#...#", "#..#.", "#.#..", "##...", "#.#..", "#..#.", "#...#"}},
    {'L', {"#....", "#....", "#....", "#....", "#....", "#....", "#####"}},
    {'M', {"#...#", "##.##", "#.#.#", "#.#.#", "#...#", "#...#", "#...#"}},
    {'N', {"#...#", "#...#", "##..#", "#.#.#", "#..##", "#...#", "#...#"}},
    {'O', {".###.", "#...#", "#...#", "#...#", "#...#", "#...#", ".###."}},
    {'P', {"####.", "#...#", "#...#", "####.", "#....", "#....", "#...."}},
    {'Q', {".###.", "#...#", "#...#", "#...#", "#.#.#", "#..#.", ".##.#"}},
    {'R', {"####.", "#...#", "#...#", "####.", "#.#..", "#..#.", "#...#"}},
    {'S', {".####", "#....", "#....", ".###.", "....#", "....#", "####."}},
    {'T', {"#####", "..#..", "..#..", "..#..", "..#..", "..#..", "..#.."}},
    {'U', {"#...#", "#...#", "#...#", "#...#", "#...#", "#...#", ".###."}},
    {'V', {"#...#", "#...#", "#...#", "#...#", "#...#", ".#.#.", "..#.."}},
    {'W', {"#...#", "#...#", "#...#", "#.#.#", "#.#.#", "#.#.#", ".#.#."}},
    {'X', {"#...#", "#...#", ".#.#.", "..#..", ".#.#.", "#...#", "#...#"}},
    {'Y', {"#...#", "#...#", ".#.#.", "..#..", "..#..", "..#..", "..#.."}},
    {'Z', {"#####", "....#", "...#.", "..#..", ".#...", "#....", "#####"}},
    {'.', {".....", ".....", ".....", ".....", ".....", ".##..", ".##.."}},
    {',', {".....", ".....", ".....", ".....", ".##..", "..#..", ".#..."}},
    {':', {".....", ".##..", ".##..", ".....", ".##..", ".##..", "....."}},
    {'-', {".....", ".....", ".....", "#####", ".....", ".....", "....."}},
    {'_', {".....", ".....", ".....", ".....", ".....", ".....", "#####"}},
    {'/', {"....#", "....#", "...#.", "..#..", ".#...", "#....", "#...."}},
    {'(', {"...#.", "..#..", ".#...", ".#...", ".#...", "..#..", "...#."}},
    {')', {".#...", "..#..", "...#.", "...#.", "...#.", "..#..", ".#..."}},
    {'%', {"##..#", "##..#", "...#.", "..#..", ".#...", "#..##", "#..##"}},
    {'=', {".....", ".....", "#####", ".....", "#####", ".....", "....."}},
    {'+', {".....", "..#..", "..#..", "#####", "..#..", "..#..", "....."}},
};
// clang-format on

const Glyph* find_glyph(char c) {
    if (c >= 'a' && c <= 'z') c = static_cast<char>(c - 'a' + 'A');
    for (const auto& g : kFont)
        if (g.ch == c) return &g;
    return nullptr;
}

void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
    for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<unsigned char>((v >> s) & 0xFF));
}

void put_chunk(std::vector<unsigned char>& out, const char* type, const std::vector<unsigned char>& data) {
    put_u32(out, static_cast<std::uint32_t>(data.size()));
    const std::size_t start = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), data.begin(), data.end());
    const uLong crc = crc32(0L, out.data() + start, static_cast<uInt>(out.size() - start));
    put_u32(out, static_cast<std::uint32_t>(crc));
}

// color_type 0 (gray) or 2 (RGB), 8-bit depth.
void write_png_raw(const std::filesystem::path& path, int width, int height, int channels,
                   const std::vector<unsigned char>& pixels) {
    std::vector<unsigned char> raw;
    raw.reserve(static_cast<std::size_t>(height) * (width * channels + 1));
    for (int y = 0; y < height; ++y) {
        raw.push_back(0);
        const auto* row = pixels.data() + static_cast<std::size_t>(y) * width * channels;
        raw.insert(raw.end(), row, row + static_cast<std::size_t>(width) * channels);
    }
    uLongf zlen = compressBound(static_cast<uLong>(raw.size()));
    std::vector<unsigned char> z(zlen);
    if (compress2(z.data(), &zlen, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
        throw DataError("png: compression failed");
    z.resize(zlen);

    std::vector<unsigned char> png = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1A, '\n'};
    std::vector<unsigned char> ihdr;
    put_u32(ihdr, static_cast<std::uint32_t>(width));
    put_u32(ihdr, static_cast<std::uint32_t>(height));
    ihdr.insert(ihdr.end(), {8, static_cast<unsigned char>(channels == 1 ? 0 : 2), 0, 0, 0});
    put_chunk(png, "IHDR", ihdr);
    put_chunk(png, "IDAT", z);
    put_chunk(png, "IEND", {});

    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(png.data()), static_cast<std::streamsize>(png.size()));
}

std::uint8_t to_byte(double v) noexcept {
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

} // namespace

Canvas::Canvas(int width, int height, Rgb fill) : w_(width), h_(height) {
    if (width < 1 || height < 1) throw DataError("canvas: empty size");
    px_.assign(static_cast<std::size_t>(width) * height, fill);
}

void Canvas::set(int x, int y, Rgb c) noexcept {
    if (x < 0 || y < 0 || x >= w_ || y >= h_) return;
    px_[index(x, y)] = c;
}

void Canvas::blend(int x, int y, Rgb c, double alpha) noexcept {
    if (x < 0 || y < 0 || x >= w_ || y >= h_) return;
    Rgb& p = px_[index(x, y)];
    auto mix = [alpha](std::uint8_t a, std::uint8_t b) {
        return static_cast<std::uint8_t>(std::lround((1.0 - alpha) * a + alpha * b));
    };
    p = {mix(p.r, c.r), mix(p.g, c.g), mix(p.b, c.b)};
}

void Canvas::fill_rect(int x0, int y0, int x1, int y1, Rgb c) noexcept {
    for (int y = std::max(0, y0); y <= std::min(h_ - 1, y1); ++y)
        for (int x = std::max(0, x0); x <= std::min(w_ - 1, x1); ++x) px_[index(x, y)] = c;
}

void Canvas::stroke_rect(int x0, int y0, int x1, int y1, Rgb c) noexcept {
    line(x0, y0, x1, y0, c);
    line(x0, y1, x1, y1, c);
    line(x0, y0, x0, y1, c);
    line(x1, y0, x1, y1, c);
}

void Canvas::line(int x0, int y0, int x1, int y1, Rgb c) noexcept {
    const int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
    const int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
    int err = dx + dy;
    for (;;) {
        set(x0, y0, c);
        if (x0 == x1 && y0 == y1) break;
        const int e2 = 2 * err;
        if (e2 >= dy) err += dy, x0 += sx;
        if (e2 <= dx) err += dx, y0 += sy;
    }
}

void Canvas::text(int x, int y, std::string_view s, Rgb c, int scale) noexcept {
    for (char ch : s) {
        if (const Glyph* g = find_glyph(ch))
            for (int r = 0; r < 7; ++r)
                for (int k = 0; k < 5; ++k)
                    if (g->rows[r][k] == '#') fill_rect(x + k * scale, y + r * scale, x + (k + 1) * scale - 1, y + (r + 1) * scale - 1, c);
        x += 6 * scale;
    }
}

int Canvas::text_width(std::string_view s, int scale) noexcept { return static_cast<int>(s.size()) * 6 * scale; }

void Canvas::draw_gray(int x, int y, const Image& img, int scale) noexcept {
    for (int r = 0; r < img.rows(); ++r)
        for (int col = 0; col < img.cols(); ++col) {
            const std::uint8_t v = to_byte(img(r, col));
            fill_rect(x + col * scale, y + r * scale, x + (col + 1) * scale - 1, y + (r + 1) * scale - 1, {v, v, v});
        }
}

void Canvas::draw_heat(int x, int y, const Image& heat, int scale, double alpha) noexcept {
    for (int r = 0; r < heat.rows(); ++r)
        for (int col = 0; col < heat.cols(); ++col) {
            const double v = heat(r, col);
            const Rgb c = heat_color(v);
            for (int yy = 0; yy < scale; ++yy)
                for (int xx = 0; xx < scale; ++xx) blend(x + col * scale + xx, y + r * scale + yy, c, alpha * v);
        }
}

void Canvas::draw_box(int x, int y, const BoundingBox& box, int scale, Rgb c) noexcept {
    stroke_rect(x + box.col0 * scale, y + box.row0 * scale, x + (box.col1 + 1) * scale - 1, y + (box.row1 + 1) * scale - 1, c);
}

void Canvas::write_png(const std::filesystem::path& path) const {
    std::vector<unsigned char> bytes;
    bytes.reserve(px_.size() * 3);
    for (const Rgb& p : px_) bytes.insert(bytes.end(), {p.r, p.g, p.b});
    write_png_raw(path, w_, h_, 3, bytes);
}

Rgb heat_color(double v) noexcept {
    v = std::clamp(v, 0.0, 1.0);
    const double r = std::clamp(1.5 - std::abs(4.0 * v - 3.0), 0.0, 1.0);
    const double g = std::clamp(1.5 - std::abs(4.0 * v - 2.0), 0.0, 1.0);
    const double b = std::clamp(1.5 - std::abs(4.0 * v - 1.0), 0.0, 1.0);
    return {to_byte(r), to_byte(g), to_byte(b)};
}

void write_gray_png(const std::filesystem::path& path, const Image& img) {
    if (img.empty()) throw DataError("png: empty image");
    std::vector<unsigned char> bytes;
    bytes.reserve(img.pixels().size());
    for (float v : img.pixels()) bytes.push_back(to_byte(v));
    write_png_raw(path, img.cols(), img.rows(), 1, bytes);
}

} // namespace demf
