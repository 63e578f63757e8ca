#include "demf/array_io.hpp"

#include <bit>
#include <cstdint>
#include <fstream>

#include "demf/error.hpp"

namespace demf {

namespace {

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

std::uint32_t get_u32(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

void write_meta(const std::filesystem::path& path, const ArrayMeta& meta) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + path.string());
    for (const auto& [key, value] : meta) {
        if (key.empty() || key.find_first_of("=\n") != std::string::npos ||
            value.find('\n') != std::string::npos)
            throw DataError("invalid metadata entry '" + key + "'");
        out << key << '=' << value << '\n';
    }
}

} // namespace

std::filesystem::path meta_path(const std::filesystem::path& array_path) {
    auto p = array_path;
    p += ".meta";
    return p;
}

void write_array(const std::filesystem::path& path, int rows, int cols,
                 std::span<const float> values, const ArrayMeta& meta) {
    if (rows < 0 || cols < 0 || values.size() != static_cast<std::size_t>(rows) * cols)
        throw DataError("array shape does not match value count");
    std::string buf;
    buf.reserve(kArrayHeaderBytes + values.size() * 4);
    buf.append(kArrayMagic);
    put_u32(buf, static_cast<std::uint32_t>(rows));
    put_u32(buf, static_cast<std::uint32_t>(cols));
    for (float v : values) put_u32(buf, std::bit_cast<std::uint32_t>(v));

    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + path.string());
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw DataError("short write to " + path.string());

    if (!meta.empty())
        write_meta(meta_path(path), meta);
    else if (std::filesystem::exists(meta_path(path)))
        std::filesystem::remove(meta_path(path));
}

void write_array(const std::filesystem::path& path, const Image& img, const ArrayMeta& meta) {
    write_array(path, img.rows(), img.cols(), img.pixels(), meta);
}

RawArray read_raw_array(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes.size() < kArrayHeaderBytes || std::string_view(bytes).substr(0, 8) != kArrayMagic)
        throw DataError(path.string() + ": not a portable array container");
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
    const std::uint32_t rows = get_u32(p + 8);
    const std::uint32_t cols = get_u32(p + 12);
    const std::uint64_t count = static_cast<std::uint64_t>(rows) * cols;
    if (bytes.size() != kArrayHeaderBytes + count * 4)
        throw DataError(path.string() + ": payload size does not match header");
    RawArray out{static_cast<int>(rows), static_cast<int>(cols), std::vector<float>(count)};
    for (std::uint64_t i = 0; i < count; ++i)
        out.values[i] = std::bit_cast<float>(get_u32(p + kArrayHeaderBytes + 4 * i));
    return out;
}

Image read_array(const std::filesystem::path& path) {
    auto raw = read_raw_array(path);
    return Image(raw.rows, raw.cols, std::move(raw.values));
}

ArrayMeta read_array_meta(const std::filesystem::path& array_path) {
    ArrayMeta meta;
    std::ifstream in(meta_path(array_path));
    if (!in) return meta;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw DataError("malformed metadata line: " + line);
        meta[line.substr(0, eq)] = line.substr(eq + 1);
    }
    return meta;
}

} // namespace demf
