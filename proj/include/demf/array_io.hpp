#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "demf/image.hpp"

namespace demf {

// Portable array container:
//
//   offset 0   8 bytes   magic "DEMFGRD1"
//   offset 8   u32 LE    rows
//   offset 12  u32 LE    cols
//   offset 16  f32 LE    rows*cols values, row-major
//
// Optional sidecar "<file>.meta" holds one "key=value" line per entry, keys
// sorted. Keys and values may not contain newlines; keys may not contain '='.
inline constexpr std::string_view kArrayMagic = "DEMFGRD1";
inline constexpr std::size_t kArrayHeaderBytes = 16;

using ArrayMeta = std::map<std::string, std::string>;

struct RawArray {
    int rows = 0;
    int cols = 0;
    std::vector<float> values;
};

void write_array(const std::filesystem::path& path, int rows, int cols,
                 std::span<const float> values, const ArrayMeta& meta = {});
void write_array(const std::filesystem::path& path, const Image& img, const ArrayMeta& meta = {});

RawArray read_raw_array(const std::filesystem::path& path);
Image read_array(const std::filesystem::path& path);

std::filesystem::path meta_path(const std::filesystem::path& array_path);
// Empty map when there is no sidecar.
ArrayMeta read_array_meta(const std::filesystem::path& array_path);

} // namespace demf
