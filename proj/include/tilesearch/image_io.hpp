#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "tilesearch/tiler.hpp"

namespace tilesearch {

/// Scene readers. Format is chosen by content: PNG signature, "P6" binary
/// PPM, otherwise the raw layout below.
///
/// Raw layout (all little-endian): uint32 width, uint32 height, uint32 bands,
/// uint32 bit_depth (8 or 16), then width*height*bands samples interleaved
/// per pixel, rows top to bottom; 1 byte per sample at depth 8, 2 bytes at 16.
///
/// The scene name is the file stem. A sidecar `<file>.geo` holding six
/// whitespace-separated geo-transform coefficients is applied when present;
/// otherwise the identity transform is used.
Raster read_scene(const std::filesystem::path& path);

Raster decode_png(std::span<const std::uint8_t> bytes);
Raster decode_ppm(std::span<const std::uint8_t> bytes);
Raster decode_raw(std::span<const std::uint8_t> bytes);

/// PNG encoding of a pixel block; 1-4 bands, 8 or 16 bits per sample.
std::vector<std::uint8_t> encode_png(std::uint32_t width, std::uint32_t height,
                                     std::uint32_t bands, std::uint32_t bit_depth,
                                     std::span<const std::uint16_t> samples);
std::vector<std::uint8_t> encode_png(const TilePixels& tile);

void write_png(const std::filesystem::path& path, const Raster& raster);
void write_ppm(const std::filesystem::path& path, const Raster& raster);
void write_raw(const std::filesystem::path& path, const Raster& raster);
void write_geo_sidecar(const std::filesystem::path& scene_path, const GeoTransform& geo);
GeoTransform read_geo_sidecar(const std::filesystem::path& sidecar);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

} // namespace tilesearch
