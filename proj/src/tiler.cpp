#include "tilesearch/tiler.hpp"

#include <charconv>

#include "tilesearch/error.hpp"

namespace tilesearch {

std::string TileId::to_string() const {
    return scene + ":" + std::to_string(grid_x) + ":" + std::to_string(grid_y);
}

namespace {

std::uint32_t parse_u32(std::string_view text, std::string_view whole) {
    std::uint32_t value = 0;
    const auto* end = text.data() + text.size();
    auto [ptr, ec] = std::from_chars(text.data(), end, value);
    if (text.empty() || ec != std::errc{} || ptr != end) {
        throw Error(ErrorCode::kInvalidArgument, "malformed tile id '" + std::string(whole) + "'");
    }
    return value;
}

} // namespace

TileId TileId::parse(std::string_view text) {
    const auto last = text.rfind(':');
    if (last == std::string_view::npos || last == 0) {
        throw Error(ErrorCode::kInvalidArgument, "malformed tile id '" + std::string(text) + "'");
    }
    const auto mid = text.rfind(':', last - 1);
    if (mid == std::string_view::npos) {
        throw Error(ErrorCode::kInvalidArgument, "malformed tile id '" + std::string(text) + "'");
    }
    TileId id;
    id.scene = std::string(text.substr(0, mid));
    if (!is_valid_scene_name(id.scene)) {
        throw Error(ErrorCode::kInvalidArgument, "malformed tile id '" + std::string(text) + "'");
    }
    id.grid_x = parse_u32(text.substr(mid + 1, last - mid - 1), text);
    id.grid_y = parse_u32(text.substr(last + 1), text);
    return id;
}

bool is_valid_scene_name(std::string_view name) {
    if (name.empty() || name.size() > 128) return false;
    for (char c : name) {
        const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') ||
                        c == '.' || c == '_' || c == '-';
        if (!ok) return false;
    }
    return name != "." && name != "..";
}

void TileGrid::validate() const {
    if (tile_size == 0 || stride == 0) {
        throw Error(ErrorCode::kInvalidArgument, "tile size and stride must be positive");
    }
}

Raster::Raster(Scene scene, std::vector<std::uint16_t> pixels)
    : scene_(std::move(scene)), pixels_(std::move(pixels)) {
    const std::size_t expected =
        static_cast<std::size_t>(scene_.width_px) * scene_.height_px * scene_.bands;
    if (pixels_.size() != expected) {
        throw Error(ErrorCode::kShape, "raster holds " + std::to_string(pixels_.size()) +
                                           " samples, expected " + std::to_string(expected));
    }
}

std::uint32_t tiles_along(std::uint32_t extent_px, const TileGrid& grid) {
    grid.validate();
    if (extent_px < grid.tile_size) return 0;
    return (extent_px - grid.tile_size) / grid.stride + 1;
}

std::vector<TileId> enumerate_tiles(const Scene& scene, const TileGrid& grid) {
    const auto nx = tiles_along(scene.width_px, grid);
    const auto ny = tiles_along(scene.height_px, grid);
    if (nx == 0 || ny == 0) {
        throw Error(ErrorCode::kEmptyGrid,
                    "scene '" + scene.name + "' (" + std::to_string(scene.width_px) + "x" +
                        std::to_string(scene.height_px) + ") is smaller than one tile");
    }
    std::vector<TileId> tiles;
    tiles.reserve(static_cast<std::size_t>(nx) * ny);
    for (std::uint32_t y = 0; y < ny; ++y) {
        for (std::uint32_t x = 0; x < nx; ++x) {
            tiles.push_back(TileId{scene.name, x, y});
        }
    }
    return tiles;
}

TilePixels extract(const Raster& raster, const TileId& tile, const TileGrid& grid) {
    grid.validate();
    const Scene& scene = raster.scene();
    if (tile.scene != scene.name) {
        throw Error(ErrorCode::kInvalidArgument,
                    "tile " + tile.to_string() + " does not belong to scene '" + scene.name + "'");
    }
    const std::uint64_t x0 = std::uint64_t{tile.grid_x} * grid.stride;
    const std::uint64_t y0 = std::uint64_t{tile.grid_y} * grid.stride;
    if (x0 + grid.tile_size > scene.width_px || y0 + grid.tile_size > scene.height_px) {
        throw Error(ErrorCode::kBounds, "tile " + tile.to_string() + " lies outside the scene");
    }

    TilePixels out;
    out.size = grid.tile_size;
    out.bands = scene.bands;
    out.bit_depth = scene.bit_depth;
    out.data.resize(static_cast<std::size_t>(grid.tile_size) * grid.tile_size * scene.bands);
    const std::size_t row_samples = static_cast<std::size_t>(grid.tile_size) * scene.bands;
    const auto& src = raster.pixels();
    for (std::uint32_t r = 0; r < grid.tile_size; ++r) {
        const std::size_t src_off = ((y0 + r) * scene.width_px + x0) * scene.bands;
        std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(src_off), row_samples,
                    out.data.begin() + static_cast<std::ptrdiff_t>(r * row_samples));
    }
    return out;
}

LonLat tile_geo(const Scene& scene, const TileId& tile, const TileGrid& grid) {
    const double half = grid.tile_size / 2.0;
    const double px = static_cast<double>(tile.grid_x) * grid.stride + half;
    const double py = static_cast<double>(tile.grid_y) * grid.stride + half;
    return scene.geo.apply(px, py);
}

} // namespace tilesearch
