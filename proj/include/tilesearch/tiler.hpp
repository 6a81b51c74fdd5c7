#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace tilesearch {

/// Grid coordinates of one tile within a named scene. String form is
/// "scene:grid_x:grid_y"; the pixel origin is (stride * grid_x, stride * grid_y).
struct TileId {
    std::string scene;
    std::uint32_t grid_x = 0;
    std::uint32_t grid_y = 0;

    std::string to_string() const;
    static TileId parse(std::string_view text);

    friend auto operator<=>(const TileId&, const TileId&) = default;
};

/// Scene names become the first field of tile ids and a directory name for
/// thumbnails, so they are limited to [A-Za-z0-9._-].
bool is_valid_scene_name(std::string_view name);

struct TileGrid {
    std::uint32_t tile_size = 128;
    std::uint32_t stride = 64;

    void validate() const;
};

struct LonLat {
    double lon = 0.0;
    double lat = 0.0;
};

/// Affine pixel -> (lon, lat) map, GDAL coefficient order:
/// lon = c[0] + c[1]*px + c[2]*py, lat = c[3] + c[4]*px + c[5]*py.
struct GeoTransform {
    std::array<double, 6> c{0.0, 1.0, 0.0, 0.0, 0.0, 1.0};

    LonLat apply(double px, double py) const {
        return {c[0] + c[1] * px + c[2] * py, c[3] + c[4] * px + c[5] * py};
    }
};

struct Scene {
    std::string name;
    std::uint32_t width_px = 0;
    std::uint32_t height_px = 0;
    std::uint32_t bands = 3;
    std::uint32_t bit_depth = 8;
    GeoTransform geo;
};

/// Interleaved (row, column, band) pixel storage. 8-bit samples are
/// widened to 16 bits so both depths share one representation.
class Raster {
public:
    Raster() = default;
    Raster(Scene scene, std::vector<std::uint16_t> pixels);

    const Scene& scene() const { return scene_; }
    Scene& scene() { return scene_; }
    const std::vector<std::uint16_t>& pixels() const { return pixels_; }

    std::uint16_t at(std::uint32_t x, std::uint32_t y, std::uint32_t band) const {
        return pixels_[(static_cast<std::size_t>(y) * scene_.width_px + x) * scene_.bands + band];
    }
    void set(std::uint32_t x, std::uint32_t y, std::uint32_t band, std::uint16_t value) {
        pixels_[(static_cast<std::size_t>(y) * scene_.width_px + x) * scene_.bands + band] = value;
    }

private:
    Scene scene_;
    std::vector<std::uint16_t> pixels_;
};

struct TilePixels {
    std::uint32_t size = 0;
    std::uint32_t bands = 0;
    std::uint32_t bit_depth = 8;
    std::vector<std::uint16_t> data;

    std::uint16_t at(std::uint32_t x, std::uint32_t y, std::uint32_t band) const {
        return data[(static_cast<std::size_t>(y) * size + x) * bands + band];
    }

    friend bool operator==(const TilePixels&, const TilePixels&) = default;
};

/// Every tile whose footprint lies fully inside the scene, row-major
/// (grid_y, then grid_x). Throws kEmptyGrid when the scene is smaller
/// than one tile.
std::vector<TileId> enumerate_tiles(const Scene& scene, const TileGrid& grid = {});

/// Tiles per axis for a dimension; 0 when the dimension is below tile_size.
std::uint32_t tiles_along(std::uint32_t extent_px, const TileGrid& grid = {});

/// Copy of the tile's pixel block. Throws kBounds for tiles overhanging the
/// raster and kInvalidArgument when the tile belongs to another scene.
TilePixels extract(const Raster& raster, const TileId& tile, const TileGrid& grid = {});

/// Geographic position of the tile's center pixel.
LonLat tile_geo(const Scene& scene, const TileId& tile, const TileGrid& grid = {});

} // namespace tilesearch
