#pragma once

#include <unistd.h>

#include <filesystem>
#include <random>
#include <string>

#include "tilesearch/image_io.hpp"
#include "tilesearch/tiler.hpp"

namespace tilesearch::testing {

inline Raster random_raster(const std::string& name, std::uint32_t w, std::uint32_t h, std::uint64_t seed,
                            std::uint32_t bands = 3, std::uint32_t depth = 8) {
    Scene s;
    s.name = name;
    s.width_px = w;
    s.height_px = h;
    s.bands = bands;
    s.bit_depth = depth;
    std::mt19937_64 rng(seed);
    std::vector<std::uint16_t> px(static_cast<std::size_t>(w) * h * bands);
    const std::uint32_t mask = depth == 8 ? 0xff : 0xffff;
    for (auto& v : px) v = static_cast<std::uint16_t>(rng() & mask);
    return Raster(s, std::move(px));
}

/// Fresh per-process scratch directory, removed on destruction.
class ScratchDir {
public:
    explicit ScratchDir(const std::string& tag)
        : path_(std::filesystem::temp_directory_path() /
                ("tilesearch_" + tag + "_" + std::to_string(::getpid()))) {
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~ScratchDir() { std::filesystem::remove_all(path_); }
    ScratchDir(const ScratchDir&) = delete;
    ScratchDir& operator=(const ScratchDir&) = delete;
    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& p) const { return path_ / p; }

private:
    std::filesystem::path path_;
};

} // namespace tilesearch::testing
