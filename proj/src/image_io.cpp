#include "tilesearch/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "tilesearch/error.hpp"

namespace tilesearch {

namespace fs = std::filesystem;

std::vector<std::uint8_t> read_file_bytes(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error(ErrorCode::kIo, "cannot open " + path.string());
    }
    in.seekg(0, std::ios::end);
    const auto size = static_cast<std::size_t>(in.tellg());
    in.seekg(0);
    std::vector<std::uint8_t> bytes(size);
    if (size > 0 && !in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(size))) {
        throw Error(ErrorCode::kIo, "short read on " + path.string());
    }
    return bytes;
}

void write_file_bytes(const fs::path& path, std::span<const std::uint8_t> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw Error(ErrorCode::kIo, "cannot create " + path.string());
    }
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw Error(ErrorCode::kIo, "write failed on " + path.string());
    }
}

namespace {

void check_depth(std::uint32_t bit_depth) {
    if (bit_depth != 8 && bit_depth != 16) {
        throw Error(ErrorCode::kInvalidArgument, "bit depth must be 8 or 16");
    }
}

// ---- PNG ---------------------------------------------------------------

struct PngReadCursor {
    std::span<const std::uint8_t> bytes;
    std::size_t pos = 0;
};

struct PngContext {
    png_structp png = nullptr;
    png_infop info = nullptr;
    char message[256] = {};
};

void png_store_error(png_structp png, png_const_charp msg) {
    auto* ctx = static_cast<PngContext*>(png_get_error_ptr(png));
    std::snprintf(ctx->message, sizeof(ctx->message), "%s", msg);
    png_longjmp(png, 1);
}

void png_warn(png_structp, png_const_charp) {}

void png_read_from_span(png_structp png, png_bytep out, png_size_t len) {
    auto* cur = static_cast<PngReadCursor*>(png_get_io_ptr(png));
    if (cur->pos + len > cur->bytes.size()) {
        png_error(png, "truncated stream");
    }
    std::memcpy(out, cur->bytes.data() + cur->pos, len);
    cur->pos += len;
}

void png_write_to_vector(png_structp png, png_bytep data, png_size_t len) {
    auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
    out->insert(out->end(), data, data + len);
}

void png_flush_noop(png_structp) {}

struct PngReadGuard {
    PngContext ctx;
    ~PngReadGuard() { png_destroy_read_struct(&ctx.png, ctx.info ? &ctx.info : nullptr, nullptr); }
};

struct PngWriteGuard {
    PngContext ctx;
    ~PngWriteGuard() { png_destroy_write_struct(&ctx.png, ctx.info ? &ctx.info : nullptr); }
};

int png_color_type(std::uint32_t bands) {
    switch (bands) {
    case 1: return PNG_COLOR_TYPE_GRAY;
    case 2: return PNG_COLOR_TYPE_GRAY_ALPHA;
    case 3: return PNG_COLOR_TYPE_RGB;
    case 4: return PNG_COLOR_TYPE_RGB_ALPHA;
    default: throw Error(ErrorCode::kInvalidArgument, "png supports 1-4 bands");
    }
}

std::uint32_t read_u32le(std::span<const std::uint8_t> b, std::size_t off) {
    return std::uint32_t{b[off]} | std::uint32_t{b[off + 1]} << 8 | std::uint32_t{b[off + 2]} << 16 |
           std::uint32_t{b[off + 3]} << 24;
}

void put_u32le(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

} // namespace

namespace {

// libpng signals errors by longjmp back into these functions, so they keep
// no locals with non-trivial destructors; all buffers belong to the caller.
bool png_decode_into(PngContext& ctx, PngReadCursor& cursor, Scene& scene,
                     std::vector<std::uint8_t>& buf, std::vector<png_bytep>& rows) {
    if (setjmp(png_jmpbuf(ctx.png))) return false;
    png_set_read_fn(ctx.png, &cursor, png_read_from_span);
    png_read_info(ctx.png, ctx.info);

    const int color = png_get_color_type(ctx.png, ctx.info);
    const int depth = png_get_bit_depth(ctx.png, ctx.info);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(ctx.png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(ctx.png);
    if (png_get_valid(ctx.png, ctx.info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(ctx.png);
    if (depth == 16) png_set_swap(ctx.png);
    png_read_update_info(ctx.png, ctx.info);

    scene.width_px = png_get_image_width(ctx.png, ctx.info);
    scene.height_px = png_get_image_height(ctx.png, ctx.info);
    scene.bands = png_get_channels(ctx.png, ctx.info);
    scene.bit_depth = png_get_bit_depth(ctx.png, ctx.info) == 16 ? 16 : 8;

    const std::size_t rowbytes = png_get_rowbytes(ctx.png, ctx.info);
    buf.resize(rowbytes * scene.height_px);
    rows.resize(scene.height_px);
    for (std::uint32_t y = 0; y < scene.height_px; ++y) rows[y] = buf.data() + y * rowbytes;
    png_read_image(ctx.png, rows.data());
    png_read_end(ctx.png, nullptr);
    return true;
}

bool png_encode_into(PngContext& ctx, std::vector<std::uint8_t>& out, std::uint32_t width,
                     std::uint32_t height, int color, std::uint32_t bit_depth,
                     const std::vector<std::uint8_t>& rows, std::size_t row_stride) {
    if (setjmp(png_jmpbuf(ctx.png))) return false;
    png_set_write_fn(ctx.png, &out, png_write_to_vector, png_flush_noop);
    png_set_IHDR(ctx.png, ctx.info, width, height, static_cast<int>(bit_depth), color,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(ctx.png, ctx.info);
    for (std::uint32_t y = 0; y < height; ++y) {
        png_write_row(ctx.png, const_cast<png_bytep>(rows.data() + y * row_stride));
    }
    png_write_end(ctx.png, nullptr);
    return true;
}

} // namespace

Raster decode_png(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0) {
        throw Error(ErrorCode::kCorruptFile, "not a PNG stream");
    }
    PngReadGuard g;
    g.ctx.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &g.ctx, png_store_error, png_warn);
    if (!g.ctx.png) throw Error(ErrorCode::kIo, "png_create_read_struct failed");
    g.ctx.info = png_create_info_struct(g.ctx.png);
    if (!g.ctx.info) throw Error(ErrorCode::kIo, "png_create_info_struct failed");

    PngReadCursor cursor{bytes, 0};
    Scene scene;
    std::vector<std::uint8_t> buf;
    std::vector<png_bytep> rows;
    if (!png_decode_into(g.ctx, cursor, scene, buf, rows)) {
        throw Error(ErrorCode::kCorruptFile, std::string("png: ") + g.ctx.message);
    }

    const std::size_t row_n = static_cast<std::size_t>(scene.width_px) * scene.bands;
    std::vector<std::uint16_t> pixels(row_n * scene.height_px);
    for (std::uint32_t y = 0; y < scene.height_px; ++y) {
        auto* dst = pixels.data() + y * row_n;
        if (scene.bit_depth == 16) {
            std::memcpy(dst, rows[y], row_n * 2);
        } else {
            std::copy_n(rows[y], row_n, dst);
        }
    }
    return Raster(std::move(scene), std::move(pixels));
}

std::vector<std::uint8_t> encode_png(std::uint32_t width, std::uint32_t height, std::uint32_t bands,
                                     std::uint32_t bit_depth, std::span<const std::uint16_t> samples) {
    check_depth(bit_depth);
    const int color = png_color_type(bands);
    const std::size_t row_n = static_cast<std::size_t>(width) * bands;
    if (samples.size() != row_n * height) {
        throw Error(ErrorCode::kShape, "png encode: sample count does not match dimensions");
    }

    const std::size_t stride = row_n * (bit_depth / 8);
    std::vector<std::uint8_t> rows(stride * height);
    for (std::size_t i = 0; i < samples.size(); ++i) {
        if (bit_depth == 16) {
            rows[2 * i] = static_cast<std::uint8_t>(samples[i] >> 8); // PNG is big-endian
            rows[2 * i + 1] = static_cast<std::uint8_t>(samples[i] & 0xff);
        } else {
            rows[i] = static_cast<std::uint8_t>(samples[i]);
        }
    }

    PngWriteGuard g;
    g.ctx.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &g.ctx, png_store_error, png_warn);
    if (!g.ctx.png) throw Error(ErrorCode::kIo, "png_create_write_struct failed");
    g.ctx.info = png_create_info_struct(g.ctx.png);
    if (!g.ctx.info) throw Error(ErrorCode::kIo, "png_create_info_struct failed");

    std::vector<std::uint8_t> out;
    if (!png_encode_into(g.ctx, out, width, height, color, bit_depth, rows, stride)) {
        throw Error(ErrorCode::kIo, std::string("png: ") + g.ctx.message);
    }
    return out;
}

std::vector<std::uint8_t> encode_png(const TilePixels& tile) {
    return encode_png(tile.size, tile.size, tile.bands, tile.bit_depth, tile.data);
}

Raster decode_ppm(std::span<const std::uint8_t> bytes) {
    std::size_t pos = 0;
    auto skip_space_and_comments = [&] {
        while (pos < bytes.size()) {
            if (bytes[pos] == '#') {
                while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
            } else if (std::isspace(bytes[pos])) {
                ++pos;
            } else {
                break;
            }
        }
    };
    auto read_int = [&]() -> std::uint32_t {
        skip_space_and_comments();
        std::uint64_t v = 0;
        std::size_t digits = 0;
        while (pos < bytes.size() && std::isdigit(bytes[pos])) {
            v = v * 10 + (bytes[pos++] - '0');
            if (v > 0xffffffffu) throw Error(ErrorCode::kCorruptFile, "ppm: header value overflow");
            ++digits;
        }
        if (digits == 0) throw Error(ErrorCode::kCorruptFile, "ppm: malformed header");
        return static_cast<std::uint32_t>(v);
    };

    if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6') {
        throw Error(ErrorCode::kCorruptFile, "not a binary PPM (P6)");
    }
    pos = 2;
    Scene scene;
    scene.width_px = read_int();
    scene.height_px = read_int();
    const std::uint32_t maxval = read_int();
    if (maxval == 0 || maxval > 65535) throw Error(ErrorCode::kCorruptFile, "ppm: bad maxval");
    if (pos >= bytes.size() || !std::isspace(bytes[pos])) {
        throw Error(ErrorCode::kCorruptFile, "ppm: malformed header");
    }
    ++pos;
    scene.bands = 3;
    scene.bit_depth = maxval < 256 ? 8 : 16;

    const std::size_t n = static_cast<std::size_t>(scene.width_px) * scene.height_px * 3;
    const std::size_t bps = scene.bit_depth / 8;
    if (bytes.size() - pos < n * bps) throw Error(ErrorCode::kCorruptFile, "ppm: truncated pixel data");
    std::vector<std::uint16_t> pixels(n);
    for (std::size_t i = 0; i < n; ++i) {
        pixels[i] = bps == 1 ? bytes[pos + i]
                             : static_cast<std::uint16_t>(bytes[pos + 2 * i] << 8 | bytes[pos + 2 * i + 1]);
    }
    return Raster(std::move(scene), std::move(pixels));
}

Raster decode_raw(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 16) throw Error(ErrorCode::kCorruptFile, "raw: header truncated");
    Scene scene;
    scene.width_px = read_u32le(bytes, 0);
    scene.height_px = read_u32le(bytes, 4);
    scene.bands = read_u32le(bytes, 8);
    scene.bit_depth = read_u32le(bytes, 12);
    if (scene.bit_depth != 8 && scene.bit_depth != 16) {
        throw Error(ErrorCode::kCorruptFile, "raw: bit depth must be 8 or 16");
    }
    if (scene.bands == 0 || scene.bands > 16) throw Error(ErrorCode::kCorruptFile, "raw: bad band count");
    const std::size_t n = static_cast<std::size_t>(scene.width_px) * scene.height_px * scene.bands;
    const std::size_t bps = scene.bit_depth / 8;
    if (bytes.size() != 16 + n * bps) {
        throw Error(ErrorCode::kCorruptFile, "raw: payload size does not match header");
    }
    std::vector<std::uint16_t> pixels(n);
    const auto* p = bytes.data() + 16;
    for (std::size_t i = 0; i < n; ++i) {
        pixels[i] = bps == 1 ? p[i] : static_cast<std::uint16_t>(p[2 * i] | p[2 * i + 1] << 8);
    }
    return Raster(std::move(scene), std::move(pixels));
}

GeoTransform read_geo_sidecar(const fs::path& sidecar) {
    std::ifstream in(sidecar);
    if (!in) throw Error(ErrorCode::kIo, "cannot open " + sidecar.string());
    GeoTransform geo;
    for (auto& c : geo.c) {
        if (!(in >> c)) {
            throw Error(ErrorCode::kCorruptFile, sidecar.string() + ": expected 6 coefficients");
        }
    }
    return geo;
}

void write_geo_sidecar(const fs::path& scene_path, const GeoTransform& geo) {
    std::ofstream out(scene_path.string() + ".geo");
    if (!out) throw Error(ErrorCode::kIo, "cannot create geo sidecar for " + scene_path.string());
    out.precision(17);
    for (std::size_t i = 0; i < geo.c.size(); ++i) {
        out << geo.c[i] << (i + 1 < geo.c.size() ? ' ' : '\n');
    }
}

Raster read_scene(const fs::path& path) {
    const auto bytes = read_file_bytes(path);
    Raster raster;
    if (bytes.size() >= 8 && png_sig_cmp(bytes.data(), 0, 8) == 0) {
        raster = decode_png(bytes);
    } else if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] == '6') {
        raster = decode_ppm(bytes);
    } else {
        raster = decode_raw(bytes);
    }
    raster.scene().name = path.stem().string();
    if (!is_valid_scene_name(raster.scene().name)) {
        throw Error(ErrorCode::kInvalidArgument,
                    "scene file name '" + path.filename().string() + "' is not a valid scene name");
    }
    const fs::path sidecar = path.string() + ".geo";
    if (fs::exists(sidecar)) {
        raster.scene().geo = read_geo_sidecar(sidecar);
    }
    return raster;
}

void write_png(const fs::path& path, const Raster& raster) {
    const auto& s = raster.scene();
    write_file_bytes(path, encode_png(s.width_px, s.height_px, s.bands, s.bit_depth, raster.pixels()));
}

void write_ppm(const fs::path& path, const Raster& raster) {
    const auto& s = raster.scene();
    if (s.bands != 3) throw Error(ErrorCode::kInvalidArgument, "ppm requires 3 bands");
    std::ostringstream header;
    header << "P6\n" << s.width_px << ' ' << s.height_px << '\n' << (s.bit_depth == 8 ? 255 : 65535) << '\n';
    const auto h = header.str();
    std::vector<std::uint8_t> out(h.begin(), h.end());
    for (auto v : raster.pixels()) {
        if (s.bit_depth == 16) out.push_back(static_cast<std::uint8_t>(v >> 8));
        out.push_back(static_cast<std::uint8_t>(v & 0xff));
    }
    write_file_bytes(path, out);
}

void write_raw(const fs::path& path, const Raster& raster) {
    const auto& s = raster.scene();
    check_depth(s.bit_depth);
    std::vector<std::uint8_t> out;
    out.reserve(16 + raster.pixels().size() * (s.bit_depth / 8));
    put_u32le(out, s.width_px);
    put_u32le(out, s.height_px);
    put_u32le(out, s.bands);
    put_u32le(out, s.bit_depth);
    for (auto v : raster.pixels()) {
        out.push_back(static_cast<std::uint8_t>(v & 0xff));
        if (s.bit_depth == 16) out.push_back(static_cast<std::uint8_t>(v >> 8));
    }
    write_file_bytes(path, out);
}

} // namespace tilesearch
