#pragma once

#include "groundkit/error.hpp"
#include "groundkit/geometry.hpp"

#include <png.h>

#include <array>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

namespace groundkit {

/// 8-bit RGB raster, row-major, no padding. All pixel operations in the
/// library are exact copies; nothing ever resamples or re-encodes lossily.
struct RasterImage {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> pixels;   // 3 * width * height bytes

    static RasterImage solid(int w, int h, std::array<std::uint8_t, 3> rgb = {0, 0, 0}) {
        RasterImage img;
        img.width = w;
        img.height = h;
        img.pixels.resize(static_cast<std::size_t>(w) * h * 3);
        for (std::size_t i = 0; i < img.pixels.size(); i += 3) {
            img.pixels[i] = rgb[0];
            img.pixels[i + 1] = rgb[1];
            img.pixels[i + 2] = rgb[2];
        }
        return img;
    }

    Size size() const { return Size{width, height}; }

    std::size_t offset(int x, int y) const {
        return (static_cast<std::size_t>(y) * width + x) * 3;
    }

    void set(int x, int y, std::array<std::uint8_t, 3> rgb) {
        auto const o = offset(x, y);
        pixels[o] = rgb[0];
        pixels[o + 1] = rgb[1];
        pixels[o + 2] = rgb[2];
    }

    std::array<std::uint8_t, 3> get(int x, int y) const {
        auto const o = offset(x, y);
        return {pixels[o], pixels[o + 1], pixels[o + 2]};
    }

    void fill_rect(BBox const & b, std::array<std::uint8_t, 3> rgb) {
        for (int y = std::max(0, b.y1); y <= std::min(height - 1, b.y2); ++y)
            for (int x = std::max(0, b.x1); x <= std::min(width - 1, b.x2); ++x)
                set(x, y, rgb);
    }

    bool operator==(RasterImage const &) const = default;
};

/// Pixel-exact sub-raster copy; output dimensions equal the window size.
inline RasterImage crop_raster(RasterImage const & image, CropWindow const & window) {
    if (window.origin.x < 0 || window.origin.y < 0 ||
        window.size.w <= 0 || window.size.h <= 0 ||
        window.x_max() > image.width || window.y_max() > image.height)
        throw Error("crop_raster: window out of image bounds");

    RasterImage out;
    out.width = window.size.w;
    out.height = window.size.h;
    out.pixels.resize(static_cast<std::size_t>(out.width) * out.height * 3);
    for (int y = 0; y < out.height; ++y) {
        auto const src = image.offset(window.origin.x, window.origin.y + y);
        std::memcpy(out.pixels.data() + out.offset(0, y),
                    image.pixels.data() + src,
                    static_cast<std::size_t>(out.width) * 3);
    }
    return out;
}

namespace detail {

struct PngByteCursor {
    std::uint8_t const * data;
    std::size_t size;
    std::size_t pos;
};

inline void png_read_from_memory(png_structp png, png_bytep out, png_size_t n) {
    auto * cur = static_cast<PngByteCursor *>(png_get_io_ptr(png));
    if (cur->pos + n > cur->size)
        png_error(png, "read past end of PNG buffer");
    std::memcpy(out, cur->data + cur->pos, n);
    cur->pos += n;
}

inline void png_write_to_vector(png_structp png, png_bytep data, png_size_t n) {
    auto * vec = static_cast<std::vector<std::uint8_t> *>(png_get_io_ptr(png));
    vec->insert(vec->end(), data, data + n);
}

inline void png_flush_noop(png_structp) {}

inline RasterImage decode_png_with(png_structp png, png_infop info) {
    png_read_info(png, info);

    // Normalize every input layout to 8-bit RGB.
    png_byte const color = png_get_color_type(png, info);
    png_byte const depth = png_get_bit_depth(png, info);
    if (color == PNG_COLOR_TYPE_PALETTE)
        png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8)
        png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS))
        png_set_tRNS_to_alpha(png);
    if (depth == 16)
        png_set_strip_16(png);
    if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA)
        png_set_gray_to_rgb(png);
    png_set_strip_alpha(png);
    png_read_update_info(png, info);

    RasterImage img;
    img.width = static_cast<int>(png_get_image_width(png, info));
    img.height = static_cast<int>(png_get_image_height(png, info));
    img.pixels.resize(static_cast<std::size_t>(img.width) * img.height * 3);

    std::vector<png_bytep> rows(img.height);
    for (int y = 0; y < img.height; ++y)
        rows[y] = img.pixels.data() + img.offset(0, y);
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    return img;
}

} // namespace detail

inline RasterImage decode_png(std::vector<std::uint8_t> const & bytes) {
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png)
        throw DataError("libpng: failed to create read struct");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw DataError("libpng: failed to create info struct");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw DataError("libpng: failed to decode PNG data");
    }
    detail::PngByteCursor cur{bytes.data(), bytes.size(), 0};
    png_set_read_fn(png, &cur, detail::png_read_from_memory);
    RasterImage img = detail::decode_png_with(png, info);
    png_destroy_read_struct(&png, &info, nullptr);
    return img;
}

inline RasterImage load_png(std::filesystem::path const & path) {
    std::FILE * fp = std::fopen(path.string().c_str(), "rb");
    if (!fp)
        throw DataError("cannot open image file: " + path.string());
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        if (png)
            png_destroy_read_struct(&png, nullptr, nullptr);
        std::fclose(fp);
        throw DataError("libpng: failed to allocate structs");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        throw DataError("libpng: failed to decode " + path.string());
    }
    png_init_io(png, fp);
    RasterImage img = detail::decode_png_with(png, info);
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    return img;
}

inline std::vector<std::uint8_t> encode_png(RasterImage const & image) {
    if (image.width <= 0 || image.height <= 0)
        throw DataError("encode_png: empty image");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        if (png)
            png_destroy_write_struct(&png, nullptr);
        throw DataError("libpng: failed to allocate write structs");
    }
    std::vector<std::uint8_t> out;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw DataError("libpng: failed to encode PNG");
    }
    png_set_write_fn(png, &out, detail::png_write_to_vector, detail::png_flush_noop);
    png_set_IHDR(png, info, image.width, image.height, 8, PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<png_bytep> rows(image.height);
    for (int y = 0; y < image.height; ++y)
        rows[y] = const_cast<png_bytep>(image.pixels.data() + image.offset(0, y));
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    return out;
}

inline void save_png(RasterImage const & image, std::filesystem::path const & path) {
    auto const bytes = encode_png(image);
    std::FILE * fp = std::fopen(path.string().c_str(), "wb");
    if (!fp)
        throw DataError("cannot open for writing: " + path.string());
    std::size_t const n = std::fwrite(bytes.data(), 1, bytes.size(), fp);
    std::fclose(fp);
    if (n != bytes.size())
        throw DataError("short write: " + path.string());
}

/// Cheap width/height probe from the IHDR chunk, without a full decode.
inline Size read_png_size(std::filesystem::path const & path) {
    std::FILE * fp = std::fopen(path.string().c_str(), "rb");
    if (!fp)
        throw DataError("cannot open image file: " + path.string());
    std::uint8_t header[24];
    std::size_t const n = std::fread(header, 1, sizeof(header), fp);
    std::fclose(fp);
    static std::uint8_t const sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
    if (n != sizeof(header) || std::memcmp(header, sig, 8) != 0 ||
        std::memcmp(header + 12, "IHDR", 4) != 0)
        throw DataError("not a PNG file: " + path.string());
    auto be32 = [&](int off) {
        return (header[off] << 24) | (header[off + 1] << 16) |
               (header[off + 2] << 8) | header[off + 3];
    };
    return Size{be32(16), be32(20)};
}

} // namespace groundkit
