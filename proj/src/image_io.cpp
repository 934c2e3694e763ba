#include "eatseg/image_io.hpp"

#include <png.h>

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>

#include "eatseg/errors.hpp"

namespace eatseg::io {
namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::filesystem::path& path, const char* mode) {
    FilePtr f(std::fopen(path.c_str(), mode));
    require(f != nullptr, ErrorKind::io, std::string("cannot open ") + path.string());
    return f;
}

[[noreturn]] void png_error_fn(png_structp png, png_const_charp msg) {
    auto* what = static_cast<std::string*>(png_get_error_ptr(png));
    *what = msg;
    png_longjmp(png, 1);
}
void png_warning_fn(png_structp, png_const_charp) {}

void write_png(const std::filesystem::path& path, int width, int height, int bit_depth, int color_type,
               const std::uint8_t* data, std::size_t row_bytes) {
    require(width > 0 && height > 0, ErrorKind::invalid_argument, "write_png: empty image");
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    FilePtr f = open_file(path, "wb");
    std::string err;
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &err, png_error_fn, png_warning_fn);
    require(png != nullptr, ErrorKind::io, "png_create_write_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info || setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        fail(ErrorKind::io, "writing " + path.string() + ": " + err);
    }
    png_init_io(png, f.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), bit_depth, color_type,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    if (bit_depth == 16 && std::endian::native == std::endian::little) png_set_swap(png);
    for (int r = 0; r < height; ++r) png_write_row(png, data + static_cast<std::size_t>(r) * row_bytes);
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

}  // namespace

Plane<std::uint16_t> read_png_gray(const std::filesystem::path& path) {
    FilePtr f = open_file(path, "rb");
    std::string err;
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &err, png_error_fn, png_warning_fn);
    require(png != nullptr, ErrorKind::io, "png_create_read_struct failed");
    png_infop info = png_create_info_struct(png);
    Plane<std::uint16_t> out;
    std::vector<std::uint8_t> row;
    if (!info || setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        fail(ErrorKind::format, "reading " + path.string() + ": " + err);
    }
    png_init_io(png, f.get());
    png_read_info(png, info);
    const int color = png_get_color_type(png, info);
    const int depth = png_get_bit_depth(png, info);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    if (color == PNG_COLOR_TYPE_RGB || color == PNG_COLOR_TYPE_RGB_ALPHA || color == PNG_COLOR_TYPE_PALETTE)
        png_set_rgb_to_gray_fixed(png, 1, -1, -1);
    if (depth == 16 && std::endian::native == std::endian::little) png_set_swap(png);
    png_read_update_info(png, info);

    const int width = static_cast<int>(png_get_image_width(png, info));
    const int height = static_cast<int>(png_get_image_height(png, info));
    const int out_depth = png_get_bit_depth(png, info);
    out = Plane<std::uint16_t>(height, width);
    row.resize(png_get_rowbytes(png, info));
    for (int r = 0; r < height; ++r) {
        png_read_row(png, row.data(), nullptr);
        for (int c = 0; c < width; ++c) {
            if (out_depth == 16) {
                std::uint16_t v;
                std::memcpy(&v, row.data() + 2 * c, 2);
                out.at(r, c) = v;
            } else {
                out.at(r, c) = row[c];
            }
        }
    }
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return out;
}

void write_png_gray8(const std::filesystem::path& path, const Plane<std::uint8_t>& img) {
    write_png(path, img.cols, img.rows, 8, PNG_COLOR_TYPE_GRAY, img.px.data(), img.cols);
}

void write_png_gray16(const std::filesystem::path& path, const Plane<std::uint16_t>& img) {
    write_png(path, img.cols, img.rows, 16, PNG_COLOR_TYPE_GRAY, reinterpret_cast<const std::uint8_t*>(img.px.data()),
              static_cast<std::size_t>(img.cols) * 2);
}

void write_png_rgb(const std::filesystem::path& path, int width, int height, const std::vector<std::uint8_t>& rgb) {
    require(rgb.size() == static_cast<std::size_t>(width) * height * 3, ErrorKind::invalid_argument,
            "write_png_rgb: buffer size mismatch");
    write_png(path, width, height, 8, PNG_COLOR_TYPE_RGB, rgb.data(), static_cast<std::size_t>(width) * 3);
}

HuPlane read_raw_i16(const std::filesystem::path& path, int rows, int cols) {
    require(rows > 0 && cols > 0, ErrorKind::invalid_argument,
            "raw image " + path.string() + " needs positive rows/cols in the manifest");
    std::ifstream is(path, std::ios::binary);
    require(static_cast<bool>(is), ErrorKind::io, "cannot open " + path.string());
    const std::size_t n = static_cast<std::size_t>(rows) * cols;
    is.seekg(0, std::ios::end);
    const auto bytes = static_cast<std::size_t>(is.tellg());
    require(bytes == n * 2, ErrorKind::format,
            "raw image " + path.string() + " has " + std::to_string(bytes) + " bytes, expected " +
                std::to_string(n * 2) + " for " + std::to_string(rows) + "x" + std::to_string(cols));
    is.seekg(0);
    HuPlane img(rows, cols);
    std::vector<std::uint8_t> buf(n * 2);
    is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    for (std::size_t i = 0; i < n; ++i)
        img.px[i] = static_cast<std::int16_t>(static_cast<std::uint16_t>(buf[2 * i] | (buf[2 * i + 1] << 8)));
    return img;
}

void write_raw_i16(const std::filesystem::path& path, const HuPlane& img) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    require(static_cast<bool>(os), ErrorKind::io, "cannot write " + path.string());
    std::vector<std::uint8_t> buf(img.size() * 2);
    for (std::size_t i = 0; i < img.size(); ++i) {
        const auto u = static_cast<std::uint16_t>(img.px[i]);
        buf[2 * i] = static_cast<std::uint8_t>(u & 0xff);
        buf[2 * i + 1] = static_cast<std::uint8_t>(u >> 8);
    }
    os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    require(static_cast<bool>(os), ErrorKind::io, "short write to " + path.string());
}

}  // namespace eatseg::io
