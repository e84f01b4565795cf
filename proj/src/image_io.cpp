#include "loomweave/image_io.hpp"

#include <png.h>

#include <cstdio>
#include <memory>

namespace loomweave {

Image8 to_image8(const Tensor& hwc) {
    LW_CHECK(hwc.ndim() == 3 && hwc.dim(2) == 3, "expected HxWx3 tensor");
    Image8 img;
    img.rows = hwc.dim(0);
    img.cols = hwc.dim(1);
    img.rgb.resize(static_cast<size_t>(img.rows) * img.cols * 3);
    for (int64_t i = 0; i < hwc.numel(); ++i) {
        double v = std::clamp(hwc[i], 0.0, 1.0);
        img.rgb[static_cast<size_t>(i)] = static_cast<uint8_t>(v * 255.0 + 0.5);
    }
    return img;
}

Tensor to_tensor01(const Image8& img) {
    Tensor t({img.rows, img.cols, 3});
    for (int64_t i = 0; i < t.numel(); ++i)
        t[i] = img.rgb[static_cast<size_t>(i)] / 255.0;
    return t;
}

void write_png(const std::string& path, const Image8& img) {
    LW_CHECK(img.rows > 0 && img.cols > 0, "empty image");
    std::FILE* fp = std::fopen(path.c_str(), "wb");
    LW_CHECK(fp != nullptr, "cannot open for writing: " + path);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        std::fclose(fp);
        LW_CHECK(false, "png write failed: " + path);
    }
    png_init_io(png, fp);
    // Fixed compression settings keep dataset builds byte-identical.
    png_set_compression_level(png, 6);
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.cols),
                 static_cast<png_uint_32>(img.rows), 8, PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<png_bytep> rows(static_cast<size_t>(img.rows));
    for (int r = 0; r < img.rows; ++r)
        rows[static_cast<size_t>(r)] =
            const_cast<png_bytep>(img.rgb.data() + static_cast<size_t>(r) * img.cols * 3);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
}

Image8 read_png(const std::string& path) {
    std::FILE* fp = std::fopen(path.c_str(), "rb");
    LW_CHECK(fp != nullptr, "cannot open for reading: " + path);
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        LW_CHECK(false, "png read failed: " + path);
    }
    png_init_io(png, fp);
    png_read_info(png, info);
    png_uint_32 w = png_get_image_width(png, info);
    png_uint_32 h = png_get_image_height(png, info);
    int color = png_get_color_type(png, info);
    int depth = png_get_bit_depth(png, info);
    if (depth == 16) png_set_strip_16(png);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA)
        png_set_gray_to_rgb(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    png_set_strip_alpha(png);
    png_read_update_info(png, info);
    Image8 img;
    img.rows = static_cast<int>(h);
    img.cols = static_cast<int>(w);
    img.rgb.resize(static_cast<size_t>(h) * w * 3);
    std::vector<png_bytep> rows(static_cast<size_t>(h));
    for (png_uint_32 r = 0; r < h; ++r)
        rows[r] = img.rgb.data() + static_cast<size_t>(r) * w * 3;
    png_read_image(png, rows.data());
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    return img;
}

void write_png_gray_normalized(const std::string& path, const Tensor& hw) {
    LW_CHECK(hw.ndim() == 2, "expected HxW tensor");
    double lo = hw[0], hi = hw[0];
    for (int64_t i = 0; i < hw.numel(); ++i) {
        lo = std::min(lo, hw[i]);
        hi = std::max(hi, hw[i]);
    }
    double span = hi - lo;
    Tensor rgb({hw.dim(0), hw.dim(1), 3});
    for (int64_t i = 0; i < hw.numel(); ++i) {
        double v = span > 0.0 ? (hw[i] - lo) / span : 0.0;
        rgb[i * 3] = rgb[i * 3 + 1] = rgb[i * 3 + 2] = v;
    }
    write_png(path, to_image8(rgb));
}

}  // namespace loomweave
