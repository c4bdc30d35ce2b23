#include "snapstack/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <stdexcept>
#include <vector>

#include <png.h>

namespace snapstack {

namespace {

Tensor from_u8(const std::vector<unsigned char>& pixels, std::size_t h, std::size_t w,
               std::size_t channels) {
    Tensor img = Tensor::zeros({h, w, 3});
    double* out = img.data();
    for (std::size_t i = 0; i < h * w; ++i) {
        if (channels == 1) {
            const double v = pixels[i] / 255.0;
            out[i * 3 + 0] = v;
            out[i * 3 + 1] = v;
            out[i * 3 + 2] = v;
        } else {
            for (std::size_t c = 0; c < 3; ++c) out[i * 3 + c] = pixels[i * 3 + c] / 255.0;
        }
    }
    return img;
}

// Binary PNM: P5 (grayscale) and P6 (RGB), 8-bit maxval.
Tensor load_pnm(std::ifstream& is, const std::string& path) {
    std::string magic;
    is >> magic;
    const std::size_t channels = magic == "P6" ? 3 : 1;

    const auto next_token = [&]() -> long {
        // Skips whitespace and '#' comment lines between header fields.
        for (;;) {
            int c = is.peek();
            if (c == '#') {
                std::string line;
                std::getline(is, line);
            } else if (std::isspace(c)) {
                is.get();
            } else {
                break;
            }
        }
        long v = -1;
        is >> v;
        return v;
    };

    const long w = next_token(), h = next_token(), maxval = next_token();
    if (!is || w < 1 || h < 1 || maxval < 1 || maxval > 255)
        throw std::runtime_error("corrupt or unsupported PNM header: " + path);
    is.get();  // single whitespace after maxval

    std::vector<unsigned char> pixels(static_cast<std::size_t>(w) * h * channels);
    is.read(reinterpret_cast<char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
    if (is.gcount() != static_cast<std::streamsize>(pixels.size()))
        throw std::runtime_error("truncated PNM pixel data: " + path);
    if (maxval != 255)
        for (auto& p : pixels)
            p = static_cast<unsigned char>(p * 255 / maxval);
    return from_u8(pixels, static_cast<std::size_t>(h), static_cast<std::size_t>(w), channels);
}

Tensor load_png_file(const std::string& path) {
    std::FILE* fp = std::fopen(path.c_str(), "rb");
    if (!fp) throw std::runtime_error("cannot open image: " + path);

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        if (png) png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        throw std::runtime_error("libpng initialization failed for " + path);
    }

    std::vector<unsigned char> pixels;
    std::size_t width = 0, height = 0, channels = 0;

    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        throw std::runtime_error("corrupt PNG: " + path);
    }

    png_init_io(png, fp);
    png_read_info(png, info);

    width = png_get_image_width(png, info);
    height = png_get_image_height(png, info);
    const png_byte color = png_get_color_type(png, info);
    const png_byte depth = png_get_bit_depth(png, info);

    if (depth == 16) png_set_strip_16(png);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    png_read_update_info(png, info);

    channels = png_get_channels(png, info);
    if (channels != 1 && channels != 3) {
        png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        throw std::runtime_error("unsupported PNG channel layout in " + path);
    }

    pixels.resize(width * height * channels);
    std::vector<png_bytep> rows(height);
    for (std::size_t y = 0; y < height; ++y) rows[y] = pixels.data() + y * width * channels;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);

    return from_u8(pixels, height, width, channels);
}

}  // namespace

Tensor load_image(const std::string& path, std::size_t target_h, std::size_t target_w) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open image: " + path);
    unsigned char sig[8] = {};
    is.read(reinterpret_cast<char*>(sig), 8);
    if (is.gcount() < 2) throw std::runtime_error("not a raster image: " + path);
    is.seekg(0);

    Tensor img;
    if (sig[0] == 'P' && (sig[1] == '5' || sig[1] == '6')) {
        img = load_pnm(is, path);
    } else if (png_sig_cmp(sig, 0, static_cast<std::size_t>(std::min<std::streamsize>(
                                       8, is.good() ? 8 : 0))) == 0) {
        is.close();
        img = load_png_file(path);
    } else {
        throw std::runtime_error("unsupported image format (want PNG or binary PNM): " + path);
    }
    return resize_bilinear(img, target_h, target_w);
}

Tensor resize_bilinear(const Tensor& image, std::size_t target_h, std::size_t target_w) {
    if (image.rank() != 3) throw std::invalid_argument("resize wants an [H,W,C] image");
    if (target_h < 1 || target_w < 1) throw std::invalid_argument("resize target must be >= 1");
    const std::size_t h = image.extent(0), w = image.extent(1), c = image.extent(2);
    if (h == target_h && w == target_w) return image;

    Tensor out = Tensor::zeros({target_h, target_w, c});
    const double* src = image.data();
    double* dst = out.data();
    const double sy = static_cast<double>(h) / static_cast<double>(target_h);
    const double sx = static_cast<double>(w) / static_cast<double>(target_w);

#pragma omp parallel for schedule(static)
    for (long long ty = 0; ty < static_cast<long long>(target_h); ++ty) {
        const double fy = (static_cast<double>(ty) + 0.5) * sy - 0.5;
        const double cy = std::clamp(fy, 0.0, static_cast<double>(h - 1));
        const auto y0 = static_cast<std::size_t>(cy);
        const std::size_t y1 = std::min(y0 + 1, h - 1);
        const double wy = cy - static_cast<double>(y0);
        for (std::size_t tx = 0; tx < target_w; ++tx) {
            const double fx = (static_cast<double>(tx) + 0.5) * sx - 0.5;
            const double cx = std::clamp(fx, 0.0, static_cast<double>(w - 1));
            const auto x0 = static_cast<std::size_t>(cx);
            const std::size_t x1 = std::min(x0 + 1, w - 1);
            const double wx = cx - static_cast<double>(x0);
            for (std::size_t ch = 0; ch < c; ++ch) {
                const double v00 = src[(y0 * w + x0) * c + ch];
                const double v01 = src[(y0 * w + x1) * c + ch];
                const double v10 = src[(y1 * w + x0) * c + ch];
                const double v11 = src[(y1 * w + x1) * c + ch];
                dst[(static_cast<std::size_t>(ty) * target_w + tx) * c + ch] =
                    (1 - wy) * ((1 - wx) * v00 + wx * v01) + wy * ((1 - wx) * v10 + wx * v11);
            }
        }
    }
    return out;
}

namespace {
unsigned char quantize(double v) {
    const double clamped = std::clamp(v, 0.0, 1.0);
    return static_cast<unsigned char>(std::lround(clamped * 255.0));
}
}  // namespace

void write_ppm(const std::string& path, const Tensor& image) {
    if (image.rank() != 3 || image.extent(2) != 3)
        throw std::invalid_argument("write_ppm wants an [H,W,3] image");
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open for writing: " + path);
    const std::size_t h = image.extent(0), w = image.extent(1);
    os << "P6\n" << w << ' ' << h << "\n255\n";
    std::vector<unsigned char> row(w * 3);
    const double* src = image.data();
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t i = 0; i < w * 3; ++i) row[i] = quantize(src[y * w * 3 + i]);
        os.write(reinterpret_cast<const char*>(row.data()),
                 static_cast<std::streamsize>(row.size()));
    }
    if (!os) throw std::runtime_error("failed writing image: " + path);
}

void write_png(const std::string& path, const Tensor& image) {
    if (image.rank() != 3 || image.extent(2) != 3)
        throw std::invalid_argument("write_png wants an [H,W,3] image");
    std::FILE* fp = std::fopen(path.c_str(), "wb");
    if (!fp) throw std::runtime_error("cannot open for writing: " + path);

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        if (png) png_destroy_write_struct(&png, &info);
        std::fclose(fp);
        throw std::runtime_error("libpng initialization failed for " + path);
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        std::fclose(fp);
        throw std::runtime_error("failed writing PNG: " + path);
    }

    const std::size_t h = image.extent(0), w = image.extent(1);
    png_init_io(png, fp);
    png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
                 PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);

    std::vector<unsigned char> row(w * 3);
    const double* src = image.data();
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t i = 0; i < w * 3; ++i) row[i] = quantize(src[y * w * 3 + i]);
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
}

void AugmentConfig::validate() const {
    if (flip_probability < 0.0 || flip_probability > 1.0)
        throw std::invalid_argument("flip probability must be in [0, 1]");
    if (rotation_degrees < 0.0 || shear_degrees < 0.0 || zoom_fraction < 0.0 ||
        shift_fraction < 0.0)
        throw std::invalid_argument("augmentation magnitudes must be non-negative");
    if (zoom_fraction >= 1.0)
        throw std::invalid_argument("zoom fraction must be < 1 so scale stays positive");
    if (shear_degrees >= 89.0) throw std::invalid_argument("shear angle too large");
}

Affine Affine::rotation(double degrees) {
    const double r = degrees * std::numbers::pi / 180.0;
    return {{std::cos(r), -std::sin(r), std::sin(r), std::cos(r)}, {0, 0}};
}
Affine Affine::shear_x(double degrees) {
    const double t = std::tan(degrees * std::numbers::pi / 180.0);
    return {{1, t, 0, 1}, {0, 0}};
}
Affine Affine::scale(double factor) { return {{factor, 0, 0, factor}, {0, 0}}; }
Affine Affine::translation(double dx, double dy) { return {{1, 0, 0, 1}, {dx, dy}}; }
Affine Affine::hflip() { return {{-1, 0, 0, 1}, {0, 0}}; }

Affine Affine::then(const Affine& o) const {
    Affine r;
    r.a = {o.a[0] * a[0] + o.a[1] * a[2], o.a[0] * a[1] + o.a[1] * a[3],
           o.a[2] * a[0] + o.a[3] * a[2], o.a[2] * a[1] + o.a[3] * a[3]};
    r.b = {o.a[0] * b[0] + o.a[1] * b[1] + o.b[0], o.a[2] * b[0] + o.a[3] * b[1] + o.b[1]};
    return r;
}

Affine Affine::inverse() const {
    const double det = a[0] * a[3] - a[1] * a[2];
    if (std::abs(det) < 1e-12) throw std::logic_error("affine map is singular");
    Affine r;
    r.a = {a[3] / det, -a[1] / det, -a[2] / det, a[0] / det};
    r.b = {-(r.a[0] * b[0] + r.a[1] * b[1]), -(r.a[2] * b[0] + r.a[3] * b[1])};
    return r;
}

std::array<double, 2> Affine::apply(double x, double y) const {
    return {a[0] * x + a[1] * y + b[0], a[2] * x + a[3] * y + b[1]};
}

Affine sample_augment_affine(const AugmentConfig& config, Rng& rng, std::size_t h,
                             std::size_t w) {
    config.validate();
    // Fixed draw order keeps streams aligned regardless of magnitudes.
    const bool flip = rng.uniform01() < config.flip_probability;
    const double rot = rng.uniform(-config.rotation_degrees, config.rotation_degrees);
    const double shear = rng.uniform(-config.shear_degrees, config.shear_degrees);
    const double zoom = rng.uniform(1.0 - config.zoom_fraction, 1.0 + config.zoom_fraction);
    const double dx = rng.uniform(-config.shift_fraction, config.shift_fraction) *
                      static_cast<double>(w);
    const double dy = rng.uniform(-config.shift_fraction, config.shift_fraction) *
                      static_cast<double>(h);

    Affine map = Affine::translation(dx, dy)
                     .then(Affine::scale(zoom))
                     .then(Affine::shear_x(shear))
                     .then(Affine::rotation(rot));
    if (flip) map = map.then(Affine::hflip());
    return map;
}

Tensor warp_affine(const Tensor& image, const Affine& map) {
    if (image.rank() != 3) throw std::invalid_argument("warp wants an [H,W,C] image");
    const std::size_t h = image.extent(0), w = image.extent(1), c = image.extent(2);
    const Affine inv = map.inverse();
    const double cx = (static_cast<double>(w) - 1.0) / 2.0;
    const double cy = (static_cast<double>(h) - 1.0) / 2.0;

    Tensor out = Tensor::zeros(image.shape());
    const double* src = image.data();
    double* dst = out.data();

#pragma omp parallel for schedule(static)
    for (long long y = 0; y < static_cast<long long>(h); ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            const auto [sx, sy] = inv.apply(static_cast<double>(x) - cx,
                                            static_cast<double>(y) - cy);
            const double fx = std::clamp(sx + cx, 0.0, static_cast<double>(w - 1));
            const double fy = std::clamp(sy + cy, 0.0, static_cast<double>(h - 1));
            const auto x0 = static_cast<std::size_t>(fx);
            const auto y0 = static_cast<std::size_t>(fy);
            const std::size_t x1 = std::min(x0 + 1, w - 1);
            const std::size_t y1 = std::min(y0 + 1, h - 1);
            const double wx = fx - static_cast<double>(x0);
            const double wy = fy - static_cast<double>(y0);
            for (std::size_t ch = 0; ch < c; ++ch) {
                const double v00 = src[(y0 * w + x0) * c + ch];
                const double v01 = src[(y0 * w + x1) * c + ch];
                const double v10 = src[(y1 * w + x0) * c + ch];
                const double v11 = src[(y1 * w + x1) * c + ch];
                dst[(static_cast<std::size_t>(y) * w + x) * c + ch] =
                    (1 - wy) * ((1 - wx) * v00 + wx * v01) + wy * ((1 - wx) * v10 + wx * v11);
            }
        }
    }
    return out;
}

Tensor augment(const Tensor& image, const AugmentConfig& config, Rng& rng) {
    if (image.rank() != 3) throw std::invalid_argument("augment wants an [H,W,C] image");
    const Affine map = sample_augment_affine(config, rng, image.extent(0), image.extent(1));
    return warp_affine(image, map);
}

}  // namespace snapstack
