#pragma once

#include <array>
#include <cstdint>
#include <string>

#include "snapstack/rng.hpp"
#include "snapstack/tensor.hpp"

namespace snapstack {

// Decodes a PNG or binary PNM (P5/P6) raster, replicates grayscale across
// three channels, scales to [0,1] and bilinearly resizes to the target.
// Unreadable or corrupt files throw with the path in the message.
Tensor load_image(const std::string& path, std::size_t target_h, std::size_t target_w);

// Bilinear resampling with clamp-to-edge source coordinates; resizing to the
// input's own size reproduces it exactly.
Tensor resize_bilinear(const Tensor& image, std::size_t target_h, std::size_t target_w);

// Writers used by the synthetic corpus generator and tests. Values are
// clamped to [0,1] and quantized to 8 bits.
void write_ppm(const std::string& path, const Tensor& image);  // P6, [H,W,3]
void write_png(const std::string& path, const Tensor& image);  // RGB, [H,W,3]

// Training-time augmentation: one affine map composed as
// rotation . shear . zoom . shift, plus an optional horizontal flip, applied
// with bilinear sampling and edge replication. All magnitudes are maxima for
// the uniformly sampled per-image parameters.
struct AugmentConfig {
    double flip_probability = 0.5;
    double rotation_degrees = 10.0;
    double shear_degrees = 5.0;
    double zoom_fraction = 0.10;   // scale drawn from [1 - z, 1 + z]
    double shift_fraction = 0.10;  // of the image extent, per axis
    std::uint64_t seed = 0;

    void validate() const;
};

// Row-major 2x3 affine acting on centered pixel coordinates (x right,
// y down): [x'; y'] = A * [x; y] + b.
struct Affine {
    std::array<double, 4> a{1, 0, 0, 1};
    std::array<double, 2> b{0, 0};

    static Affine rotation(double degrees);
    static Affine shear_x(double degrees);
    static Affine scale(double factor);
    static Affine translation(double dx, double dy);
    static Affine hflip();

    Affine then(const Affine& outer) const;  // outer ∘ this
    Affine inverse() const;
    std::array<double, 2> apply(double x, double y) const;
};

// Draws per-transform parameters from rng (fixed consumption order: flip,
// rotation, shear, zoom, shift-x, shift-y) and returns the composed map in
// pixel units for an h-by-w image.
Affine sample_augment_affine(const AugmentConfig& config, Rng& rng, std::size_t h,
                             std::size_t w);

Tensor augment(const Tensor& image, const AugmentConfig& config, Rng& rng);

// Applies an explicit map: output(p) = input(map^-1(p)), bilinear, edge
// replication. Exposed separately so tests can drive known matrices.
Tensor warp_affine(const Tensor& image, const Affine& map);

}  // namespace snapstack
