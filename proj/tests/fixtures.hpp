#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>

#include "cardiosynth/nifti.hpp"
#include "cardiosynth/volume.hpp"

namespace testing_support {

/// Smooth synthetic short-axis case: a bright disc (LV pool) in a darker
/// ring (myocardium) with an RV blob, on a textured background.
struct SyntheticCase {
    cardiosynth::ImageVolume image;
    cardiosynth::LabelVolume mask;
};

inline SyntheticCase make_case(int rows, int cols, int slices, double spacing, std::uint64_t seed) {
    SyntheticCase c{cardiosynth::ImageVolume(slices, rows, cols), cardiosynth::LabelVolume(slices, rows, cols)};
    for (auto* sp : {&c.image.row_spacing, &c.image.col_spacing, &c.mask.row_spacing, &c.mask.col_spacing}) *sp = spacing;
    c.image.slice_spacing = c.mask.slice_spacing = 10.0;
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> jitter(-4.0, 4.0);
    const double cy = rows * spacing / 2 + jitter(rng), cx = cols * spacing / 2 + jitter(rng);
    for (int s = 0; s < slices; ++s) {
        const double r_in = 15.0 + s, r_out = r_in + 8.0;
        for (int r = 0; r < rows; ++r)
            for (int q = 0; q < cols; ++q) {
                const double y = r * spacing - cy, x = q * spacing - cx;
                const double d = std::hypot(x, y), drv = std::hypot(x + r_out + 10.0, y * 0.8);
                std::uint8_t label = 0;
                double v = 80.0 + 30.0 * std::sin(0.05 * x) * std::cos(0.07 * y);
                if (d <= r_in) label = 3, v = 400.0;
                else if (d <= r_out) label = 2, v = 150.0;
                else if (drv <= 14.0) label = 1, v = 350.0;
                c.mask(s, r, q) = label;
                c.image(s, r, q) = v + 10.0 * s + 0.01 * ((r * 31 + q * 17) % 97);
            }
    }
    return c;
}

inline void write_volume(const std::filesystem::path& path, const cardiosynth::ImageVolume& v) {
    cardiosynth::nifti::Image img;
    img.dims = {v.cols, v.rows, v.slices};
    img.spacing = {v.col_spacing, v.row_spacing, v.slice_spacing};
    img.datatype = cardiosynth::nifti::DataType::float32;
    for (double x : v.data) img.voxels.push_back(static_cast<float>(x));
    cardiosynth::nifti::write(path, img);
}

inline void write_volume(const std::filesystem::path& path, const cardiosynth::LabelVolume& v) {
    cardiosynth::nifti::Image img;
    img.dims = {v.cols, v.rows, v.slices};
    img.spacing = {v.col_spacing, v.row_spacing, v.slice_spacing};
    img.datatype = cardiosynth::nifti::DataType::uint8;
    img.voxels.assign(v.data.begin(), v.data.end());
    cardiosynth::nifti::write(path, img);
}

/// ACDC-style patient directory: Info.cfg plus ED/ES frames and masks.
inline void write_acdc_case(const std::filesystem::path& root, const std::string& id, int size, double spacing,
                            std::uint64_t seed) {
    const auto dir = root / id;
    std::filesystem::create_directories(dir);
    std::ofstream(dir / "Info.cfg") << "ED: 1\nES: 12\nGroup: NOR\n";
    for (int frame : {1, 12}) {
        const auto c = make_case(size, size, 3, spacing, seed + frame);
        char stem[64];
        std::snprintf(stem, sizeof stem, "%s_frame%02d", id.c_str(), frame);
        write_volume(dir / (std::string(stem) + ".nii.gz"), c.image);
        write_volume(dir / (std::string(stem) + "_gt.nii.gz"), c.mask);
    }
}

}  // namespace testing_support
