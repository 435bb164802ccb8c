#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace cardiosynth {

/// Canonical class ids shared by phantom labels and real annotations.
enum class Label : std::uint8_t {
    background = 0,
    rv_pool = 1,
    lv_myocardium = 2,
    lv_pool = 3,
};
inline constexpr int kNumLabelClasses = 4;

template <class T>
struct Grid2 {
    int rows = 0;
    int cols = 0;
    std::vector<T> data;

    Grid2() = default;
    Grid2(int r, int c, T fill = T{}) : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, fill) {}

    T& operator()(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
    const T& operator()(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }
    friend bool operator==(const Grid2&, const Grid2&) = default;
};

using LabelSlice = Grid2<std::uint8_t>;
using ImageSlice = Grid2<double>;

/// Stack of 2D slices with physical spacing (mm). Index order [slice][row][col].
template <class T>
struct Volume3 {
    int slices = 0;
    int rows = 0;
    int cols = 0;
    std::vector<T> data;
    double row_spacing = 1.0;
    double col_spacing = 1.0;
    double slice_spacing = 1.0;

    Volume3() = default;
    Volume3(int s, int r, int c, T fill = T{})
        : slices(s), rows(r), cols(c), data(static_cast<std::size_t>(s) * r * c, fill) {}

    std::size_t slice_size() const { return static_cast<std::size_t>(rows) * cols; }
    T& operator()(int s, int r, int c) { return data[(static_cast<std::size_t>(s) * rows + r) * cols + c]; }
    const T& operator()(int s, int r, int c) const {
        return data[(static_cast<std::size_t>(s) * rows + r) * cols + c];
    }
    bool same_grid(const auto& o) const { return slices == o.slices && rows == o.rows && cols == o.cols; }

    Grid2<T> slice(int s) const {
        Grid2<T> g(rows, cols);
        std::copy_n(data.begin() + static_cast<std::ptrdiff_t>(s * slice_size()), slice_size(), g.data.begin());
        return g;
    }
};

using ImageVolume = Volume3<double>;
using LabelVolume = Volume3<std::uint8_t>;

/// Frames x slices x rows x cols grid. Index order [frame][slice][row][col].
template <class T>
struct Volume4 {
    int frames = 0;
    int slices = 0;
    int rows = 0;
    int cols = 0;
    std::vector<T> data;
    double in_plane_spacing = 1.0;
    double slice_spacing = 1.0;
    std::vector<double> frame_times;  // seconds

    Volume4() = default;
    Volume4(int f, int s, int r, int c, T fill = T{})
        : frames(f), slices(s), rows(r), cols(c), data(static_cast<std::size_t>(f) * s * r * c, fill) {}

    std::size_t slice_size() const { return static_cast<std::size_t>(rows) * cols; }
    std::size_t offset(int f, int s) const { return (static_cast<std::size_t>(f) * slices + s) * slice_size(); }
    T& operator()(int f, int s, int r, int c) { return data[offset(f, s) + static_cast<std::size_t>(r) * cols + c]; }
    const T& operator()(int f, int s, int r, int c) const {
        return data[offset(f, s) + static_cast<std::size_t>(r) * cols + c];
    }
    std::span<T> slice_span(int f, int s) { return {data.data() + offset(f, s), slice_size()}; }
    std::span<const T> slice_span(int f, int s) const { return {data.data() + offset(f, s), slice_size()}; }

    Grid2<T> slice(int f, int s) const {
        Grid2<T> g(rows, cols);
        auto src = slice_span(f, s);
        std::copy(src.begin(), src.end(), g.data.begin());
        return g;
    }
    bool same_grid(const auto& o) const {
        return frames == o.frames && slices == o.slices && rows == o.rows && cols == o.cols;
    }
};

/// The label sequence a phantom emits: the ground truth for synthesized images.
struct LabelVolume4D : Volume4<std::uint8_t> {
    using Volume4::Volume4;
    /// Fingerprint of the generating parameters, or empty when unknown.
    std::string params_hash;
};

using ImageVolume4D = Volume4<float>;

}  // namespace cardiosynth
