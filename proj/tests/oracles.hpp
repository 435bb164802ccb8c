#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <queue>
#include <vector>

#include "cardiosynth/volume.hpp"

// Plain re-derivations used to cross-check library results.
namespace testing_support {

struct PreprocessedSlice {
    std::vector<double> image;
    std::vector<std::uint8_t> labels;
};

/// Resample (half-pixel centres, bilinear / round-half-up nearest), centre
/// crop, nearest-rank percentile clip, map to [-1, 1]. One entry per slice.
inline std::vector<PreprocessedSlice> preprocess_oracle(const cardiosynth::ImageVolume& img,
                                                        const cardiosynth::LabelVolume& mask, double target, int size,
                                                        double lo_pct, double hi_pct) {
    const double s = img.row_spacing;
    const int rows = static_cast<int>(std::lround(img.rows * s / target));
    const int cols = static_cast<int>(std::lround(img.cols * s / target));
    auto src = [&](int i, int n) { return std::clamp((i + 0.5) * target / s - 0.5, 0.0, n - 1.0); };
    auto offset = [](int extent, int sz) {
        const int d = extent - sz;
        return d >= 0 ? d / 2 : -((-d + 1) / 2);
    };
    const int r0 = offset(rows, size), c0 = offset(cols, size);

    std::vector<std::vector<double>> crops;
    std::vector<std::vector<std::uint8_t>> masks;
    std::vector<double> all;
    for (int k = 0; k < img.slices; ++k) {
        std::vector<double> out(static_cast<std::size_t>(size) * size, 0.0);
        std::vector<std::uint8_t> lab(out.size(), 0);
        for (int i = 0; i < size; ++i)
            for (int j = 0; j < size; ++j) {
                const int ri = i + r0, cj = j + c0;
                if (ri < 0 || cj < 0 || ri >= rows || cj >= cols) continue;
                const double y = src(ri, img.rows), x = src(cj, img.cols);
                const int y0 = static_cast<int>(std::floor(y)), x0 = static_cast<int>(std::floor(x));
                const int y1 = std::min(y0 + 1, img.rows - 1), x1 = std::min(x0 + 1, img.cols - 1);
                const double fy = y - y0, fx = x - x0;
                out[i * size + j] = (1 - fy) * ((1 - fx) * img(k, y0, x0) + fx * img(k, y0, x1)) +
                                    fy * ((1 - fx) * img(k, y1, x0) + fx * img(k, y1, x1));
                // round half up, exact ties included
                const int yn = std::min(static_cast<int>(std::floor(y + 0.5 + 1e-9)), img.rows - 1);
                const int xn = std::min(static_cast<int>(std::floor(x + 0.5 + 1e-9)), img.cols - 1);
                lab[i * size + j] = mask(k, yn, xn);
            }
        all.insert(all.end(), out.begin(), out.end());
        crops.push_back(std::move(out));
        masks.push_back(std::move(lab));
    }
    std::sort(all.begin(), all.end());
    const auto rank = [&](double p) { return all[static_cast<std::size_t>(std::lround(p / 100.0 * (all.size() - 1)))]; };
    const double lo = rank(lo_pct), hi = rank(hi_pct);
    std::vector<PreprocessedSlice> result;
    for (std::size_t k = 0; k < crops.size(); ++k) {
        PreprocessedSlice p{crops[k], masks[k]};
        for (double& v : p.image) v = std::clamp(2.0 * (std::clamp(v, lo, hi) - lo) / (hi - lo) - 1.0, -1.0, 1.0);
        result.push_back(std::move(p));
    }
    return result;
}

/// 4-connected components of the pixels where `in(r, c)` holds.
template <class Pred>
int count_components(int rows, int cols, Pred in) {
    std::vector<char> seen(static_cast<std::size_t>(rows) * cols, 0);
    int count = 0;
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) {
            if (!in(r, c) || seen[r * cols + c]) continue;
            ++count;
            std::queue<std::pair<int, int>> q;
            q.push({r, c});
            seen[r * cols + c] = 1;
            while (!q.empty()) {
                auto [y, x] = q.front();
                q.pop();
                const int dy[] = {1, -1, 0, 0}, dx[] = {0, 0, 1, -1};
                for (int k = 0; k < 4; ++k) {
                    const int ny = y + dy[k], nx = x + dx[k];
                    if (ny < 0 || nx < 0 || ny >= rows || nx >= cols || seen[ny * cols + nx] || !in(ny, nx)) continue;
                    seen[ny * cols + nx] = 1;
                    q.push({ny, nx});
                }
            }
        }
    return count;
}

}  // namespace testing_support
