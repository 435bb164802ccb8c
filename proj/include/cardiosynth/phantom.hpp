#pragma once

#include <array>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "cardiosynth/volume.hpp"

// Analytic 4D heart phantom. The LV is a truncated thick-walled
// half-ellipsoid whose equator sits on the base plane; the RV cavity is an
// offset half-ellipsoid with the LV epicardium carved out, which leaves the
// usual crescent. Geometry at each instant is solved from the LV volume
// curve, so every control parameter maps directly to a visible property of
// the emitted label maps.
namespace cardiosynth::phantom {

inline constexpr std::size_t kNumPhases = 5;
inline constexpr std::size_t kEdPhase = 0;
inline constexpr std::size_t kEsPhase = 2;

struct PhantomParams {
    double cycle_length = 1.0;  // s
    int num_frames = 25;
    // ED, intermediate-1, ES, intermediate-2, intermediate-3 (mL)
    std::array<double, kNumPhases> lv_volumes{120.0, 85.0, 50.0, 90.0, 115.0};
    std::array<double, kNumPhases> phase_fractions{0.0, 0.175, 0.35, 0.60, 0.80};
    std::array<double, 3> geometric_scale{1.0, 1.0, 1.0};
    double myocardial_volume = 110.0;     // mL, constant over the cycle
    double rv_ratio = 1.0;                // RV cavity volume / LV cavity volume
    double longitudinal_shortening = 0.15;  // base descent at ES as a fraction of the ED long axis
    int num_slices = 18;
    double in_plane_spacing = 1.0;  // mm
    /// Unset: ED apex-to-base extent divided by num_slices.
    std::optional<double> slice_spacing;
    int grid_size = 128;

    friend bool operator==(const PhantomParams&, const PhantomParams&) = default;
};

struct ParamViolation {
    std::string field;
    std::string constraint;

    std::string message() const { return field + ": " + constraint; }
    friend bool operator==(const ParamViolation&, const ParamViolation&) = default;
};

/// Every violated invariant; empty when the parameters are valid.
std::vector<ParamViolation> validate_params(const PhantomParams& params);

class InvalidParams : public std::runtime_error {
public:
    explicit InvalidParams(std::vector<ParamViolation> violations);
    const std::vector<ParamViolation>& violations() const { return violations_; }

private:
    std::vector<ParamViolation> violations_;
};

/// Returns `params` unchanged or throws InvalidParams with the full list.
const PhantomParams& require_valid(const PhantomParams& params);

/// Canonical text form of the parameters, one `key = value` per line.
std::string params_to_text(const PhantomParams& params);
/// Hex FNV-1a digest of params_to_text.
std::string params_hash(const PhantomParams& params);

/// Periodic monotone piecewise-cubic LV volume (mL) through the five phase
/// knots. `t_fraction` is wrapped into [0, 1).
double lv_volume_curve(const PhantomParams& params, double t_fraction);

/// Endocardial cavity volume (mL) of the reference half-ellipsoid scaled by
/// `scale` in all three axes.
double endo_cavity_volume(const PhantomParams& params, double scale);

class GeometryError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Isotropic scale in [0.2, 3.0] whose cavity volume matches `target_volume`
/// to within 0.1 mL, found by bisection. Throws GeometryError when the bracket
/// does not enclose the target.
double solve_endo_scale(const PhantomParams& params, double target_volume);

/// Solved heart shape at one instant (lengths in mm; endocardial apex at z = 0).
struct FrameGeometry {
    double t_fraction = 0.0;
    double lv_volume = 0.0;   // mL, from the volume curve
    double contraction = 0.0;  // 0 at ED volume, 1 at ES volume
    std::array<double, 3> endo_axes{};  // x, y, z semi-axes
    double wall_offset = 0.0;            // epi axes = endo axes + wall_offset
    std::array<double, 3> rv_axes{};
    double rv_center_x = 0.0;
    double base_z = 0.0;  // base plane height; ellipsoid centres lie on it

    std::array<double, 3> epi_axes() const {
        return {endo_axes[0] + wall_offset, endo_axes[1] + wall_offset, endo_axes[2] + wall_offset};
    }
};

/// Solves the geometry at `t_fraction`. `frame_index` only labels errors.
FrameGeometry solve_geometry(const PhantomParams& params, double t_fraction, int frame_index = -1);

/// Analytic volumes (mL) of the solved regions.
double myocardial_volume(const FrameGeometry& g);
double rv_cavity_volume(const FrameGeometry& g);

/// Physical sampling of the label grid shared by all frames.
struct SliceStack {
    double slice_spacing = 0.0;
    double lateral_center = 0.0;  // x of the grid centre, mm
};
SliceStack slice_stack(const PhantomParams& params);

/// Class of the point (x, y, z) under precedence LV pool > myocardium > RV pool.
Label classify(const FrameGeometry& g, double x, double y, double z);

/// Labels of one frame, [slice][row][col]; slice 0 is the most apical.
LabelVolume voxelize_frame(const PhantomParams& params, int frame_index);
/// Same sampling at an arbitrary cycle fraction.
LabelVolume voxelize_at(const PhantomParams& params, double t_fraction, int frame_index = -1);

/// All frames stacked with spacing and frame times attached. Frames are
/// split across `threads` workers (0: hardware concurrency); the result does
/// not depend on the thread count.
LabelVolume4D generate_label_sequence(const PhantomParams& params, unsigned threads = 0);

}  // namespace cardiosynth::phantom
