#include "cardiosynth/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <numbers>
#include <sstream>
#include <thread>

#include "cardiosynth/util.hpp"

namespace cardiosynth::phantom {

namespace {

// Reference (scale 1) shapes, mm.
constexpr double kEndoRadius = 25.0;
constexpr double kEndoLength = 60.0;
constexpr std::array<double, 3> kRvAxes{25.0, 50.0, 60.0};

constexpr double kScaleLo = 0.2;
constexpr double kScaleHi = 3.0;
constexpr double kMaxWall = 500.0;
constexpr double kRvQuadStep = 0.5;  // mm

constexpr double kHalfEllipsoid = 2.0 / 3.0 * std::numbers::pi;

double mm3_to_ml(double v) { return v / 1000.0; }

// Bisection for an increasing f on [lo, hi]; throws when the bracket misses.
template <class F>
double bisect_increasing(F&& f, double target, double lo, double hi, const std::string& what) {
    const double flo = f(lo), fhi = f(hi);
    if (!(flo <= target && target <= fhi)) {
        std::ostringstream os;
        os << what << ": unachievable volume " << target << " mL (bracket yields [" << flo << ", " << fhi << "])";
        throw GeometryError(os.str());
    }
    for (int it = 0; it < 200 && hi - lo > 1e-14 * std::max(1.0, hi); ++it) {
        const double mid = 0.5 * (lo + hi);
        if (f(mid) < target)
            lo = mid;
        else
            hi = mid;
    }
    return 0.5 * (lo + hi);
}

std::string frame_tag(int frame_index) {
    return frame_index >= 0 ? "frame " + std::to_string(frame_index) : std::string("requested instant");
}

double ellipsoid_half_width(double a, double b, double c, double y, double dz) {
    const double q = 1.0 - (y / b) * (y / b) - (dz / c) * (dz / c);
    return q > 0.0 ? a * std::sqrt(q) : -1.0;
}

// RV cavity volume for given RV axes/centre and LV epicardium, integrated as
// exact x-interval lengths over a midpoint grid in (y, z).
double rv_volume_quadrature(const std::array<double, 3>& rv, double rv_cx, const std::array<double, 3>& epi) {
    const int ny = std::max(1, static_cast<int>(std::ceil(2.0 * rv[1] / kRvQuadStep)));
    const int nz = std::max(1, static_cast<int>(std::ceil(rv[2] / kRvQuadStep)));
    const double dy = 2.0 * rv[1] / ny, dz = rv[2] / nz;
    double total = 0.0;
    for (int iz = 0; iz < nz; ++iz) {
        const double z = -(iz + 0.5) * dz;  // relative to base plane
        for (int iy = 0; iy < ny; ++iy) {
            const double y = -rv[1] + (iy + 0.5) * dy;
            const double w = ellipsoid_half_width(rv[0], rv[1], rv[2], y, z);
            if (w <= 0.0) continue;
            double len = 2.0 * w;
            const double we = ellipsoid_half_width(epi[0], epi[1], epi[2], y, z);
            if (we > 0.0) {
                const double overlap = std::min(rv_cx + w, we) - std::max(rv_cx - w, -we);
                if (overlap > 0.0) len -= overlap;
            }
            total += len;
        }
    }
    return mm3_to_ml(total * dy * dz);
}

// Periodic PCHIP knot derivatives (Fritsch-Butland weighted harmonic mean).
std::array<double, kNumPhases> pchip_slopes(const std::array<double, kNumPhases>& x,
                                            const std::array<double, kNumPhases>& y) {
    constexpr std::size_t n = kNumPhases;
    std::array<double, n> h{}, delta{};
    for (std::size_t k = 0; k < n; ++k) {
        const double x1 = k + 1 < n ? x[k + 1] : x[0] + 1.0;
        const double y1 = y[(k + 1) % n];
        h[k] = x1 - x[k];
        delta[k] = (y1 - y[k]) / h[k];
    }
    std::array<double, n> d{};
    for (std::size_t k = 0; k < n; ++k) {
        const std::size_t km = (k + n - 1) % n;
        if (delta[km] * delta[k] <= 0.0) {
            d[k] = 0.0;
            continue;
        }
        const double w1 = 2.0 * h[k] + h[km];
        const double w2 = h[k] + 2.0 * h[km];
        d[k] = (w1 + w2) / (w1 / delta[km] + w2 / delta[k]);
    }
    return d;
}

double contraction_at(const PhantomParams& p, double volume) {
    const double ved = p.lv_volumes[kEdPhase], ves = p.lv_volumes[kEsPhase];
    return std::clamp((ved - volume) / (ved - ves), 0.0, 1.0);
}

}  // namespace

InvalidParams::InvalidParams(std::vector<ParamViolation> violations)
    : std::runtime_error([&] {
          std::string msg = "invalid phantom parameters:";
          for (const auto& v : violations) msg += " [" + v.message() + "]";
          return msg;
      }()),
      violations_(std::move(violations)) {}

std::vector<ParamViolation> validate_params(const PhantomParams& p) {
    std::vector<ParamViolation> out;
    auto fail = [&](std::string field, std::string constraint) { out.push_back({std::move(field), std::move(constraint)}); };

    if (!(p.cycle_length > 0.0)) fail("cycle_length", "must be > 0");
    if (p.num_frames < 1) fail("num_frames", "must be >= 1");
    for (std::size_t k = 0; k < kNumPhases; ++k)
        if (!(p.lv_volumes[k] > 0.0)) fail("lv_volumes", "volume " + std::to_string(k) + " must be > 0");
    if (!(p.lv_volumes[kEsPhase] < p.lv_volumes[kEdPhase])) fail("lv_volumes", "ES must be < ED");
    if (p.phase_fractions[0] != 0.0) fail("phase_fractions", "first fraction must be 0");
    for (std::size_t k = 0; k < kNumPhases; ++k)
        if (!(p.phase_fractions[k] >= 0.0 && p.phase_fractions[k] < 1.0))
            fail("phase_fractions", "fraction " + std::to_string(k) + " must lie in [0, 1)");
    for (std::size_t k = 1; k < kNumPhases; ++k)
        if (!(p.phase_fractions[k] > p.phase_fractions[k - 1])) {
            fail("phase_fractions", "must be strictly increasing");
            break;
        }
    for (double g : p.geometric_scale)
        if (!(g > 0.0)) {
            fail("geometric_scale", "components must be > 0");
            break;
        }
    if (!(p.myocardial_volume > 0.0)) fail("myocardial_volume", "must be > 0");
    if (!(p.rv_ratio > 0.0)) fail("rv_ratio", "must be > 0");
    if (!(p.longitudinal_shortening >= 0.0 && p.longitudinal_shortening <= 0.3))
        fail("longitudinal_shortening", "must lie in [0, 0.3]");
    if (p.num_slices < 1) fail("num_slices", "must be >= 1");
    if (!(p.in_plane_spacing > 0.0)) fail("in_plane_spacing", "must be > 0");
    if (p.slice_spacing && !(*p.slice_spacing > 0.0)) fail("slice_spacing", "must be > 0");
    if (p.grid_size < 1) fail("grid_size", "must be >= 1");
    return out;
}

const PhantomParams& require_valid(const PhantomParams& params) {
    auto violations = validate_params(params);
    if (!violations.empty()) throw InvalidParams(std::move(violations));
    return params;
}

std::string params_to_text(const PhantomParams& p) {
    auto list = [](const auto& arr) {
        std::string s;
        for (std::size_t i = 0; i < arr.size(); ++i) s += (i ? ", " : "") + format_double(arr[i]);
        return s;
    };
    std::ostringstream os;
    os << "cycle_length = " << format_double(p.cycle_length) << '\n'
       << "num_frames = " << p.num_frames << '\n'
       << "lv_volumes = " << list(p.lv_volumes) << '\n'
       << "phase_fractions = " << list(p.phase_fractions) << '\n'
       << "geometric_scale = " << list(p.geometric_scale) << '\n'
       << "myocardial_volume = " << format_double(p.myocardial_volume) << '\n'
       << "rv_ratio = " << format_double(p.rv_ratio) << '\n'
       << "longitudinal_shortening = " << format_double(p.longitudinal_shortening) << '\n'
       << "num_slices = " << p.num_slices << '\n'
       << "in_plane_spacing = " << format_double(p.in_plane_spacing) << '\n'
       << "slice_spacing = " << (p.slice_spacing ? format_double(*p.slice_spacing) : std::string("auto")) << '\n'
       << "grid_size = " << p.grid_size << '\n';
    return os.str();
}

std::string params_hash(const PhantomParams& params) { return hex64(fnv1a64(params_to_text(params))); }

double lv_volume_curve(const PhantomParams& p, double t_fraction) {
    const auto& x = p.phase_fractions;
    const auto& y = p.lv_volumes;
    double t = t_fraction - std::floor(t_fraction);
    if (t >= 1.0) t = 0.0;
    const auto d = pchip_slopes(x, y);
    std::size_t k = kNumPhases - 1;
    for (std::size_t i = 1; i < kNumPhases; ++i)
        if (t < x[i]) {
            k = i - 1;
            break;
        }
    const double x0 = x[k];
    const double x1 = k + 1 < kNumPhases ? x[k + 1] : 1.0 + x[0];
    const double y0 = y[k], y1 = y[(k + 1) % kNumPhases];
    const double d0 = d[k], d1 = d[(k + 1) % kNumPhases];
    const double h = x1 - x0;
    const double s = (t - x0) / h;
    const double s2 = s * s, s3 = s2 * s;
    const double h00 = 2 * s3 - 3 * s2 + 1, h10 = s3 - 2 * s2 + s, h01 = -2 * s3 + 3 * s2, h11 = s3 - s2;
    return h00 * y0 + h10 * h * d0 + h01 * y1 + h11 * h * d1;
}

double endo_cavity_volume(const PhantomParams& p, double scale) {
    const auto& g = p.geometric_scale;
    const double s3 = scale * scale * scale;
    return mm3_to_ml(kHalfEllipsoid * g[0] * kEndoRadius * g[1] * kEndoRadius * g[2] * kEndoLength * s3);
}

double solve_endo_scale(const PhantomParams& p, double target_volume) {
    if (!(target_volume > 0.0)) throw GeometryError("solve_endo_scale: unachievable volume (must be > 0)");
    return bisect_increasing([&](double s) { return endo_cavity_volume(p, s); }, target_volume, kScaleLo, kScaleHi,
                             "solve_endo_scale");
}

FrameGeometry solve_geometry(const PhantomParams& p, double t_fraction, int frame_index) {
    const auto& g = p.geometric_scale;
    FrameGeometry out;
    out.t_fraction = t_fraction - std::floor(t_fraction);
    out.lv_volume = lv_volume_curve(p, t_fraction);
    out.contraction = contraction_at(p, out.lv_volume);

    const std::string tag = frame_tag(frame_index);
    const double long_factor = 1.0 - p.longitudinal_shortening * out.contraction;
    const double ed_scale = solve_endo_scale(p, p.lv_volumes[kEdPhase]);
    const double long_axis = ed_scale * g[2] * kEndoLength * long_factor;

    // Radial scale at the prescribed long axis.
    auto cavity = [&](double r) {
        return mm3_to_ml(kHalfEllipsoid * (r * g[0] * kEndoRadius) * (r * g[1] * kEndoRadius) * long_axis);
    };
    const double radial = bisect_increasing(cavity, out.lv_volume, kScaleLo, kScaleHi, "endocardium at " + tag);
    out.endo_axes = {radial * g[0] * kEndoRadius, radial * g[1] * kEndoRadius, long_axis};
    out.base_z = long_axis;

    auto myo = [&](double d) {
        out.wall_offset = d;
        return myocardial_volume(out);
    };
    out.wall_offset = bisect_increasing(myo, p.myocardial_volume, 0.0, kMaxWall, "epicardium at " + tag);

    const auto epi = out.epi_axes();
    out.rv_center_x = -epi[0];
    auto rv = [&](double s) {
        out.rv_axes = {s * g[0] * kRvAxes[0], s * g[1] * kRvAxes[1], s * g[2] * kRvAxes[2] * long_factor};
        return rv_cavity_volume(out);
    };
    const double rv_scale = bisect_increasing(rv, p.rv_ratio * out.lv_volume, kScaleLo, kScaleHi, "RV at " + tag);
    rv(rv_scale);
    return out;
}

double myocardial_volume(const FrameGeometry& g) {
    const auto& e = g.endo_axes;
    const auto o = g.epi_axes();
    return mm3_to_ml(kHalfEllipsoid * (o[0] * o[1] * o[2] - e[0] * e[1] * e[2]));
}

double rv_cavity_volume(const FrameGeometry& g) { return rv_volume_quadrature(g.rv_axes, g.rv_center_x, g.epi_axes()); }

SliceStack slice_stack(const PhantomParams& p) {
    const FrameGeometry ed = solve_geometry(p, p.phase_fractions[kEdPhase]);
    SliceStack stack;
    stack.slice_spacing = p.slice_spacing ? *p.slice_spacing : (ed.base_z + ed.wall_offset) / p.num_slices;
    const double lo = std::min(-ed.epi_axes()[0], ed.rv_center_x - ed.rv_axes[0]);
    const double hi = std::max(ed.epi_axes()[0], ed.rv_center_x + ed.rv_axes[0]);
    stack.lateral_center = 0.5 * (lo + hi);
    return stack;
}

Label classify(const FrameGeometry& g, double x, double y, double z) {
    if (z >= g.base_z) return Label::background;
    const double dz = z - g.base_z;
    auto inside = [&](const std::array<double, 3>& ax, double cx) {
        const double u = (x - cx) / ax[0], v = y / ax[1], w = dz / ax[2];
        return u * u + v * v + w * w <= 1.0;
    };
    if (inside(g.endo_axes, 0.0)) return Label::lv_pool;
    if (inside(g.epi_axes(), 0.0)) return Label::lv_myocardium;
    if (inside(g.rv_axes, g.rv_center_x)) return Label::rv_pool;
    return Label::background;
}

namespace {

LabelVolume rasterize(const PhantomParams& p, const SliceStack& stack, const FrameGeometry& g) {
    const int n = p.grid_size;
    LabelVolume out(p.num_slices, n, n);
    out.row_spacing = out.col_spacing = p.in_plane_spacing;
    out.slice_spacing = stack.slice_spacing;
    for (int s = 0; s < p.num_slices; ++s) {
        // The stack hangs from the base plane: the top slice's upper face is the base.
        const double z = g.base_z - (p.num_slices - s - 0.5) * stack.slice_spacing;
        for (int r = 0; r < n; ++r) {
            const double y = (r + 0.5 - 0.5 * n) * p.in_plane_spacing;
            for (int c = 0; c < n; ++c) {
                const double x = (c + 0.5 - 0.5 * n) * p.in_plane_spacing + stack.lateral_center;
                out(s, r, c) = static_cast<std::uint8_t>(classify(g, x, y, z));
            }
        }
    }
    return out;
}

}  // namespace

LabelVolume voxelize_at(const PhantomParams& params, double t_fraction, int frame_index) {
    require_valid(params);
    return rasterize(params, slice_stack(params), solve_geometry(params, t_fraction, frame_index));
}

LabelVolume voxelize_frame(const PhantomParams& params, int frame_index) {
    require_valid(params);
    if (frame_index < 0 || frame_index >= params.num_frames)
        throw std::out_of_range("voxelize_frame: frame " + std::to_string(frame_index) + " outside [0, " +
                                std::to_string(params.num_frames) + ")");
    return voxelize_at(params, static_cast<double>(frame_index) / params.num_frames, frame_index);
}

LabelVolume4D generate_label_sequence(const PhantomParams& params, unsigned threads) {
    require_valid(params);
    const SliceStack stack = slice_stack(params);
    const int nf = params.num_frames, ns = params.num_slices, n = params.grid_size;
    LabelVolume4D out(nf, ns, n, n);
    out.in_plane_spacing = params.in_plane_spacing;
    out.slice_spacing = stack.slice_spacing;
    out.params_hash = params_hash(params);
    out.frame_times.resize(static_cast<std::size_t>(nf));
    for (int f = 0; f < nf; ++f) out.frame_times[static_cast<std::size_t>(f)] = f * params.cycle_length / nf;

    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(nf));
    auto work = [&](int f) {
        try {
            const FrameGeometry g = solve_geometry(params, static_cast<double>(f) / nf, f);
            const LabelVolume frame = rasterize(params, stack, g);
            std::copy(frame.data.begin(), frame.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(out.offset(f, 0)));
        } catch (...) {
            errors[static_cast<std::size_t>(f)] = std::current_exception();
        }
    };
    unsigned workers = threads ? threads : std::max(1u, std::thread::hardware_concurrency());
    workers = std::min<unsigned>(workers, static_cast<unsigned>(nf));
    if (workers <= 1) {
        for (int f = 0; f < nf; ++f) work(f);
    } else {
        std::vector<std::jthread> pool;
        for (unsigned w = 0; w < workers; ++w)
            pool.emplace_back([&, w] {
                for (int f = static_cast<int>(w); f < nf; f += static_cast<int>(workers)) work(f);
            });
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    return out;
}

}  // namespace cardiosynth::phantom
