#include "cardiosynth/inference.hpp"

#include <png.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <memory>
#include <random>
#include <sstream>

#include "cardiosynth/nifti.hpp"
#include "cardiosynth/util.hpp"

namespace cardiosynth::infer {

std::string to_string(StyleSource s) {
    switch (s) {
        case StyleSource::random: return "random";
        case StyleSource::encode: return "encode";
        case StyleSource::fixed: return "fixed";
    }
    return "random";
}

StyleSource style_from_string(const std::string& s) {
    if (s == "random") return StyleSource::random;
    if (s == "encode") return StyleSource::encode;
    if (s == "fixed") return StyleSource::fixed;
    throw std::invalid_argument("expected random, encode or fixed, got '" + s + "'");
}

MontageAxis axis_from_string(const std::string& s) {
    if (s == "time") return MontageAxis::time;
    if (s == "slice") return MontageAxis::slice;
    throw InferenceError("unknown montage axis '" + s + "' (expected time or slice)");
}

LabelSlice fit_labels(const LabelSlice& labels, int size) {
    LabelSlice out(size, size, 0);
    const int oy = data::crop_offset(labels.rows, size), ox = data::crop_offset(labels.cols, size);
    for (int r = 0; r < size; ++r) {
        const int sr = r + oy;
        if (sr < 0 || sr >= labels.rows) continue;
        for (int c = 0; c < size; ++c) {
            const int sc = c + ox;
            if (sc >= 0 && sc < labels.cols) out(r, c) = labels(sr, sc);
        }
    }
    return out;
}

std::vector<double> encode_style(const train::Checkpoint& cp, const ImageSlice& style_image) {
    if (!cp.model_config.use_vae) throw InferenceError("style encoding needs a checkpoint trained with use_vae");
    const int s = cp.model_config.image_size;
    if (style_image.rows != s || style_image.cols != s)
        throw InferenceError("style image must be " + std::to_string(s) + "x" + std::to_string(s));
    return model::encode(cp.weights, cp.model_config, style_image).mu;
}

std::vector<double> encode_style(const std::filesystem::path& checkpoint, const ImageSlice& style_image) {
    return encode_style(train::load_checkpoint(checkpoint), style_image);
}

namespace {

/// Labels as the generator sees them: optionally resampled, then fitted to the model grid.
LabelVolume4D prepare_labels(const LabelVolume4D& in, const model::ModelConfig& mc, const InferenceConfig& ic) {
    int max_label = 0;
    for (auto v : in.data) max_label = std::max<int>(max_label, v);
    if (max_label >= mc.num_classes)
        throw InferenceError("class-count mismatch: labels contain class " + std::to_string(max_label) +
                             " but the model has " + std::to_string(mc.num_classes) + " classes");
    const int size = mc.image_size;
    if (!ic.resample_labels && in.rows == size && in.cols == size) return in;

    LabelVolume4D out(in.frames, in.slices, size, size);
    out.in_plane_spacing = ic.resample_labels ? ic.model_spacing : in.in_plane_spacing;
    out.slice_spacing = in.slice_spacing;
    out.frame_times = in.frame_times;
    out.params_hash = in.params_hash;
    for (int f = 0; f < in.frames; ++f)
        for (int s = 0; s < in.slices; ++s) {
            LabelSlice slice = in.slice(f, s);
            if (ic.resample_labels) {
                LabelVolume m(1, slice.rows, slice.cols);
                m.data = slice.data;
                m.row_spacing = m.col_spacing = in.in_plane_spacing;
                ImageVolume dummy(1, slice.rows, slice.cols);
                dummy.row_spacing = dummy.col_spacing = in.in_plane_spacing;
                const auto [img, mask] = data::resample_inplane(dummy, m, ic.model_spacing);
                slice = mask.slice(0);
            }
            const LabelSlice fitted = fit_labels(slice, size);
            std::copy(fitted.data.begin(), fitted.data.end(), out.slice_span(f, s).begin());
        }
    return out;
}

}  // namespace

SyntheticDataset synthesize_sequence(const SynthesisRequest& req, const train::Checkpoint& cp,
                                     const std::string& checkpoint_id) {
    const auto& mc = cp.model_config;
    const auto& ic = req.config;
    if (req.labels.frames < 1 || req.labels.slices < 1) throw InferenceError("empty label sequence");

    SyntheticDataset ds;
    ds.labels = prepare_labels(req.labels, mc, ic);

    std::mt19937_64 rng(ic.seed);
    std::vector<double> shared;
    switch (ic.style) {
        case StyleSource::random: shared = model::sample_normal(static_cast<std::size_t>(mc.latent_dim), rng); break;
        case StyleSource::encode:
            if (!req.style_image) throw InferenceError("style source 'encode' needs a style image");
            shared = encode_style(cp, *req.style_image);
            break;
        case StyleSource::fixed:
            if (ic.fixed_z.size() != static_cast<std::size_t>(mc.latent_dim))
                throw InferenceError("fixed z must have latent_dim = " + std::to_string(mc.latent_dim) + " values");
            shared = ic.fixed_z;
            break;
    }

    const int frames = ds.labels.frames, slices = ds.labels.slices;
    std::vector<LabelSlice> inputs;
    std::vector<std::vector<double>> zs;
    for (int f = 0; f < frames; ++f)
        for (int s = 0; s < slices; ++s) {
            inputs.push_back(ds.labels.slice(f, s));
            if (ic.per_slice_z && ic.style == StyleSource::random && !(f == 0 && s == 0))
                zs.push_back(model::sample_normal(static_cast<std::size_t>(mc.latent_dim), rng));
            else
                zs.push_back(shared);
        }
    const auto images = model::generate(cp.weights, mc, zs, inputs);

    ds.images = ImageVolume4D(frames, slices, mc.image_size, mc.image_size);
    ds.images.in_plane_spacing = ds.labels.in_plane_spacing;
    ds.images.slice_spacing = ds.labels.slice_spacing;
    ds.images.frame_times = ds.labels.frame_times;
    for (int f = 0; f < frames; ++f)
        for (int s = 0; s < slices; ++s) {
            const auto& src = images[static_cast<std::size_t>(f * slices + s)].data;
            std::transform(src.begin(), src.end(), ds.images.slice_span(f, s).begin(),
                           [](double v) { return static_cast<float>(v); });
        }

    auto& p = ds.provenance;
    p["checkpoint"] = req.checkpoint.string();
    p["checkpoint_id"] = checkpoint_id;
    p["params_hash"] = req.labels.params_hash.empty() ? "none" : req.labels.params_hash;
    p["style"] = to_string(ic.style) + (req.style_descriptor.empty() ? "" : " " + req.style_descriptor);
    p["seed"] = std::to_string(ic.seed);
    p["per_slice_z"] = ic.per_slice_z ? "true" : "false";
    p["label_transform"] = ic.resample_labels ? "resample+crop" : "crop";
    p["frames"] = std::to_string(frames);
    p["slices"] = std::to_string(slices);
    p["image_size"] = std::to_string(mc.image_size);
    return ds;
}

SyntheticDataset synthesize_sequence(const SynthesisRequest& req) {
    const train::Checkpoint cp = train::load_checkpoint(req.checkpoint);
    return synthesize_sequence(req, cp, train::checkpoint_id(req.checkpoint));
}

void export_dataset(const SyntheticDataset& ds, const std::filesystem::path& dir, bool overwrite) {
    if (!ds.images.same_grid(ds.labels)) throw InferenceError("export: image and label grids differ");
    const auto images = dir / "images.nii.gz", labels = dir / "labels.nii.gz", prov = dir / "provenance.txt";
    if (!overwrite)
        for (const auto& p : {images, labels, prov})
            if (std::filesystem::exists(p))
                throw InferenceError("refusing to overwrite " + p.string() + " (pass the overwrite flag)");
    std::filesystem::create_directories(dir);
    nifti::write_image_sequence(images, ds.images);
    nifti::write_label_sequence(labels, ds.labels);
    std::string text;
    for (const auto& [k, v] : ds.provenance) text += k + ": " + v + "\n";
    write_file_atomic(prov, text);
}

SyntheticDataset load_dataset(const std::filesystem::path& dir) {
    SyntheticDataset ds;
    ds.images = nifti::read_image_sequence(dir / "images.nii.gz");
    ds.labels = nifti::read_label_sequence(dir / "labels.nii.gz");
    if (!ds.images.same_grid(ds.labels)) throw InferenceError("dataset at " + dir.string() + " has mismatched grids");
    if (std::filesystem::exists(dir / "provenance.txt"))
        for (const auto& [k, v] : nifti::read_key_values(dir / "provenance.txt")) ds.provenance[k] = v;
    return ds;
}

std::vector<int> spread_indices(int first, int last, int count) {
    if (count < 1) throw InferenceError("montage needs at least one index");
    if (count == 1) return {first};
    std::vector<int> out;
    for (int i = 0; i < count; ++i)
        out.push_back(first + static_cast<int>(std::lround(static_cast<double>(last - first) * i / (count - 1))));
    return out;
}

namespace {

constexpr std::array<std::array<std::uint8_t, 3>, 4> kPalette{{
    {0, 0, 0},
    {40, 110, 230},
    {60, 190, 80},
    {225, 60, 50},
}};
constexpr std::array<std::uint8_t, 3> kGapColor{32, 32, 32};

void write_png(const std::filesystem::path& path, int width, int height, const std::vector<std::uint8_t>& rgb) {
    if (!path.parent_path().empty()) std::filesystem::create_directories(path.parent_path());
    auto tmp = path;
    tmp += ".tmp";
    std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(tmp.c_str(), "wb"), &std::fclose);
    if (!fp) throw InferenceError("cannot write " + path.string());
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw InferenceError("libpng initialisation failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw InferenceError("PNG encoding failed for " + path.string());
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8, PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int r = 0; r < height; ++r)
        png_write_row(png, const_cast<png_bytep>(rgb.data() + static_cast<std::size_t>(r) * width * 3));
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    fp.reset();
    std::filesystem::rename(tmp, path);
}

}  // namespace

MontageLayout render_montage(const SyntheticDataset& ds, MontageAxis axis, int fixed_index,
                             const std::filesystem::path& png_path, std::vector<int> indices) {
    const int along = axis == MontageAxis::time ? ds.images.frames : ds.images.slices;
    const int across = axis == MontageAxis::time ? ds.images.slices : ds.images.frames;
    const char* fixed_name = axis == MontageAxis::time ? "slice" : "frame";
    if (fixed_index < 0 || fixed_index >= across)
        throw InferenceError(std::string(fixed_name) + " index " + std::to_string(fixed_index) + " out of range [0, " +
                             std::to_string(across) + ")");
    if (indices.empty())
        for (int i = 0; i < along; ++i) indices.push_back(i);
    for (int i : indices)
        if (i < 0 || i >= along)
            throw InferenceError((axis == MontageAxis::time ? "frame" : "slice") + std::string(" index ") +
                                 std::to_string(i) + " out of range [0, " + std::to_string(along) + ")");

    MontageLayout layout{2, static_cast<int>(indices.size()), ds.images.rows, ds.images.cols, 2};
    const int w = layout.width(), h = layout.height();
    std::vector<std::uint8_t> rgb(static_cast<std::size_t>(w) * h * 3);
    for (std::size_t i = 0; i < rgb.size(); i += 3) std::copy(kGapColor.begin(), kGapColor.end(), rgb.begin() + i);

    for (int col = 0; col < layout.columns; ++col) {
        const int f = axis == MontageAxis::time ? indices[col] : fixed_index;
        const int s = axis == MontageAxis::time ? fixed_index : indices[col];
        const auto labels = ds.labels.slice_span(f, s);
        const auto image = ds.images.slice_span(f, s);
        const int x0 = col * (layout.cell_width + layout.gap);
        for (int r = 0; r < layout.cell_height; ++r)
            for (int c = 0; c < layout.cell_width; ++c) {
                const std::size_t src = static_cast<std::size_t>(r) * layout.cell_width + c;
                const auto& color = kPalette[std::min<std::size_t>(labels[src], kPalette.size() - 1)];
                std::uint8_t* top = &rgb[(static_cast<std::size_t>(r) * w + x0 + c) * 3];
                std::copy(color.begin(), color.end(), top);
                const double v = std::clamp((static_cast<double>(image[src]) + 1.0) * 127.5, 0.0, 255.0);
                const auto g = static_cast<std::uint8_t>(std::lround(v));
                std::uint8_t* bottom =
                    &rgb[(static_cast<std::size_t>(r + layout.cell_height + layout.gap) * w + x0 + c) * 3];
                bottom[0] = bottom[1] = bottom[2] = g;
            }
    }
    write_png(png_path, w, h, rgb);
    return layout;
}

namespace {

std::array<double, 11> gaussian_window() {
    std::array<double, 11> w{};
    double sum = 0;
    for (int i = 0; i < 11; ++i) sum += w[i] = std::exp(-((i - 5) * (i - 5)) / (2 * 1.5 * 1.5));
    for (double& v : w) v /= sum;
    return w;
}

/// Separable valid-mode filtering of rows x cols -> (rows-10) x (cols-10).
std::vector<double> filter_valid(const std::vector<double>& x, int rows, int cols) {
    static const auto w = gaussian_window();
    const int orows = rows - 10, ocols = cols - 10;
    std::vector<double> tmp(static_cast<std::size_t>(rows) * ocols), out(static_cast<std::size_t>(orows) * ocols);
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < ocols; ++c) {
            double acc = 0;
            for (int k = 0; k < 11; ++k) acc += w[k] * x[static_cast<std::size_t>(r) * cols + c + k];
            tmp[static_cast<std::size_t>(r) * ocols + c] = acc;
        }
    for (int r = 0; r < orows; ++r)
        for (int c = 0; c < ocols; ++c) {
            double acc = 0;
            for (int k = 0; k < 11; ++k) acc += w[k] * tmp[static_cast<std::size_t>(r + k) * ocols + c];
            out[static_cast<std::size_t>(r) * ocols + c] = acc;
        }
    return out;
}

}  // namespace

double ssim(const float* a, const float* b, int rows, int cols) {
    if (rows < 11 || cols < 11) throw InferenceError("ssim needs images of at least 11x11");
    const std::size_t n = static_cast<std::size_t>(rows) * cols;
    std::vector<double> x(a, a + n), y(b, b + n), xx(n), yy(n), xy(n);
    for (std::size_t i = 0; i < n; ++i) {
        xx[i] = x[i] * x[i];
        yy[i] = y[i] * y[i];
        xy[i] = x[i] * y[i];
    }
    const auto mx = filter_valid(x, rows, cols), my = filter_valid(y, rows, cols);
    const auto sxx = filter_valid(xx, rows, cols), syy = filter_valid(yy, rows, cols), sxy = filter_valid(xy, rows, cols);
    constexpr double kRange = 2.0;
    constexpr double c1 = (0.01 * kRange) * (0.01 * kRange), c2 = (0.03 * kRange) * (0.03 * kRange);
    double total = 0;
    for (std::size_t i = 0; i < mx.size(); ++i) {
        const double vx = sxx[i] - mx[i] * mx[i], vy = syy[i] - my[i] * my[i], cov = sxy[i] - mx[i] * my[i];
        total += ((2 * mx[i] * my[i] + c1) * (2 * cov + c2)) / ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
    }
    return total / static_cast<double>(mx.size());
}

CoherenceReport coherence_report(const SyntheticDataset& ds, std::uint64_t seed, int baseline_pairs) {
    const auto& im = ds.images;
    if (im.frames < 2 || im.slices < 2)
        throw InferenceError("coherence report needs at least 2 frames and 2 slices (degenerate input)");
    if (!im.same_grid(ds.labels)) throw InferenceError("coherence report: image and label grids differ");
    if (baseline_pairs < 100) throw InferenceError("coherence report: need at least 100 baseline pairs");

    CoherenceReport rep;
    rep.classes.resize(kNumLabelClasses);
    std::vector<double> sum(kNumLabelClasses), sq(kNumLabelClasses);
    for (std::size_t i = 0; i < im.data.size(); ++i) {
        const int c = std::min<int>(ds.labels.data[i], kNumLabelClasses - 1);
        rep.classes[c].count++;
        sum[c] += im.data[i];
        sq[c] += static_cast<double>(im.data[i]) * im.data[i];
    }
    for (int c = 0; c < kNumLabelClasses; ++c)
        if (rep.classes[c].count) {
            const double n = static_cast<double>(rep.classes[c].count);
            rep.classes[c].mean = sum[c] / n;
            rep.classes[c].std = std::sqrt(std::max(0.0, sq[c] / n - rep.classes[c].mean * rep.classes[c].mean));
        }

    auto pair_ssim = [&](int f1, int s1, int f2, int s2) {
        return ssim(im.slice_span(f1, s1).data(), im.slice_span(f2, s2).data(), im.rows, im.cols);
    };
    double acc = 0;
    int count = 0;
    for (int s = 0; s < im.slices; ++s)
        for (int f = 0; f + 1 < im.frames; ++f, ++count) acc += pair_ssim(f, s, f + 1, s);
    rep.adjacent_frame_ssim = acc / count;
    acc = 0;
    count = 0;
    for (int f = 0; f < im.frames; ++f)
        for (int s = 0; s + 1 < im.slices; ++s, ++count) acc += pair_ssim(f, s, f, s + 1);
    rep.adjacent_slice_ssim = acc / count;

    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> fd(0, im.frames - 1), sd(0, im.slices - 1);
    acc = 0;
    int drawn = 0;
    for (int attempts = 0; drawn < baseline_pairs && attempts < baseline_pairs * 1000; ++attempts) {
        const int f1 = fd(rng), s1 = sd(rng), f2 = fd(rng), s2 = sd(rng);
        if (std::abs(f1 - f2) <= 1 && std::abs(s1 - s2) <= 1) continue;
        acc += pair_ssim(f1, s1, f2, s2);
        ++drawn;
    }
    if (drawn < baseline_pairs) throw InferenceError("coherence report: too few non-adjacent pairs for a baseline");
    rep.shuffled_ssim = acc / drawn;
    rep.shuffled_pairs = drawn;
    return rep;
}

std::string to_text(const CoherenceReport& r) {
    static const char* names[] = {"background", "rv_pool", "lv_myocardium", "lv_pool"};
    std::ostringstream os;
    os << "metric\tvalue\n";
    os << "adjacent_frame_ssim\t" << format_double(r.adjacent_frame_ssim) << '\n';
    os << "adjacent_slice_ssim\t" << format_double(r.adjacent_slice_ssim) << '\n';
    os << "shuffled_ssim\t" << format_double(r.shuffled_ssim) << '\n';
    os << "shuffled_pairs\t" << r.shuffled_pairs << '\n';
    for (std::size_t c = 0; c < r.classes.size(); ++c) {
        os << names[c] << "_count\t" << r.classes[c].count << '\n';
        os << names[c] << "_mean\t" << format_double(r.classes[c].mean) << '\n';
        os << names[c] << "_std\t" << format_double(r.classes[c].std) << '\n';
    }
    return os.str();
}

}  // namespace cardiosynth::infer
