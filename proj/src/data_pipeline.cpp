#include "cardiosynth/data_pipeline.hpp"

#include <glob.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <regex>
#include <set>
#include <sstream>

#include "cardiosynth/nifti.hpp"
#include "cardiosynth/util.hpp"

namespace cardiosynth::data {

std::string to_string(Phase p) { return p == Phase::ed ? "ED" : "ES"; }

Phase phase_from_string(const std::string& s) {
    if (s == "ED" || s == "ed") return Phase::ed;
    if (s == "ES" || s == "es") return Phase::es;
    throw DataError("unknown phase tag '" + s + "'");
}

LabelMap identity_label_map() { return {{0, 0}, {1, 1}, {2, 2}, {3, 3}}; }

CaseRecord load_case(const CaseSource& source, const LabelMap& label_map) {
    for (const auto& p : {source.image_path, source.mask_path})
        if (!std::filesystem::exists(p)) throw DataError("missing file: " + p.string());
    CaseRecord rec;
    rec.case_id = source.case_id;
    rec.phase = source.phase;
    rec.image = nifti::read_image_volume(source.image_path);
    const nifti::Image raw_mask = nifti::read(source.mask_path);
    if (raw_mask.dim(0) != rec.image.cols || raw_mask.dim(1) != rec.image.rows || raw_mask.dim(2) != rec.image.slices)
        throw DataError("shape mismatch between image " + source.image_path.string() + " and mask " +
                        source.mask_path.string());
    rec.mask = LabelVolume(rec.image.slices, rec.image.rows, rec.image.cols);
    rec.mask.row_spacing = rec.image.row_spacing;
    rec.mask.col_spacing = rec.image.col_spacing;
    rec.mask.slice_spacing = rec.image.slice_spacing;
    for (std::size_t i = 0; i < rec.mask.data.size(); ++i) {
        const double v = raw_mask.voxels[i];
        const auto it = label_map.find(static_cast<int>(v));
        if (v != std::floor(v) || it == label_map.end())
            throw DataError("unknown label value " + format_double(v) + " in " + source.mask_path.string());
        rec.mask.data[i] = it->second;
    }
    for (double s : {rec.image.row_spacing, rec.image.col_spacing, rec.image.slice_spacing})
        if (!(s > 0.0)) throw DataError("non-positive spacing in " + source.image_path.string());
    return rec;
}

std::pair<ImageVolume, LabelVolume> resample_inplane(const ImageVolume& image, const LabelVolume& mask,
                                                     double target_spacing) {
    if (!image.same_grid(mask)) throw DataError("resample_inplane: image and mask grids differ");
    if (!(target_spacing > 0.0) || !(image.row_spacing > 0.0) || !(image.col_spacing > 0.0))
        throw DataError("resample_inplane: non-positive spacing");
    const int rows = std::max(1, static_cast<int>(std::lround(image.rows * image.row_spacing / target_spacing)));
    const int cols = std::max(1, static_cast<int>(std::lround(image.cols * image.col_spacing / target_spacing)));
    ImageVolume out(image.slices, rows, cols);
    LabelVolume out_mask(image.slices, rows, cols);
    for (auto* v : {&out.row_spacing, &out.col_spacing}) *v = target_spacing;
    out_mask.row_spacing = out_mask.col_spacing = target_spacing;
    out.slice_spacing = out_mask.slice_spacing = image.slice_spacing;

    const double ry = target_spacing / image.row_spacing, rx = target_spacing / image.col_spacing;
    auto source_coord = [](int i, double ratio, int extent) {
        return std::clamp((i + 0.5) * ratio - 0.5, 0.0, static_cast<double>(extent - 1));
    };
    // Round half up; exact ties (e.g. 1.37 -> 1.3 mm hits one every 137
    // pixels) must not depend on how the ratio was rounded.
    constexpr double kTie = 1e-9;
    for (int s = 0; s < image.slices; ++s) {
        for (int r = 0; r < rows; ++r) {
            const double y = source_coord(r, ry, image.rows);
            const int y0 = static_cast<int>(std::floor(y));
            const int y1 = std::min(y0 + 1, image.rows - 1);
            const double fy = y - y0;
            const int yn = std::min(static_cast<int>(std::floor(y + 0.5 + kTie)), image.rows - 1);
            for (int c = 0; c < cols; ++c) {
                const double x = source_coord(c, rx, image.cols);
                const int x0 = static_cast<int>(std::floor(x));
                const int x1 = std::min(x0 + 1, image.cols - 1);
                const double fx = x - x0;
                const double top = image(s, y0, x0) * (1.0 - fx) + image(s, y0, x1) * fx;
                const double bottom = image(s, y1, x0) * (1.0 - fx) + image(s, y1, x1) * fx;
                out(s, r, c) = top * (1.0 - fy) + bottom * fy;
                const int xn = std::min(static_cast<int>(std::floor(x + 0.5 + kTie)), image.cols - 1);
                out_mask(s, r, c) = mask(s, yn, xn);
            }
        }
    }
    return {std::move(out), std::move(out_mask)};
}

int crop_offset(int extent, int size) {
    const int d = extent - size;
    return d >= 0 ? d / 2 : -((-d + 1) / 2);
}

std::pair<ImageVolume, LabelVolume> center_crop(const ImageVolume& image, const LabelVolume& mask, int size) {
    if (!image.same_grid(mask)) throw DataError("center_crop: image and mask grids differ");
    if (size < 1) throw DataError("center_crop: size must be >= 1");
    const int oy = crop_offset(image.rows, size), ox = crop_offset(image.cols, size);
    ImageVolume out(image.slices, size, size, 0.0);
    LabelVolume out_mask(image.slices, size, size, static_cast<std::uint8_t>(Label::background));
    out.row_spacing = out_mask.row_spacing = image.row_spacing;
    out.col_spacing = out_mask.col_spacing = image.col_spacing;
    out.slice_spacing = out_mask.slice_spacing = image.slice_spacing;
    for (int s = 0; s < image.slices; ++s)
        for (int r = 0; r < size; ++r) {
            const int sr = r + oy;
            if (sr < 0 || sr >= image.rows) continue;
            for (int c = 0; c < size; ++c) {
                const int sc = c + ox;
                if (sc < 0 || sc >= image.cols) continue;
                out(s, r, c) = image(s, sr, sc);
                out_mask(s, r, c) = mask(s, sr, sc);
            }
        }
    return {std::move(out), std::move(out_mask)};
}

double percentile(std::vector<double> values, double pct) {
    if (values.empty()) throw DataError("percentile of an empty volume");
    const auto idx = static_cast<std::size_t>(std::lround(pct / 100.0 * static_cast<double>(values.size() - 1)));
    std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(idx), values.end());
    return values[idx];
}

ImageVolume scale_intensity(const ImageVolume& image, IntensityMode mode, double lower_percentile,
                            double upper_percentile) {
    if (image.data.empty()) throw DataError("scale_intensity: empty volume");
    double lo, hi;
    if (mode == IntensityMode::minmax) {
        const auto [mn, mx] = std::minmax_element(image.data.begin(), image.data.end());
        lo = *mn;
        hi = *mx;
    } else {
        lo = percentile(image.data, lower_percentile);
        hi = percentile(image.data, upper_percentile);
    }
    if (!(hi > lo)) throw DataError("degenerate intensity range");
    ImageVolume out = image;
    const double span = hi - lo;
    for (double& v : out.data) v = std::clamp(2.0 * (std::clamp(v, lo, hi) - lo) / span - 1.0, -1.0, 1.0);
    return out;
}

std::vector<TrainingPair> preprocess_case(const CaseRecord& record, const PipelineConfig& config) {
    auto [img, mask] = resample_inplane(record.image, record.mask, config.target_spacing);
    std::tie(img, mask) = center_crop(img, mask, config.crop_size);
    img = scale_intensity(img, config.intensity_mode, config.lower_percentile, config.upper_percentile);
    std::vector<TrainingPair> pairs;
    pairs.reserve(static_cast<std::size_t>(img.slices));
    for (int s = 0; s < img.slices; ++s)
        pairs.push_back(TrainingPair{img.slice(s), mask.slice(s), record.case_id, record.phase, s});
    return pairs;
}

namespace {

std::vector<std::filesystem::path> glob_paths(const std::filesystem::path& root, const std::string& pattern) {
    const std::string full = (root / pattern).string();
    glob_t g{};
    const int rc = ::glob(full.c_str(), 0, nullptr, &g);
    std::vector<std::filesystem::path> out;
    if (rc == 0)
        for (std::size_t i = 0; i < g.gl_pathc; ++i) out.emplace_back(g.gl_pathv[i]);
    globfree(&g);
    if (rc != 0 && rc != GLOB_NOMATCH) throw DataError("glob failed for " + full);
    std::sort(out.begin(), out.end());
    return out;
}

std::filesystem::path mask_for(const std::filesystem::path& image, const std::string& suffix) {
    std::string name = image.filename().string();
    const auto dot = name.find('.');
    const std::string stem = name.substr(0, dot), ext = dot == std::string::npos ? "" : name.substr(dot);
    return image.parent_path() / (stem + suffix + ext);
}

std::optional<int> frame_number(const std::filesystem::path& p) {
    static const std::regex re("frame(\\d+)");
    std::smatch m;
    const std::string name = p.filename().string();
    if (std::regex_search(name, m, re)) return std::stoi(m[1]);
    return std::nullopt;
}

}  // namespace

std::vector<CaseSource> discover_cases(const std::filesystem::path& root, const PipelineConfig& config) {
    if (!std::filesystem::is_directory(root)) throw DataError("missing file: data root " + root.string());
    std::map<std::filesystem::path, std::vector<std::filesystem::path>> by_dir;
    for (auto& p : glob_paths(root, config.image_glob)) {
        const std::string name = p.filename().string();
        if (!config.mask_suffix.empty() && name.find(config.mask_suffix + ".") != std::string::npos) continue;
        by_dir[p.parent_path()].push_back(p);
    }
    std::vector<CaseSource> out;
    for (const auto& [dir, images] : by_dir) {
        std::map<std::string, std::string> info;
        if (std::filesystem::exists(dir / "Info.cfg")) info = nifti::read_key_values(dir / "Info.cfg");
        for (std::size_t i = 0; i < images.size(); ++i) {
            CaseSource src{images[i], mask_for(images[i], config.mask_suffix), dir.filename().string(), Phase::ed};
            const auto fn = frame_number(images[i]);
            if (info.count("ED") && info.count("ES") && fn) {
                if (*fn == std::stoi(info["ED"]))
                    src.phase = Phase::ed;
                else if (*fn == std::stoi(info["ES"]))
                    src.phase = Phase::es;
                else
                    continue;  // unannotated frame
            } else {
                if (i > 1) continue;
                src.phase = i == 0 ? Phase::ed : Phase::es;
            }
            out.push_back(std::move(src));
        }
    }
    return out;
}

TrainingSet build_training_set(const std::vector<CaseSource>& cases, const PipelineConfig& config) {
    if (cases.empty()) throw DataError("build_training_set: no cases");
    std::vector<TrainingPair> all;
    for (const auto& c : cases) {
        auto pairs = preprocess_case(load_case(c, config.label_map), config);
        std::move(pairs.begin(), pairs.end(), std::back_inserter(all));
    }
    auto key = [](const TrainingPair& p) { return std::tuple(p.case_id, static_cast<int>(p.phase), p.slice_index); };
    std::stable_sort(all.begin(), all.end(), [&](const auto& a, const auto& b) { return key(a) < key(b); });

    std::set<std::string> ids;
    for (const auto& p : all) ids.insert(p.case_id);
    std::vector<std::string> order(ids.begin(), ids.end());
    std::mt19937_64 rng(config.seed);
    std::shuffle(order.begin(), order.end(), rng);
    const auto n_val = static_cast<std::size_t>(std::lround(config.validation_fraction * static_cast<double>(order.size())));
    const std::set<std::string> val_ids(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(std::min(n_val, order.size())));

    TrainingSet set;
    for (auto& p : all) (val_ids.count(p.case_id) ? set.validation : set.train).push_back(std::move(p));
    if (config.shuffle) {
        std::shuffle(set.train.begin(), set.train.end(), rng);
        std::shuffle(set.validation.begin(), set.validation.end(), rng);
    }
    if (set.train.empty()) throw DataError("build_training_set: empty training set");
    return set;
}

void write_cache(const std::filesystem::path& dir, const std::vector<TrainingPair>& pairs) {
    std::filesystem::create_directories(dir / "pairs");
    std::ostringstream index;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        const auto& p = pairs[i];
        char name[32];
        std::snprintf(name, sizeof name, "pairs/%06zu.nii.gz", i);
        nifti::Image img;
        img.dims = {p.image.cols, p.image.rows, 2};
        img.spacing = {1.0, 1.0, 1.0};
        img.datatype = nifti::DataType::float64;
        img.voxels.assign(p.image.data.begin(), p.image.data.end());
        img.voxels.insert(img.voxels.end(), p.labels.data.begin(), p.labels.data.end());
        nifti::write(dir / name, img);
        index << p.case_id << '\t' << to_string(p.phase) << '\t' << p.slice_index << '\t' << name << '\n';
    }
    write_file_atomic(dir / "index.tsv", index.str());
}

std::vector<TrainingPair> read_cache(const std::filesystem::path& dir) {
    std::istringstream in(read_text_file(dir / "index.tsv"));
    std::vector<TrainingPair> out;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        std::istringstream fields(line);
        std::string id, phase, slice, rel;
        if (!std::getline(fields, id, '\t') || !std::getline(fields, phase, '\t') || !std::getline(fields, slice, '\t') ||
            !std::getline(fields, rel))
            throw DataError("malformed index record at line " + std::to_string(line_no));
        const nifti::Image img = nifti::read(dir / rel);
        if (img.dims.size() != 3 || img.dims[2] != 2) throw DataError("malformed pair file " + rel);
        TrainingPair p;
        p.case_id = id;
        p.phase = phase_from_string(phase);
        p.slice_index = std::stoi(slice);
        p.image = ImageSlice(img.dims[1], img.dims[0]);
        p.labels = LabelSlice(img.dims[1], img.dims[0]);
        const std::size_t n = p.image.data.size();
        std::copy_n(img.voxels.begin(), n, p.image.data.begin());
        for (std::size_t i = 0; i < n; ++i) p.labels.data[i] = static_cast<std::uint8_t>(img.voxels[n + i]);
        out.push_back(std::move(p));
    }
    if (out.empty()) throw DataError("empty training cache at " + dir.string());
    return out;
}

}  // namespace cardiosynth::data
