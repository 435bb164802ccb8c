#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "cardiosynth/volume.hpp"

// Turns annotated cine MR cases (ACDC layout) into normalised 2D
// image/label training pairs.
namespace cardiosynth::data {

enum class Phase { ed, es };
std::string to_string(Phase p);
Phase phase_from_string(const std::string& s);

class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Raw annotation value -> canonical class id.
using LabelMap = std::map<int, std::uint8_t>;
LabelMap identity_label_map();

struct CaseRecord {
    std::string case_id;
    ImageVolume image;
    LabelVolume mask;
    Phase phase = Phase::ed;
};

struct CaseSource {
    std::filesystem::path image_path;
    std::filesystem::path mask_path;
    std::string case_id;
    Phase phase = Phase::ed;
};

struct TrainingPair {
    ImageSlice image;  // values in [-1, 1]
    LabelSlice labels;
    std::string case_id;
    Phase phase = Phase::ed;
    int slice_index = 0;
};

enum class IntensityMode { percentile, minmax };

struct PipelineConfig {
    double target_spacing = 1.3;  // mm
    int crop_size = 128;
    IntensityMode intensity_mode = IntensityMode::percentile;
    double lower_percentile = 1.0;
    double upper_percentile = 99.0;
    std::uint64_t seed = 0;
    bool shuffle = true;
    double validation_fraction = 0.0;
    /// Case discovery, relative to the data root.
    std::string image_glob = "*/*_frame[0-9][0-9].nii.gz";
    std::string mask_suffix = "_gt";
    LabelMap label_map = identity_label_map();

    friend bool operator==(const PipelineConfig&, const PipelineConfig&) = default;
};

CaseRecord load_case(const CaseSource& source, const LabelMap& label_map = identity_label_map());

/// Bilinear (image) / nearest-neighbour (mask) in-plane resampling to
/// `target_spacing`; the slice axis is untouched.
std::pair<ImageVolume, LabelVolume> resample_inplane(const ImageVolume& image, const LabelVolume& mask,
                                                     double target_spacing = 1.3);

/// Centred size x size crop, zero/background padding smaller inputs.
std::pair<ImageVolume, LabelVolume> center_crop(const ImageVolume& image, const LabelVolume& mask, int size = 128);
/// Offset of the crop window along an axis of length `extent` (negative means padding).
int crop_offset(int extent, int size);

/// Nearest-rank percentile: sorted[round(pct / 100 * (n - 1))].
double percentile(std::vector<double> values, double pct);

ImageVolume scale_intensity(const ImageVolume& image, IntensityMode mode = IntensityMode::percentile,
                            double lower_percentile = 1.0, double upper_percentile = 99.0);

/// resample -> crop -> scale, then one pair per slice.
std::vector<TrainingPair> preprocess_case(const CaseRecord& record, const PipelineConfig& config);

/// Cases under `root` matching config.image_glob. Phases come from the case's
/// Info.cfg (ED:/ES: frame numbers) or, without one, from frame order.
std::vector<CaseSource> discover_cases(const std::filesystem::path& root, const PipelineConfig& config);

struct TrainingSet {
    std::vector<TrainingPair> train;
    std::vector<TrainingPair> validation;
};

/// Deterministic given config.seed. Validation cases are chosen by case id,
/// so no case contributes to both partitions.
TrainingSet build_training_set(const std::vector<CaseSource>& cases, const PipelineConfig& config);

/// Cache layout: one NIfTI per pair under pairs/ plus index.tsv with
/// `case_id<TAB>phase<TAB>slice<TAB>relative_path` records.
void write_cache(const std::filesystem::path& dir, const std::vector<TrainingPair>& pairs);
std::vector<TrainingPair> read_cache(const std::filesystem::path& dir);

}  // namespace cardiosynth::data
