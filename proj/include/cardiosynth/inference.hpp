#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "cardiosynth/training.hpp"
#include "cardiosynth/volume.hpp"

// Label-swap synthesis: a trained generator driven by phantom label
// sequences, plus export, montages and a coherence report.
namespace cardiosynth::infer {

class InferenceError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class StyleSource { random, encode, fixed };
std::string to_string(StyleSource s);
StyleSource style_from_string(const std::string& s);

struct InferenceConfig {
    StyleSource style = StyleSource::random;
    std::uint64_t seed = 0;
    /// Fresh z for every (frame, slice) instead of one per sequence.
    bool per_slice_z = false;
    /// Resample labels to `model_spacing` before cropping instead of cropping only.
    bool resample_labels = false;
    double model_spacing = 1.3;
    std::vector<double> fixed_z;
    bool overwrite = false;

    friend bool operator==(const InferenceConfig&, const InferenceConfig&) = default;
};

struct SynthesisRequest {
    std::filesystem::path checkpoint;
    LabelVolume4D labels;
    InferenceConfig config;
    /// Required for StyleSource::encode; sized image_size^2, values in [-1, 1].
    std::optional<ImageSlice> style_image;
    /// Recorded in provenance.
    std::string style_descriptor;
};

struct SyntheticDataset {
    ImageVolume4D images;  // in [-1, 1]
    LabelVolume4D labels;
    /// checkpoint_id, params_hash, style, seed and the settings used.
    std::map<std::string, std::string> provenance;
};

SyntheticDataset synthesize_sequence(const SynthesisRequest& request);
/// Same, with an already loaded checkpoint.
SyntheticDataset synthesize_sequence(const SynthesisRequest& request, const train::Checkpoint& checkpoint,
                                     const std::string& checkpoint_id);

/// Deterministic style code (the encoder mean). Throws for non-VAE checkpoints.
std::vector<double> encode_style(const train::Checkpoint& checkpoint, const ImageSlice& style_image);
std::vector<double> encode_style(const std::filesystem::path& checkpoint, const ImageSlice& style_image);

/// Label slice center-cropped or zero-padded to `size`.
LabelSlice fit_labels(const LabelSlice& labels, int size);

/// Files: images.nii.gz, labels.nii.gz (each with a .meta.txt sidecar) and
/// provenance.txt (`key: value` lines).
void export_dataset(const SyntheticDataset& dataset, const std::filesystem::path& dir, bool overwrite);
SyntheticDataset load_dataset(const std::filesystem::path& dir);

enum class MontageAxis { time, slice };
MontageAxis axis_from_string(const std::string& s);

struct MontageLayout {
    int rows = 2;
    int columns = 0;
    int cell_height = 0;
    int cell_width = 0;
    int gap = 0;
    int width() const { return columns * cell_width + (columns - 1) * gap; }
    int height() const { return rows * cell_height + (rows - 1) * gap; }
};

/// Two-row PNG grid: label maps on top, synthetic images below. `indices`
/// select frames (axis time, slice fixed) or slices (axis slice, frame
/// fixed); empty means all.
MontageLayout render_montage(const SyntheticDataset& dataset, MontageAxis axis, int fixed_index,
                             const std::filesystem::path& png_path, std::vector<int> indices = {});
/// `count` indices spread evenly over [first, last].
std::vector<int> spread_indices(int first, int last, int count);

/// Mean SSIM (11-tap Gaussian window, sigma 1.5, dynamic range 2) over the
/// valid region.
double ssim(const float* a, const float* b, int rows, int cols);

struct ClassStats {
    std::size_t count = 0;
    double mean = 0.0;
    double std = 0.0;
};

struct CoherenceReport {
    std::vector<ClassStats> classes;
    double adjacent_frame_ssim = 0.0;
    double adjacent_slice_ssim = 0.0;
    double shuffled_ssim = 0.0;
    int shuffled_pairs = 0;
};

/// Needs >= 2 frames and >= 2 slices. Baseline pairs differ in frame or
/// slice by more than one step.
CoherenceReport coherence_report(const SyntheticDataset& dataset, std::uint64_t seed = 0, int baseline_pairs = 200);
std::string to_text(const CoherenceReport& report);

}  // namespace cardiosynth::infer
