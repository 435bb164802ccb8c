#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "cardiosynth/volume.hpp"

// NIfTI-1 single-file (.nii / .nii.gz) reading and writing.
namespace cardiosynth::nifti {

enum class DataType : std::int16_t {
    uint8 = 2,
    int16 = 4,
    int32 = 8,
    float32 = 16,
    float64 = 64,
    int8 = 256,
    uint16 = 512,
    uint32 = 768,
};

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Image {
    /// Extent along each stored axis, fastest-varying first (x, y, z, t, ...).
    std::vector<int> dims;
    /// Voxel size along each axis (mm or s).
    std::vector<double> spacing;
    DataType datatype = DataType::float32;
    /// Voxel values with scl_slope / scl_inter applied.
    std::vector<double> voxels;
    std::string description;

    int dim(std::size_t axis) const { return axis < dims.size() ? dims[axis] : 1; }
    double pixdim(std::size_t axis) const { return axis < spacing.size() ? spacing[axis] : 1.0; }
};

Image read(const std::filesystem::path& path);
/// Writes compressed output when the path ends in ".gz".
void write(const std::filesystem::path& path, const Image& image);

/// Sidecar path for a volume file: "x.nii.gz" -> "x.meta.txt".
std::filesystem::path sidecar_path(const std::filesystem::path& volume_path);
std::map<std::string, std::string> read_key_values(const std::filesystem::path& path);

/// 3D volumes: x = column, y = row, z = slice.
ImageVolume read_image_volume(const std::filesystem::path& path);
LabelVolume read_label_volume(const std::filesystem::path& path);

/// 4D label sequences with a sidecar holding exact spacing, frame times and
/// the generating parameter hash.
void write_label_sequence(const std::filesystem::path& path, const LabelVolume4D& labels);
LabelVolume4D read_label_sequence(const std::filesystem::path& path);

void write_image_sequence(const std::filesystem::path& path, const ImageVolume4D& images);
ImageVolume4D read_image_sequence(const std::filesystem::path& path);

}  // namespace cardiosynth::nifti
