#include "cardiosynth/nifti.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "cardiosynth/util.hpp"

namespace cardiosynth::nifti {

namespace {

constexpr int kHeaderSize = 348;
constexpr int kVoxOffset = 352;

int bytes_per_voxel(DataType t) {
    switch (t) {
        case DataType::uint8:
        case DataType::int8: return 1;
        case DataType::int16:
        case DataType::uint16: return 2;
        case DataType::int32:
        case DataType::uint32:
        case DataType::float32: return 4;
        case DataType::float64: return 8;
    }
    throw Error("unsupported NIfTI datatype " + std::to_string(static_cast<int>(t)));
}

template <class T>
T load(const unsigned char* p, bool swap) {
    unsigned char tmp[sizeof(T)];
    std::memcpy(tmp, p, sizeof(T));
    if (swap) std::reverse(tmp, tmp + sizeof(T));
    T v;
    std::memcpy(&v, tmp, sizeof(T));
    return v;
}

template <class T>
void store(unsigned char* p, T v) {
    static_assert(std::endian::native == std::endian::little, "writer assumes a little-endian host");
    std::memcpy(p, &v, sizeof(T));
}

bool has_gz_suffix(const std::filesystem::path& p) { return p.extension() == ".gz"; }

std::vector<unsigned char> read_all(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw Error("missing file: " + path.string());
    gzFile f = gzopen(path.c_str(), "rb");
    if (!f) throw Error("cannot open " + path.string());
    std::vector<unsigned char> bytes;
    unsigned char buf[1 << 16];
    int n;
    while ((n = gzread(f, buf, sizeof buf)) > 0) bytes.insert(bytes.end(), buf, buf + n);
    const bool failed = n < 0;
    gzclose(f);
    if (failed) throw Error("corrupt compressed stream in " + path.string());
    return bytes;
}

template <class T>
double decode(const unsigned char* p, bool swap) {
    return static_cast<double>(load<T>(p, swap));
}

}  // namespace

Image read(const std::filesystem::path& path) {
    const auto bytes = read_all(path);
    if (bytes.size() < kHeaderSize) throw Error("truncated NIfTI header in " + path.string());
    const unsigned char* h = bytes.data();
    bool swap = false;
    if (load<std::int32_t>(h, false) != kHeaderSize) {
        if (load<std::int32_t>(h, true) != kHeaderSize) throw Error("not a NIfTI-1 file: " + path.string());
        swap = true;
    }
    if (std::memcmp(h + 344, "n+1", 3) != 0) throw Error("not a single-file NIfTI-1 image: " + path.string());

    Image img;
    const int ndim = load<std::int16_t>(h + 40, swap);
    if (ndim < 1 || ndim > 7) throw Error("invalid dimension count " + std::to_string(ndim) + " in " + path.string());
    std::size_t count = 1;
    for (int i = 1; i <= ndim; ++i) {
        const int d = load<std::int16_t>(h + 40 + 2 * i, swap);
        if (d < 1) throw Error("invalid extent along axis " + std::to_string(i) + " in " + path.string());
        img.dims.push_back(d);
        img.spacing.push_back(std::abs(static_cast<double>(load<float>(h + 76 + 4 * i, swap))));
        count *= static_cast<std::size_t>(d);
    }
    img.datatype = static_cast<DataType>(load<std::int16_t>(h + 70, swap));
    const int bpv = bytes_per_voxel(img.datatype);
    const auto offset = static_cast<std::size_t>(load<float>(h + 108, swap));
    if (bytes.size() < offset + count * bpv) throw Error("truncated voxel data in " + path.string());
    float slope = load<float>(h + 112, swap);
    const float inter = load<float>(h + 116, swap);
    if (slope == 0.0f || !std::isfinite(slope)) slope = 1.0f;
    char descrip[81] = {};
    std::memcpy(descrip, h + 148, 80);
    img.description = descrip;

    img.voxels.resize(count);
    const unsigned char* p = bytes.data() + offset;
    for (std::size_t i = 0; i < count; ++i, p += bpv) {
        double v = 0.0;
        switch (img.datatype) {
            case DataType::uint8: v = *p; break;
            case DataType::int8: v = static_cast<std::int8_t>(*p); break;
            case DataType::int16: v = decode<std::int16_t>(p, swap); break;
            case DataType::uint16: v = decode<std::uint16_t>(p, swap); break;
            case DataType::int32: v = decode<std::int32_t>(p, swap); break;
            case DataType::uint32: v = decode<std::uint32_t>(p, swap); break;
            case DataType::float32: v = decode<float>(p, swap); break;
            case DataType::float64: v = decode<double>(p, swap); break;
        }
        img.voxels[i] = slope != 1.0f || inter != 0.0f ? v * slope + inter : v;
    }
    return img;
}

void write(const std::filesystem::path& path, const Image& img) {
    if (img.dims.empty() || img.dims.size() > 7) throw Error("NIfTI images need 1 to 7 dimensions");
    std::size_t count = 1;
    for (int d : img.dims) {
        if (d < 1 || d > 32767) throw Error("NIfTI extent out of range: " + std::to_string(d));
        count *= static_cast<std::size_t>(d);
    }
    if (img.voxels.size() != count) throw Error("voxel count does not match dimensions");
    const int bpv = bytes_per_voxel(img.datatype);

    std::vector<unsigned char> out(kVoxOffset + count * bpv, 0);
    unsigned char* h = out.data();
    store<std::int32_t>(h, kHeaderSize);
    h[38] = 'r';
    store<std::int16_t>(h + 40, static_cast<std::int16_t>(img.dims.size()));
    for (int i = 1; i <= 7; ++i) {
        const std::size_t a = static_cast<std::size_t>(i - 1);
        store<std::int16_t>(h + 40 + 2 * i, static_cast<std::int16_t>(a < img.dims.size() ? img.dims[a] : 1));
        store<float>(h + 76 + 4 * i, static_cast<float>(img.pixdim(a)));
    }
    store<float>(h + 76, 1.0f);  // qfac
    store<std::int16_t>(h + 70, static_cast<std::int16_t>(img.datatype));
    store<std::int16_t>(h + 72, static_cast<std::int16_t>(bpv * 8));
    store<float>(h + 108, static_cast<float>(kVoxOffset));
    store<float>(h + 112, 1.0f);
    h[123] = 2 | 8;  // mm, s
    std::strncpy(reinterpret_cast<char*>(h + 148), img.description.c_str(), 79);
    store<std::int16_t>(h + 252, 1);  // qform: scanner-aligned, identity rotation
    store<std::int16_t>(h + 254, 1);
    store<float>(h + 280, static_cast<float>(img.pixdim(0)));
    store<float>(h + 296 + 4, static_cast<float>(img.pixdim(1)));
    store<float>(h + 312 + 8, static_cast<float>(img.pixdim(2)));
    std::memcpy(h + 344, "n+1\0", 4);

    unsigned char* p = out.data() + kVoxOffset;
    for (std::size_t i = 0; i < count; ++i, p += bpv) {
        const double v = img.voxels[i];
        switch (img.datatype) {
            case DataType::uint8: *p = static_cast<std::uint8_t>(v); break;
            case DataType::int8: *p = static_cast<unsigned char>(static_cast<std::int8_t>(v)); break;
            case DataType::int16: store(p, static_cast<std::int16_t>(v)); break;
            case DataType::uint16: store(p, static_cast<std::uint16_t>(v)); break;
            case DataType::int32: store(p, static_cast<std::int32_t>(v)); break;
            case DataType::uint32: store(p, static_cast<std::uint32_t>(v)); break;
            case DataType::float32: store(p, static_cast<float>(v)); break;
            case DataType::float64: store(p, v); break;
        }
    }

    if (!path.parent_path().empty()) std::filesystem::create_directories(path.parent_path());
    auto tmp = path;
    tmp += ".tmp";
    if (has_gz_suffix(path)) {
        gzFile f = gzopen(tmp.c_str(), "wb6");
        if (!f) throw Error("cannot write " + tmp.string());
        const bool ok = gzwrite(f, out.data(), static_cast<unsigned>(out.size())) == static_cast<int>(out.size());
        if (gzclose(f) != Z_OK || !ok) throw Error("write failed for " + path.string());
        std::filesystem::rename(tmp, path);
    } else {
        write_file_atomic(path, std::string_view(reinterpret_cast<const char*>(out.data()), out.size()));
    }
}

std::filesystem::path sidecar_path(const std::filesystem::path& volume_path) {
    std::string name = volume_path.filename().string();
    for (const char* ext : {".nii.gz", ".nii"}) {
        const std::string e(ext);
        if (name.size() > e.size() && name.compare(name.size() - e.size(), e.size(), e) == 0) {
            name.resize(name.size() - e.size());
            break;
        }
    }
    return volume_path.parent_path() / (name + ".meta.txt");
}

std::map<std::string, std::string> read_key_values(const std::filesystem::path& path) {
    std::map<std::string, std::string> kv;
    std::istringstream in(read_text_file(path));
    std::string line;
    while (std::getline(in, line)) {
        const auto t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        const auto sep = t.find_first_of(":=");
        if (sep == std::string::npos) continue;
        kv[trim(std::string_view(t).substr(0, sep))] = trim(std::string_view(t).substr(sep + 1));
    }
    return kv;
}

namespace {

template <class T>
Volume3<T> volume3_from(const Image& img, const std::filesystem::path& path) {
    if (img.dims.size() > 3 && std::any_of(img.dims.begin() + 3, img.dims.end(), [](int d) { return d != 1; }))
        throw Error("expected a 3D volume in " + path.string() + ", got " + std::to_string(img.dims.size()) + "D");
    Volume3<T> v(img.dim(2), img.dim(1), img.dim(0));
    v.col_spacing = img.pixdim(0);
    v.row_spacing = img.pixdim(1);
    v.slice_spacing = img.pixdim(2);
    for (std::size_t i = 0; i < v.data.size(); ++i) v.data[i] = static_cast<T>(img.voxels[i]);
    return v;
}

std::vector<double> parse_list(const std::string& s) {
    std::vector<double> out;
    std::istringstream in(s);
    std::string item;
    while (std::getline(in, item, ',')) {
        const auto t = trim(item);
        if (!t.empty()) out.push_back(std::stod(t));
    }
    return out;
}

void write_sidecar(const std::filesystem::path& volume_path, const auto& vol, const std::string& kind,
                   const std::string& extra) {
    std::ostringstream os;
    os << "format: cardiosynth-" << kind << "/1\n"
       << "frames: " << vol.frames << '\n'
       << "slices: " << vol.slices << '\n'
       << "in_plane_spacing: " << format_double(vol.in_plane_spacing) << '\n'
       << "slice_spacing: " << format_double(vol.slice_spacing) << '\n'
       << "frame_times: ";
    for (std::size_t i = 0; i < vol.frame_times.size(); ++i) os << (i ? ", " : "") << format_double(vol.frame_times[i]);
    os << '\n' << extra;
    write_file_atomic(sidecar_path(volume_path), os.str());
}

template <class V>
void read_sequence_common(const std::filesystem::path& path, const Image& img, V& vol) {
    vol.in_plane_spacing = img.pixdim(0);
    vol.slice_spacing = img.pixdim(2);
    const auto meta_path = sidecar_path(path);
    if (std::filesystem::exists(meta_path)) {
        const auto kv = read_key_values(meta_path);
        if (auto it = kv.find("in_plane_spacing"); it != kv.end()) vol.in_plane_spacing = std::stod(it->second);
        if (auto it = kv.find("slice_spacing"); it != kv.end()) vol.slice_spacing = std::stod(it->second);
        if (auto it = kv.find("frame_times"); it != kv.end()) vol.frame_times = parse_list(it->second);
    }
    if (vol.frame_times.size() != static_cast<std::size_t>(vol.frames)) {
        vol.frame_times.resize(static_cast<std::size_t>(vol.frames));
        for (int f = 0; f < vol.frames; ++f) vol.frame_times[static_cast<std::size_t>(f)] = f * img.pixdim(3);
    }
}

Image sequence_image(int frames, int slices, int rows, int cols, double in_plane, double slice, double dt, DataType t) {
    Image img;
    img.dims = {cols, rows, slices, frames};
    img.spacing = {in_plane, in_plane, slice, dt};
    img.datatype = t;
    return img;
}

double frame_step(const std::vector<double>& times) { return times.size() > 1 ? times[1] - times[0] : 1.0; }

}  // namespace

ImageVolume read_image_volume(const std::filesystem::path& path) { return volume3_from<double>(read(path), path); }

LabelVolume read_label_volume(const std::filesystem::path& path) {
    const Image img = read(path);
    for (double v : img.voxels)
        if (v < 0.0 || v > 255.0 || v != std::floor(v))
            throw Error("label volume " + path.string() + " holds non-integer or out-of-range value " + format_double(v));
    return volume3_from<std::uint8_t>(img, path);
}

void write_label_sequence(const std::filesystem::path& path, const LabelVolume4D& labels) {
    Image img = sequence_image(labels.frames, labels.slices, labels.rows, labels.cols, labels.in_plane_spacing,
                               labels.slice_spacing, frame_step(labels.frame_times), DataType::uint8);
    img.description = "cardiosynth labels";
    img.voxels.assign(labels.data.begin(), labels.data.end());
    write(path, img);
    write_sidecar(path, labels, "labels", "params_hash: " + (labels.params_hash.empty() ? "none" : labels.params_hash) + "\n");
}

LabelVolume4D read_label_sequence(const std::filesystem::path& path) {
    const Image img = read(path);
    if (img.dims.size() > 4) throw Error("expected at most 4 dimensions in " + path.string());
    LabelVolume4D out(img.dim(3), img.dim(2), img.dim(1), img.dim(0));
    for (std::size_t i = 0; i < out.data.size(); ++i) {
        const double v = img.voxels[i];
        if (v < 0.0 || v > 255.0 || v != std::floor(v)) throw Error("non-integer label value in " + path.string());
        out.data[i] = static_cast<std::uint8_t>(v);
    }
    read_sequence_common(path, img, out);
    const auto meta_path = sidecar_path(path);
    if (std::filesystem::exists(meta_path)) {
        const auto kv = read_key_values(meta_path);
        if (auto it = kv.find("params_hash"); it != kv.end() && it->second != "none") out.params_hash = it->second;
    }
    return out;
}

void write_image_sequence(const std::filesystem::path& path, const ImageVolume4D& images) {
    Image img = sequence_image(images.frames, images.slices, images.rows, images.cols, images.in_plane_spacing,
                               images.slice_spacing, frame_step(images.frame_times), DataType::float32);
    img.description = "cardiosynth images";
    img.voxels.assign(images.data.begin(), images.data.end());
    write(path, img);
    write_sidecar(path, images, "images", "");
}

ImageVolume4D read_image_sequence(const std::filesystem::path& path) {
    const Image img = read(path);
    if (img.dims.size() > 4) throw Error("expected at most 4 dimensions in " + path.string());
    ImageVolume4D out(img.dim(3), img.dim(2), img.dim(1), img.dim(0));
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = static_cast<float>(img.voxels[i]);
    read_sequence_common(path, img, out);
    return out;
}

}  // namespace cardiosynth::nifti
