#include "cardiosynth/checkpoint.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>

#include "cardiosynth/util.hpp"

namespace cardiosynth::ckpt {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'C', 'S', 'Y', 'N', 'C', 'K', 'P', 'T'};

template <class T>
void put(std::string& out, T v) {
    out.append(reinterpret_cast<const char*>(&v), sizeof v);
}

class Reader {
public:
    explicit Reader(std::string_view b) : bytes_(b) {}

    template <class T>
    T get() {
        T v;
        std::memcpy(&v, take(sizeof v), sizeof v);
        return v;
    }
    const char* take(std::size_t n) {
        if (n > bytes_.size() - pos_) throw CheckpointError("corrupted checkpoint: truncated");
        const char* p = bytes_.data() + pos_;
        pos_ += n;
        return p;
    }
    std::size_t remaining() const { return bytes_.size() - pos_; }

private:
    std::string_view bytes_;
    std::size_t pos_ = 0;
};

std::uint32_t crc(std::string_view bytes) {
    return static_cast<std::uint32_t>(
        ::crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size())));
}

}  // namespace

const Tensor& Container::array(const std::string& name) const {
    const auto it = arrays.find(name);
    if (it == arrays.end()) throw CheckpointError("checkpoint is missing array '" + name + "'");
    return it->second;
}

const std::string& Container::text(const std::string& name) const {
    const auto it = texts.find(name);
    if (it == texts.end()) throw CheckpointError("checkpoint is missing entry '" + name + "'");
    return it->second;
}

std::string serialize(const Container& c) {
    std::string out(kMagic, sizeof kMagic);
    put<std::uint32_t>(out, kFormatVersion);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(c.arrays.size() + c.texts.size()));

    // Merge both maps so the file is in global name order.
    auto a = c.arrays.begin();
    auto t = c.texts.begin();
    while (a != c.arrays.end() || t != c.texts.end()) {
        const bool take_array = t == c.texts.end() || (a != c.arrays.end() && a->first < t->first);
        const std::string& name = take_array ? a->first : t->first;
        put<std::uint8_t>(out, take_array ? 0 : 1);
        put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
        out += name;
        if (take_array) {
            const Tensor& v = a->second;
            put<std::uint32_t>(out, static_cast<std::uint32_t>(v.rank()));
            for (int d : v.shape()) put<std::int64_t>(out, d);
            out.append(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(double));
            ++a;
        } else {
            put<std::uint64_t>(out, t->second.size());
            out += t->second;
            ++t;
        }
    }
    put<std::uint32_t>(out, crc(out));
    return out;
}

Container deserialize(std::string_view bytes) {
    if (bytes.size() < sizeof kMagic + 12 || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0)
        throw CheckpointError("corrupted checkpoint: bad magic");
    std::uint32_t stored;
    std::memcpy(&stored, bytes.data() + bytes.size() - 4, 4);
    if (stored != crc(bytes.substr(0, bytes.size() - 4))) throw CheckpointError("corrupted checkpoint: checksum mismatch");

    Reader r(bytes.substr(0, bytes.size() - 4));
    r.take(sizeof kMagic);
    const auto version = r.get<std::uint32_t>();
    if (version != kFormatVersion)
        throw CheckpointError("checkpoint version mismatch: file has " + std::to_string(version) + ", expected " +
                              std::to_string(kFormatVersion));
    const auto count = r.get<std::uint32_t>();
    Container c;
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto kind = r.get<std::uint8_t>();
        const auto len = r.get<std::uint32_t>();
        std::string name(r.take(len), len);
        if (kind == 0) {
            const auto rank = r.get<std::uint32_t>();
            if (rank > 8) throw CheckpointError("corrupted checkpoint: bad rank for " + name);
            Shape shape;
            for (std::uint32_t d = 0; d < rank; ++d) {
                const auto extent = r.get<std::int64_t>();
                if (extent < 0 || extent > (1LL << 31)) throw CheckpointError("corrupted checkpoint: bad extent for " + name);
                shape.push_back(static_cast<int>(extent));
            }
            const std::size_t n = shape_volume(shape);
            if (n > r.remaining() / sizeof(double)) throw CheckpointError("corrupted checkpoint: truncated");
            std::vector<double> values(n);
            std::memcpy(values.data(), r.take(n * sizeof(double)), n * sizeof(double));
            c.arrays.emplace(std::move(name), Tensor(std::move(shape), std::move(values)));
        } else if (kind == 1) {
            const auto n = r.get<std::uint64_t>();
            if (n > r.remaining()) throw CheckpointError("corrupted checkpoint: truncated");
            c.texts.emplace(std::move(name), std::string(r.take(n), n));
        } else {
            throw CheckpointError("corrupted checkpoint: unknown entry kind");
        }
    }
    if (r.remaining() != 0) throw CheckpointError("corrupted checkpoint: trailing bytes");
    return c;
}

void write_file(const std::filesystem::path& path, const Container& c) { write_file_atomic(path, serialize(c)); }

Container read_file(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw CheckpointError("checkpoint not found: " + path.string());
    return deserialize(read_text_file(path));
}

}  // namespace cardiosynth::ckpt
