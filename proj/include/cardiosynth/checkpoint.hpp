#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>

#include "cardiosynth/tensor.hpp"

// Single-file container of named float64 arrays and text blobs.
//
//   "CSYNCKPT" | u32 version | u32 entry count | entries... | u32 crc32
//   entry: u8 kind (0 array, 1 text) | u32 name length | name |
//          array: u32 rank | i64 dims[rank] | f64 values
//          text:  u64 length | bytes
//
// Entries are written in name order and all integers are little-endian, so
// equal contents always serialize to equal bytes. The CRC covers everything
// before it.
namespace cardiosynth::ckpt {

inline constexpr std::uint32_t kFormatVersion = 1;

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Container {
    std::map<std::string, Tensor> arrays;
    std::map<std::string, std::string> texts;

    const Tensor& array(const std::string& name) const;
    const std::string& text(const std::string& name) const;

    friend bool operator==(const Container&, const Container&) = default;
};

std::string serialize(const Container& c);
/// Throws CheckpointError("corrupted checkpoint ...") or a version error.
Container deserialize(std::string_view bytes);

void write_file(const std::filesystem::path& path, const Container& c);
Container read_file(const std::filesystem::path& path);

}  // namespace cardiosynth::ckpt
