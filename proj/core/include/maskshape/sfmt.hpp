#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace maskshape {

/// Element type tag stored in an SFMT blob header.
enum class SfmtDtype : std::uint8_t { F32 = 0, F64 = 1 };

/**
 * A dense row-major tensor as stored on disk.
 *
 * Layout: magic "SFMT", version u8 (=1), dtype u8, ndim u16, ndim x u64 dims,
 * then the little-endian payload. Values are always held as double in memory;
 * the dtype only selects the on-disk precision.
 */
struct SfmtBlob
{
    SfmtDtype dtype = SfmtDtype::F64;
    std::vector<std::uint64_t> dims;
    std::vector<double> values;

    std::uint64_t element_count() const;
};

std::vector<std::uint8_t> encode_sfmt(const SfmtBlob& blob);
SfmtBlob decode_sfmt(std::span<const std::uint8_t> bytes);

void write_sfmt(const std::filesystem::path& path, const SfmtBlob& blob);
SfmtBlob read_sfmt(const std::filesystem::path& path);

// Raw file helpers shared by the other serializers.
std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

} // namespace maskshape
