#include "maskshape/sfmt.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>
#include <stdexcept>

namespace maskshape {

static_assert(std::endian::native == std::endian::little, "SFMT I/O assumes a little-endian host");

namespace {

constexpr std::uint8_t kVersion = 1;

template <typename T>
void put(std::vector<std::uint8_t>& out, T value)
{
    const auto* p = reinterpret_cast<const std::uint8_t*>(&value);
    out.insert(out.end(), p, p + sizeof(T));
}

template <typename T>
T take(std::span<const std::uint8_t> bytes, std::size_t& offset)
{
    if (offset + sizeof(T) > bytes.size()) {
        throw std::runtime_error("SFMT: truncated blob");
    }
    T value;
    std::memcpy(&value, bytes.data() + offset, sizeof(T));
    offset += sizeof(T);
    return value;
}

} // namespace

std::uint64_t SfmtBlob::element_count() const
{
    std::uint64_t n = 1;
    for (auto d : dims) {
        n *= d;
    }
    return n;
}

std::vector<std::uint8_t> encode_sfmt(const SfmtBlob& blob)
{
    if (blob.element_count() != blob.values.size()) {
        throw std::invalid_argument("SFMT: value count does not match dims");
    }
    if (blob.dims.size() > 0xFFFF) {
        throw std::invalid_argument("SFMT: too many dimensions");
    }
    std::vector<std::uint8_t> out;
    const std::size_t elem = blob.dtype == SfmtDtype::F32 ? 4 : 8;
    out.reserve(8 + 8 * blob.dims.size() + elem * blob.values.size());
    out.insert(out.end(), {'S', 'F', 'M', 'T'});
    put<std::uint8_t>(out, kVersion);
    put<std::uint8_t>(out, static_cast<std::uint8_t>(blob.dtype));
    put<std::uint16_t>(out, static_cast<std::uint16_t>(blob.dims.size()));
    for (auto d : blob.dims) {
        put<std::uint64_t>(out, d);
    }
    if (blob.dtype == SfmtDtype::F32) {
        for (double v : blob.values) {
            put<float>(out, static_cast<float>(v));
        }
    } else {
        for (double v : blob.values) {
            put<double>(out, v);
        }
    }
    return out;
}

SfmtBlob decode_sfmt(std::span<const std::uint8_t> bytes)
{
    if (bytes.size() < 8 || std::memcmp(bytes.data(), "SFMT", 4) != 0) {
        throw std::runtime_error("SFMT: bad magic");
    }
    std::size_t offset = 4;
    const auto version = take<std::uint8_t>(bytes, offset);
    if (version != kVersion) {
        throw std::runtime_error("SFMT: unsupported version " + std::to_string(version));
    }
    const auto dtype = take<std::uint8_t>(bytes, offset);
    if (dtype > 1) {
        throw std::runtime_error("SFMT: unknown dtype " + std::to_string(dtype));
    }
    const auto ndim = take<std::uint16_t>(bytes, offset);
    SfmtBlob blob;
    blob.dtype = static_cast<SfmtDtype>(dtype);
    blob.dims.resize(ndim);
    for (auto& d : blob.dims) {
        d = take<std::uint64_t>(bytes, offset);
    }
    const auto count = blob.element_count();
    const std::size_t elem = blob.dtype == SfmtDtype::F32 ? 4 : 8;
    if (bytes.size() - offset != count * elem) {
        throw std::runtime_error("SFMT: payload size mismatch");
    }
    blob.values.resize(count);
    for (auto& v : blob.values) {
        v = blob.dtype == SfmtDtype::F32 ? static_cast<double>(take<float>(bytes, offset))
                                         : take<double>(bytes, offset);
    }
    return blob;
}

void write_sfmt(const std::filesystem::path& path, const SfmtBlob& blob)
{
    write_file_bytes(path, encode_sfmt(blob));
}

SfmtBlob read_sfmt(const std::filesystem::path& path)
{
    const auto bytes = read_file_bytes(path);
    return decode_sfmt(bytes);
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot open " + path.string());
    }
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes)
{
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw std::runtime_error("cannot write " + path.string());
    }
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw std::runtime_error("write failed: " + path.string());
    }
}

std::string read_text_file(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot open " + path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& text)
{
    const auto* p = reinterpret_cast<const std::uint8_t*>(text.data());
    write_file_bytes(path, {p, text.size()});
}

} // namespace maskshape
