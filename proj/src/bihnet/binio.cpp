#include "clif/binio.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace clif::binio {

Writer::Writer(FileKind kind) {
    buf_.insert(buf_.end(), std::begin(kMagic), std::end(kMagic));
    u32(kFormatVersion);
    u32(static_cast<std::uint32_t>(kind));
}

void Writer::u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void Writer::u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void Writer::f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

void Writer::str(const std::string& s) {
    u64(s.size());
    buf_.insert(buf_.end(), s.begin(), s.end());
}

void Writer::f64s(std::span<const double> v) {
    u64(v.size());
    for (double x : v) f64(x);
}

void Writer::save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot open for writing: " + path.string());
    out.write(reinterpret_cast<const char*>(buf_.data()), static_cast<std::streamsize>(buf_.size()));
    if (!out) throw FormatError("write failed: " + path.string());
}

Reader::Reader(std::vector<std::uint8_t> bytes, FileKind expected) : buf_(std::move(bytes)) {
    need(sizeof(kMagic));
    if (std::memcmp(buf_.data(), kMagic, sizeof(kMagic)) != 0) throw FormatError("bad magic");
    pos_ = sizeof(kMagic);
    const std::uint32_t version = u32();
    if (version != kFormatVersion) throw FormatError("unsupported format version " + std::to_string(version));
    const std::uint32_t kind = u32();
    if (kind != static_cast<std::uint32_t>(expected))
        throw FormatError("unexpected file kind " + std::to_string(kind));
}

Reader Reader::load(const std::filesystem::path& path, FileKind expected) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open for reading: " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return Reader(std::move(bytes), expected);
}

void Reader::need(std::size_t n) const {
    if (buf_.size() - pos_ < n) throw FormatError("truncated file");
}

std::uint32_t Reader::u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf_[pos_++]) << (8 * i);
    return v;
}

std::uint64_t Reader::u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf_[pos_++]) << (8 * i);
    return v;
}

double Reader::f64() { return std::bit_cast<double>(u64()); }

std::string Reader::str() {
    const std::uint64_t n = u64();
    need(n);
    std::string s(buf_.begin() + static_cast<std::ptrdiff_t>(pos_),
                  buf_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return s;
}

std::vector<double> Reader::f64s() {
    const std::uint64_t n = u64();
    if (n > (buf_.size() - pos_) / 8) throw FormatError("truncated file");
    std::vector<double> v(n);
    for (auto& x : v) x = f64();
    return v;
}

}  // namespace clif::binio
