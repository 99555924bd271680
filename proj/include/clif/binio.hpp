#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace clif::binio {

// Layout shared by representation memories and checkpoints:
//
//   magic    8 bytes  "CLIFBIN\0"
//   version  u32      kFormatVersion
//   kind     u32      FileKind
//   payload  kind-specific, built from the primitives below
//
// All integers are little-endian u64 unless noted; doubles are IEEE-754
// binary64 written little-endian; strings and arrays are length-prefixed.
inline constexpr char kMagic[8] = {'C', 'L', 'I', 'F', 'B', 'I', 'N', '\0'};
inline constexpr std::uint32_t kFormatVersion = 1;

enum class FileKind : std::uint32_t { RepresentationMemory = 1, Checkpoint = 2 };

class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class Writer {
public:
    explicit Writer(FileKind kind);
    void u32(std::uint32_t v);
    void u64(std::uint64_t v);
    void f64(double v);
    void str(const std::string& s);
    void f64s(std::span<const double> v);
    const std::vector<std::uint8_t>& bytes() const { return buf_; }
    void save(const std::filesystem::path& path) const;

private:
    std::vector<std::uint8_t> buf_;
};

class Reader {
public:
    Reader(std::vector<std::uint8_t> bytes, FileKind expected);
    static Reader load(const std::filesystem::path& path, FileKind expected);
    std::uint32_t u32();
    std::uint64_t u64();
    double f64();
    std::string str();
    std::vector<double> f64s();
    bool at_end() const { return pos_ == buf_.size(); }

private:
    void need(std::size_t n) const;
    std::vector<std::uint8_t> buf_;
    std::size_t pos_ = 0;
};

}  // namespace clif::binio
