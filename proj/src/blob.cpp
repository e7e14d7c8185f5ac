#include "bestn/blob.hpp"

#include <bit>
#include <cstdio>
#include <array>
#include <cstring>
#include <iterator>

#include "bestn/error.hpp"

namespace bestn {

namespace {

template <typename U>
void store_le(unsigned char* dst, U value) {
    for (std::size_t i = 0; i < sizeof(U); ++i) {
        dst[i] = static_cast<unsigned char>(value >> (8 * i));
    }
}

template <typename U>
U load_le(const unsigned char* src) {
    U value = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
        value |= static_cast<U>(src[i]) << (8 * i);
    }
    return value;
}

std::array<unsigned char, kBlobHeaderSize> encode_header(const BlobHeader& h) {
    std::array<unsigned char, kBlobHeaderSize> buf{};
    std::memcpy(buf.data(), kBlobMagic, 4);
    store_le<std::uint32_t>(buf.data() + 4, h.version);
    store_le<std::uint32_t>(buf.data() + 8, h.dim);
    store_le<std::uint64_t>(buf.data() + 12, h.count);
    return buf;
}

}  // namespace

void Checksum::update(std::span<const unsigned char> bytes) {
    for (unsigned char c : bytes) {
        state_ ^= c;
        state_ *= 0x100000001b3ULL;
    }
}

std::string Checksum::hex() const {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(state_));
    return buf;
}

BlobWriter::BlobWriter(const std::filesystem::path& path, std::uint32_t dim, std::uint32_t version)
    : path_(path), out_(path, std::ios::binary | std::ios::trunc) {
    if (!out_) throw IoError("cannot open blob for writing: " + path.string());
    if (dim == 0) throw UsageError("blob dim must be positive");
    if (version != kBlobVersionF32 && version != kBlobVersionF64) {
        throw UsageError("unsupported blob version " + std::to_string(version));
    }
    header_.version = version;
    header_.dim = dim;
    const auto buf = encode_header(header_);
    out_.write(reinterpret_cast<const char*>(buf.data()), buf.size());
}

BlobWriter::~BlobWriter() {
    try {
        close();
    } catch (...) {
    }
}

void BlobWriter::put(std::span<const unsigned char> bytes) {
    out_.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out_) throw IoError("write failed: " + path_.string());
    checksum_.update(bytes);
    bytes_written_ += bytes.size();
}

std::uint64_t BlobWriter::append(std::span<const float> rows) {
    if (header_.version != kBlobVersionF32) throw UsageError("f32 rows appended to an f64 blob");
    if (rows.size() % header_.dim != 0) throw UsageError("row data is not a multiple of dim");
    const std::uint64_t offset = bytes_written_;
    std::vector<unsigned char> buf(rows.size() * 4);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        store_le<std::uint32_t>(buf.data() + 4 * i, std::bit_cast<std::uint32_t>(rows[i]));
    }
    put(buf);
    count_ += rows.size() / header_.dim;
    return offset;
}

std::uint64_t BlobWriter::append(std::span<const double> rows) {
    if (header_.version != kBlobVersionF64) throw UsageError("f64 rows appended to an f32 blob");
    if (rows.size() % header_.dim != 0) throw UsageError("row data is not a multiple of dim");
    const std::uint64_t offset = bytes_written_;
    std::vector<unsigned char> buf(rows.size() * 8);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        store_le<std::uint64_t>(buf.data() + 8 * i, std::bit_cast<std::uint64_t>(rows[i]));
    }
    put(buf);
    count_ += rows.size() / header_.dim;
    return offset;
}

void BlobWriter::close() {
    if (closed_) return;
    closed_ = true;
    header_.count = count_;
    const auto buf = encode_header(header_);
    out_.seekp(0);
    out_.write(reinterpret_cast<const char*>(buf.data()), buf.size());
    out_.close();
    if (!out_) throw IoError("failed to finalize blob: " + path_.string());
}

Blob Blob::read(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open blob: " + path.string());
    Blob blob;
    blob.path_ = path;
    blob.bytes_.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    const auto& b = blob.bytes_;
    if (b.size() < kBlobHeaderSize || std::memcmp(b.data(), kBlobMagic, 4) != 0) {
        throw FormatError("not an SCTR blob: " + path.string());
    }
    blob.header_.version = load_le<std::uint32_t>(b.data() + 4);
    blob.header_.dim = load_le<std::uint32_t>(b.data() + 8);
    blob.header_.count = load_le<std::uint64_t>(b.data() + 12);
    if (blob.header_.version != kBlobVersionF32 && blob.header_.version != kBlobVersionF64) {
        throw FormatError("unsupported blob version " + std::to_string(blob.header_.version) + ": " +
                          path.string());
    }
    if (blob.header_.dim == 0) throw FormatError("blob dim is zero: " + path.string());
    return blob;
}

bool Blob::size_consistent() const {
    return bytes_.size() == kBlobHeaderSize + header_.count * header_.row_bytes();
}

std::string Blob::checksum() const {
    Checksum c;
    c.update(std::span(bytes_).subspan(kBlobHeaderSize));
    return c.hex();
}

bool Blob::contains(std::uint64_t offset, std::uint64_t rows) const {
    const auto row_bytes = header_.row_bytes();
    if (offset < kBlobHeaderSize || (offset - kBlobHeaderSize) % row_bytes != 0) return false;
    if (rows > (bytes_.size() - kBlobHeaderSize) / row_bytes) return false;
    return offset + rows * row_bytes <= bytes_.size();
}

std::vector<float> Blob::floats(std::uint64_t offset, std::uint64_t rows) const {
    if (header_.version != kBlobVersionF32) throw FormatError("blob does not hold f32 rows: " + path_.string());
    if (!contains(offset, rows)) {
        throw FormatError("offset " + std::to_string(offset) + " (+" + std::to_string(rows) +
                          " rows) outside blob " + path_.string());
    }
    std::vector<float> out(rows * header_.dim);
    const unsigned char* p = bytes_.data() + offset;
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = std::bit_cast<float>(load_le<std::uint32_t>(p + 4 * i));
    }
    return out;
}

std::vector<double> Blob::doubles(std::uint64_t offset, std::uint64_t rows) const {
    if (header_.version != kBlobVersionF64) throw FormatError("blob does not hold f64 rows: " + path_.string());
    if (!contains(offset, rows)) {
        throw FormatError("offset " + std::to_string(offset) + " (+" + std::to_string(rows) +
                          " rows) outside blob " + path_.string());
    }
    std::vector<double> out(rows * header_.dim);
    const unsigned char* p = bytes_.data() + offset;
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = std::bit_cast<double>(load_le<std::uint64_t>(p + 8 * i));
    }
    return out;
}

}  // namespace bestn
