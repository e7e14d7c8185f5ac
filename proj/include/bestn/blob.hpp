#pragma once

// Fixed-stride real-vector container shared by traces and scorer weights.
//
//   offset  size  field
//   0       4     magic "SCTR"
//   4       4     format version, u32 LE (1: f32 rows, 2: f64 rows)
//   8       4     dim, u32 LE (reals per row)
//   12      8     count, u64 LE (number of rows)
//   20      ...   count * dim reals, IEEE-754 little-endian
//
// Row r of a version-1 blob therefore starts at byte 20 + 4 * dim * r.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

namespace bestn {

inline constexpr char kBlobMagic[4] = {'S', 'C', 'T', 'R'};
inline constexpr std::size_t kBlobHeaderSize = 20;
inline constexpr std::uint32_t kBlobVersionF32 = 1;
inline constexpr std::uint32_t kBlobVersionF64 = 2;

struct BlobHeader {
    std::uint32_t version = kBlobVersionF32;
    std::uint32_t dim = 0;
    std::uint64_t count = 0;

    std::size_t element_size() const { return version == kBlobVersionF64 ? 8 : 4; }
    std::size_t row_bytes() const { return element_size() * dim; }
};

// FNV-1a 64 over the row payload (header excluded), rendered as 16 hex digits.
class Checksum {
public:
    void update(std::span<const unsigned char> bytes);
    std::string hex() const;

private:
    std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

class BlobWriter {
public:
    BlobWriter(const std::filesystem::path& path, std::uint32_t dim,
               std::uint32_t version = kBlobVersionF32);
    ~BlobWriter();
    BlobWriter(const BlobWriter&) = delete;
    BlobWriter& operator=(const BlobWriter&) = delete;

    // Appends rows.size() / dim rows and returns the byte offset of the first.
    std::uint64_t append(std::span<const float> rows);
    std::uint64_t append(std::span<const double> rows);

    // Patches the row count into the header and flushes. Idempotent.
    void close();

    std::uint64_t count() const { return count_; }
    std::string checksum() const { return checksum_.hex(); }

private:
    void put(std::span<const unsigned char> bytes);

    std::filesystem::path path_;
    std::ofstream out_;
    BlobHeader header_;
    std::uint64_t count_ = 0;
    std::uint64_t bytes_written_ = kBlobHeaderSize;
    Checksum checksum_;
    bool closed_ = false;
};

// A fully loaded blob. Decoding is explicit little-endian.
class Blob {
public:
    static Blob read(const std::filesystem::path& path);

    const BlobHeader& header() const { return header_; }
    std::uint64_t file_size() const { return bytes_.size(); }
    // False when the file is shorter or longer than the header's row count
    // implies. Row access is still bounds-checked against the actual bytes.
    bool size_consistent() const;
    std::string checksum() const;

    // True when [offset, offset + rows * row_bytes) is a whole-row range
    // inside the payload.
    bool contains(std::uint64_t offset, std::uint64_t rows) const;

    // Decodes `rows` consecutive rows starting at byte `offset`. Throws
    // FormatError when the range is not contained in the blob.
    std::vector<float> floats(std::uint64_t offset, std::uint64_t rows) const;
    std::vector<double> doubles(std::uint64_t offset, std::uint64_t rows) const;

private:
    std::vector<unsigned char> bytes_;
    BlobHeader header_;
    std::filesystem::path path_;
};

}  // namespace bestn
