#include <gtest/gtest.h>

#include <cstring>

#include "bestn/blob.hpp"
#include "bestn/error.hpp"
#include "unit/test_util.hpp"

using namespace bestn;
using namespace bestn::test;

namespace {

std::uint64_t read_le(const std::vector<unsigned char>& b, std::size_t at, std::size_t width) {
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < width; ++i) v |= static_cast<std::uint64_t>(b[at + i]) << (8 * i);
    return v;
}

}  // namespace

TEST(Checksum, MatchesPublishedFnv1aVectors) {
    Checksum empty;
    EXPECT_EQ(empty.hex(), "cbf29ce484222325");
    Checksum a;
    const unsigned char ch = 'a';
    a.update({&ch, 1});
    EXPECT_EQ(a.hex(), "af63dc4c8601ec8c");
    Checksum foobar;
    const std::string s = "foobar";
    foobar.update({reinterpret_cast<const unsigned char*>(s.data()), s.size()});
    EXPECT_EQ(foobar.hex(), "85944171f73967e8");
}

TEST(Blob, HeaderLayoutIsLittleEndian) {
    const auto dir = scratch_dir("blob-header");
    const std::vector<float> rows = {1.0f, -2.5f, 3.0f, 0.0f, 7.25f, -1.0f};
    {
        BlobWriter w(dir / "x.bin", 3);
        EXPECT_EQ(w.append(rows), kBlobHeaderSize);
        w.close();
    }
    const auto bytes = read_bytes(dir / "x.bin");
    ASSERT_EQ(bytes.size(), 20u + 6 * 4);
    EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "SCTR");
    EXPECT_EQ(read_le(bytes, 4, 4), 1u);
    EXPECT_EQ(read_le(bytes, 8, 4), 3u);
    EXPECT_EQ(read_le(bytes, 12, 8), 2u);
    float second;
    const std::uint32_t bits = static_cast<std::uint32_t>(read_le(bytes, 24, 4));
    std::memcpy(&second, &bits, 4);
    EXPECT_EQ(second, -2.5f);
}

TEST(Blob, RoundTripsBitExactAndReportsOffsets) {
    const auto dir = scratch_dir("blob-roundtrip");
    Rng rng(3);
    std::vector<float> a(4 * 2), b(4 * 3);
    for (auto& x : a) x = static_cast<float>(standard_normal(rng));
    for (auto& x : b) x = static_cast<float>(standard_normal(rng));
    std::uint64_t off_a, off_b;
    std::string sum;
    {
        BlobWriter w(dir / "x.bin", 4);
        off_a = w.append(a);
        off_b = w.append(b);
        EXPECT_EQ(w.count(), 5u);
        w.close();
        sum = w.checksum();
    }
    EXPECT_EQ(off_a, 20u);
    EXPECT_EQ(off_b, 20u + 2 * 16);
    const Blob blob = Blob::read(dir / "x.bin");
    EXPECT_TRUE(blob.size_consistent());
    EXPECT_EQ(blob.header().count, 5u);
    EXPECT_EQ(blob.checksum(), sum);
    EXPECT_EQ(blob.floats(off_a, 2), a);
    EXPECT_EQ(blob.floats(off_b, 3), b);
}

TEST(Blob, DoubleRowsRoundTrip) {
    const auto dir = scratch_dir("blob-f64");
    const std::vector<double> v = {0.1, 1e-300, -3.5, 1.0 / 3.0};
    {
        BlobWriter w(dir / "x.bin", 4, kBlobVersionF64);
        w.append(std::span<const double>(v));
        w.close();
    }
    const Blob blob = Blob::read(dir / "x.bin");
    EXPECT_EQ(blob.header().version, kBlobVersionF64);
    EXPECT_EQ(blob.doubles(20, 1), v);
    EXPECT_THROW(blob.floats(20, 1), FormatError);
}

TEST(Blob, RangeChecks) {
    const auto dir = scratch_dir("blob-range");
    {
        BlobWriter w(dir / "x.bin", 2);
        w.append(std::vector<float>{1, 2, 3, 4});
        w.close();
    }
    const Blob blob = Blob::read(dir / "x.bin");
    EXPECT_TRUE(blob.contains(20, 2));
    EXPECT_TRUE(blob.contains(28, 1));
    EXPECT_FALSE(blob.contains(24, 1));  // mid-row
    EXPECT_FALSE(blob.contains(28, 2));  // past the end
    EXPECT_FALSE(blob.contains(0, 1));   // inside the header
    EXPECT_THROW(blob.floats(28, 2), FormatError);
}

TEST(Blob, TruncatedFileIsDetected) {
    const auto dir = scratch_dir("blob-truncated");
    {
        BlobWriter w(dir / "x.bin", 2);
        w.append(std::vector<float>{1, 2, 3, 4});
        w.close();
    }
    auto bytes = read_bytes(dir / "x.bin");
    bytes.pop_back();
    write_bytes(dir / "x.bin", bytes);
    const Blob blob = Blob::read(dir / "x.bin");
    EXPECT_FALSE(blob.size_consistent());
    EXPECT_NO_THROW(blob.floats(20, 1));
    EXPECT_THROW(blob.floats(28, 1), FormatError);
}

TEST(Blob, RejectsForeignFiles) {
    const auto dir = scratch_dir("blob-foreign");
    write_bytes(dir / "x.bin", std::vector<unsigned char>(32, 'Z'));
    EXPECT_THROW(Blob::read(dir / "x.bin"), FormatError);
    EXPECT_THROW(Blob::read(dir / "missing.bin"), IoError);
}
