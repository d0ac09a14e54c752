#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "teamlens/crc32.hpp"
#include "teamlens/tensor.hpp"

namespace teamlens {

// ============================================================================
//  Binary feature-stream format (.spcr)
//
//  offset  size  field
//  0       4     magic "SPCR"
//  4       4     u32 LE version (= 1)
//  8       1     u8 kind: 0 = clip, 1 = token, 2 = query
//  9       1     u8 dtype: 0 = f32 LE
//  10      2     u16 LE reserved (= 0)
//  12      4     u32 LE n_frames
//  16      4     u32 LE dim
//  20      -     n_frames * dim f32 LE, row-major
//  end     4     u32 LE CRC32 of the payload bytes
//
//  Query files always carry n_frames = 1.
// ============================================================================

enum class StreamKind : std::uint8_t { clip = 0, token = 1, query = 2 };

inline const char* stream_kind_name(StreamKind k) {
    switch (k) {
        case StreamKind::clip: return "clip";
        case StreamKind::token: return "token";
        case StreamKind::query: return "query";
    }
    return "?";
}

struct FeatureStream {
    int robot_id = -1; // bound by the manifest, not stored in the file
    StreamKind kind = StreamKind::clip;
    Tensor2<float> data; // n_frames x dim

    std::size_t n_frames() const { return data.rows; }
    std::size_t dim() const { return data.cols; }
};

struct QueryEmbedding {
    std::vector<float> data;
    std::size_t dim() const { return data.size(); }
};

class StreamFormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
//  Read-access instrumentation. Evaluation asserts that privileged inputs
//  (ground-truth pose logs, teacher state) are never touched on the
//  inference path; these counters are the evidence.
// ---------------------------------------------------------------------------
struct IoTracker {
    static std::atomic<std::uint64_t>& gt_pose_reads() {
        static std::atomic<std::uint64_t> n{0};
        return n;
    }
    static std::atomic<std::uint64_t>& teacher_forwards() {
        static std::atomic<std::uint64_t> n{0};
        return n;
    }
    static void reset() {
        gt_pose_reads() = 0;
        teacher_forwards() = 0;
    }
};

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
    out.push_back(static_cast<char>(v & 0xFF));
    out.push_back(static_cast<char>((v >> 8) & 0xFF));
    out.push_back(static_cast<char>((v >> 16) & 0xFF));
    out.push_back(static_cast<char>((v >> 24) & 0xFF));
}

inline std::uint32_t get_u32(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline void check_clip_rows(const Tensor2<float>& data, const std::string& where) {
    for (std::size_t r = 0; r < data.rows; ++r) {
        double sq = 0.0;
        for (std::size_t c = 0; c < data.cols; ++c) {
            const double v = data.at(r, c);
            sq += v * v;
        }
        const double n = std::sqrt(sq);
        if (n < 1.0 - 1e-3 || n > 1.0 + 1e-3)
            throw StreamFormatError(where + ": row " + std::to_string(r) +
                                    " is not unit-norm (|row| = " + std::to_string(n) + ")");
    }
}

} // namespace detail

inline constexpr std::uint32_t kStreamVersion = 1;
inline constexpr std::size_t kStreamHeaderSize = 20;

/// Serializes a stream to the exact byte layout above.
inline std::string encode_stream(const FeatureStream& s) {
    if (s.data.rows < 1 || s.data.cols < 1)
        throw StreamFormatError("encode_stream: empty stream");
    if (!s.data.all_finite())
        throw StreamFormatError("encode_stream: non-finite values");
    if (s.kind == StreamKind::clip || s.kind == StreamKind::query)
        detail::check_clip_rows(s.data, "encode_stream");
    if (s.kind == StreamKind::query && s.data.rows != 1)
        throw StreamFormatError("encode_stream: query streams must have n_frames = 1");

    std::string out;
    out.reserve(kStreamHeaderSize + s.data.size() * sizeof(float) + 4);
    out.append("SPCR", 4);
    detail::put_u32(out, kStreamVersion);
    out.push_back(static_cast<char>(s.kind));
    out.push_back(0); // dtype f32
    out.push_back(0); // reserved
    out.push_back(0);
    detail::put_u32(out, static_cast<std::uint32_t>(s.data.rows));
    detail::put_u32(out, static_cast<std::uint32_t>(s.data.cols));

    const std::size_t payload_at = out.size();
    out.resize(out.size() + s.data.size() * sizeof(float));
    static_assert(sizeof(float) == 4);
    std::memcpy(out.data() + payload_at, s.data.data.data(), s.data.size() * sizeof(float));

    const std::uint32_t crc = crc32(out.data() + payload_at, s.data.size() * sizeof(float));
    detail::put_u32(out, crc);
    return out;
}

inline FeatureStream decode_stream(const std::string& bytes, const std::string& where) {
    if (bytes.size() < kStreamHeaderSize + 4)
        throw StreamFormatError(where + ": truncated file (" + std::to_string(bytes.size()) +
                                " bytes)");
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
    if (std::memcmp(p, "SPCR", 4) != 0)
        throw StreamFormatError(where + ": bad magic, not a feature stream");
    const std::uint32_t version = detail::get_u32(p + 4);
    if (version != kStreamVersion)
        throw StreamFormatError(where + ": unsupported version " + std::to_string(version));
    const std::uint8_t kind_raw = p[8];
    if (kind_raw > 2) throw StreamFormatError(where + ": unknown stream kind");
    if (p[9] != 0) throw StreamFormatError(where + ": unsupported dtype");
    const std::uint32_t n_frames = detail::get_u32(p + 12);
    const std::uint32_t dim = detail::get_u32(p + 16);
    if (n_frames < 1 || dim < 1)
        throw StreamFormatError(where + ": header declares empty stream");

    const std::size_t payload_len = static_cast<std::size_t>(n_frames) * dim * sizeof(float);
    if (bytes.size() != kStreamHeaderSize + payload_len + 4)
        throw StreamFormatError(where + ": payload size mismatch, header says " +
                                std::to_string(n_frames) + "x" + std::to_string(dim) + " but file has " +
                                std::to_string(bytes.size() - kStreamHeaderSize - 4) +
                                " payload bytes");

    const std::uint32_t expect_crc = detail::get_u32(p + kStreamHeaderSize + payload_len);
    const std::uint32_t got_crc = crc32(bytes.data() + kStreamHeaderSize, payload_len);
    if (expect_crc != got_crc)
        throw StreamFormatError(where + ": CRC mismatch, payload is corrupted");

    FeatureStream s;
    s.kind = static_cast<StreamKind>(kind_raw);
    s.data = Tensor2<float>(n_frames, dim);
    std::memcpy(s.data.data.data(), bytes.data() + kStreamHeaderSize, payload_len);

    if (!s.data.all_finite()) throw StreamFormatError(where + ": non-finite payload values");
    if (s.kind == StreamKind::clip || s.kind == StreamKind::query)
        detail::check_clip_rows(s.data, where);
    if (s.kind == StreamKind::query && n_frames != 1)
        throw StreamFormatError(where + ": query stream must have n_frames = 1");
    return s;
}

inline void write_stream(const FeatureStream& s, const std::filesystem::path& path) {
    const std::string bytes = encode_stream(s);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw StreamFormatError("write_stream: cannot open " + path.string());
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw StreamFormatError("write_stream: short write to " + path.string());
}

inline FeatureStream read_stream(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw StreamFormatError("read_stream: cannot open " + path.string());
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return decode_stream(bytes, path.string());
}

inline QueryEmbedding read_query(const std::filesystem::path& path) {
    FeatureStream s = read_stream(path);
    if (s.kind != StreamKind::query)
        throw StreamFormatError(path.string() + ": expected a query stream, got " +
                                stream_kind_name(s.kind));
    QueryEmbedding q;
    q.data.assign(s.data.data.begin(), s.data.data.end());
    return q;
}

inline void write_query(const QueryEmbedding& q, const std::filesystem::path& path) {
    FeatureStream s;
    s.kind = StreamKind::query;
    s.data = Tensor2<float>(1, q.data.size(), std::vector<float>(q.data));
    write_stream(s, path);
}

} // namespace teamlens
