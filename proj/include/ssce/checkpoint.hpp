#ifndef SSCE_CHECKPOINT_HPP
#define SSCE_CHECKPOINT_HPP

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "ssce/nn.hpp"
#include "ssce/tensor.hpp"

namespace ssce {

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct CheckpointError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Binary checkpoint: magic "SSCE", version u32, architecture id, training
// metadata, then length-prefixed named records of little-endian f32 values
// with shapes, and a trailing FNV-1a checksum over everything before it.
// Values are stored at 32-bit width and widened to 64-bit on load.
struct CheckpointRecord {
    std::string name;
    Shape shape;
    std::vector<double> values;
};

struct Checkpoint {
    static constexpr std::uint32_t kVersion = 1;

    std::string arch_id;
    std::uint64_t iteration = 0;
    std::uint64_t seed = 0;
    std::uint64_t config_hash = 0;
    std::vector<CheckpointRecord> records;

    const CheckpointRecord* find(const std::string& name) const {
        for (const auto& r : records)
            if (r.name == name) return &r;
        return nullptr;
    }
};

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_f32(std::string& out, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(out, bits);
}
inline void put_str(std::string& out, const std::string& s) {
    put_u32(out, static_cast<std::uint32_t>(s.size()));
    out += s;
}

class Cursor {
public:
    Cursor(const std::string& buf) : buf_(buf) {}
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(byte()) << (8 * i);
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(byte()) << (8 * i);
        return v;
    }
    float f32() {
        std::uint32_t bits = u32();
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }
    std::string str() {
        std::uint32_t n = u32();
        need(n);
        std::string s = buf_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    std::size_t pos() const { return pos_; }

private:
    unsigned char byte() { return static_cast<unsigned char>(buf_[pos_++]); }
    void need(std::size_t n) {
        if (pos_ + n > buf_.size())
            throw CheckpointError("corrupt checkpoint: truncated at byte " + std::to_string(pos_));
    }
    const std::string& buf_;
    std::size_t pos_ = 0;
};

inline std::uint32_t fnv1a(const char* data, std::size_t n) {
    std::uint32_t h = 2166136261u;
    for (std::size_t i = 0; i < n; ++i) {
        h ^= static_cast<unsigned char>(data[i]);
        h *= 16777619u;
    }
    return h;
}

}  // namespace detail

inline void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
    std::string buf;
    buf += "SSCE";
    detail::put_u32(buf, Checkpoint::kVersion);
    detail::put_str(buf, ck.arch_id);
    detail::put_u64(buf, ck.iteration);
    detail::put_u64(buf, ck.seed);
    detail::put_u64(buf, ck.config_hash);
    detail::put_u32(buf, static_cast<std::uint32_t>(ck.records.size()));
    std::unordered_set<std::string> names;
    for (const auto& r : ck.records) {
        if (!names.insert(r.name).second)
            throw CheckpointError("duplicate record name: " + r.name);
        if (numel(r.shape) != static_cast<std::int64_t>(r.values.size()))
            throw CheckpointError("record " + r.name + ": value count does not match shape");
        detail::put_str(buf, r.name);
        detail::put_u32(buf, static_cast<std::uint32_t>(r.shape.size()));
        for (auto d : r.shape) detail::put_u64(buf, static_cast<std::uint64_t>(d));
        for (double v : r.values) detail::put_f32(buf, static_cast<float>(v));
    }
    detail::put_u32(buf, detail::fnv1a(buf.data(), buf.size()));

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw IoError("write failed: " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read " + path.string());
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    if (buf.size() < 8 || buf.substr(0, 4) != "SSCE")
        throw CheckpointError(path.string() + ": not a checkpoint file (bad magic)");
    if (buf.size() < 4)
        throw CheckpointError(path.string() + ": truncated");
    std::uint32_t stored = detail::fnv1a(buf.data(), buf.size() - 4);
    std::uint32_t trailer = 0;
    for (int i = 0; i < 4; ++i)
        trailer |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[buf.size() - 4 + i]))
                   << (8 * i);
    if (stored != trailer)
        throw CheckpointError(path.string() + ": checksum mismatch");

    std::string body = buf.substr(4, buf.size() - 8);  // strip magic and checksum
    detail::Cursor cur(body);
    Checkpoint ck;
    std::uint32_t version = cur.u32();
    if (version != Checkpoint::kVersion)
        throw CheckpointError(path.string() + ": unsupported version " + std::to_string(version));
    ck.arch_id = cur.str();
    ck.iteration = cur.u64();
    ck.seed = cur.u64();
    ck.config_hash = cur.u64();
    std::uint32_t count = cur.u32();
    std::unordered_set<std::string> names;
    for (std::uint32_t i = 0; i < count; ++i) {
        CheckpointRecord r;
        r.name = cur.str();
        if (!names.insert(r.name).second)
            throw CheckpointError(path.string() + ": duplicate record name " + r.name);
        std::uint32_t nd = cur.u32();
        for (std::uint32_t d = 0; d < nd; ++d)
            r.shape.push_back(static_cast<std::int64_t>(cur.u64()));
        std::int64_t n = numel(r.shape);
        if (n < 0 || n > (1ll << 32))
            throw CheckpointError(path.string() + ": corrupt record " + r.name);
        r.values.resize(static_cast<std::size_t>(n));
        for (auto& v : r.values) v = static_cast<double>(cur.f32());
        ck.records.push_back(std::move(r));
    }
    return ck;
}

// ---------------------------------------------------------------------------
// Model <-> checkpoint
// ---------------------------------------------------------------------------

inline Checkpoint snapshot_model(const Sequential& model, const std::string& arch_id,
                                 std::uint64_t iteration, std::uint64_t seed,
                                 std::uint64_t config_hash) {
    Checkpoint ck;
    ck.arch_id = arch_id;
    ck.iteration = iteration;
    ck.seed = seed;
    ck.config_hash = config_hash;
    auto emit = [&](const std::vector<Param*>& ps) {
        for (auto* p : ps) ck.records.push_back({p->name, p->value.shape(), p->value.data()});
    };
    emit(model.params());
    emit(model.buffers());
    return ck;
}

struct TransferReport {
    std::vector<std::string> copied;
    std::vector<std::string> skipped_target;  // target entries with no usable source
    std::vector<std::string> skipped_source;  // source records never consumed
};

// copies source records into the model wherever name and shape both match;
// everything else keeps its fresh initialization
inline TransferReport transfer_init(Sequential& model, const Checkpoint& source,
                                    bool allow_empty = false) {
    TransferReport report;
    std::unordered_set<std::string> used;
    auto visit = [&](const std::vector<Param*>& ps) {
        for (auto* p : ps) {
            const CheckpointRecord* r = source.find(p->name);
            if (r && r->shape == p->value.shape()) {
                p->value.mutable_data() = r->values;
                report.copied.push_back(p->name);
                used.insert(p->name);
            } else {
                report.skipped_target.push_back(p->name);
            }
        }
    };
    visit(model.params());
    visit(model.buffers());
    for (const auto& r : source.records)
        if (!used.count(r.name)) report.skipped_source.push_back(r.name);
    if (report.copied.empty() && !allow_empty)
        throw CheckpointError(
            "transfer_init matched zero parameters (likely a different architecture); "
            "pass allow_empty to override");
    return report;
}

}  // namespace ssce

#endif
