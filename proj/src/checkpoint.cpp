#include "tokendrop/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <unordered_map>

#include "tokendrop/sha256.hpp"

namespace tokendrop {

namespace {

constexpr char kMagic[4] = {'T', 'D', 'C', 'P'};
constexpr std::uint32_t kVersion = 1;

class ByteWriter {
  public:
    void put_u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<char>(v >> (8 * i)));
    }
    void put_u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<char>(v >> (8 * i)));
    }
    void put_f64(double v) {
        std::uint64_t bits;
        std::memcpy(&bits, &v, sizeof(bits));
        put_u64(bits);
    }
    void put_bytes(const void* p, std::size_t n) {
        buf_.append(static_cast<const char*>(p), n);
    }
    void put_string(const std::string& s) {
        put_u32(static_cast<std::uint32_t>(s.size()));
        put_bytes(s.data(), s.size());
    }
    void put_doubles(const std::vector<double>& v) {
        put_u64(v.size());
        for (double d : v) put_f64(d);
    }
    const std::string& buffer() const { return buf_; }

  private:
    std::string buf_;
};

class ByteReader {
  public:
    ByteReader(const std::string& buf, std::size_t limit) : buf_(buf), limit_(limit) {}

    std::uint32_t get_u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(buf_[pos_ + static_cast<std::size_t>(i)])) << (8 * i);
        pos_ += 4;
        return v;
    }
    std::uint64_t get_u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<std::uint8_t>(buf_[pos_ + static_cast<std::size_t>(i)])) << (8 * i);
        pos_ += 8;
        return v;
    }
    double get_f64() {
        const std::uint64_t bits = get_u64();
        double v;
        std::memcpy(&v, &bits, sizeof(v));
        return v;
    }
    std::string get_string() {
        const std::uint32_t n = get_u32();
        need(n);
        std::string s = buf_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    std::vector<double> get_doubles() {
        const std::uint64_t n = get_u64();
        if (n > (limit_ - pos_) / 8) {
            throw CheckpointException(CheckpointError::Truncated, "payload overruns the file");
        }
        std::vector<double> v(static_cast<std::size_t>(n));
        for (auto& d : v) d = get_f64();
        return v;
    }
    bool exhausted() const { return pos_ == limit_; }

  private:
    void need(std::size_t n) {
        if (pos_ + n > limit_) {
            throw CheckpointException(CheckpointError::Truncated, "payload overruns the file");
        }
    }
    const std::string& buf_;
    std::size_t limit_;
    std::size_t pos_ = 0;
};

}  // namespace

const char* checkpoint_error_name(CheckpointError e) {
    switch (e) {
        case CheckpointError::BadMagic: return "checkpoint bad magic";
        case CheckpointError::VersionMismatch: return "checkpoint version mismatch";
        case CheckpointError::ChecksumMismatch: return "checkpoint checksum mismatch";
        case CheckpointError::Truncated: return "checkpoint truncated";
        case CheckpointError::Malformed: return "checkpoint malformed";
    }
    return "checkpoint error";
}

void save_checkpoint(const Model& m, const TrainState& state, const std::string& path) {
    ByteWriter w;
    w.put_bytes(kMagic, 4);
    w.put_u32(kVersion);

    const VitParams& v = m.vit;
    for (int field : {v.image_h, v.image_w, v.channels, v.patch_size, v.d_emb, v.heads,
                      v.num_classes, static_cast<int>(v.blocks.size()), m.groups.group_count,
                      m.groups.blocks_per_group}) {
        w.put_u32(static_cast<std::uint32_t>(field));
    }
    const int interp_heads = m.interpreters.empty() ? v.heads : m.interpreters[0].heads;
    const bool interp_bias = m.interpreters.empty() ? true : m.interpreters[0].use_bias;
    w.put_u32(static_cast<std::uint32_t>(interp_heads));
    w.put_u32(interp_bias ? 1 : 0);
    w.put_f64(m.groups.threshold);
    w.put_f64(v.ln_eps);
    w.put_u32(static_cast<std::uint32_t>(m.trained_interpreters));

    w.put_u32(static_cast<std::uint32_t>(state.cursor.phase));
    w.put_u32(static_cast<std::uint32_t>(state.cursor.group));
    w.put_u32(static_cast<std::uint32_t>(state.cursor.epoch_in_phase));
    w.put_u32(static_cast<std::uint32_t>(state.cursor.global_epoch));
    for (std::uint64_t word : state.rng_state) w.put_u64(word);

    w.put_u64(static_cast<std::uint64_t>(state.adam_t));
    w.put_u32(static_cast<std::uint32_t>(state.adam_slots.size()));
    for (const auto& [name, slot] : state.adam_slots) {
        w.put_string(name);
        w.put_doubles(slot.m);
        w.put_doubles(slot.v);
    }

    Model& mm = const_cast<Model&>(m);  // parameter listing only
    const auto params = mm.all_params();
    w.put_u32(static_cast<std::uint32_t>(params.size()));
    for (const Param* p : params) {
        w.put_string(p->name);
        w.put_u32(static_cast<std::uint32_t>(p->shape.size()));
        for (int e : p->shape) w.put_u32(static_cast<std::uint32_t>(e));
        w.put_doubles(p->value);
    }

    const auto digest = Sha256::hash(w.buffer().data(), w.buffer().size());

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open " + path + " for writing");
    f.write(w.buffer().data(), static_cast<std::streamsize>(w.buffer().size()));
    f.write(reinterpret_cast<const char*>(digest.data()), static_cast<std::streamsize>(digest.size()));
    if (!f) throw std::runtime_error("short write to " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path);
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

    if (buf.size() < 4 || std::memcmp(buf.data(), kMagic, 4) != 0) {
        throw CheckpointException(CheckpointError::BadMagic, path);
    }
    if (buf.size() < 8 + 32) throw CheckpointException(CheckpointError::Truncated, path);

    const std::size_t payload = buf.size() - 32;
    const auto digest = Sha256::hash(buf.data(), payload);
    if (std::memcmp(digest.data(), buf.data() + payload, 32) != 0) {
        throw CheckpointException(CheckpointError::ChecksumMismatch, path);
    }

    ByteReader r(buf, payload);
    r.get_u32();  // magic, already checked
    const std::uint32_t version = r.get_u32();
    if (version != kVersion) {
        throw CheckpointException(CheckpointError::VersionMismatch,
                                  path + " has version " + std::to_string(version));
    }

    VitParams shape;
    shape.image_h = static_cast<int>(r.get_u32());
    shape.image_w = static_cast<int>(r.get_u32());
    shape.channels = static_cast<int>(r.get_u32());
    shape.patch_size = static_cast<int>(r.get_u32());
    shape.d_emb = static_cast<int>(r.get_u32());
    shape.heads = static_cast<int>(r.get_u32());
    shape.num_classes = static_cast<int>(r.get_u32());
    const int blocks = static_cast<int>(r.get_u32());
    GroupConfig gc;
    gc.group_count = static_cast<int>(r.get_u32());
    gc.blocks_per_group = static_cast<int>(r.get_u32());
    const int interp_heads = static_cast<int>(r.get_u32());
    const bool interp_bias = r.get_u32() != 0;
    gc.threshold = r.get_f64();
    shape.ln_eps = r.get_f64();
    const int trained = static_cast<int>(r.get_u32());
    if (gc.group_count * gc.blocks_per_group != blocks) {
        throw CheckpointException(CheckpointError::Malformed, "group structure does not tile blocks");
    }

    LoadedCheckpoint out;
    out.state.cursor.phase = static_cast<TrainPhase>(r.get_u32());
    out.state.cursor.group = static_cast<int>(r.get_u32());
    out.state.cursor.epoch_in_phase = static_cast<int>(r.get_u32());
    out.state.cursor.global_epoch = static_cast<int>(r.get_u32());
    for (auto& word : out.state.rng_state) word = r.get_u64();

    out.state.adam_t = static_cast<long>(r.get_u64());
    const std::uint32_t n_slots = r.get_u32();
    for (std::uint32_t i = 0; i < n_slots; ++i) {
        const std::string name = r.get_string();
        Adam::Slot slot;
        slot.m = r.get_doubles();
        slot.v = r.get_doubles();
        out.state.adam_slots.emplace(name, std::move(slot));
    }

    Rng init_rng(0);
    out.model.build(shape, gc, interp_heads, interp_bias, init_rng);
    out.model.trained_interpreters = trained;

    std::unordered_map<std::string, Param*> by_name;
    for (Param* p : out.model.all_params()) by_name[p->name] = p;

    const std::uint32_t n_params = r.get_u32();
    if (n_params != by_name.size()) {
        throw CheckpointException(CheckpointError::Malformed,
                                  "expected " + std::to_string(by_name.size()) + " parameters, found " +
                                      std::to_string(n_params));
    }
    for (std::uint32_t i = 0; i < n_params; ++i) {
        const std::string name = r.get_string();
        auto it = by_name.find(name);
        if (it == by_name.end()) {
            throw CheckpointException(CheckpointError::Malformed, "unknown parameter " + name);
        }
        const std::uint32_t rank = r.get_u32();
        Shape s(rank);
        for (auto& e : s) e = static_cast<int>(r.get_u32());
        if (s != it->second->shape) {
            throw CheckpointException(CheckpointError::Malformed, "shape mismatch for " + name);
        }
        std::vector<double> values = r.get_doubles();
        if (values.size() != it->second->numel()) {
            throw CheckpointException(CheckpointError::Malformed, "payload size mismatch for " + name);
        }
        it->second->value = std::move(values);
    }
    if (!r.exhausted()) {
        throw CheckpointException(CheckpointError::Malformed, "trailing bytes after parameters");
    }
    return out;
}

}  // namespace tokendrop
