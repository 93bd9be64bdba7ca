#include "noprop/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>

#include "noprop/config.hpp"
#include "noprop/errors.hpp"

namespace noprop {

namespace {

constexpr char kMagic[4] = {'N', 'P', 'R', 'P'};

std::uint32_t crc_table_entry(std::uint32_t i) {
    std::uint32_t c = i;
    for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
    return c;
}

struct Writer {
    std::vector<unsigned char> buf;

    void bytes(const void* p, std::size_t len) {
        const auto* b = static_cast<const unsigned char*>(p);
        buf.insert(buf.end(), b, b + len);
    }
    void u8(std::uint8_t v) { buf.push_back(v); }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) buf.push_back(static_cast<unsigned char>(v >> (8 * i)));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) buf.push_back(static_cast<unsigned char>(v >> (8 * i)));
    }
    void i64(std::int64_t v) { u64(static_cast<std::uint64_t>(v)); }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
    void str(const std::string& s) {
        u64(s.size());
        bytes(s.data(), s.size());
    }
    void tensor_payload(const Tensor& t) {
        for (std::size_t i = 0; i < t.numel(); ++i) {
#ifdef NOPROP_SINGLE_PRECISION
            const std::uint32_t bits = std::bit_cast<std::uint32_t>(t[i]);
            u32(bits);
#else
            f64(static_cast<double>(t[i]));
#endif
        }
    }
};

struct Reader {
    const unsigned char* p;
    std::size_t len;
    std::size_t pos = 0;

    void need(std::size_t n) const {
        if (pos + n > len) throw IOError("checkpoint truncated");
    }
    void bytes(void* out, std::size_t n) {
        need(n);
        std::memcpy(out, p + pos, n);
        pos += n;
    }
    std::uint8_t u8() {
        need(1);
        return p[pos++];
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[pos + i]) << (8 * i);
        pos += 4;
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[pos + i]) << (8 * i);
        pos += 8;
        return v;
    }
    std::int64_t i64() { return static_cast<std::int64_t>(u64()); }
    double f64() { return std::bit_cast<double>(u64()); }
    std::string str() {
        const std::uint64_t n = u64();
        need(n);
        std::string s(reinterpret_cast<const char*>(p + pos), n);
        pos += n;
        return s;
    }
    Tensor tensor_payload(const Shape& shape) {
        Tensor t(shape);
        for (std::size_t i = 0; i < t.numel(); ++i) {
#ifdef NOPROP_SINGLE_PRECISION
            t[i] = std::bit_cast<float>(u32());
#else
            t[i] = f64();
#endif
        }
        return t;
    }
};

void write_store(Writer& w, const std::string& name, const ParamStore& store) {
    w.str(name);
    w.u64(store.size());
    for (const auto& pname : store.names()) {
        const auto& e = store.entry(pname);
        w.str(pname);
        w.u8(e.trainable ? 1 : 0);
        w.i64(e.step);
#ifdef NOPROP_SINGLE_PRECISION
        w.u8(1);
#else
        w.u8(0);
#endif
        w.u64(e.value.rank());
        for (std::size_t ext : e.value.shape()) w.u64(ext);
        w.tensor_payload(e.value);
        w.u8(e.m1.numel() > 0 ? 1 : 0);
        if (e.m1.numel() > 0) {
            w.tensor_payload(e.m1);
            w.tensor_payload(e.m2);
        }
    }
}

ParamStore read_store(Reader& r, std::string& name) {
    name = r.str();
    ParamStore store;
    const std::uint64_t count = r.u64();
    for (std::uint64_t i = 0; i < count; ++i) {
        const std::string pname = r.str();
        const bool trainable = r.u8() != 0;
        const std::int64_t step = r.i64();
        const std::uint8_t dtype = r.u8();
#ifdef NOPROP_SINGLE_PRECISION
        if (dtype != 1) throw FormatError("checkpoint holds 64-bit tensors; this build is 32-bit");
#else
        if (dtype != 0) throw FormatError("checkpoint holds 32-bit tensors; this build is 64-bit");
#endif
        const std::uint64_t rank = r.u64();
        Shape shape(rank);
        for (std::uint64_t k = 0; k < rank; ++k) shape[k] = r.u64();
        Tensor value = r.tensor_payload(shape);
        store.add(pname, std::move(value), trainable);
        auto& e = store.entry(pname);
        e.step = step;
        if (r.u8()) {
            e.m1 = r.tensor_payload(shape);
            e.m2 = r.tensor_payload(shape);
        }
    }
    return store;
}

}  // namespace

std::uint32_t crc32(const unsigned char* data, std::size_t len) {
    static const auto table = [] {
        std::array<std::uint32_t, 256> t{};
        for (std::uint32_t i = 0; i < 256; ++i) t[i] = crc_table_entry(i);
        return t;
    }();
    std::uint32_t c = 0xFFFFFFFFu;
    for (std::size_t i = 0; i < len; ++i) c = table[(c ^ data[i]) & 0xFF] ^ (c >> 8);
    return c ^ 0xFFFFFFFFu;
}

void save_checkpoint(const ModelBundle& bundle, const std::string& path) {
    Writer w;
    w.bytes(kMagic, 4);
    w.u32(kCheckpointVersion);
    w.u8(static_cast<std::uint8_t>(bundle.method));
    w.u8(bundle.trained ? 1 : 0);
    w.u64(bundle.epochs_completed);
    w.u64(bundle.seed);
    w.str(config_to_text(bundle.cfg));

    w.u8(static_cast<std::uint8_t>(bundle.embed.mode));
    w.u64(bundle.embed.m);
    w.u64(bundle.embed.d);

    // image geometry needed to rebuild blocks on load
    w.u64(bundle.img_c);
    w.u64(bundle.img_h);
    w.u64(bundle.img_w);

    w.u8(bundle.sched.T > 0 ? 1 : 0);
    if (bundle.sched.T > 0) {
        w.u64(bundle.sched.T);
        for (double v : bundle.sched.alpha_bar) w.f64(v);
    }

    const std::uint64_t store_count = 4 + bundle.blocks.size();
    w.u64(store_count);
    write_store(w, "embed", bundle.embed.store);
    write_store(w, "head", bundle.head);
    write_store(w, "sched", bundle.schedule_params);
    write_store(w, "base", bundle.baseline);
    for (std::size_t i = 0; i < bundle.blocks.size(); ++i)
        write_store(w, "block" + std::to_string(i), bundle.blocks[i].params());

    w.u64(0);  // persistent rng cursors (streams are key-derived; none held)

    const std::uint32_t crc = crc32(w.buf.data(), w.buf.size());
    w.u32(crc);

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IOError("cannot open checkpoint for writing: " + path);
    f.write(reinterpret_cast<const char*>(w.buf.data()), static_cast<std::streamsize>(w.buf.size()));
    if (!f) throw IOError("short write to " + path);
}

ModelBundle load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IOError("cannot open checkpoint " + path);
    std::vector<unsigned char> buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (buf.size() < 8) throw IOError("checkpoint truncated");

    Reader r{buf.data(), buf.size()};
    char magic[4];
    r.bytes(magic, 4);
    if (std::memcmp(magic, kMagic, 4) != 0) throw FormatError("bad checkpoint magic");
    const std::uint32_t version = r.u32();
    if (version != kCheckpointVersion)
        throw VersionError("checkpoint version " + std::to_string(version) + ", expected " +
                           std::to_string(kCheckpointVersion));

    // trailing crc covers everything before it
    const std::size_t body = buf.size() - 4;
    Reader crc_r{buf.data() + body, 4};
    const std::uint32_t stored_crc = crc_r.u32();
    if (crc32(buf.data(), body) != stored_crc) throw FormatError("checkpoint checksum mismatch");

    ModelBundle b;
    b.method = static_cast<Method>(r.u8());
    b.trained = r.u8() != 0;
    b.epochs_completed = r.u64();
    b.seed = r.u64();
    b.cfg = config_from_text(r.str());

    const EmbedMode mode = static_cast<EmbedMode>(r.u8());
    const std::uint64_t m = r.u64();
    const std::uint64_t d = r.u64();
    b.img_c = r.u64();
    b.img_h = r.u64();
    b.img_w = r.u64();

    if (r.u8()) {
        b.sched.T = r.u64();
        b.sched.alpha_bar.resize(b.sched.T + 1);
        for (auto& v : b.sched.alpha_bar) v = r.f64();
    }

    const std::uint64_t store_count = r.u64();
    std::vector<std::pair<std::string, ParamStore>> stores;
    for (std::uint64_t i = 0; i < store_count; ++i) {
        std::string name;
        ParamStore s = read_store(r, name);
        stores.emplace_back(std::move(name), std::move(s));
    }
    const std::uint64_t cursor_count = r.u64();
    for (std::uint64_t i = 0; i < cursor_count; ++i) {
        r.u64();
        r.u64();
    }

    b.embed.mode = mode;
    b.embed.m = m;
    b.embed.d = d;

    const auto variant = [&] {
        switch (b.method) {
            case Method::CT: return DenoiseBlock::Variant::ContinuousTime;
            case Method::FM: return DenoiseBlock::Variant::Flow;
            default: return DenoiseBlock::Variant::DiscreteTime;
        }
    }();

    std::size_t block_count = 0;
    for (auto& [name, store] : stores) {
        if (name == "embed") b.embed.store = std::move(store);
        else if (name == "head") b.head = std::move(store);
        else if (name == "sched") b.schedule_params = std::move(store);
        else if (name == "base") b.baseline = std::move(store);
        else if (name.rfind("block", 0) == 0) ++block_count;
        else throw FormatError("unknown store '" + name + "' in checkpoint");
    }
    for (std::size_t i = 0; i < block_count; ++i) {
        DenoiseBlock blk(variant, b.cfg.block, m, d, b.img_c, b.img_h, b.img_w);
        for (auto& [name, store] : stores)
            if (name == "block" + std::to_string(i)) blk.params() = std::move(store);
        b.blocks.push_back(std::move(blk));
    }
    return b;
}

}  // namespace noprop
