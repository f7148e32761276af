#include "psagan/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <unordered_map>

#include "psagan/common.hpp"

namespace psagan {

namespace {

constexpr char kMagic[12] = {'P', 'S', 'A', 'G', 'A', 'N', 'C', 'K', 'P', 'T', '1', '\n'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f32(std::string& out, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(out, bits);
}

class Cursor {
  public:
    Cursor(const std::string& buf, const std::string& path) : buf_(buf), path_(path) {}

    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
        pos_ += 4;
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i)
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
        pos_ += 8;
        return v;
    }
    float f32() {
        std::uint32_t bits = u32();
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }
    std::string bytes(std::size_t n) {
        need(n);
        std::string s = buf_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    std::size_t pos() const { return pos_; }

  private:
    void need(std::size_t n) {
        if (pos_ + n > buf_.size())
            throw ArtifactError("checkpoint " + path_ + " is truncated at byte " +
                                std::to_string(pos_));
    }
    const std::string& buf_;
    std::string path_;
    std::size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    std::string out;
    out.append(kMagic, sizeof(kMagic));
    put_u32(out, kVersion);
    put_u32(out, static_cast<std::uint32_t>(ckpt.config_echo.size()));
    out += ckpt.config_echo;
    put_u32(out, static_cast<std::uint32_t>(ckpt.growth_stage));
    put_f32(out, ckpt.alpha);
    put_u64(out, ckpt.entries.size());
    std::uint64_t offset = 0;
    for (const auto& [name, t] : ckpt.entries) {
        put_u32(out, static_cast<std::uint32_t>(name.size()));
        out += name;
        put_u32(out, static_cast<std::uint32_t>(t.ndim()));
        for (std::int64_t d : t.shape()) put_u64(out, static_cast<std::uint64_t>(d));
        put_u64(out, offset);
        offset += static_cast<std::uint64_t>(t.size()) * 4;
    }
    put_u64(out, offset);
    for (const auto& [name, t] : ckpt.entries) {
        (void)name;
        for (float v : t.data()) put_f32(out, v);
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open " + path + " for writing");
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw IoError("short write to " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ArtifactError("checkpoint " + path + " does not exist or is unreadable");
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    Cursor c(buf, path);
    if (c.bytes(sizeof(kMagic)) != std::string(kMagic, sizeof(kMagic)))
        throw ArtifactError(path + " is not a checkpoint (bad magic)");
    std::uint32_t version = c.u32();
    if (version != kVersion)
        throw ArtifactError("checkpoint " + path + " has unsupported version " +
                            std::to_string(version));
    Checkpoint ckpt;
    ckpt.config_echo = c.bytes(c.u32());
    ckpt.growth_stage = c.u32();
    ckpt.alpha = c.f32();
    std::uint64_t n = c.u64();
    struct Meta {
        std::string name;
        Shape shape;
        std::uint64_t offset;
    };
    std::vector<Meta> metas(n);
    for (auto& m : metas) {
        m.name = c.bytes(c.u32());
        std::uint32_t nd = c.u32();
        m.shape.resize(nd);
        for (auto& d : m.shape) d = static_cast<std::int64_t>(c.u64());
        m.offset = c.u64();
    }
    std::uint64_t payload_len = c.u64();
    std::string payload = c.bytes(payload_len);
    for (auto& m : metas) {
        std::int64_t count = shape_size(m.shape);
        if (m.offset + static_cast<std::uint64_t>(count) * 4 > payload_len)
            throw ArtifactError("checkpoint " + path + " entry " + m.name +
                                " points past the payload");
        std::vector<float> data(count);
        std::memcpy(data.data(), payload.data() + m.offset, count * 4);
        ckpt.entries.emplace_back(m.name, Tensor::from(m.shape, std::move(data)));
    }
    return ckpt;
}

Checkpoint snapshot(GeneratorStack& g, DiscriminatorStack& d, const std::string& config_echo) {
    if (g.growth_stage() != d.growth_stage())
        throw ContractError("generator at stage " + std::to_string(g.growth_stage()) +
                            " but discriminator at " + std::to_string(d.growth_stage()));
    if (g.alpha() != d.alpha())
        throw ContractError("generator and discriminator disagree on alpha");
    Checkpoint ckpt;
    ckpt.config_echo = config_echo;
    ckpt.growth_stage = g.growth_stage();
    ckpt.alpha = g.alpha();
    for (auto& p : g.params()) ckpt.entries.emplace_back(p.name, p.value);
    for (auto& b : g.buffers()) ckpt.entries.emplace_back(b.name, b.value);
    for (auto& p : d.params()) ckpt.entries.emplace_back(p.name, p.value);
    for (auto& b : d.buffers()) ckpt.entries.emplace_back(b.name, b.value);
    return ckpt;
}

namespace {

void copy_by_name(const Checkpoint& ckpt, std::vector<NamedTensor> targets) {
    std::unordered_map<std::string, Tensor> live;
    for (auto& t : targets) {
        if (!live.emplace(t.name, t.value).second)
            throw ContractError("duplicate registry name " + t.name);
    }
    std::size_t matched = 0;
    for (const auto& [name, src] : ckpt.entries) {
        auto it = live.find(name);
        if (it == live.end())
            throw ArtifactError("checkpoint entry " + name + " has no matching tensor");
        if (it->second.shape() != src.shape())
            throw ArtifactError("checkpoint entry " + name + " has shape " +
                                shape_str(src.shape()) + ", model expects " +
                                shape_str(it->second.shape()));
        it->second.data() = src.data();
        ++matched;
    }
    if (matched != live.size())
        throw ArtifactError("checkpoint provides " + std::to_string(matched) +
                            " tensors, model has " + std::to_string(live.size()));
}

}  // namespace

void restore(const Checkpoint& ckpt, GeneratorStack& g, DiscriminatorStack& d) {
    Rng scratch(0);  // fresh-stage params are overwritten below
    g.grow_to(ckpt.growth_stage, scratch);
    d.grow_to(ckpt.growth_stage, scratch);
    g.set_alpha(ckpt.alpha);
    d.set_alpha(ckpt.alpha);
    std::vector<NamedTensor> targets;
    for (auto& p : g.params()) targets.push_back(p);
    for (auto& b : g.buffers()) targets.push_back(b);
    for (auto& p : d.params()) targets.push_back(p);
    for (auto& b : d.buffers()) targets.push_back(b);
    copy_by_name(ckpt, std::move(targets));
}

Checkpoint snapshot_named(const std::vector<NamedTensor>& params,
                          const std::vector<NamedTensor>& buffers,
                          const std::string& config_echo) {
    Checkpoint ckpt;
    ckpt.config_echo = config_echo;
    ckpt.growth_stage = 0;
    ckpt.alpha = 1.0f;
    for (auto& p : params) ckpt.entries.emplace_back(p.name, p.value);
    for (auto& b : buffers) ckpt.entries.emplace_back(b.name, b.value);
    return ckpt;
}

void restore_named(const Checkpoint& ckpt, const std::vector<NamedTensor>& params,
                   const std::vector<NamedTensor>& buffers) {
    std::vector<NamedTensor> targets;
    for (auto& p : params) targets.push_back(p);
    for (auto& b : buffers) targets.push_back(b);
    copy_by_name(ckpt, std::move(targets));
}

}  // namespace psagan
