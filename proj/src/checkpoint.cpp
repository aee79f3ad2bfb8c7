#include "guarddoor/checkpoint.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>

#include "json.hpp"

namespace gd {

std::uint64_t fnv1a64(const std::uint8_t* data, std::size_t len) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (std::size_t i = 0; i < len; ++i) {
        h ^= data[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

namespace {

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
    out.push_back(v & 0xff);
    out.push_back((v >> 8) & 0xff);
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back((v >> (8 * i)) & 0xff);
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back((v >> (8 * i)) & 0xff);
}

void put_string(std::vector<std::uint8_t>& out, const std::string& s) {
    put_u32(out, static_cast<std::uint32_t>(s.size()));
    out.insert(out.end(), s.begin(), s.end());
}

struct Reader {
    const std::uint8_t* p;
    const std::uint8_t* end;

    void need(std::size_t n) const {
        if (static_cast<std::size_t>(end - p) < n)
            throw std::runtime_error("checkpoint truncated");
    }
    std::uint16_t u16() {
        need(2);
        std::uint16_t v = p[0] | (p[1] << 8);
        p += 2;
        return v;
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
        p += 4;
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
        p += 8;
        return v;
    }
    std::string str() {
        const std::uint32_t n = u32();
        need(n);
        std::string s(reinterpret_cast<const char*>(p), n);
        p += n;
        return s;
    }
};

}  // namespace

std::vector<std::uint8_t> Checkpoint::serialize() const {
    std::vector<std::uint8_t> out;
    out.insert(out.end(), {'G', 'D', 'C', 'K'});
    put_u16(out, kCheckpointVersion);
    put_string(out, model_kind);
    put_u32(out, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) {
        put_string(out, name);
        out.push_back(0);  // dtype tag: f32
        out.push_back(static_cast<std::uint8_t>(t.shape().size()));
        for (int d : t.shape()) put_u32(out, static_cast<std::uint32_t>(d));
        const auto& data = t.data();
        const std::size_t bytes = data.size() * sizeof(float);
        const std::size_t off = out.size();
        out.resize(off + bytes);
        std::memcpy(out.data() + off, data.data(), bytes);  // little-endian host assumed
    }
    put_string(out, config_json);
    put_u64(out, fnv1a64(out.data(), out.size()));
    return out;
}

void Checkpoint::save(const std::string& path) const {
    auto bytes = serialize();
    const auto parent = std::filesystem::path(path).parent_path();
    if (!parent.empty()) std::filesystem::create_directories(parent);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write checkpoint " + path);
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

Checkpoint Checkpoint::load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open checkpoint " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                    std::istreambuf_iterator<char>());
    if (bytes.size() < 14 || std::memcmp(bytes.data(), "GDCK", 4) != 0)
        throw std::runtime_error("not a GDCK checkpoint: " + path);
    // verify trailing hash over everything before it
    Reader tail{bytes.data() + bytes.size() - 8, bytes.data() + bytes.size()};
    const std::uint64_t stored = tail.u64();
    const std::uint64_t actual = fnv1a64(bytes.data(), bytes.size() - 8);
    if (stored != actual)
        throw std::runtime_error("checkpoint hash mismatch in " + path + " (corrupt file)");

    Reader r{bytes.data() + 4, bytes.data() + bytes.size() - 8};
    Checkpoint ck;
    const std::uint16_t version = r.u16();
    if (version != kCheckpointVersion)
        throw std::runtime_error("unsupported checkpoint format_version " +
                                 std::to_string(version) + " in " + path);
    ck.model_kind = r.str();
    const std::uint32_t count = r.u32();
    for (std::uint32_t i = 0; i < count; ++i) {
        std::string name = r.str();
        r.need(2);
        const std::uint8_t dtype = *r.p++;
        if (dtype != 0) throw std::runtime_error("unsupported dtype tag in " + path);
        const std::uint8_t ndim = *r.p++;
        Shape shape(ndim);
        for (auto& d : shape) d = static_cast<int>(r.u32());
        const std::size_t n = shape_numel(shape);
        r.need(n * sizeof(float));
        std::vector<float> data(n);
        std::memcpy(data.data(), r.p, n * sizeof(float));
        r.p += n * sizeof(float);
        ck.tensors.emplace_back(std::move(name), Tensor::from_data(std::move(shape), std::move(data)));
    }
    ck.config_json = r.str();
    return ck;
}

const Tensor& Checkpoint::tensor(const std::string& name) const {
    for (const auto& [n, t] : tensors)
        if (n == name) return t;
    throw std::runtime_error("checkpoint has no tensor named '" + name + "'");
}

std::uint64_t checkpoint_file_hash(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                    std::istreambuf_iterator<char>());
    return fnv1a64(bytes.data(), bytes.size());
}

// ---------------------------------------------------------------------------
// model adapters
// ---------------------------------------------------------------------------

namespace {

void add_conv(Checkpoint& ck, const std::string& name, const nn::Conv2d& c) {
    ck.tensors.emplace_back(name + ".w", c.w.clone());
    ck.tensors.emplace_back(name + ".b", c.b.clone());
}

void add_convt(Checkpoint& ck, const std::string& name, const nn::ConvT2d& c) {
    ck.tensors.emplace_back(name + ".w", c.w.clone());
    ck.tensors.emplace_back(name + ".b", c.b.clone());
}

nn::Conv2d read_conv(const Checkpoint& ck, const std::string& name, int stride, int pad) {
    nn::Conv2d c;
    c.w = ck.tensor(name + ".w").clone();
    c.b = ck.tensor(name + ".b").clone();
    c.w.set_requires_grad(true);
    c.b.set_requires_grad(true);
    c.stride = stride;
    c.pad = pad;
    return c;
}

nn::ConvT2d read_convt(const Checkpoint& ck, const std::string& name, int stride, int pad) {
    nn::ConvT2d c;
    c.w = ck.tensor(name + ".w").clone();
    c.b = ck.tensor(name + ".b").clone();
    c.w.set_requires_grad(true);
    c.b.set_requires_grad(true);
    c.stride = stride;
    c.pad = pad;
    return c;
}

}  // namespace

Checkpoint checkpoint_from_vae(const VAEParams& vae, const std::string& kind) {
    Checkpoint ck;
    ck.model_kind = kind;
    add_conv(ck, "enc1", vae.enc1);
    add_conv(ck, "enc2", vae.enc2);
    add_conv(ck, "mu", vae.mu_head);
    add_conv(ck, "logvar", vae.logvar_head);
    add_convt(ck, "dec1", vae.dec1);
    add_convt(ck, "dec2", vae.dec2);
    add_conv(ck, "out", vae.out);
    nlohmann::json j{{"c1", vae.c1}, {"c2", vae.c2}, {"latent_channels", vae.latent_channels}};
    ck.config_json = j.dump();
    return ck;
}

VAEParams vae_from_checkpoint(const Checkpoint& ck) {
    if (ck.model_kind != "vae" && ck.model_kind != "purifier")
        throw std::runtime_error("expected a vae checkpoint, got kind '" + ck.model_kind + "'");
    VAEParams vae;
    nlohmann::json j = nlohmann::json::parse(ck.config_json);
    vae.c1 = j.at("c1").get<int>();
    vae.c2 = j.at("c2").get<int>();
    vae.latent_channels = j.at("latent_channels").get<int>();
    vae.enc1 = read_conv(ck, "enc1", 2, 1);
    vae.enc2 = read_conv(ck, "enc2", 2, 1);
    vae.mu_head = read_conv(ck, "mu", 1, 1);
    vae.logvar_head = read_conv(ck, "logvar", 1, 1);
    vae.dec1 = read_convt(ck, "dec1", 2, 1);
    vae.dec2 = read_convt(ck, "dec2", 2, 1);
    vae.out = read_conv(ck, "out", 1, 1);
    return vae;
}

Checkpoint checkpoint_from_editor(const EditorParams& editor) {
    Checkpoint ck;
    ck.model_kind = "editor";
    add_conv(ck, "e1", editor.e1);
    add_conv(ck, "e2", editor.e2);
    add_conv(ck, "ehead", editor.ehead);
    add_conv(ck, "det1", editor.det1);
    add_conv(ck, "det2", editor.det2);
    add_conv(ck, "det3", editor.det3);
    add_conv(ck, "vshift", editor.vshift);
    add_convt(ck, "d1", editor.d1);
    add_convt(ck, "d2", editor.d2);
    add_conv(ck, "dout", editor.dout);
    nlohmann::json j{{"c1", editor.c1},
                     {"c2", editor.c2},
                     {"latent_channels", editor.latent_channels},
                     {"frozen_decoder", editor.frozen_decoder}};
    ck.config_json = j.dump();
    return ck;
}

EditorParams editor_from_checkpoint(const Checkpoint& ck) {
    if (ck.model_kind != "editor")
        throw std::runtime_error("expected an editor checkpoint, got kind '" + ck.model_kind + "'");
    EditorParams ed;
    nlohmann::json j = nlohmann::json::parse(ck.config_json);
    ed.c1 = j.at("c1").get<int>();
    ed.c2 = j.at("c2").get<int>();
    ed.latent_channels = j.at("latent_channels").get<int>();
    ed.frozen_decoder = j.at("frozen_decoder").get<bool>();
    ed.e1 = read_conv(ck, "e1", 2, 1);
    ed.e2 = read_conv(ck, "e2", 2, 1);
    ed.ehead = read_conv(ck, "ehead", 1, 1);
    ed.det1 = read_conv(ck, "det1", 2, 2);
    ed.det2 = read_conv(ck, "det2", 2, 2);
    ed.det3 = read_conv(ck, "det3", 1, 1);
    ed.vshift = read_conv(ck, "vshift", 1, 1);
    ed.d1 = read_convt(ck, "d1", 2, 1);
    ed.d2 = read_convt(ck, "d2", 2, 1);
    ed.dout = read_conv(ck, "dout", 1, 1);
    return ed;
}

Checkpoint checkpoint_from_denoiser(const DenoiserParams& den) {
    Checkpoint ck;
    ck.model_kind = "denoiser";
    add_conv(ck, "c1", den.c1);
    add_conv(ck, "c2", den.c2);
    add_conv(ck, "c3", den.c3);
    nlohmann::json j{{"T", den.T},
                     {"latent_channels", den.latent_channels},
                     {"time_channels", den.time_channels}};
    ck.config_json = j.dump();
    return ck;
}

DenoiserParams denoiser_from_checkpoint(const Checkpoint& ck) {
    if (ck.model_kind != "denoiser")
        throw std::runtime_error("expected a denoiser checkpoint, got kind '" + ck.model_kind +
                                 "'");
    DenoiserParams den;
    nlohmann::json j = nlohmann::json::parse(ck.config_json);
    den.T = j.at("T").get<int>();
    den.latent_channels = j.at("latent_channels").get<int>();
    den.time_channels = j.at("time_channels").get<int>();
    den.c1 = read_conv(ck, "c1", 1, 1);
    den.c2 = read_conv(ck, "c2", 1, 1);
    den.c3 = read_conv(ck, "c3", 1, 1);
    den.build_schedule();
    return den;
}

}  // namespace gd
