#include <cstdio>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "guarddoor/checkpoint.hpp"

using namespace gd;
namespace fs = std::filesystem;

namespace {

std::string temp_file(const char* tag) {
    return (fs::temp_directory_path() / (std::string("gd_ck_") + tag + ".gdck")).string();
}

}  // namespace

TEST_CASE("fnv1a64 matches reference vectors") {
    // published test vectors for 64-bit FNV-1a
    CHECK(fnv1a64(nullptr, 0) == 0xcbf29ce484222325ULL);
    const char* a = "a";
    CHECK(fnv1a64(reinterpret_cast<const std::uint8_t*>(a), 1) == 0xaf63dc4c8601ec8cULL);
    const char* foobar = "foobar";
    CHECK(fnv1a64(reinterpret_cast<const std::uint8_t*>(foobar), 6) == 0x85944171f73967e8ULL);
}

TEST_CASE("vae checkpoints round-trip bit-exactly") {
    Rng rng(1);
    VAEParams vae(8, 16, 4, rng);
    const std::string path = temp_file("vae");
    checkpoint_from_vae(vae).save(path);
    VAEParams back = vae_from_checkpoint(Checkpoint::load(path));
    CHECK(back.c1 == 8);
    CHECK(back.c2 == 16);
    CHECK(back.latent_channels == 4);
    CHECK(back.enc1.w.data() == vae.enc1.w.data());
    CHECK(back.dec2.b.data() == vae.dec2.b.data());
    CHECK(back.out.w.data() == vae.out.w.data());
    // loaded weights are live trainable parameters
    CHECK(back.enc1.w.requires_grad());
    fs::remove(path);
}

TEST_CASE("editor and denoiser checkpoints round-trip") {
    Rng rng(2);
    EditorParams ed(8, 8, 4, rng);
    const std::string epath = temp_file("editor");
    checkpoint_from_editor(ed).save(epath);
    EditorParams eback = editor_from_checkpoint(Checkpoint::load(epath));
    CHECK(eback.e2.w.data() == ed.e2.w.data());
    CHECK(eback.frozen_decoder == ed.frozen_decoder);

    DenoiserParams den(4, 8, 50, rng);
    const std::string dpath = temp_file("denoiser");
    checkpoint_from_denoiser(den).save(dpath);
    DenoiserParams dback = denoiser_from_checkpoint(Checkpoint::load(dpath));
    CHECK(dback.T == 50);
    CHECK(dback.c3.w.data() == den.c3.w.data());
    // schedule is rebuilt, not stored
    REQUIRE(dback.alpha_bars.size() == den.alpha_bars.size());
    CHECK(dback.alpha_bars[50] == doctest::Approx(den.alpha_bars[50]));
    fs::remove(epath);
    fs::remove(dpath);
}

TEST_CASE("model kind mismatches are rejected") {
    Rng rng(3);
    VAEParams vae(4, 4, 2, rng);
    const std::string path = temp_file("kind");
    checkpoint_from_vae(vae, "purifier").save(path);
    CHECK_NOTHROW(vae_from_checkpoint(Checkpoint::load(path)));  // purifier is a vae
    CHECK_THROWS(editor_from_checkpoint(Checkpoint::load(path)));
    CHECK_THROWS(denoiser_from_checkpoint(Checkpoint::load(path)));
    fs::remove(path);
}

TEST_CASE("a flipped byte is caught by the trailing hash") {
    Rng rng(4);
    VAEParams vae(4, 4, 2, rng);
    const std::string path = temp_file("tamper");
    checkpoint_from_vae(vae).save(path);

    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(64);
    char byte;
    f.seekg(64);
    f.read(&byte, 1);
    byte ^= 0x01;
    f.seekp(64);
    f.write(&byte, 1);
    f.close();
    CHECK_THROWS_WITH_AS(Checkpoint::load(path), doctest::Contains("hash mismatch"),
                         std::runtime_error);
    fs::remove(path);
}

TEST_CASE("wrong magic and future versions are rejected") {
    const std::string path = temp_file("magic");
    std::ofstream(path, std::ios::binary) << "JUNKJUNKJUNKJUNKJUNK";
    CHECK_THROWS_WITH_AS(Checkpoint::load(path), doctest::Contains("not a GDCK"),
                         std::runtime_error);

    // craft a valid-hash file with version 99
    Rng rng(5);
    VAEParams vae(4, 4, 2, rng);
    auto bytes = checkpoint_from_vae(vae).serialize();
    bytes[4] = 99;
    bytes[5] = 0;
    const std::uint64_t h = fnv1a64(bytes.data(), bytes.size() - 8);
    for (int i = 0; i < 8; ++i) bytes[bytes.size() - 8 + i] = (h >> (8 * i)) & 0xff;
    std::ofstream out(path, std::ios::binary);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    out.close();
    CHECK_THROWS_WITH_AS(Checkpoint::load(path), doctest::Contains("format_version"),
                         std::runtime_error);
    fs::remove(path);
}

TEST_CASE("truncated files are reported, not crashed on") {
    Rng rng(6);
    VAEParams vae(4, 4, 2, rng);
    auto bytes = checkpoint_from_vae(vae).serialize();
    const std::string path = temp_file("trunc");
    std::ofstream out(path, std::ios::binary);
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size() / 2));
    out.close();
    CHECK_THROWS(Checkpoint::load(path));
    fs::remove(path);
}

TEST_CASE("file hash changes with content") {
    Rng rng(7);
    VAEParams vae(4, 4, 2, rng);
    const std::string p1 = temp_file("h1");
    const std::string p2 = temp_file("h2");
    checkpoint_from_vae(vae).save(p1);
    vae.enc1.w.data()[0] += 0.5f;
    checkpoint_from_vae(vae).save(p2);
    CHECK(checkpoint_file_hash(p1) != checkpoint_file_hash(p2));
    fs::remove(p1);
    fs::remove(p2);
}
