#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "guarddoor/dataset.hpp"

using namespace gd;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const char* tag) {
    fs::path p = fs::temp_directory_path() / (std::string("gd_dataset_") + tag);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

}  // namespace

TEST_CASE("generated corpus has the requested shape and value range") {
    CorpusSpec spec;
    spec.n_train = 6;
    spec.n_test = 3;
    spec.size = 16;
    spec.seed = 5;
    Corpus c = generate_corpus(spec);
    CHECK(c.train.data.shape() == Shape{6, 3, 16, 16});
    CHECK(c.test.data.shape() == Shape{3, 3, 16, 16});
    for (float v : c.train.data.data()) {
        CHECK(v >= 0.0f);
        CHECK(v <= 1.0f);
    }
    CHECK(c.train.ids[0] == "train_0000");
    CHECK(c.test.ids[2] == "test_0002");
}

TEST_CASE("corpus generation is deterministic in the seed") {
    CorpusSpec spec;
    spec.n_train = 4;
    spec.n_test = 2;
    spec.size = 16;
    spec.seed = 9;
    Corpus a = generate_corpus(spec);
    Corpus b = generate_corpus(spec);
    CHECK(a.train.data.data() == b.train.data.data());
    CHECK(a.test.data.data() == b.test.data.data());
    spec.seed = 10;
    Corpus c = generate_corpus(spec);
    CHECK(a.train.data.data() != c.train.data.data());
}

TEST_CASE("train and test splits do not share images") {
    CorpusSpec spec;
    spec.n_train = 8;
    spec.n_test = 8;
    spec.size = 16;
    spec.seed = 3;
    Corpus c = generate_corpus(spec);
    const int per = 3 * 16 * 16;
    for (int i = 0; i < 8; ++i)
        for (int j = 0; j < 8; ++j) {
            bool same = true;
            for (int k = 0; k < per && same; ++k)
                same = c.train.data.data()[i * per + k] == c.test.data.data()[j * per + k];
            CHECK_FALSE(same);
        }
}

TEST_CASE("both generator kinds work and differ") {
    CorpusSpec spec;
    spec.n_train = 2;
    spec.n_test = 1;
    spec.size = 16;
    spec.seed = 4;
    Corpus shapes = generate_corpus(spec);
    spec.generator = "gradients_mix";
    Corpus grads = generate_corpus(spec);
    CHECK(shapes.train.data.data() != grads.train.data.data());
    spec.generator = "nope";
    CHECK_THROWS(generate_corpus(spec));
}

TEST_CASE("batch validation rejects bad shapes and out-of-range pixels") {
    CHECK_THROWS_AS(validate_image_batch(Tensor({2, 1, 16, 16})), ShapeError);
    CHECK_THROWS_AS(validate_image_batch(Tensor({2, 3, 12, 16})), ShapeError);
    Tensor bad({1, 3, 16, 16}, 0.5f);
    bad.data()[7] = 1.5f;
    CHECK_THROWS_AS(validate_image_batch(bad), DomainError);
}

TEST_CASE("slice and concat round-trip a batch") {
    CorpusSpec spec;
    spec.n_train = 5;
    spec.n_test = 1;
    spec.size = 16;
    Corpus c = generate_corpus(spec);
    ImageBatch front = c.train.slice(0, 2);
    ImageBatch back = c.train.slice(2, 5);
    ImageBatch whole = ImageBatch::concat({front, back});
    CHECK(whole.data.data() == c.train.data.data());
    CHECK(whole.ids == c.train.ids);
}

TEST_CASE("png save/load round-trips within 8-bit quantization") {
    auto dir = temp_dir("roundtrip");
    CorpusSpec spec;
    spec.n_train = 1;
    spec.n_test = 1;
    spec.size = 16;
    spec.seed = 21;
    Corpus c = generate_corpus(spec);
    const std::string path = (dir / "img.png").string();
    save_png(path, c.train.data, 0);
    Tensor back = load_png(path, 16);
    REQUIRE(back.shape() == c.train.data.shape());
    for (std::size_t i = 0; i < back.numel(); ++i)
        CHECK(std::fabs(back.data()[i] - c.train.data.data()[i]) <= 0.5f / 255.0f + 1e-6f);
    fs::remove_all(dir);
}

TEST_CASE("directory loading resizes, sorts, and skips junk files") {
    auto dir = temp_dir("load");
    CorpusSpec spec;
    spec.n_train = 3;
    spec.n_test = 1;
    spec.size = 16;
    Corpus c = generate_corpus(spec);
    save_batch_pngs(dir.string(), c.train);
    std::ofstream(dir / "broken.png") << "this is not a png";
    ImageBatch loaded = load_png_dir(dir.string(), 32);  // also exercises resize
    CHECK(loaded.size() == 3);
    CHECK(loaded.data.shape() == Shape{3, 3, 32, 32});
    CHECK(loaded.ids[0] == "train_0000");
    fs::remove_all(dir);
}

TEST_CASE("directory with no usable images is an error") {
    auto dir = temp_dir("empty");
    std::ofstream(dir / "junk.png") << "nope";
    CHECK_THROWS(load_png_dir(dir.string(), 16));
    fs::remove_all(dir);
}

TEST_CASE("bilinear resize preserves constant images and is exact on identity") {
    Tensor flat({1, 3, 8, 8}, 0.25f);
    Tensor up = resize_bilinear(flat, 16, 16);
    for (float v : up.data()) CHECK(v == doctest::Approx(0.25));
    Rng rng(2);
    Tensor x = Tensor::randn({1, 3, 8, 8}, rng);
    Tensor same = resize_bilinear(x, 8, 8);
    for (std::size_t i = 0; i < x.numel(); ++i)
        CHECK(same.data()[i] == doctest::Approx(x.data()[i]));
}

TEST_CASE("bilinear downscale of a linear ramp stays linear") {
    // values linear in x: f(x) = x; area-consistent sampling keeps slope
    Tensor x({1, 1, 1, 8});
    // make H=8 too so the batch is plausible; use raw tensor (no batch checks)
    x = Tensor({1, 1, 8, 8});
    for (int y = 0; y < 8; ++y)
        for (int i = 0; i < 8; ++i) x.data()[y * 8 + i] = static_cast<float>(i);
    Tensor down = resize_bilinear(x, 8, 4);
    for (int y = 0; y < 8; ++y)
        for (int i = 0; i < 4; ++i)
            CHECK(down.data()[y * 4 + i] == doctest::Approx(0.5 + 2.0 * i));
}
