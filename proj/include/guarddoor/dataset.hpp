#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "guarddoor/tensor.hpp"

namespace gd {

// Batch of RGB images in [0,1], NCHW. The unit of ingestion, protection,
// attack and evaluation.
struct ImageBatch {
    Tensor data;  // (B, 3, H, W)
    std::vector<std::string> ids;

    ImageBatch() = default;
    ImageBatch(Tensor t, std::vector<std::string> ids_);

    int size() const { return data.shape().empty() ? 0 : data.shape()[0]; }
    int height() const { return data.shape()[2]; }
    int width() const { return data.shape()[3]; }

    ImageBatch slice(int begin, int end) const;
    static ImageBatch concat(const std::vector<ImageBatch>& parts);
};

void validate_image_batch(const Tensor& t);

struct CorpusSpec {
    int n_train = 512;
    int n_test = 64;
    int size = 32;
    std::string generator = "textured_shapes";  // or "gradients_mix"
    std::uint64_t seed = 0;
};

struct Corpus {
    ImageBatch train;
    ImageBatch test;
};

Corpus generate_corpus(const CorpusSpec& spec);

// PNG ingestion / emission (8-bit RGB). Non-conforming files in a directory
// are skipped with a warning on stderr.
ImageBatch load_png_dir(const std::string& path, int size);
void save_png(const std::string& path, const Tensor& images, int index);
void save_batch_pngs(const std::string& dir, const ImageBatch& batch, const std::string& suffix = "");
Tensor load_png(const std::string& path, int size);

// bilinear resize of an NCHW tensor to (out_h, out_w)
Tensor resize_bilinear(const Tensor& x, int out_h, int out_w);

}  // namespace gd
