#include "guarddoor/dataset.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>

#include "guarddoor/rng.hpp"

namespace fs = std::filesystem;

namespace gd {

ImageBatch::ImageBatch(Tensor t, std::vector<std::string> ids_) : data(std::move(t)), ids(std::move(ids_)) {
    validate_image_batch(data);
    if (static_cast<int>(ids.size()) != data.shape()[0])
        throw std::invalid_argument("ImageBatch: " + std::to_string(ids.size()) + " ids for " +
                                    std::to_string(data.shape()[0]) + " images");
}

void validate_image_batch(const Tensor& t) {
    const Shape& s = t.shape();
    if (s.size() != 4 || s[1] != 3)
        throw ShapeError("ImageBatch: expected (B,3,H,W), got " + shape_str(s));
    if (s[2] % 8 != 0 || s[3] % 8 != 0)
        throw ShapeError("ImageBatch: H and W must be divisible by 8, got " + shape_str(s));
    for (float v : t.data())
        if (!(v >= 0.0f && v <= 1.0f))
            throw DomainError("ImageBatch: pixel value " + std::to_string(v) + " outside [0,1]");
}

ImageBatch ImageBatch::slice(int begin, int end) const {
    const Shape& s = data.shape();
    if (begin < 0 || end > s[0] || begin >= end)
        throw std::invalid_argument("ImageBatch::slice: bad range");
    const int per = s[1] * s[2] * s[3];
    Tensor out({end - begin, s[1], s[2], s[3]});
    std::copy_n(data.data().begin() + static_cast<std::ptrdiff_t>(begin) * per,
                static_cast<std::ptrdiff_t>(end - begin) * per, out.data().begin());
    return ImageBatch(out, std::vector<std::string>(ids.begin() + begin, ids.begin() + end));
}

ImageBatch ImageBatch::concat(const std::vector<ImageBatch>& parts) {
    if (parts.empty()) throw std::invalid_argument("ImageBatch::concat: no parts");
    const Shape& s0 = parts[0].data.shape();
    int total = 0;
    for (const auto& p : parts) {
        const Shape& s = p.data.shape();
        if (s[1] != s0[1] || s[2] != s0[2] || s[3] != s0[3])
            throw ShapeError("ImageBatch::concat: mismatched shapes");
        total += s[0];
    }
    Tensor out({total, s0[1], s0[2], s0[3]});
    std::vector<std::string> ids;
    std::size_t off = 0;
    for (const auto& p : parts) {
        std::copy(p.data.data().begin(), p.data.data().end(), out.data().begin() + off);
        off += p.data.data().size();
        ids.insert(ids.end(), p.ids.begin(), p.ids.end());
    }
    return ImageBatch(out, std::move(ids));
}

// ---------------------------------------------------------------------------
// procedural corpus
// ---------------------------------------------------------------------------

namespace {

void separable_blur(std::vector<float>& img, int h, int w, double sigma) {
    if (sigma <= 0.0) return;
    const int radius = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<float> kernel(2 * radius + 1);
    double ksum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        kernel[i + radius] = static_cast<float>(std::exp(-0.5 * i * i / (sigma * sigma)));
        ksum += kernel[i + radius];
    }
    for (auto& k : kernel) k = static_cast<float>(k / ksum);
    std::vector<float> tmp(img.size());
    auto reflect = [](int i, int n) {
        while (i < 0 || i >= n) {
            if (i < 0) i = -i - 1;
            if (i >= n) i = 2 * n - 1 - i;
        }
        return i;
    };
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            float s = 0;
            for (int k = -radius; k <= radius; ++k)
                s += kernel[k + radius] * img[y * w + reflect(x + k, w)];
            tmp[y * w + x] = s;
        }
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            float s = 0;
            for (int k = -radius; k <= radius; ++k)
                s += kernel[k + radius] * tmp[reflect(y + k, h) * w + x];
            img[y * w + x] = s;
        }
}

// coverage in [0,1] from a signed distance, ~1px soft edge
float edge(float d) { return std::clamp(0.5f - d, 0.0f, 1.0f); }

void render_image(float* rgb, int size, Rng& rng, bool with_shapes) {
    const int hw = size * size;
    // smooth background: bilinear blend of four random corner colors
    float corner[4][3];
    for (auto& c : corner)
        for (float& v : c) v = static_cast<float>(rng.uniform());
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            const float fy = static_cast<float>(y) / (size - 1);
            const float fx = static_cast<float>(x) / (size - 1);
            for (int c = 0; c < 3; ++c) {
                float top = corner[0][c] * (1 - fx) + corner[1][c] * fx;
                float bot = corner[2][c] * (1 - fx) + corner[3][c] * fx;
                rgb[c * hw + y * size + x] = top * (1 - fy) + bot * fy;
            }
        }
    if (with_shapes) {
        const int n_shapes = 1 + static_cast<int>(rng.uniform_int(3));
        for (int s = 0; s < n_shapes; ++s) {
            const int kind = static_cast<int>(rng.uniform_int(3));
            const float cx = static_cast<float>(rng.uniform(0.15, 0.85)) * size;
            const float cy = static_cast<float>(rng.uniform(0.15, 0.85)) * size;
            const float r = static_cast<float>(rng.uniform(0.08, 0.3)) * size;
            const float ang = static_cast<float>(rng.uniform(0.0, 3.14159265));
            float col[3];
            for (float& v : col) v = static_cast<float>(rng.uniform());
            for (int y = 0; y < size; ++y)
                for (int x = 0; x < size; ++x) {
                    const float dx = x + 0.5f - cx;
                    const float dy = y + 0.5f - cy;
                    float d;
                    if (kind == 0) {  // disc
                        d = std::sqrt(dx * dx + dy * dy) - r;
                    } else if (kind == 1) {  // rotated square
                        const float rx = dx * std::cos(ang) + dy * std::sin(ang);
                        const float ry = -dx * std::sin(ang) + dy * std::cos(ang);
                        d = std::max(std::fabs(rx), std::fabs(ry)) - r;
                    } else {  // stripe
                        const float rx = dx * std::cos(ang) + dy * std::sin(ang);
                        d = std::fabs(rx) - 0.35f * r;
                    }
                    const float a = edge(d);
                    if (a > 0)
                        for (int c = 0; c < 3; ++c) {
                            float& px = rgb[c * hw + y * size + x];
                            px = px * (1 - a) + col[c] * a;
                        }
                }
        }
    }
    // band-limited texture so every image carries high-frequency content
    const double tex_sigma = rng.uniform(0.7, 1.5);
    const float tex_amp = static_cast<float>(rng.uniform(0.01, 0.04));
    std::vector<float> noise(hw);
    for (int c = 0; c < 3; ++c) {
        for (auto& v : noise) v = static_cast<float>(rng.normal());
        separable_blur(noise, size, size, tex_sigma);
        for (int i = 0; i < hw; ++i)
            rgb[c * hw + i] = std::clamp(rgb[c * hw + i] + tex_amp * noise[i], 0.0f, 1.0f);
    }
}

ImageBatch make_split(const CorpusSpec& spec, int count, const char* tag, std::uint64_t offset) {
    Tensor data({count, 3, spec.size, spec.size});
    std::vector<std::string> ids;
    ids.reserve(count);
    const bool with_shapes = spec.generator != "gradients_mix";
    const int per = 3 * spec.size * spec.size;
    for (int i = 0; i < count; ++i) {
        Rng rng = Rng::derive(spec.seed, offset + static_cast<std::uint64_t>(i));
        render_image(data.data().data() + static_cast<std::ptrdiff_t>(i) * per, spec.size, rng,
                     with_shapes);
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%s_%04d", tag, i);
        ids.emplace_back(buf);
    }
    return ImageBatch(std::move(data), std::move(ids));
}

}  // namespace

Corpus generate_corpus(const CorpusSpec& spec) {
    if (spec.n_train < 1 || spec.n_test < 1)
        throw std::invalid_argument("generate_corpus: n_train and n_test must be >= 1");
    if (spec.size % 8 != 0)
        throw std::invalid_argument("generate_corpus: size must be divisible by 8");
    if (spec.generator != "textured_shapes" && spec.generator != "gradients_mix")
        throw std::invalid_argument("generate_corpus: unknown generator '" + spec.generator + "'");
    Corpus corpus;
    corpus.train = make_split(spec, spec.n_train, "train", 0);
    // disjoint id/seed space for the test split
    corpus.test = make_split(spec, spec.n_test, "test",
                             static_cast<std::uint64_t>(spec.n_train) + 0x10000000ULL);
    return corpus;
}

// ---------------------------------------------------------------------------
// PNG I/O
// ---------------------------------------------------------------------------

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};

std::vector<unsigned char> read_png_rgb8(const std::string& path, int& w, int& h) {
    std::unique_ptr<std::FILE, FileCloser> fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw std::runtime_error("cannot open " + path);
    unsigned char header[8];
    if (std::fread(header, 1, 8, fp.get()) != 8 || png_sig_cmp(header, 0, 8))
        throw std::runtime_error("not a PNG file: " + path);
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw std::runtime_error("png_create_read_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw std::runtime_error("png_create_info_struct failed");
    }
    std::vector<unsigned char> out;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("libpng error while reading " + path);
    }
    png_init_io(png, fp.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);
    w = static_cast<int>(png_get_image_width(png, info));
    h = static_cast<int>(png_get_image_height(png, info));
    const png_byte color = png_get_color_type(png, info);
    const png_byte depth = png_get_bit_depth(png, info);
    if (depth == 16) png_set_strip_16(png);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA)
        png_set_gray_to_rgb(png);  // grayscale is channel-replicated to RGB
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_strip_alpha(png);
    png_set_interlace_handling(png);
    png_read_update_info(png, info);
    if (png_get_channels(png, info) != 3) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("unsupported channel layout in " + path);
    }
    out.assign(static_cast<std::size_t>(w) * h * 3, 0);
    std::vector<png_bytep> rows(h);
    for (int y = 0; y < h; ++y) rows[y] = out.data() + static_cast<std::size_t>(y) * w * 3;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return out;
}

}  // namespace

Tensor resize_bilinear(const Tensor& x, int out_h, int out_w) {
    const Shape& s = x.shape();
    if (s.size() != 4) throw ShapeError("resize_bilinear: expected NCHW, got " + shape_str(s));
    const int N = s[0], C = s[1], H = s[2], W = s[3];
    Tensor out({N, C, out_h, out_w});
    const float sy = static_cast<float>(H) / out_h;
    const float sx = static_cast<float>(W) / out_w;
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const float* src = x.data().data() + (static_cast<std::size_t>(n) * C + c) * H * W;
            float* dst = out.data().data() + (static_cast<std::size_t>(n) * C + c) * out_h * out_w;
            for (int y = 0; y < out_h; ++y) {
                const float fy = std::clamp((y + 0.5f) * sy - 0.5f, 0.0f, H - 1.0f);
                const int y0 = static_cast<int>(fy);
                const int y1 = std::min(y0 + 1, H - 1);
                const float wy = fy - y0;
                for (int xo = 0; xo < out_w; ++xo) {
                    const float fx = std::clamp((xo + 0.5f) * sx - 0.5f, 0.0f, W - 1.0f);
                    const int x0 = static_cast<int>(fx);
                    const int x1 = std::min(x0 + 1, W - 1);
                    const float wx = fx - x0;
                    const float top = src[y0 * W + x0] * (1 - wx) + src[y0 * W + x1] * wx;
                    const float bot = src[y1 * W + x0] * (1 - wx) + src[y1 * W + x1] * wx;
                    dst[y * out_w + xo] = top * (1 - wy) + bot * wy;
                }
            }
        }
    return out;
}

Tensor load_png(const std::string& path, int size) {
    int w = 0, h = 0;
    auto rgb = read_png_rgb8(path, w, h);
    Tensor img({1, 3, h, w});
    const int hw = h * w;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c)
                img.data()[c * hw + y * w + x] =
                    static_cast<float>(rgb[(static_cast<std::size_t>(y) * w + x) * 3 + c]) / 255.0f;
    if (h != size || w != size) img = resize_bilinear(img, size, size);
    for (auto& v : img.data()) v = std::clamp(v, 0.0f, 1.0f);
    return img;
}

ImageBatch load_png_dir(const std::string& path, int size) {
    if (!fs::is_directory(path)) throw std::runtime_error("not a directory: " + path);
    std::vector<std::string> files;
    for (const auto& entry : fs::directory_iterator(path))
        if (entry.is_regular_file() && entry.path().extension() == ".png")
            files.push_back(entry.path().string());
    std::sort(files.begin(), files.end());
    std::vector<ImageBatch> parts;
    int skipped = 0;
    for (const auto& f : files) {
        try {
            Tensor img = load_png(f, size);
            parts.push_back(ImageBatch(img, {fs::path(f).stem().string()}));
        } catch (const std::exception& e) {
            std::cerr << "warning: skipping " << f << ": " << e.what() << "\n";
            ++skipped;
        }
    }
    if (parts.empty())
        throw std::runtime_error("no usable PNG images in " + path + " (" +
                                 std::to_string(skipped) + " skipped)");
    if (skipped > 0)
        std::cerr << "loaded " << parts.size() << " images, skipped " << skipped << "\n";
    return ImageBatch::concat(parts);
}

void save_png(const std::string& path, const Tensor& images, int index) {
    const Shape& s = images.shape();
    if (s.size() != 4 || s[1] != 3 || index < 0 || index >= s[0])
        throw std::invalid_argument("save_png: bad batch shape or index");
    const int H = s[2], W = s[3], hw = H * W;
    const float* src = images.data().data() + static_cast<std::size_t>(index) * 3 * hw;
    std::vector<unsigned char> rgb(static_cast<std::size_t>(hw) * 3);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
            for (int c = 0; c < 3; ++c) {
                float v = std::clamp(src[c * hw + y * W + x], 0.0f, 1.0f);
                rgb[(static_cast<std::size_t>(y) * W + x) * 3 + c] =
                    static_cast<unsigned char>(std::lround(v * 255.0f));
            }
    std::unique_ptr<std::FILE, FileCloser> fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw std::runtime_error("cannot write " + path);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("libpng error while writing " + path);
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, W, H, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<png_bytep> rows(H);
    for (int y = 0; y < H; ++y) rows[y] = rgb.data() + static_cast<std::size_t>(y) * W * 3;
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

void save_batch_pngs(const std::string& dir, const ImageBatch& batch, const std::string& suffix) {
    fs::create_directories(dir);
    for (int i = 0; i < batch.size(); ++i)
        save_png((fs::path(dir) / (batch.ids[i] + suffix + ".png")).string(), batch.data, i);
}

}  // namespace gd
