#include "pf/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "pf/io.hpp"
#include "pf/rng.hpp"

namespace pf {

using nlohmann::json;

Tensor LabeledDataset::image(std::size_t i) const {
    std::size_t C = images.shape[1], H = images.shape[2], W = images.shape[3];
    std::size_t sz = C * H * W;
    Tensor t({C, H, W});
    std::copy_n(images.data.begin() + i * sz, sz, t.data.begin());
    return t;
}

void LabeledDataset::validate() const {
    if (images.rank() != 4)
        throw std::invalid_argument("dataset: images must be [N,C,H,W], got " +
                                    shape_str(images.shape));
    if (images.shape[0] != labels.size())
        throw std::invalid_argument("dataset: " + std::to_string(images.shape[0]) +
                                    " images but " + std::to_string(labels.size()) + " labels");
    for (std::size_t l : labels)
        if (l >= class_count)
            throw std::invalid_argument("dataset: label " + std::to_string(l) +
                                        " >= class_count " + std::to_string(class_count));
}

namespace {

// Distinct geometric template per class, scaled per class so classes differ
// in both shape and brightness. Intensities stay in the lower half of the
// dynamic range: natural images rarely peg the sensor, and it leaves
// headroom that full-range perturbations (stickers, glare) can exploit.
void render_template(std::size_t cls, std::size_t H, std::size_t W, std::vector<float>& px) {
    px.assign(H * W, 0.0f);
    auto set = [&](std::size_t r, std::size_t c, float v) { px[r * W + c] = 0.4f * v; };
    double cy = (H - 1) / 2.0, cx = (W - 1) / 2.0;
    switch (cls) {
        case 0:  // horizontal bar
            for (std::size_t r = H / 3; r < H / 3 + std::max<std::size_t>(2, H / 8); ++r)
                for (std::size_t c = 2; c < W - 2; ++c) set(r, c, 1.0f);
            break;
        case 1:  // vertical bar
            for (std::size_t r = 2; r < H - 2; ++r)
                for (std::size_t c = W / 3; c < W / 3 + std::max<std::size_t>(2, W / 8); ++c)
                    set(r, c, 0.9f);
            break;
        case 2:  // cross
            for (std::size_t r = 0; r < H; ++r)
                for (std::size_t c = W / 2 - 1; c <= W / 2 + 1 && c < W; ++c) set(r, c, 1.0f);
            for (std::size_t c = 0; c < W; ++c)
                for (std::size_t r = H / 2 - 1; r <= H / 2 + 1 && r < H; ++r) set(r, c, 1.0f);
            break;
        case 3: {  // disk
            double rad = std::min(H, W) / 4.0;
            for (std::size_t r = 0; r < H; ++r)
                for (std::size_t c = 0; c < W; ++c)
                    if ((r - cy) * (r - cy) + (c - cx) * (c - cx) <= rad * rad) set(r, c, 0.85f);
            break;
        }
        case 4: {  // ring
            double ro = std::min(H, W) / 2.5, ri = std::min(H, W) / 4.0;
            for (std::size_t r = 0; r < H; ++r)
                for (std::size_t c = 0; c < W; ++c) {
                    double d2 = (r - cy) * (r - cy) + (c - cx) * (c - cx);
                    if (d2 <= ro * ro && d2 >= ri * ri) set(r, c, 1.0f);
                }
            break;
        }
        case 5:  // top-left corner block
            for (std::size_t r = 1; r < H / 2 - 1; ++r)
                for (std::size_t c = 1; c < W / 2 - 1; ++c) set(r, c, 0.9f);
            break;
        case 6:  // bottom-right corner block
            for (std::size_t r = H / 2 + 1; r < H - 1; ++r)
                for (std::size_t c = W / 2 + 1; c < W - 1; ++c) set(r, c, 0.7f);
            break;
        case 7:  // main diagonal band
            for (std::size_t r = 0; r < H; ++r)
                for (std::size_t c = 0; c < W; ++c)
                    if (std::llabs(static_cast<long long>(r) - static_cast<long long>(c)) <= 2)
                        set(r, c, 1.0f);
            break;
        case 8:  // frame
            for (std::size_t r = 2; r < H - 2; ++r)
                for (std::size_t c = 2; c < W - 2; ++c)
                    if (r < 5 || r >= H - 5 || c < 5 || c >= W - 5) set(r, c, 0.8f);
            break;
        case 9:  // checkerboard
            for (std::size_t r = 0; r < H; ++r)
                for (std::size_t c = 0; c < W; ++c)
                    if (((r / 4) + (c / 4)) % 2 == 0) set(r, c, 0.6f);
            break;
        default:
            throw std::invalid_argument("gen_shapes_dataset: no template for class " +
                                        std::to_string(cls));
    }
}

std::string hex64(std::uint64_t h) {
    std::ostringstream os;
    os << std::hex << h;
    return os.str();
}

std::uint32_t read_be32(std::istream& is, const std::string& what) {
    unsigned char b[4];
    std::streampos pos = is.tellg();
    is.read(reinterpret_cast<char*>(b), 4);
    if (is.gcount() != 4)
        throw std::runtime_error(what + ": truncated at byte offset " +
                                 std::to_string(static_cast<long long>(pos)));
    return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
           (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}

}  // namespace

LabeledDataset gen_shapes_dataset(std::size_t class_count, std::size_t per_class,
                                  std::size_t channels, std::size_t height,
                                  std::size_t width, double noise_std, std::uint64_t seed) {
    if (class_count > 10)
        throw std::invalid_argument("gen_shapes_dataset: template library has 10 classes, " +
                                    std::to_string(class_count) + " requested");
    if (!class_count || !per_class || !channels || !height || !width)
        throw std::invalid_argument("gen_shapes_dataset: dims must be positive");

    std::size_t n = class_count * per_class;
    LabeledDataset ds;
    ds.images = Tensor({n, channels, height, width});
    ds.labels.resize(n);
    ds.class_count = class_count;
    ds.source_digest = "shapes-" + hex64(hash64(seed ^ (n * 1315423911ULL)));

    Rng base(seed);
    std::vector<float> tmpl;
    std::size_t sample_sz = channels * height * width;
    for (std::size_t cls = 0; cls < class_count; ++cls) {
        render_template(cls, height, width, tmpl);
        for (std::size_t s = 0; s < per_class; ++s) {
            std::size_t idx = cls * per_class + s;
            ds.labels[idx] = cls;
            Rng rng = base.fork(idx);
            float* out = &ds.images.data[idx * sample_sz];
            for (std::size_t ch = 0; ch < channels; ++ch)
                for (std::size_t p = 0; p < height * width; ++p) {
                    double v = tmpl[p];
                    if (noise_std > 0.0) v += rng.gaussian(0.0, noise_std);
                    out[ch * height * width + p] =
                        static_cast<float>(std::min(1.0, std::max(0.0, v)));
                }
        }
    }
    return ds;
}

LabeledDataset add_distractor_occlusions(const LabeledDataset& dataset, double fraction,
                                         std::size_t patch_side,
                                         const TransformDistribution& dist,
                                         std::uint64_t seed) {
    dataset.validate();
    if (fraction < 0.0 || fraction > 1.0)
        throw std::invalid_argument("add_distractor_occlusions: fraction must be in [0,1]");
    if (!patch_side) throw std::invalid_argument("add_distractor_occlusions: zero patch_side");

    LabeledDataset out = dataset;
    std::size_t C = out.images.shape[1], H = out.images.shape[2], W = out.images.shape[3];
    std::size_t sz = C * H * W;
    Rng base(seed);
    Patch blob;
    for (std::size_t i = 0; i < out.size(); ++i) {
        Rng rng = base.fork(i);  // per-image stream: order-independent
        if (rng.next_unit() >= fraction) continue;
        blob.pixels = Tensor({C, patch_side, patch_side});
        for (float& v : blob.pixels.data) v = static_cast<float>(rng.next_unit());
        AffineTransform t = sample_transform(dist, rng);
        Tensor patched = apply(out.image(i), warp(blob, t, H, W));
        std::copy_n(patched.data.begin(), sz, out.images.data.begin() + i * sz);
    }
    out.source_digest += "+distractors-" + hex64(hash64(seed ^ (out.size() * 2654435761ULL)));
    return out;
}

LabeledDataset load_idx(const std::string& images_path, const std::string& labels_path) {
    std::ifstream imgs(images_path, std::ios::binary);
    if (!imgs) throw std::runtime_error("cannot open: " + images_path);
    std::ifstream lbls(labels_path, std::ios::binary);
    if (!lbls) throw std::runtime_error("cannot open: " + labels_path);

    std::uint32_t imagic = read_be32(imgs, "idx images " + images_path);
    if (imagic != 0x00000803)
        throw std::runtime_error("idx images " + images_path + ": bad magic at byte offset 0");
    std::uint32_t lmagic = read_be32(lbls, "idx labels " + labels_path);
    if (lmagic != 0x00000801)
        throw std::runtime_error("idx labels " + labels_path + ": bad magic at byte offset 0");

    std::uint32_t n = read_be32(imgs, "idx images count");
    std::uint32_t h = read_be32(imgs, "idx images rows");
    std::uint32_t w = read_be32(imgs, "idx images cols");
    std::uint32_t ln = read_be32(lbls, "idx labels count");
    if (n != ln)
        throw std::runtime_error("idx: image count " + std::to_string(n) +
                                 " != label count " + std::to_string(ln));

    LabeledDataset ds;
    ds.images = Tensor({n, 1, h, w});
    ds.labels.resize(n);
    ds.source_digest = "idx-" + std::to_string(n);

    std::vector<unsigned char> buf(static_cast<std::size_t>(n) * h * w);
    std::streampos pos = imgs.tellg();
    imgs.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (static_cast<std::size_t>(imgs.gcount()) != buf.size())
        throw std::runtime_error("idx images " + images_path + ": truncated at byte offset " +
                                 std::to_string(static_cast<long long>(pos) + imgs.gcount()));
    for (std::size_t i = 0; i < buf.size(); ++i)
        ds.images.data[i] = static_cast<float>(buf[i]) / 255.0f;

    std::vector<unsigned char> lbuf(n);
    pos = lbls.tellg();
    lbls.read(reinterpret_cast<char*>(lbuf.data()), n);
    if (static_cast<std::uint32_t>(lbls.gcount()) != n)
        throw std::runtime_error("idx labels " + labels_path + ": truncated at byte offset " +
                                 std::to_string(static_cast<long long>(pos) + lbls.gcount()));
    std::size_t maxl = 0;
    for (std::size_t i = 0; i < n; ++i) {
        ds.labels[i] = lbuf[i];
        maxl = std::max(maxl, static_cast<std::size_t>(lbuf[i]));
    }
    ds.class_count = maxl + 1;
    return ds;
}

namespace {

LabeledDataset subset(const LabeledDataset& ds, const std::vector<std::size_t>& idx) {
    std::size_t C = ds.images.shape[1], H = ds.images.shape[2], W = ds.images.shape[3];
    std::size_t sz = C * H * W;
    LabeledDataset out;
    out.images = Tensor({idx.size(), C, H, W});
    out.labels.resize(idx.size());
    out.class_count = ds.class_count;
    out.source_digest = ds.source_digest;
    for (std::size_t i = 0; i < idx.size(); ++i) {
        std::copy_n(ds.images.data.begin() + idx[i] * sz, sz, out.images.data.begin() + i * sz);
        out.labels[i] = ds.labels[idx[i]];
    }
    return out;
}

}  // namespace

SplitResult select_splits(const LabeledDataset& dataset, std::size_t test_n,
                          std::uint64_t seed) {
    dataset.validate();
    std::size_t n = dataset.size();
    if (test_n > n)
        throw std::invalid_argument("select_splits: test_n " + std::to_string(test_n) +
                                    " exceeds dataset size " + std::to_string(n));
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(seed);
    for (std::size_t i = n; i-- > 1;) {
        std::size_t j = static_cast<std::size_t>(rng.next_below(i + 1));
        std::swap(order[i], order[j]);
    }
    std::vector<std::size_t> test_idx(order.begin(), order.begin() + test_n);
    std::vector<std::size_t> rest_idx(order.begin() + test_n, order.end());
    return {subset(dataset, test_idx), subset(dataset, rest_idx)};
}

Manifest emit_patched_dataset(const LabeledDataset& testset, const std::vector<Patch>& bundle,
                              const TransformDistribution& dist, std::uint64_t seed,
                              const std::string& out_dir) {
    testset.validate();
    std::filesystem::create_directories(out_dir);
    std::size_t n = testset.size();
    std::size_t C = testset.images.shape[1], H = testset.images.shape[2],
                W = testset.images.shape[3];

    Manifest manifest;
    manifest.testset_size = n;
    manifest.bundle_size = bundle.size();

    for (std::size_t pi = 0; pi < bundle.size(); ++pi) {
        const Patch& patch = bundle[pi];
        Rng stream(seed ^ hash64(pi));
        Tensor chunk({n, C, H, W});
        std::size_t sz = C * H * W;
        for (std::size_t i = 0; i < n; ++i) {
            Rng sub = stream.fork(i);
            AffineTransform t = sample_transform(dist, sub);
            Tensor adv = apply(testset.image(i), warp(patch, t, H, W));
            std::copy_n(adv.data.begin(), sz, chunk.data.begin() + i * sz);
            manifest.entries.push_back(
                {i, patch.patch_id, t, i, testset.labels[i], patch.target_class});
        }
        std::string file = "patched_" + patch.patch_id + ".pft";
        std::string path = (std::filesystem::path(out_dir) / file).string();
        try {
            save_tensor(path, chunk);
        } catch (const std::exception& e) {
            throw std::runtime_error(std::string("emit_patched_dataset: ") + e.what());
        }
        manifest.chunk_files.push_back(file);
    }
    return manifest;
}

void save_manifest(const Manifest& m, const std::string& path) {
    json j;
    j["format_version"] = m.format_version;
    j["testset_size"] = m.testset_size;
    j["bundle_size"] = m.bundle_size;
    j["chunk_files"] = m.chunk_files;
    json entries = json::array();
    for (const ManifestEntry& e : m.entries)
        entries.push_back({{"source_index", e.source_index},
                           {"patch_id", e.patch_id},
                           {"rotation", e.transform.rotation},
                           {"translate_x", e.transform.translate_x},
                           {"translate_y", e.transform.translate_y},
                           {"output_offset", e.output_offset},
                           {"true_label", e.true_label},
                           {"target_label", e.target_label}});
    j["entries"] = std::move(entries);
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open for write: " + path);
    os << j.dump(1) << '\n';
    if (!os) throw std::runtime_error("write failed: " + path);
}

Manifest load_manifest(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open: " + path);
    json j = json::parse(is);
    Manifest m;
    m.format_version = j.at("format_version");
    if (m.format_version != 1)
        throw std::runtime_error("manifest " + path + ": unsupported format_version " +
                                 std::to_string(m.format_version));
    m.testset_size = j.at("testset_size");
    m.bundle_size = j.at("bundle_size");
    m.chunk_files = j.at("chunk_files").get<std::vector<std::string>>();
    for (const json& e : j.at("entries")) {
        ManifestEntry me;
        me.source_index = e.at("source_index");
        me.patch_id = e.at("patch_id");
        me.transform.rotation = e.at("rotation");
        me.transform.translate_x = e.at("translate_x");
        me.transform.translate_y = e.at("translate_y");
        me.output_offset = e.at("output_offset");
        me.true_label = e.at("true_label");
        me.target_label = e.at("target_label");
        m.entries.push_back(std::move(me));
    }
    if (m.entries.size() != m.testset_size * m.bundle_size)
        throw std::runtime_error("manifest " + path + ": entry count " +
                                 std::to_string(m.entries.size()) + " != testset_size * bundle_size");
    return m;
}

}  // namespace pf
