#include "pf/patchops.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "pf/io.hpp"
#include "pf/rng.hpp"

namespace pf {

using nlohmann::json;

TransformDistribution default_distribution(std::size_t patch_side, std::size_t canvas_h,
                                           std::size_t canvas_w) {
    TransformDistribution d;
    d.rot_bound = 3.14159265358979323846 / 8.0;
    double side = static_cast<double>(std::min(canvas_h, canvas_w));
    double diag = std::ceil(static_cast<double>(patch_side) * std::sqrt(2.0));
    d.trans_bound = std::max(0.0, std::floor((side - diag) / 2.0));
    return d;
}

AffineTransform sample_transform(const TransformDistribution& dist, Rng& rng) {
    if (dist.rot_bound < 0.0 || dist.trans_bound < 0.0)
        throw std::invalid_argument("sample_transform: bounds must be nonnegative");
    AffineTransform t;
    t.rotation = rng.uniform(-dist.rot_bound, dist.rot_bound);
    t.translate_x = rng.uniform(-dist.trans_bound, dist.trans_bound);
    t.translate_y = rng.uniform(-dist.trans_bound, dist.trans_bound);
    return t;
}

namespace {

struct WarpGeometry {
    std::size_t C, P, H, W;
    double cos_t, sin_t;  // of -rotation (inverse map)
    double cy, cx;        // canvas center plus translation
    double pc;            // patch center

    WarpGeometry(const Patch& patch, const AffineTransform& t, std::size_t h, std::size_t w) {
        if (patch.pixels.rank() != 3 || patch.pixels.shape[1] != patch.pixels.shape[2])
            throw std::invalid_argument("warp: patch pixels must be [C,P,P], got " +
                                        shape_str(patch.pixels.shape));
        C = patch.pixels.shape[0];
        P = patch.pixels.shape[1];
        H = h;
        W = w;
        if (P > H || P > W)
            throw std::invalid_argument("warp: patch side " + std::to_string(P) +
                                        " exceeds canvas " + std::to_string(H) + "x" +
                                        std::to_string(W));
        cos_t = std::cos(-t.rotation);
        sin_t = std::sin(-t.rotation);
        cy = (static_cast<double>(H) - 1.0) / 2.0 + t.translate_y;
        cx = (static_cast<double>(W) - 1.0) / 2.0 + t.translate_x;
        pc = (static_cast<double>(P) - 1.0) / 2.0;
    }

    // Patch-space source point for canvas pixel (r, c).
    void source(std::size_t r, std::size_t c, double& sy, double& sx) const {
        double dy = static_cast<double>(r) - cy;
        double dx = static_cast<double>(c) - cx;
        sx = cos_t * dx - sin_t * dy + pc;
        sy = sin_t * dx + cos_t * dy + pc;
    }
};

struct Corners {
    long y0, x0;
    double w00, w01, w10, w11;
};

Corners bilinear_corners(double sy, double sx) {
    double fy0 = std::floor(sy), fx0 = std::floor(sx);
    double fy = sy - fy0, fx = sx - fx0;
    Corners c;
    c.y0 = static_cast<long>(fy0);
    c.x0 = static_cast<long>(fx0);
    c.w00 = (1.0 - fy) * (1.0 - fx);
    c.w01 = (1.0 - fy) * fx;
    c.w10 = fy * (1.0 - fx);
    c.w11 = fy * fx;
    return c;
}

inline bool in_patch(long y, long x, std::size_t P) {
    return y >= 0 && x >= 0 && y < static_cast<long>(P) && x < static_cast<long>(P);
}

}  // namespace

WarpedPatch warp(const Patch& patch, const AffineTransform& t, std::size_t canvas_h,
                 std::size_t canvas_w) {
    WarpGeometry g(patch, t, canvas_h, canvas_w);
    WarpedPatch out;
    out.transform = t;
    out.canvas_pixels = Tensor({g.C, g.H, g.W});
    out.mask = Tensor({g.H, g.W});
    for (std::size_t r = 0; r < g.H; ++r) {
        for (std::size_t c = 0; c < g.W; ++c) {
            double sy, sx;
            g.source(r, c, sy, sx);
            Corners k = bilinear_corners(sy, sx);
            const long ys[2] = {k.y0, k.y0 + 1};
            const long xs[2] = {k.x0, k.x0 + 1};
            const double ws[2][2] = {{k.w00, k.w01}, {k.w10, k.w11}};
            double m = 0.0;
            for (int i = 0; i < 2; ++i)
                for (int j = 0; j < 2; ++j)
                    if (in_patch(ys[i], xs[j], g.P)) m += ws[i][j];
            out.mask.at2(r, c) = static_cast<float>(m);
            if (m <= 0.0) continue;
            for (std::size_t ch = 0; ch < g.C; ++ch) {
                double acc = 0.0;
                for (int i = 0; i < 2; ++i)
                    for (int j = 0; j < 2; ++j)
                        if (in_patch(ys[i], xs[j], g.P))
                            acc += ws[i][j] *
                                   patch.pixels.at3(ch, static_cast<std::size_t>(ys[i]),
                                                    static_cast<std::size_t>(xs[j]));
                out.canvas_pixels.at3(ch, r, c) = static_cast<float>(acc / m);
            }
        }
    }
    return out;
}

Tensor apply(const Tensor& x, const WarpedPatch& w) {
    if (x.rank() != 3)
        throw std::invalid_argument("apply: image must be [C,H,W], got " + shape_str(x.shape));
    if (!x.same_shape(w.canvas_pixels))
        throw std::invalid_argument("apply: image shape " + shape_str(x.shape) +
                                    " != warped patch shape " + shape_str(w.canvas_pixels.shape));
    std::size_t C = x.shape[0], H = x.shape[1], W = x.shape[2];
    Tensor out(x.shape);
    for (std::size_t ch = 0; ch < C; ++ch)
        for (std::size_t r = 0; r < H; ++r)
            for (std::size_t c = 0; c < W; ++c) {
                float m = w.mask.at2(r, c);
                float v = (1.0f - m) * x.at3(ch, r, c) + m * w.canvas_pixels.at3(ch, r, c);
                out.at3(ch, r, c) = std::min(1.0f, std::max(0.0f, v));
            }
    return out;
}

Tensor warp_backward(const Tensor& grad_canvas, const Patch& patch,
                     const AffineTransform& t, std::size_t canvas_h, std::size_t canvas_w) {
    WarpGeometry g(patch, t, canvas_h, canvas_w);
    if (grad_canvas.shape != std::vector<std::size_t>{g.C, g.H, g.W})
        throw std::invalid_argument("warp_backward: grad shape " + shape_str(grad_canvas.shape) +
                                    " does not match the forward geometry");
    Tensor grad_patch({g.C, g.P, g.P});
    for (std::size_t r = 0; r < g.H; ++r) {
        for (std::size_t c = 0; c < g.W; ++c) {
            double sy, sx;
            g.source(r, c, sy, sx);
            Corners k = bilinear_corners(sy, sx);
            const long ys[2] = {k.y0, k.y0 + 1};
            const long xs[2] = {k.x0, k.x0 + 1};
            const double ws[2][2] = {{k.w00, k.w01}, {k.w10, k.w11}};
            for (int i = 0; i < 2; ++i)
                for (int j = 0; j < 2; ++j) {
                    if (!in_patch(ys[i], xs[j], g.P) || ws[i][j] == 0.0) continue;
                    for (std::size_t ch = 0; ch < g.C; ++ch)
                        grad_patch.at3(ch, static_cast<std::size_t>(ys[i]),
                                       static_cast<std::size_t>(xs[j])) +=
                            static_cast<float>(ws[i][j] * grad_canvas.at3(ch, r, c));
                }
        }
    }
    return grad_patch;
}

void save_patch(const Patch& patch, const std::string& path) {
    if (patch.pixels.rank() != 3)
        throw std::invalid_argument("save_patch: pixels must be [C,P,P]");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open for write: " + path);
    json header = {
        {"target_class", patch.target_class},
        {"patch_id", patch.patch_id},
        {"channels", patch.channels()},
        {"side", patch.side()},
        {"provenance",
         {{"seed", patch.provenance.seed},
          {"config_digest", patch.provenance.config_digest},
          {"initial_loss", patch.provenance.initial_loss},
          {"final_loss", patch.provenance.final_loss},
          {"epochs", patch.provenance.epochs}}},
    };
    std::string htext = header.dump();
    os.write("PFP1", 4);
    write_u32(os, static_cast<std::uint32_t>(htext.size()));
    os.write(htext.data(), static_cast<std::streamsize>(htext.size()));
    write_tensor(os, patch.pixels);
    if (!os) throw std::runtime_error("write failed: " + path);
}

Patch load_patch(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open: " + path);
    read_magic(is, "PFP1", "patch " + path);
    std::uint32_t hlen = read_u32(is, "patch header length");
    std::string htext(hlen, '\0');
    is.read(htext.data(), hlen);
    if (static_cast<std::uint32_t>(is.gcount()) != hlen)
        throw std::runtime_error("patch " + path + ": truncated header at byte offset 8");
    json header = json::parse(htext);
    Patch p;
    p.target_class = header.at("target_class");
    p.patch_id = header.at("patch_id");
    const json& prov = header.at("provenance");
    p.provenance.seed = prov.at("seed");
    p.provenance.config_digest = prov.at("config_digest");
    p.provenance.initial_loss = prov.at("initial_loss");
    p.provenance.final_loss = prov.at("final_loss");
    p.provenance.epochs = prov.at("epochs");
    p.pixels = read_tensor(is);
    if (p.pixels.rank() != 3 || p.pixels.shape[0] != header.at("channels").get<std::size_t>() ||
        p.pixels.shape[1] != header.at("side").get<std::size_t>())
        throw std::runtime_error("patch " + path + ": pixel tensor does not match header");
    return p;
}

}  // namespace pf
