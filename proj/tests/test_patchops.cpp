#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "pf/gradcheck.hpp"
#include "pf/patchops.hpp"
#include "pf/rng.hpp"

using namespace pf;

namespace {

Patch make_patch(std::size_t C, std::size_t P, std::uint64_t seed, double lo = 0.1,
                 double hi = 0.9) {
    Patch p;
    p.patch_id = "test";
    p.pixels = Tensor({C, P, P});
    Rng rng(seed);
    for (float& v : p.pixels.data) v = static_cast<float>(rng.uniform(lo, hi));
    return p;
}

}  // namespace

TEST_CASE("sample_transform: zero bounds always give the identity") {
    TransformDistribution dist{0.0, 0.0};
    Rng rng(1);
    for (int i = 0; i < 10; ++i) {
        AffineTransform t = sample_transform(dist, rng);
        CHECK(t.rotation == 0.0);
        CHECK(t.translate_x == 0.0);
        CHECK(t.translate_y == 0.0);
    }
}

TEST_CASE("sample_transform: mean |rotation| is rot_bound/2") {
    TransformDistribution dist{3.14159265358979 / 8.0, 5.0};
    Rng rng(2);
    double acc = 0.0;
    const int n = 10000;
    for (int i = 0; i < n; ++i) acc += std::fabs(sample_transform(dist, rng).rotation);
    double mean = acc / n;
    double expect = dist.rot_bound / 2.0;  // mean of |U(-b,b)|
    CHECK(mean == doctest::Approx(expect).epsilon(0.05));
}

TEST_CASE("sample_transform: same stream state gives the same draw") {
    TransformDistribution dist{0.3, 4.0};
    Rng a(99), b(99);
    AffineTransform ta = sample_transform(dist, a);
    AffineTransform tb = sample_transform(dist, b);
    CHECK(ta.rotation == tb.rotation);
    CHECK(ta.translate_x == tb.translate_x);
    CHECK(ta.translate_y == tb.translate_y);
}

TEST_CASE("default_distribution keeps the rotated footprint inside the canvas") {
    TransformDistribution d = default_distribution(8, 28, 28);
    CHECK(d.rot_bound == doctest::Approx(3.14159265358979 / 8.0));
    // floor((28 - ceil(8*sqrt(2)))/2) = floor((28-12)/2) = 8
    CHECK(d.trans_bound == doctest::Approx(8.0));
    double half_diag = 8.0 * std::sqrt(2.0) / 2.0;
    CHECK(14.0 - d.trans_bound - half_diag >= -1e-9);
}

TEST_CASE("warp: identity transform with P=H=W is the identity") {
    Patch p = make_patch(2, 6, 3);
    WarpedPatch w = warp(p, {}, 6, 6);
    for (std::size_t i = 0; i < p.pixels.numel(); ++i)
        CHECK(w.canvas_pixels[i] == doctest::Approx(p.pixels[i]).epsilon(1e-6));
    for (float m : w.mask.data) CHECK(m == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("warp: identity with P<H gives an exact centered block mask") {
    Patch p = make_patch(1, 4, 4);
    WarpedPatch w = warp(p, {}, 10, 10);
    for (std::size_t r = 0; r < 10; ++r)
        for (std::size_t c = 0; c < 10; ++c) {
            bool inside = r >= 3 && r < 7 && c >= 3 && c < 7;
            CHECK(w.mask.at2(r, c) == (inside ? 1.0f : 0.0f));
            if (inside)
                CHECK(w.canvas_pixels.at3(0, r, c) == p.pixels.at3(0, r - 3, c - 3));
            else
                CHECK(w.canvas_pixels.at3(0, r, c) == 0.0f);
        }
}

TEST_CASE("warp: quarter turn permutes an asymmetric 2x2 patch") {
    Patch p;
    p.pixels = Tensor({1, 2, 2}, {1.0f, 2.0f, 3.0f, 4.0f});
    AffineTransform t;
    t.rotation = 3.14159265358979323846 / 2.0;
    WarpedPatch w = warp(p, t, 2, 2);
    // Inverse map at theta = pi/2 sends canvas (r,c) to patch (1-c, r), so
    // canvas = [[3, 1], [4, 2]] — a quarter-turn permutation, hand-derived.
    CHECK(w.canvas_pixels.at3(0, 0, 0) == doctest::Approx(3.0).epsilon(1e-5));
    CHECK(w.canvas_pixels.at3(0, 0, 1) == doctest::Approx(1.0).epsilon(1e-5));
    CHECK(w.canvas_pixels.at3(0, 1, 0) == doctest::Approx(4.0).epsilon(1e-5));
    CHECK(w.canvas_pixels.at3(0, 1, 1) == doctest::Approx(2.0).epsilon(1e-5));
}

TEST_CASE("warp: patch too large for canvas rejected") {
    Patch p = make_patch(1, 8, 1);
    CHECK_THROWS_AS(warp(p, {}, 6, 6), std::invalid_argument);
}

TEST_CASE("apply: mask extremes and blend arithmetic") {
    Rng rng(7);
    Tensor x({1, 3, 3});
    for (float& v : x.data) v = static_cast<float>(rng.uniform(0.0, 1.0));

    WarpedPatch w;
    w.canvas_pixels = Tensor({1, 3, 3}, std::vector<float>(9, 0.4f));
    w.mask = Tensor({3, 3});

    Tensor out = apply(x, w);  // mask all zeros
    CHECK(out.data == x.data);

    for (float& m : w.mask.data) m = 1.0f;
    out = apply(x, w);  // mask all ones
    CHECK(out.data == w.canvas_pixels.data);

    w.mask.at2(1, 1) = 0.25f;
    x.at3(0, 1, 1) = 0.8f;
    out = apply(x, w);
    CHECK(out.at3(0, 1, 1) == doctest::Approx(0.75 * 0.8 + 0.25 * 0.4).epsilon(1e-6));
}

TEST_CASE("apply: shape mismatch rejected") {
    WarpedPatch w;
    w.canvas_pixels = Tensor({1, 3, 3});
    w.mask = Tensor({3, 3});
    CHECK_THROWS_AS(apply(Tensor({1, 4, 4}), w), std::invalid_argument);
}

TEST_CASE("apply: output stays in [0,1] and differs only under the mask") {
    Patch p = make_patch(1, 4, 11, 0.0, 1.0);
    Rng rng(12);
    for (int trial = 0; trial < 20; ++trial) {
        AffineTransform t;
        t.rotation = rng.uniform(-0.4, 0.4);
        t.translate_x = rng.uniform(-2.0, 2.0);
        t.translate_y = rng.uniform(-2.0, 2.0);
        WarpedPatch w = warp(p, t, 10, 10);
        Tensor x({1, 10, 10});
        for (float& v : x.data) v = static_cast<float>(rng.next_unit());
        Tensor out = apply(x, w);
        for (std::size_t r = 0; r < 10; ++r)
            for (std::size_t c = 0; c < 10; ++c) {
                float v = out.at3(0, r, c);
                CHECK(v >= 0.0f);
                CHECK(v <= 1.0f);
                if (w.mask.at2(r, c) == 0.0f) CHECK(v == x.at3(0, r, c));
            }
    }
}

TEST_CASE("warp mask footprint stays within the rotated bounding box + bilinear support") {
    Patch p = make_patch(1, 4, 21);
    Rng rng(22);
    for (int trial = 0; trial < 20; ++trial) {
        AffineTransform t;
        t.rotation = rng.uniform(-0.4, 0.4);
        t.translate_x = rng.uniform(-2.0, 2.0);
        t.translate_y = rng.uniform(-2.0, 2.0);
        std::size_t H = 12, W = 12;
        WarpedPatch w = warp(p, t, H, W);
        // Forward-map the patch corners to get the footprint box.
        double cy = (H - 1) / 2.0 + t.translate_y, cx = (W - 1) / 2.0 + t.translate_x;
        double pc = (4 - 1) / 2.0;
        double lo_y = 1e9, hi_y = -1e9, lo_x = 1e9, hi_x = -1e9;
        for (double py : {0.0, 3.0})
            for (double px : {0.0, 3.0}) {
                double dx = px - pc, dy = py - pc;
                double fx = std::cos(t.rotation) * dx - std::sin(t.rotation) * dy + cx;
                double fy = std::sin(t.rotation) * dx + std::cos(t.rotation) * dy + cy;
                lo_y = std::min(lo_y, fy); hi_y = std::max(hi_y, fy);
                lo_x = std::min(lo_x, fx); hi_x = std::max(hi_x, fx);
            }
        for (std::size_t r = 0; r < H; ++r)
            for (std::size_t c = 0; c < W; ++c)
                if (w.mask.at2(r, c) > 0.0f) {
                    // Bilinear support dilates the patch square by one pixel
                    // along the patch axes; rotated, that widens the bbox by
                    // |cos| + |sin| <= sqrt(2).
                    const double slack = std::sqrt(2.0);
                    CHECK(r >= lo_y - slack);
                    CHECK(r <= hi_y + slack);
                    CHECK(c >= lo_x - slack);
                    CHECK(c <= hi_x + slack);
                }
    }
}

TEST_CASE("warp_backward: identity transform transposes to a centered crop") {
    Patch p = make_patch(1, 4, 31);
    Rng rng(32);
    Tensor g({1, 10, 10});
    for (float& v : g.data) v = static_cast<float>(rng.uniform(-1.0, 1.0));
    Tensor gp = warp_backward(g, p, {}, 10, 10);
    for (std::size_t r = 0; r < 4; ++r)
        for (std::size_t c = 0; c < 4; ++c)
            CHECK(gp.at3(0, r, c) == doctest::Approx(g.at3(0, r + 3, c + 3)).epsilon(1e-6));
}

TEST_CASE("warp_backward: zero canvas gradient gives zero patch gradient") {
    Patch p = make_patch(1, 4, 41);
    Tensor g({1, 10, 10});
    AffineTransform t{0.3, 1.5, -2.25};
    Tensor gp = warp_backward(g, p, t, 10, 10);
    for (float v : gp.data) CHECK(v == 0.0f);
}

TEST_CASE("warp_backward: finite differences of apply∘warp, rotated + shifted") {
    Patch p = make_patch(1, 4, 51, 0.2, 0.8);
    AffineTransform t{0.3, 1.5, -2.25};
    Rng rng(52);
    Tensor x({1, 8, 8});
    for (float& v : x.data) v = static_cast<float>(rng.uniform(0.2, 0.8));
    Tensor g({1, 8, 8});
    for (float& v : g.data) v = static_cast<float>(rng.uniform(-1.0, 1.0));

    auto f = [&](const Tensor& px) {
        Patch probe = p;
        probe.pixels = px;
        Tensor out = apply(x, warp(probe, t, 8, 8));
        double acc = 0.0;
        for (std::size_t i = 0; i < out.numel(); ++i) acc += double(g[i]) * out[i];
        return acc;
    };
    Tensor analytic = warp_backward(g, p, t, 8, 8);
    Tensor fd = finite_diff(f, p.pixels);
    CHECK(max_rel_error(analytic, fd) <= 1e-3);
}

TEST_CASE("warp/warp_backward adjointness with the mask field held fixed") {
    Rng rng(61);
    for (int trial = 0; trial < 10; ++trial) {
        Patch p = make_patch(1, 4, 100 + trial, 0.0, 1.0);
        AffineTransform t;
        t.rotation = rng.uniform(-0.4, 0.4);
        t.translate_x = rng.uniform(-2.0, 2.0);
        t.translate_y = rng.uniform(-2.0, 2.0);
        std::size_t H = 9, W = 9;
        WarpedPatch w = warp(p, t, H, W);
        Tensor g({1, H, W});
        for (float& v : g.data) v = static_cast<float>(rng.uniform(-1.0, 1.0));

        // <g, mu ⊙ warp(p)> vs <warp_backward(g), p>
        double lhs = 0.0;
        for (std::size_t r = 0; r < H; ++r)
            for (std::size_t c = 0; c < W; ++c)
                lhs += double(g.at3(0, r, c)) * double(w.mask.at2(r, c)) *
                       double(w.canvas_pixels.at3(0, r, c));
        Tensor gp = warp_backward(g, p, t, H, W);
        double rhs = 0.0;
        for (std::size_t i = 0; i < gp.numel(); ++i) rhs += double(gp[i]) * double(p.pixels[i]);
        CHECK(lhs == doctest::Approx(rhs).epsilon(1e-4));
    }
}

TEST_CASE("warp_backward: geometry mismatch with forward rejected") {
    Patch p = make_patch(1, 4, 71);
    Tensor g({1, 8, 8});
    CHECK_THROWS_AS(warp_backward(g, p, {}, 10, 10), std::invalid_argument);
}

TEST_CASE("patch file round-trip preserves pixels and provenance") {
    Patch p = make_patch(2, 5, 81);
    p.target_class = 7;
    p.patch_id = "patch-t7";
    p.provenance.seed = 123;
    p.provenance.config_digest = "abc123";
    p.provenance.final_loss = 0.25;
    p.provenance.epochs = 42;
    auto path = (std::filesystem::temp_directory_path() / "pf_patch_rt.pfp").string();
    save_patch(p, path);
    Patch r = load_patch(path);
    CHECK(r.target_class == 7);
    CHECK(r.patch_id == "patch-t7");
    CHECK(r.provenance.seed == 123);
    CHECK(r.provenance.config_digest == "abc123");
    CHECK(r.provenance.epochs == 42);
    CHECK(r.pixels.data == p.pixels.data);
    std::filesystem::remove(path);
}
