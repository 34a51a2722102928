#include "pf/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "pf/nn.hpp"
#include "pf/patchops.hpp"
#include "pf/rng.hpp"

namespace pf {

Tensor finite_diff(const std::function<double(const Tensor&)>& f, const Tensor& at,
                   double step) {
    Tensor grad(at.shape);
    Tensor probe = at;
    for (std::size_t i = 0; i < at.numel(); ++i) {
        float orig = probe[i];
        float hi = static_cast<float>(orig + step);
        float lo = static_cast<float>(orig - step);
        probe[i] = hi;
        double fp = f(probe);
        probe[i] = lo;
        double fm = f(probe);
        probe[i] = orig;
        // Divide by the realized float32 interval, not the nominal one, so
        // rounding of orig +/- step does not bias the quotient.
        grad[i] = static_cast<float>((fp - fm) / (double(hi) - double(lo)));
    }
    return grad;
}

double max_rel_error(const Tensor& analytic, const Tensor& numeric, double floor) {
    double worst = 0.0;
    for (std::size_t i = 0; i < analytic.numel(); ++i) {
        double a = analytic[i], n = numeric[i];
        double denom = std::max({std::fabs(a), std::fabs(n), floor});
        worst = std::max(worst, std::fabs(a - n) / denom);
    }
    return worst;
}

namespace {

// ---- double-precision reference evaluator --------------------------------
//
// The FD oracle must be more precise than the implementation under test:
// differencing the float32 forward pass at step 1e-3 leaves ~1e-3 relative
// rounding noise, the same size as the tolerance. This re-evaluates the
// identical arithmetic in double (parameters and inputs still rounded to
// float32, so both sides see the same operands).

struct DTensor {
    std::vector<std::size_t> shape;
    std::vector<double> data;
};

DTensor to_double(const Tensor& t) {
    DTensor d;
    d.shape = t.shape;
    d.data.assign(t.data.begin(), t.data.end());
    return d;
}

double ref_loss_d(const TrainedModel& m, DTensor x, std::size_t target) {
    std::size_t pi = 0;
    for (const LayerSpec& l : m.spec) {
        switch (l.kind) {
            case LayerKind::Flatten: {
                x.shape = {x.data.size()};
                break;
            }
            case LayerKind::Relu: {
                for (double& v : x.data) v = v > 0.0 ? v : 0.0;
                break;
            }
            case LayerKind::Dense: {
                const Tensor& W = m.params[pi];
                const Tensor& b = m.params[pi + 1];
                pi += 2;
                DTensor y;
                y.shape = {l.out};
                y.data.assign(l.out, 0.0);
                for (std::size_t o = 0; o < l.out; ++o) {
                    double acc = b[o];
                    for (std::size_t i = 0; i < l.in; ++i)
                        acc += double(W[o * l.in + i]) * x.data[i];
                    y.data[o] = acc;
                }
                x = std::move(y);
                break;
            }
            case LayerKind::Conv2d: {
                const Tensor& W = m.params[pi];
                const Tensor& b = m.params[pi + 1];
                pi += 2;
                std::size_t H = x.shape[1], Wd = x.shape[2], k = l.kernel, st = l.stride;
                std::size_t Ho = (H - k) / st + 1, Wo = (Wd - k) / st + 1;
                DTensor y;
                y.shape = {l.c_out, Ho, Wo};
                y.data.assign(l.c_out * Ho * Wo, 0.0);
                for (std::size_t co = 0; co < l.c_out; ++co)
                    for (std::size_t oy = 0; oy < Ho; ++oy)
                        for (std::size_t ox = 0; ox < Wo; ++ox) {
                            double acc = b[co];
                            for (std::size_t ci = 0; ci < l.c_in; ++ci)
                                for (std::size_t ky = 0; ky < k; ++ky)
                                    for (std::size_t kx = 0; kx < k; ++kx)
                                        acc += double(W[((co * l.c_in + ci) * k + ky) * k + kx]) *
                                               x.data[(ci * H + oy * st + ky) * Wd + ox * st + kx];
                            y.data[(co * Ho + oy) * Wo + ox] = acc;
                        }
                x = std::move(y);
                break;
            }
            case LayerKind::MaxPool2d: {
                std::size_t C = x.shape[0], H = x.shape[1], Wd = x.shape[2], win = l.window;
                std::size_t Ho = H / win, Wo = Wd / win;
                DTensor y;
                y.shape = {C, Ho, Wo};
                y.data.assign(C * Ho * Wo, 0.0);
                for (std::size_t c = 0; c < C; ++c)
                    for (std::size_t oy = 0; oy < Ho; ++oy)
                        for (std::size_t ox = 0; ox < Wo; ++ox) {
                            double best = -1e300;
                            for (std::size_t ky = 0; ky < win; ++ky)
                                for (std::size_t kx = 0; kx < win; ++kx)
                                    best = std::max(
                                        best, x.data[(c * H + oy * win + ky) * Wd + ox * win + kx]);
                            y.data[(c * Ho + oy) * Wo + ox] = best;
                        }
                x = std::move(y);
                break;
            }
        }
    }
    // -log softmax[target] with max subtraction.
    double mx = -1e300;
    for (double v : x.data) mx = std::max(mx, v);
    double denom = 0.0;
    for (double v : x.data) denom += std::exp(v - mx);
    return -(x.data[target] - mx) + std::log(denom);
}

double ref_loss(const TrainedModel& m, const Tensor& image, std::size_t target) {
    return ref_loss_d(m, to_double(image), target);
}

// Double-precision apply(x, warp(patch, t)), same geometry as patchops.
DTensor ref_apply_warp(const Tensor& x, const Tensor& patch_pixels, const AffineTransform& t,
                       std::size_t H, std::size_t W) {
    std::size_t C = patch_pixels.shape[0], P = patch_pixels.shape[1];
    DTensor out = to_double(x);
    double cy = (double(H) - 1.0) / 2.0 + t.translate_y;
    double cx = (double(W) - 1.0) / 2.0 + t.translate_x;
    double pc = (double(P) - 1.0) / 2.0;
    double cs = std::cos(-t.rotation), sn = std::sin(-t.rotation);
    for (std::size_t r = 0; r < H; ++r)
        for (std::size_t c = 0; c < W; ++c) {
            double dy = double(r) - cy, dx = double(c) - cx;
            double sx = cs * dx - sn * dy + pc;
            double sy = sn * dx + cs * dy + pc;
            double x0 = std::floor(sx), y0 = std::floor(sy);
            double fx = sx - x0, fy = sy - y0;
            double mask = 0.0;
            std::vector<double> num(C, 0.0);
            const double wts[4] = {(1 - fy) * (1 - fx), (1 - fy) * fx, fy * (1 - fx), fy * fx};
            const double oy[4] = {0, 0, 1, 1}, ox[4] = {0, 1, 0, 1};
            for (int k = 0; k < 4; ++k) {
                double py = y0 + oy[k], px = x0 + ox[k];
                if (py < 0 || px < 0 || py >= double(P) || px >= double(P)) continue;
                mask += wts[k];
                for (std::size_t ch = 0; ch < C; ++ch)
                    num[ch] += wts[k] *
                               double(patch_pixels[(ch * P + std::size_t(py)) * P + std::size_t(px)]);
            }
            if (mask <= 0.0) continue;
            for (std::size_t ch = 0; ch < C; ++ch) {
                double xv = double(x[(ch * H + r) * W + c]);
                double v = (1.0 - mask) * xv + num[ch];  // mask * (num/mask) == num
                out.data[(ch * H + r) * W + c] = std::min(1.0, std::max(0.0, v));
            }
        }
    return out;
}

Tensor random_tensor(std::vector<std::size_t> shape, Rng& rng, double lo, double hi) {
    Tensor t(std::move(shape));
    for (float& v : t.data) v = static_cast<float>(rng.uniform(lo, hi));
    return t;
}

TrainedModel random_model(const std::vector<LayerSpec>& spec,
                          const std::vector<std::size_t>& input_shape, std::uint64_t seed) {
    TrainedModel m = init_model(spec, input_shape, seed);
    Rng rng = Rng(seed).fork(0xB1A5);
    for (Tensor& p : m.params)
        for (float& v : p.data) v = static_cast<float>(rng.uniform(-0.5, 0.5));
    return m;
}

// FD steps must not cross relu zeros or flip maxpool winners; reject
// instances whose activations sit too close to those kinks.
bool well_conditioned(const TrainedModel& m, const Tensor& image, double margin) {
    auto acts = forward_activations(m, image);
    for (std::size_t li = 0; li < m.spec.size(); ++li) {
        const LayerSpec& l = m.spec[li];
        const Tensor& x = acts[li];
        if (l.kind == LayerKind::Relu) {
            for (float v : x.data)
                if (std::fabs(v) < margin) return false;
        } else if (l.kind == LayerKind::MaxPool2d) {
            std::size_t c = x.shape[0], h = x.shape[1], w = x.shape[2], win = l.window;
            for (std::size_t ch = 0; ch < c; ++ch)
                for (std::size_t oy = 0; oy < h / win; ++oy)
                    for (std::size_t ox = 0; ox < w / win; ++ox) {
                        float best = -1e30f, second = -1e30f;
                        for (std::size_t ky = 0; ky < win; ++ky)
                            for (std::size_t kx = 0; kx < win; ++kx) {
                                float v = x.at3(ch, oy * win + ky, ox * win + kx);
                                if (v > best) {
                                    second = best;
                                    best = v;
                                } else if (v > second) {
                                    second = v;
                                }
                            }
                        if (best - second < margin) return false;
                    }
        }
    }
    return true;
}

struct Harness {
    const GradCheckOptions& opts;
    std::vector<GradCheckResult>& out;

    void record(const std::string& name, double err) {
        out.push_back({name, err, err <= opts.tolerance});
    }

    double graded(const Tensor& analytic_in, const Tensor& numeric) const {
        Tensor analytic = analytic_in;
        if (opts.corrupt)
            for (float& v : analytic.data) v += 0.05f;
        return max_rel_error(analytic, numeric);
    }

    // Input and parameter gradients of one model against FD, worst element.
    void check_model(const std::string& name, const std::vector<LayerSpec>& spec,
                     const std::vector<std::size_t>& input_shape, bool margin_guard) {
        double worst_in = 0.0, worst_par = 0.0;
        bool has_params = false;
        std::uint64_t inst_seed = opts.seed;
        for (std::size_t inst = 0; inst < opts.instances; ++inst) {
            TrainedModel model;
            Tensor image;
            std::size_t target;
            for (;;) {
                Rng rng(hash64(inst_seed) ^ (0xABCD + inst_seed));
                ++inst_seed;
                model = random_model(spec, input_shape, rng.next_u64());
                image = random_tensor(input_shape, rng, 0.1, 0.9);
                auto acts = forward_activations(model, image);
                target = rng.next_below(acts.back().numel());
                if (!margin_guard || well_conditioned(model, image, 0.02)) break;
            }
            SampleGrads g = backprop_sample(model, image, target);

            auto loss_at_input = [&](const Tensor& x) { return ref_loss(model, x, target); };
            worst_in = std::max(worst_in, graded(g.input_grad, finite_diff(loss_at_input, image)));

            for (std::size_t p = 0; p < model.params.size(); ++p) {
                has_params = true;
                auto loss_at_param = [&](const Tensor& pv) {
                    TrainedModel probe = model;
                    probe.params[p] = pv;
                    return ref_loss(probe, image, target);
                };
                worst_par = std::max(
                    worst_par, graded(g.param_grads[p], finite_diff(loss_at_param, model.params[p])));
            }
        }
        record(name + " input-grad", worst_in);
        if (has_params) record(name + " param-grad", worst_par);
    }

    void check_warp_backward() {
        double worst = 0.0;
        for (std::size_t inst = 0; inst < opts.instances; ++inst) {
            Rng rng(hash64(opts.seed + 31 * inst) ^ 0x77AA);
            std::size_t P = 4, H = 8, W = 8, C = 1;
            Patch patch;
            patch.pixels = random_tensor({C, P, P}, rng, 0.2, 0.8);
            AffineTransform t;
            t.rotation = rng.uniform(-0.4, 0.4);
            t.translate_x = rng.uniform(-2.0, 2.0);
            t.translate_y = rng.uniform(-2.0, 2.0);
            Tensor x = random_tensor({C, H, W}, rng, 0.2, 0.8);
            Tensor g = random_tensor({C, H, W}, rng, -1.0, 1.0);

            auto f = [&](const Tensor& px) {
                DTensor out = ref_apply_warp(x, px, t, H, W);
                double acc = 0.0;
                for (std::size_t i = 0; i < out.data.size(); ++i)
                    acc += double(g[i]) * out.data[i];
                return acc;
            };
            Tensor analytic = warp_backward(g, patch, t, H, W);
            worst = std::max(worst, graded(analytic, finite_diff(f, patch.pixels)));
        }
        record("warp_backward", worst);
    }

    // Algorithm-level gradient: d/d(patch) of the targeted loss through
    // apply∘warp and a small convnet. The kink margin only has to exceed the
    // activation shift a 1e-3 patch step can cause (~2e-3 with these weight
    // ranges), so 0.01 keeps the rejection loop short.
    void check_end_to_end() {
        std::vector<LayerSpec> spec = {LayerSpec::conv2d(1, 2, 3), LayerSpec::relu(),
                                       LayerSpec::maxpool2d(2), LayerSpec::flatten(),
                                       LayerSpec::dense(2 * 4 * 4, 4)};
        std::vector<std::size_t> input_shape{1, 10, 10};
        std::size_t P = 4, H = 10, W = 10;
        double worst = 0.0;
        std::uint64_t inst_seed = opts.seed;
        for (std::size_t inst = 0; inst < opts.instances; ++inst) {
            TrainedModel model;
            Patch patch;
            AffineTransform t;
            Tensor x;
            std::size_t target;
            for (;;) {
                Rng rng(hash64(inst_seed) ^ 0x3E2E);
                ++inst_seed;
                model = random_model(spec, input_shape, rng.next_u64());
                patch.pixels = random_tensor({1, P, P}, rng, 0.2, 0.8);
                t.rotation = rng.uniform(-0.39, 0.39);
                t.translate_x = rng.uniform(-1.5, 1.5);
                t.translate_y = rng.uniform(-1.5, 1.5);
                x = random_tensor({1, H, W}, rng, 0.2, 0.8);
                target = rng.next_below(4);
                Tensor adv = apply(x, warp(patch, t, H, W));
                if (well_conditioned(model, adv, 0.01)) break;
            }
            auto f = [&](const Tensor& px) {
                return ref_loss_d(model, ref_apply_warp(x, px, t, H, W), target);
            };
            Tensor adv = apply(x, warp(patch, t, H, W));
            SampleGrads g = backprop_sample(model, adv, target);
            Tensor analytic = warp_backward(g.input_grad, patch, t, H, W);
            worst = std::max(worst, graded(analytic, finite_diff(f, patch.pixels)));
        }
        record("end-to-end patch gradient", worst);
    }
};

}  // namespace

double ref_patched_loss(const TrainedModel& model, const Tensor& image,
                        const Tensor& patch_pixels, const AffineTransform& t,
                        std::size_t target) {
    std::size_t H = image.shape[1], W = image.shape[2];
    return ref_loss_d(model, ref_apply_warp(image, patch_pixels, t, H, W), target);
}

std::vector<GradCheckResult> run_gradcheck(const GradCheckOptions& opts) {
    std::vector<GradCheckResult> out;
    Harness h{opts, out};
    h.check_model("dense", {LayerSpec::flatten(), LayerSpec::dense(18, 4)}, {2, 3, 3}, false);
    h.check_model("conv2d", {LayerSpec::conv2d(2, 3, 3), LayerSpec::flatten()}, {2, 5, 5},
                  false);
    h.check_model("relu",
                  {LayerSpec::flatten(), LayerSpec::dense(12, 8), LayerSpec::relu(),
                   LayerSpec::dense(8, 4)},
                  {1, 3, 4}, true);
    h.check_model("flatten", {LayerSpec::flatten(), LayerSpec::dense(16, 3)}, {1, 4, 4}, false);
    h.check_model("maxpool2d",
                  {LayerSpec::conv2d(1, 2, 3), LayerSpec::maxpool2d(2), LayerSpec::flatten()},
                  {1, 7, 7}, true);
    h.check_warp_backward();
    h.check_end_to_end();
    return out;
}

}  // namespace pf
