#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "pf/nn.hpp"
#include "pf/patchops.hpp"
#include "pf/tensor.hpp"

namespace pf {

// Central finite differences of a scalar function over every element of `at`.
Tensor finite_diff(const std::function<double(const Tensor&)>& f, const Tensor& at,
                   double step = 1e-3);

// Worst per-element relative error; denominators are floored so zero-gradient
// elements compare by absolute error.
double max_rel_error(const Tensor& analytic, const Tensor& numeric, double floor = 0.05);

struct GradCheckResult {
    std::string name;
    double max_rel_err;
    bool pass;
};

struct GradCheckOptions {
    double tolerance = 1e-3;
    std::size_t instances = 20;
    std::uint64_t seed = 7;
    // Test-only fault injection: perturbs every analytic gradient so a broken
    // backward pass is provably caught.
    bool corrupt = false;
};

// Double-precision replay of the float32 pipeline: targeted cross-entropy of
// `model` on apply(image, warp(patch, t)). Differencing the float32 forward
// at step 1e-3 leaves rounding noise the size of the tolerance, so tests that
// finite-difference a loss should difference this reference instead.
double ref_patched_loss(const TrainedModel& model, const Tensor& image,
                        const Tensor& patch_pixels, const AffineTransform& t, std::size_t target);

// Finite-difference oracles for every layer kind (input and parameter
// gradients), warp_backward, and the end-to-end patch gradient of the
// targeted loss through apply∘warp.
std::vector<GradCheckResult> run_gradcheck(const GradCheckOptions& opts);

}  // namespace pf
