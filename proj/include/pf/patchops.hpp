#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pf/tensor.hpp"

namespace pf {

struct PatchProvenance {
    std::uint64_t seed = 0;
    std::string config_digest;
    double initial_loss = 0.0;
    double final_loss = 0.0;
    std::size_t epochs = 0;
};

struct Patch {
    Tensor pixels;  // [C,P,P] in [0,1]
    std::size_t target_class = 0;
    std::string patch_id;
    PatchProvenance provenance;

    std::size_t side() const { return pixels.rank() == 3 ? pixels.shape[1] : 0; }
    std::size_t channels() const { return pixels.rank() == 3 ? pixels.shape[0] : 0; }
};

struct AffineTransform {
    double rotation = 0.0;     // radians
    double translate_x = 0.0;  // pixels
    double translate_y = 0.0;
};

struct TransformDistribution {
    double rot_bound = 0.0;
    double trans_bound = 0.0;
};

// rot_bound defaults to pi/8; trans_bound keeps the rotated patch's bounding
// box inside the canvas: floor((min(H,W) - ceil(P*sqrt(2))) / 2).
TransformDistribution default_distribution(std::size_t patch_side, std::size_t canvas_h,
                                           std::size_t canvas_w);

class Rng;
AffineTransform sample_transform(const TransformDistribution& dist, Rng& rng);

struct WarpedPatch {
    Tensor canvas_pixels;  // [C,H,W]
    Tensor mask;           // [H,W] in [0,1]
    AffineTransform transform;
};

// Inverse-mapping warp: the patch center lands on the canvas center, rotated
// about itself, then translated; canvas pixels bilinear-sample the patch with
// zero contribution (mask 0) outside the patch square. canvas_pixels holds
// the mask-normalized sample so apply() is the literal (1-mu)x + mu*delta
// blend and stays within [0,1].
WarpedPatch warp(const Patch& patch, const AffineTransform& t, std::size_t canvas_h,
                 std::size_t canvas_w);

Tensor apply(const Tensor& x, const WarpedPatch& w);

// Adjoint of the patch-to-canvas chain: scatters grad_canvas through the
// bilinear weights back to patch pixels. Exact for apply∘warp because the
// mask field does not depend on the patch values.
Tensor warp_backward(const Tensor& grad_canvas, const Patch& patch,
                     const AffineTransform& t, std::size_t canvas_h, std::size_t canvas_w);

// "PFP1" container: magic, u32 length-prefixed JSON header, then the pixel
// tensor as a PFT1 block.
void save_patch(const Patch& patch, const std::string& path);
Patch load_patch(const std::string& path);

}  // namespace pf
