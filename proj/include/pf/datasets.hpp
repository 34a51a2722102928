#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pf/patchops.hpp"
#include "pf/tensor.hpp"

namespace pf {

struct LabeledDataset {
    Tensor images;  // [N,C,H,W] in [0,1]
    std::vector<std::size_t> labels;
    std::size_t class_count = 0;
    std::string source_digest;

    std::size_t size() const { return labels.size(); }
    Tensor image(std::size_t i) const;  // [C,H,W] view copy
    void validate() const;
};

// Procedurally rendered geometric classes (bars, cross, disk, ring, corners,
// diagonals, frame, checker) plus clamped Gaussian pixel noise. With
// noise_std = 0 every image of a class equals its template.
LabeledDataset gen_shapes_dataset(std::size_t class_count, std::size_t per_class,
                                  std::size_t channels, std::size_t height,
                                  std::size_t width, double noise_std, std::uint64_t seed);

// Copy of `dataset` where a seeded fraction of images get a uniform-noise
// square blended in at a random transform, labels unchanged. Training on this
// teaches models to tolerate benign occlusions, so any accuracy drop measured
// later under an *optimized* patch reflects the attack rather than mere
// clutter sensitivity.
LabeledDataset add_distractor_occlusions(const LabeledDataset& dataset, double fraction,
                                         std::size_t patch_side,
                                         const TransformDistribution& dist,
                                         std::uint64_t seed);

// Canonical MNIST IDX byte layout; pixels rescaled to [0,1] by /255.
LabeledDataset load_idx(const std::string& images_path, const std::string& labels_path);

struct SplitResult {
    LabeledDataset testset;
    LabeledDataset reservoir;
};

SplitResult select_splits(const LabeledDataset& dataset, std::size_t test_n,
                          std::uint64_t seed);

struct ManifestEntry {
    std::size_t source_index;
    std::string patch_id;
    AffineTransform transform;
    std::size_t output_offset;  // image index within the patch's chunk file
    std::size_t true_label;
    std::size_t target_label;
};

struct Manifest {
    int format_version = 1;
    std::size_t testset_size = 0;
    std::size_t bundle_size = 0;
    std::vector<ManifestEntry> entries;
    std::vector<std::string> chunk_files;  // one PFT1 file per patch
};

// For every (patch, test image) pair draws one transform, writes the patched
// image into the patch's chunk tensor [N,C,H,W], and records the transform so
// each stored image is reproducible from (source, patch, transform).
Manifest emit_patched_dataset(const LabeledDataset& testset, const std::vector<Patch>& bundle,
                              const TransformDistribution& dist, std::uint64_t seed,
                              const std::string& out_dir);

void save_manifest(const Manifest& m, const std::string& path);
Manifest load_manifest(const std::string& path);

}  // namespace pf
