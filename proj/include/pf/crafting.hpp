#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pf/datasets.hpp"
#include "pf/nn.hpp"
#include "pf/patchops.hpp"

namespace pf {

struct CraftConfig {
    double learning_rate = 1.0;
    std::size_t epochs = 300;
    std::size_t corpus_size = 9;
    std::size_t patch_side = 8;
    TransformDistribution dist;  // zero bounds = identity transforms; callers
                                 // usually start from default_distribution
    std::size_t batch_size = 0;  // 0 = full corpus
    bool clamp_each_update = true;
    std::uint64_t seed = 0;

    std::string digest() const;
};

struct CraftResult {
    Patch patch;
    std::vector<double> loss_history;  // per-epoch mean ensemble loss
    double final_ensemble_success = 0.0;
};

struct CorpusSample {
    Tensor image;  // [C,H,W]
    std::size_t label;
};

// J images without replacement, excluding target_class, one per distinct
// class while the class count permits.
std::vector<CorpusSample> build_corpus(const LabeledDataset& dataset, std::size_t target_class,
                                       std::size_t corpus_size, std::uint64_t seed);

// Ensemble expectation-over-transformation descent: patch ~ U(0,1); each
// epoch accumulates (1 / (M * |batch|)) * grad_patch of the target loss over
// every (sample, model) pair, one transform per sample shared across models,
// then steps the patch by -learning_rate and optionally clamps to [0,1].
CraftResult craft_patch(const std::vector<TrainedModel>& ensemble,
                        const std::vector<CorpusSample>& corpus, std::size_t target_class,
                        const CraftConfig& cfg);

// One craft_patch per target with its own corpus; sub-seed = seed ^ hash of
// the target class, so results do not depend on target order.
std::vector<CraftResult> craft_bundle(const std::vector<TrainedModel>& ensemble,
                                      const LabeledDataset& reservoir,
                                      const std::vector<std::size_t>& targets,
                                      const CraftConfig& cfg);

void write_loss_log(const CraftResult& result, const std::string& path);

}  // namespace pf
