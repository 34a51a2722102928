#include "pf/crafting.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "pf/parallel.hpp"
#include "pf/rng.hpp"

namespace pf {

namespace {

void shuffle_in_place(std::vector<std::size_t>& v, Rng& rng) {
    for (std::size_t i = v.size(); i-- > 1;) {
        std::size_t j = static_cast<std::size_t>(rng.next_below(i + 1));
        std::swap(v[i], v[j]);
    }
}

std::uint64_t fnv_mix(std::uint64_t h, std::uint64_t x) {
    for (int i = 0; i < 8; ++i) {
        h ^= (x >> (8 * i)) & 0xFF;
        h *= 0x100000001B3ULL;
    }
    return h;
}

}  // namespace

std::string CraftConfig::digest() const {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    auto mixd = [&](double d) {
        std::uint64_t bits;
        static_assert(sizeof(bits) == sizeof(d));
        std::memcpy(&bits, &d, 8);
        h = fnv_mix(h, bits);
    };
    mixd(learning_rate);
    h = fnv_mix(h, epochs);
    h = fnv_mix(h, corpus_size);
    h = fnv_mix(h, patch_side);
    mixd(dist.rot_bound);
    mixd(dist.trans_bound);
    h = fnv_mix(h, batch_size);
    h = fnv_mix(h, clamp_each_update ? 1 : 0);
    h = fnv_mix(h, seed);
    std::ostringstream os;
    os << std::hex << h;
    return os.str();
}

std::vector<CorpusSample> build_corpus(const LabeledDataset& dataset, std::size_t target_class,
                                       std::size_t corpus_size, std::uint64_t seed) {
    if (corpus_size == 0) throw std::invalid_argument("build_corpus: corpus size must be >= 1");
    dataset.validate();

    std::vector<std::vector<std::size_t>> by_class(dataset.class_count);
    std::size_t eligible = 0;
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        if (dataset.labels[i] == target_class) continue;
        by_class[dataset.labels[i]].push_back(i);
        ++eligible;
    }
    if (eligible < corpus_size)
        throw std::invalid_argument("build_corpus: only " + std::to_string(eligible) +
                                    " eligible images outside class " +
                                    std::to_string(target_class) + ", need " +
                                    std::to_string(corpus_size));

    Rng rng(seed);
    std::vector<std::size_t> classes;
    for (std::size_t c = 0; c < dataset.class_count; ++c)
        if (!by_class[c].empty()) classes.push_back(c);
    shuffle_in_place(classes, rng);

    // One image per distinct class first; spill over only when J exceeds the
    // number of eligible classes.
    std::vector<std::size_t> chosen;
    for (std::size_t c : classes) {
        if (chosen.size() == corpus_size) break;
        auto& pool = by_class[c];
        std::size_t pick = static_cast<std::size_t>(rng.next_below(pool.size()));
        chosen.push_back(pool[pick]);
        pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(pick));
    }
    if (chosen.size() < corpus_size) {
        std::vector<std::size_t> rest;
        for (std::size_t c : classes)
            for (std::size_t i : by_class[c]) rest.push_back(i);
        shuffle_in_place(rest, rng);
        for (std::size_t i : rest) {
            if (chosen.size() == corpus_size) break;
            chosen.push_back(i);
        }
    }

    std::vector<CorpusSample> corpus;
    corpus.reserve(chosen.size());
    for (std::size_t i : chosen) corpus.push_back({dataset.image(i), dataset.labels[i]});
    return corpus;
}

namespace {

// Fraction of (model, sample, rep) evaluations where the target class wins
// top-1 on the patched image.
double ensemble_success(const std::vector<TrainedModel>& ensemble,
                        const std::vector<CorpusSample>& corpus, const Patch& patch,
                        const TransformDistribution& dist, std::size_t reps, Rng rng) {
    std::size_t h = corpus[0].image.shape[1], w = corpus[0].image.shape[2];
    std::size_t hits = 0, total = 0;
    for (std::size_t rep = 0; rep < reps; ++rep) {
        for (const CorpusSample& s : corpus) {
            AffineTransform t = sample_transform(dist, rng);
            Tensor adv = apply(s.image, warp(patch, t, h, w));
            Tensor batch({1, adv.shape[0], adv.shape[1], adv.shape[2]}, adv.data);
            for (const TrainedModel& m : ensemble) {
                Tensor logits = forward(m, batch);
                Tensor row({logits.shape[1]},
                           std::vector<float>(logits.data.begin(), logits.data.end()));
                if (top_k_hit(row, patch.target_class, 1)) ++hits;
                ++total;
            }
        }
    }
    return total ? static_cast<double>(hits) / total : 0.0;
}

}  // namespace

CraftResult craft_patch(const std::vector<TrainedModel>& ensemble,
                        const std::vector<CorpusSample>& corpus, std::size_t target_class,
                        const CraftConfig& cfg) {
    if (ensemble.empty()) throw std::invalid_argument("craft_patch: empty ensemble");
    if (corpus.empty()) throw std::invalid_argument("craft_patch: empty corpus");
    if (cfg.learning_rate <= 0.0) throw std::invalid_argument("craft_patch: learning_rate must be positive");
    if (cfg.epochs == 0) throw std::invalid_argument("craft_patch: epochs must be >= 1");
    for (const CorpusSample& s : corpus)
        if (s.label == target_class)
            throw std::invalid_argument("craft_patch: corpus contains a target-class image");

    const Tensor& first = corpus[0].image;
    if (first.rank() != 3) throw std::invalid_argument("craft_patch: corpus images must be [C,H,W]");
    std::size_t C = first.shape[0], H = first.shape[1], W = first.shape[2];
    for (const CorpusSample& s : corpus)
        require_shape(s.image, {C, H, W}, "craft_patch corpus image");

    std::size_t J = corpus.size();
    std::size_t M = ensemble.size();
    std::size_t batch = cfg.batch_size == 0 ? J : cfg.batch_size;
    if (batch > J) throw std::invalid_argument("craft_patch: batch_size exceeds corpus size");

    Rng base(cfg.seed);
    Rng init_rng = base.fork(1);
    Rng transform_rng = base.fork(2);

    Patch patch;
    patch.target_class = target_class;
    patch.patch_id = "patch-t" + std::to_string(target_class);
    patch.provenance.seed = cfg.seed;
    patch.provenance.config_digest = cfg.digest();
    patch.provenance.epochs = cfg.epochs;
    patch.pixels = Tensor({C, cfg.patch_side, cfg.patch_side});
    for (float& v : patch.pixels.data) v = static_cast<float>(init_rng.next_unit());

    CraftResult result;
    result.loss_history.reserve(cfg.epochs);

    std::size_t psz = patch.pixels.numel();
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < J; start += batch) {
            std::size_t bs = std::min(batch, J - start);
            // One transform per sample, drawn sequentially so the stream does
            // not depend on the parallel schedule.
            std::vector<AffineTransform> transforms(bs);
            for (std::size_t b = 0; b < bs; ++b)
                transforms[b] = sample_transform(cfg.dist, transform_rng);

            std::vector<Tensor> grads(bs);
            std::vector<double> losses(bs);
            parallel_for(bs, [&](std::size_t b) {
                const CorpusSample& s = corpus[start + b];
                WarpedPatch wp = warp(patch, transforms[b], H, W);
                Tensor adv = apply(s.image, wp);
                Tensor grad_canvas({C, H, W});
                double loss = 0.0;
                for (const TrainedModel& m : ensemble) {
                    SampleGrads sg = backprop_sample(m, adv, target_class);
                    loss += sg.loss;
                    for (std::size_t e = 0; e < grad_canvas.numel(); ++e)
                        grad_canvas[e] += sg.input_grad[e];
                }
                grads[b] = warp_backward(grad_canvas, patch, transforms[b], H, W);
                losses[b] = loss;
            });

            // Ordered reduction keyed on sample index.
            Tensor g({C, cfg.patch_side, cfg.patch_side});
            double norm = 1.0 / (static_cast<double>(M) * static_cast<double>(bs));
            for (std::size_t b = 0; b < bs; ++b) {
                epoch_loss += losses[b];
                for (std::size_t e = 0; e < psz; ++e)
                    g[e] += static_cast<float>(norm * grads[b][e]);
            }

            for (std::size_t e = 0; e < psz; ++e) {
                float v = patch.pixels[e] - static_cast<float>(cfg.learning_rate) * g[e];
                if (cfg.clamp_each_update) v = std::min(1.0f, std::max(0.0f, v));
                patch.pixels[e] = v;
            }
        }
        epoch_loss /= static_cast<double>(M * J);
        if (!std::isfinite(epoch_loss))
            throw std::runtime_error("craft_patch: loss became NaN/Inf at epoch " +
                                     std::to_string(epoch));
        if (epoch == 0) patch.provenance.initial_loss = epoch_loss;
        result.loss_history.push_back(epoch_loss);
    }
    patch.provenance.final_loss = result.loss_history.back();

    result.final_ensemble_success =
        ensemble_success(ensemble, corpus, patch, cfg.dist, 20, base.fork(3));
    result.patch = std::move(patch);
    return result;
}

std::vector<CraftResult> craft_bundle(const std::vector<TrainedModel>& ensemble,
                                      const LabeledDataset& reservoir,
                                      const std::vector<std::size_t>& targets,
                                      const CraftConfig& cfg) {
    for (std::size_t i = 0; i < targets.size(); ++i)
        for (std::size_t j = i + 1; j < targets.size(); ++j)
            if (targets[i] == targets[j])
                throw std::invalid_argument("craft_bundle: duplicate target " +
                                            std::to_string(targets[i]));
    std::vector<CraftResult> results;
    results.reserve(targets.size());
    for (std::size_t target : targets) {
        CraftConfig sub = cfg;
        sub.seed = cfg.seed ^ hash64(target);
        auto corpus = build_corpus(reservoir, target, cfg.corpus_size, sub.seed);
        results.push_back(craft_patch(ensemble, corpus, target, sub));
    }
    return results;
}

void write_loss_log(const CraftResult& result, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open for write: " + path);
    os << "epoch,mean_loss\n";
    for (std::size_t i = 0; i < result.loss_history.size(); ++i)
        os << i << ',' << result.loss_history[i] << '\n';
    if (!os) throw std::runtime_error("write failed: " + path);
}

}  // namespace pf
