#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pf/datasets.hpp"
#include "pf/nn.hpp"
#include "pf/patchops.hpp"

namespace pf {

struct EvalRow {
    std::string model_id;
    std::string group;
    std::string patch_id;  // "clean", "random", "bundle-mean", or a patch id
    char metric;           // 'C', 'R', 'S'
    std::size_t k;
    double value;
    std::size_t n_samples;
    std::uint64_t seed;
};

struct EvalReport {
    std::vector<EvalRow> rows;
    std::size_t class_count = 0;
    std::vector<std::size_t> k_list;
    std::string dataset_digest;
};

struct CorrelationResult {
    double rho;
    double p_value;
    std::size_t n;
    double slope;
    double intercept;
};

double clean_accuracy(const TrainedModel& model, const LabeledDataset& testset, std::size_t k);

// One transform per test image from a counter-based substream of `seed`;
// equal seeds give robust_accuracy and success_rate the identical perturbed
// images. Scored against the true label.
double robust_accuracy(const TrainedModel& model, const LabeledDataset& testset,
                       const Patch& patch, const TransformDistribution& dist, std::size_t k,
                       std::uint64_t seed);

// As robust_accuracy but scored against patch.target_class. With
// exclude_target_class, test images labeled with the target are skipped.
double success_rate(const TrainedModel& model, const LabeledDataset& testset,
                    const Patch& patch, const TransformDistribution& dist, std::size_t k,
                    std::uint64_t seed, bool exclude_target_class = false);

Patch random_patch(std::size_t side, std::size_t channels, std::uint64_t seed);

// Sample Pearson correlation with the two-sided p-value from the Student-t
// transform (regularized incomplete beta), plus the least-squares fit of ys
// on xs.
CorrelationResult pearson(const std::vector<double>& xs, const std::vector<double>& ys);

// Regularized incomplete beta I_x(a, b); exposed for the p-value oracle.
double incomplete_beta(double a, double b, double x);

EvalReport run_benchmark(const std::vector<TrainedModel>& models,
                         const std::vector<Patch>& bundle, const LabeledDataset& testset,
                         const TransformDistribution& dist,
                         const std::vector<std::size_t>& k_list, std::uint64_t seed);

void write_report_csv(const EvalReport& report, const std::string& path);
EvalReport read_report_csv(const std::string& path);

// Plot-data companion: model_id, group, k, C_k, R_k, S_k per (model, k),
// with R/S taken from the bundle-mean rows.
void write_clean_vs_robust_csv(const EvalReport& report, const std::string& path);

// Per-k correlation of clean vs robust accuracy across models.
std::vector<std::pair<std::size_t, CorrelationResult>> clean_vs_robust_correlation(
    const EvalReport& report);

}  // namespace pf
