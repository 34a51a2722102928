#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "pf/tensor.hpp"

namespace pf {

enum class LayerKind { Dense, Conv2d, Relu, Flatten, MaxPool2d };

struct LayerSpec {
    LayerKind kind;
    std::size_t in = 0, out = 0;                            // dense
    std::size_t c_in = 0, c_out = 0, kernel = 0, stride = 1;  // conv2d
    std::size_t window = 0;                                 // maxpool2d

    static LayerSpec dense(std::size_t in, std::size_t out);
    static LayerSpec conv2d(std::size_t c_in, std::size_t c_out, std::size_t kernel,
                            std::size_t stride = 1);
    static LayerSpec relu();
    static LayerSpec flatten();
    static LayerSpec maxpool2d(std::size_t window);

    bool has_params() const { return kind == LayerKind::Dense || kind == LayerKind::Conv2d; }
};

enum class ModelGroup { Ensemble, HeldOutStandard, HeldOutOther };

std::string group_name(ModelGroup g);
ModelGroup parse_group(const std::string& s);

struct TrainedModel {
    std::vector<LayerSpec> spec;
    // Weight then bias, in layer order, for each parameterized layer.
    std::vector<Tensor> params;
    std::string model_id;
    ModelGroup group = ModelGroup::Ensemble;
    std::int64_t train_seed = 0;
    std::optional<double> clean_acc_cache;
};

struct TrainConfig {
    double learning_rate = 0.05;
    std::size_t epochs = 3;
    std::size_t batch_size = 32;
    std::uint64_t seed = 0;
};

// Activation shapes through the network for the given [C,H,W] input; throws
// with the offending layer index if consecutive layers do not compose.
std::vector<std::vector<std::size_t>> infer_shapes(const std::vector<LayerSpec>& spec,
                                                   const std::vector<std::size_t>& input);

// Weights uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)], biases zero.
TrainedModel init_model(const std::vector<LayerSpec>& spec,
                        const std::vector<std::size_t>& input_shape, std::uint64_t seed);

// Raw logits [N, num_classes] for a [N,C,H,W] batch.
Tensor forward(const TrainedModel& model, const Tensor& batch);

struct CrossEntropyResult {
    double loss;
    Tensor grad_logits;
};

// Mean of -log softmax(logits)[target] over the batch, with the matching
// logits gradient (softmax - onehot)/N. Max-subtraction stabilized.
CrossEntropyResult cross_entropy_to_target(const Tensor& logits,
                                           const std::vector<std::size_t>& targets);

// Gradient of cross_entropy_to_target(forward(model, batch), targets) with
// respect to the input pixels, params held fixed. Same shape as batch.
Tensor grad_input(const TrainedModel& model, const Tensor& batch,
                  const std::vector<std::size_t>& targets);

struct SampleGrads {
    double loss;
    Tensor input_grad;                // [C,H,W]
    std::vector<Tensor> param_grads;  // aligned with model.params
};

// Single-sample loss (-log softmax[target]) with input and parameter
// gradients; the building block for both training and patch crafting.
SampleGrads backprop_sample(const TrainedModel& model, const Tensor& image,
                            std::size_t target);

// Every intermediate activation for one [C,H,W] sample, input first, logits
// last. Used by the gradient-check harness to verify margins at relu/maxpool
// kinks.
std::vector<Tensor> forward_activations(const TrainedModel& model, const Tensor& image);

struct LabeledDataset;  // datasets module

TrainedModel train_model(const std::vector<LayerSpec>& spec, const LabeledDataset& dataset,
                         const TrainConfig& cfg);

// True iff label ranks among the k largest logits; ties rank the lower class
// index first.
bool top_k_hit(const Tensor& logits, std::size_t label, std::size_t k);
bool top_k_hit_row(const float* logits, std::size_t num_classes, std::size_t label,
                   std::size_t k);

// "PFM1" container: magic, u32 length-prefixed JSON header, then one PFT1
// block per parameter tensor.
void save_model(const TrainedModel& model, const std::string& path);
TrainedModel load_model(const std::string& path);

}  // namespace pf
