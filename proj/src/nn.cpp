#include "pf/nn.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

#include "pf/datasets.hpp"
#include "pf/io.hpp"
#include "pf/parallel.hpp"
#include "pf/rng.hpp"

namespace pf {

using nlohmann::json;

LayerSpec LayerSpec::dense(std::size_t in, std::size_t out) {
    if (!in || !out) throw std::invalid_argument("dense: dims must be positive");
    LayerSpec s;
    s.kind = LayerKind::Dense;
    s.in = in;
    s.out = out;
    return s;
}

LayerSpec LayerSpec::conv2d(std::size_t c_in, std::size_t c_out, std::size_t kernel,
                            std::size_t stride) {
    if (!c_in || !c_out || !kernel || !stride)
        throw std::invalid_argument("conv2d: hyperparameters must be positive");
    LayerSpec s;
    s.kind = LayerKind::Conv2d;
    s.c_in = c_in;
    s.c_out = c_out;
    s.kernel = kernel;
    s.stride = stride;
    return s;
}

LayerSpec LayerSpec::relu() {
    LayerSpec s;
    s.kind = LayerKind::Relu;
    return s;
}

LayerSpec LayerSpec::flatten() {
    LayerSpec s;
    s.kind = LayerKind::Flatten;
    return s;
}

LayerSpec LayerSpec::maxpool2d(std::size_t window) {
    if (!window) throw std::invalid_argument("maxpool2d: window must be positive");
    LayerSpec s;
    s.kind = LayerKind::MaxPool2d;
    s.window = window;
    return s;
}

std::string group_name(ModelGroup g) {
    switch (g) {
        case ModelGroup::Ensemble: return "ENSEMBLE";
        case ModelGroup::HeldOutStandard: return "HELD_OUT_STANDARD";
        case ModelGroup::HeldOutOther: return "HELD_OUT_OTHER";
    }
    throw std::logic_error("unknown group");
}

ModelGroup parse_group(const std::string& s) {
    if (s == "ENSEMBLE") return ModelGroup::Ensemble;
    if (s == "HELD_OUT_STANDARD") return ModelGroup::HeldOutStandard;
    if (s == "HELD_OUT_OTHER") return ModelGroup::HeldOutOther;
    throw std::invalid_argument("unknown model group: " + s);
}

std::vector<std::vector<std::size_t>> infer_shapes(const std::vector<LayerSpec>& spec,
                                                   const std::vector<std::size_t>& input) {
    std::vector<std::vector<std::size_t>> shapes;
    shapes.push_back(input);
    std::vector<std::size_t> cur = input;
    for (std::size_t li = 0; li < spec.size(); ++li) {
        const LayerSpec& l = spec[li];
        auto fail = [&](const std::string& msg) {
            throw std::invalid_argument("layer " + std::to_string(li) + ": " + msg +
                                        " (input shape " + shape_str(cur) + ")");
        };
        switch (l.kind) {
            case LayerKind::Dense:
                if (shape_numel(cur) != l.in)
                    fail("dense expects input of size " + std::to_string(l.in));
                cur = {l.out};
                break;
            case LayerKind::Conv2d: {
                if (cur.size() != 3 || cur[0] != l.c_in)
                    fail("conv2d expects [" + std::to_string(l.c_in) + ",H,W] input");
                if (cur[1] < l.kernel || cur[2] < l.kernel) fail("conv2d kernel larger than input");
                std::size_t ho = (cur[1] - l.kernel) / l.stride + 1;
                std::size_t wo = (cur[2] - l.kernel) / l.stride + 1;
                cur = {l.c_out, ho, wo};
                break;
            }
            case LayerKind::Relu:
                break;
            case LayerKind::Flatten:
                cur = {shape_numel(cur)};
                break;
            case LayerKind::MaxPool2d: {
                if (cur.size() != 3) fail("maxpool2d expects [C,H,W] input");
                if (cur[1] < l.window || cur[2] < l.window) fail("maxpool2d window larger than input");
                cur = {cur[0], cur[1] / l.window, cur[2] / l.window};
                break;
            }
        }
        shapes.push_back(cur);
    }
    return shapes;
}

TrainedModel init_model(const std::vector<LayerSpec>& spec,
                        const std::vector<std::size_t>& input_shape, std::uint64_t seed) {
    infer_shapes(spec, input_shape);
    TrainedModel m;
    m.spec = spec;
    m.train_seed = static_cast<std::int64_t>(seed);
    Rng rng(seed);
    for (const LayerSpec& l : spec) {
        if (l.kind == LayerKind::Dense) {
            double s = 1.0 / std::sqrt(static_cast<double>(l.in));
            Tensor w({l.out, l.in});
            for (float& v : w.data) v = static_cast<float>(rng.uniform(-s, s));
            m.params.push_back(std::move(w));
            m.params.push_back(Tensor({l.out}));
        } else if (l.kind == LayerKind::Conv2d) {
            double s = 1.0 / std::sqrt(static_cast<double>(l.c_in * l.kernel * l.kernel));
            Tensor w({l.c_out, l.c_in, l.kernel, l.kernel});
            for (float& v : w.data) v = static_cast<float>(rng.uniform(-s, s));
            m.params.push_back(std::move(w));
            m.params.push_back(Tensor({l.c_out}));
        }
    }
    return m;
}

namespace {

void check_params(const TrainedModel& m) {
    std::size_t pi = 0;
    for (std::size_t li = 0; li < m.spec.size(); ++li) {
        const LayerSpec& l = m.spec[li];
        if (!l.has_params()) continue;
        if (pi + 2 > m.params.size())
            throw std::invalid_argument("model params missing for layer " + std::to_string(li));
        const Tensor& w = m.params[pi];
        const Tensor& b = m.params[pi + 1];
        if (l.kind == LayerKind::Dense) {
            require_shape(w, {l.out, l.in}, "dense weight (layer " + std::to_string(li) + ")");
            require_shape(b, {l.out}, "dense bias (layer " + std::to_string(li) + ")");
        } else {
            require_shape(w, {l.c_out, l.c_in, l.kernel, l.kernel},
                          "conv weight (layer " + std::to_string(li) + ")");
            require_shape(b, {l.c_out}, "conv bias (layer " + std::to_string(li) + ")");
        }
        pi += 2;
    }
    if (pi != m.params.size())
        throw std::invalid_argument("model has " + std::to_string(m.params.size()) +
                                    " param tensors, spec needs " + std::to_string(pi));
}

// Forward one sample, keeping every activation for the backward pass.
std::vector<Tensor> forward_sample_acts(const TrainedModel& m, const Tensor& image) {
    std::vector<Tensor> acts;
    acts.push_back(image);
    std::size_t pi = 0;
    for (const LayerSpec& l : m.spec) {
        const Tensor& x = acts.back();
        switch (l.kind) {
            case LayerKind::Dense: {
                const Tensor& w = m.params[pi];
                const Tensor& b = m.params[pi + 1];
                pi += 2;
                Tensor y({l.out});
                for (std::size_t o = 0; o < l.out; ++o) {
                    double acc = b[o];
                    const float* wrow = &w.data[o * l.in];
                    for (std::size_t i = 0; i < l.in; ++i) acc += double(wrow[i]) * double(x[i]);
                    y[o] = static_cast<float>(acc);
                }
                acts.push_back(std::move(y));
                break;
            }
            case LayerKind::Conv2d: {
                const Tensor& w = m.params[pi];
                const Tensor& b = m.params[pi + 1];
                pi += 2;
                std::size_t h = x.shape[1], wd = x.shape[2], k = l.kernel, st = l.stride;
                std::size_t ho = (h - k) / st + 1, wo = (wd - k) / st + 1;
                Tensor y({l.c_out, ho, wo});
                for (std::size_t co = 0; co < l.c_out; ++co) {
                    for (std::size_t oy = 0; oy < ho; ++oy) {
                        for (std::size_t ox = 0; ox < wo; ++ox) {
                            double acc = b[co];
                            for (std::size_t ci = 0; ci < l.c_in; ++ci) {
                                const float* xp = &x.data[(ci * h + oy * st) * wd + ox * st];
                                const float* wp = &w.data[((co * l.c_in + ci) * k) * k];
                                for (std::size_t ky = 0; ky < k; ++ky)
                                    for (std::size_t kx = 0; kx < k; ++kx)
                                        acc += double(wp[ky * k + kx]) * double(xp[ky * wd + kx]);
                            }
                            y.at3(co, oy, ox) = static_cast<float>(acc);
                        }
                    }
                }
                acts.push_back(std::move(y));
                break;
            }
            case LayerKind::Relu: {
                Tensor y = x;
                for (float& v : y.data) v = v > 0.0f ? v : 0.0f;
                acts.push_back(std::move(y));
                break;
            }
            case LayerKind::Flatten: {
                Tensor y({x.numel()}, x.data);
                acts.push_back(std::move(y));
                break;
            }
            case LayerKind::MaxPool2d: {
                std::size_t c = x.shape[0], h = x.shape[1], wd = x.shape[2], win = l.window;
                std::size_t ho = h / win, wo = wd / win;
                Tensor y({c, ho, wo});
                for (std::size_t ch = 0; ch < c; ++ch)
                    for (std::size_t oy = 0; oy < ho; ++oy)
                        for (std::size_t ox = 0; ox < wo; ++ox) {
                            float best = x.at3(ch, oy * win, ox * win);
                            for (std::size_t ky = 0; ky < win; ++ky)
                                for (std::size_t kx = 0; kx < win; ++kx) {
                                    float v = x.at3(ch, oy * win + ky, ox * win + kx);
                                    if (v > best) best = v;
                                }
                            y.at3(ch, oy, ox) = best;
                        }
                acts.push_back(std::move(y));
                break;
            }
        }
    }
    return acts;
}

}  // namespace

std::vector<Tensor> forward_activations(const TrainedModel& model, const Tensor& image) {
    check_params(model);
    return forward_sample_acts(model, image);
}

Tensor forward(const TrainedModel& model, const Tensor& batch) {
    check_params(model);
    if (batch.rank() != 4)
        throw std::invalid_argument("forward: batch must be [N,C,H,W], got " +
                                    shape_str(batch.shape));
    std::vector<std::size_t> in_shape{batch.shape[1], batch.shape[2], batch.shape[3]};
    auto shapes = infer_shapes(model.spec, in_shape);
    std::size_t n = batch.shape[0];
    std::size_t num_classes = shape_numel(shapes.back());
    Tensor logits({n, num_classes});
    std::size_t sample_sz = shape_numel(in_shape);
    parallel_for(n, [&](std::size_t i) {
        Tensor img(in_shape);
        std::copy_n(batch.data.begin() + i * sample_sz, sample_sz, img.data.begin());
        auto acts = forward_sample_acts(model, img);
        std::copy_n(acts.back().data.begin(), num_classes, logits.data.begin() + i * num_classes);
    });
    return logits;
}

CrossEntropyResult cross_entropy_to_target(const Tensor& logits,
                                           const std::vector<std::size_t>& targets) {
    if (logits.rank() != 2)
        throw std::invalid_argument("cross_entropy: logits must be [N,K]");
    std::size_t n = logits.shape[0], k = logits.shape[1];
    if (targets.size() != n)
        throw std::invalid_argument("cross_entropy: " + std::to_string(targets.size()) +
                                    " targets for batch of " + std::to_string(n));
    Tensor grad({n, k});
    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (targets[i] >= k)
            throw std::invalid_argument("cross_entropy: target " + std::to_string(targets[i]) +
                                        " out of range for " + std::to_string(k) + " classes");
        const float* row = &logits.data[i * k];
        double mx = row[0];
        for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, double(row[j]));
        double z = 0.0;
        for (std::size_t j = 0; j < k; ++j) z += std::exp(double(row[j]) - mx);
        loss += -(double(row[targets[i]]) - mx - std::log(z));
        for (std::size_t j = 0; j < k; ++j) {
            double p = std::exp(double(row[j]) - mx) / z;
            grad.data[i * k + j] = static_cast<float>((p - (j == targets[i] ? 1.0 : 0.0)) / n);
        }
    }
    return {loss / n, std::move(grad)};
}

SampleGrads backprop_sample(const TrainedModel& model, const Tensor& image,
                            std::size_t target) {
    check_params(model);
    auto acts = forward_sample_acts(model, image);
    const Tensor& logits = acts.back();
    std::size_t num_classes = logits.numel();

    Tensor logits2d({1, num_classes}, logits.data);
    auto ce = cross_entropy_to_target(logits2d, {target});

    SampleGrads out;
    out.loss = ce.loss;
    out.param_grads.reserve(model.params.size());
    for (const Tensor& p : model.params) out.param_grads.push_back(Tensor(p.shape));

    Tensor grad(logits.shape, ce.grad_logits.data);

    // Param index of the last parameterized layer, walking backwards.
    std::size_t pi = model.params.size();
    for (std::size_t li = model.spec.size(); li-- > 0;) {
        const LayerSpec& l = model.spec[li];
        const Tensor& x = acts[li];
        switch (l.kind) {
            case LayerKind::Dense: {
                pi -= 2;
                const Tensor& w = model.params[pi];
                Tensor& gw = out.param_grads[pi];
                Tensor& gb = out.param_grads[pi + 1];
                Tensor gx({l.in});
                for (std::size_t o = 0; o < l.out; ++o) {
                    float go = grad[o];
                    gb[o] += go;
                    const float* wrow = &w.data[o * l.in];
                    float* gwrow = &gw.data[o * l.in];
                    for (std::size_t i = 0; i < l.in; ++i) {
                        gwrow[i] += go * x[i];
                        gx[i] += go * wrow[i];
                    }
                }
                gx.shape = x.shape;  // dense flattens implicitly
                grad = std::move(gx);
                break;
            }
            case LayerKind::Conv2d: {
                pi -= 2;
                const Tensor& w = model.params[pi];
                Tensor& gw = out.param_grads[pi];
                Tensor& gb = out.param_grads[pi + 1];
                std::size_t h = x.shape[1], wd = x.shape[2], k = l.kernel, st = l.stride;
                std::size_t ho = grad.shape[1], wo = grad.shape[2];
                Tensor gx(x.shape);
                for (std::size_t co = 0; co < l.c_out; ++co) {
                    for (std::size_t oy = 0; oy < ho; ++oy)
                        for (std::size_t ox = 0; ox < wo; ++ox) {
                            float go = grad.at3(co, oy, ox);
                            if (go == 0.0f) continue;
                            gb[co] += go;
                            for (std::size_t ci = 0; ci < l.c_in; ++ci) {
                                const float* xp = &x.data[(ci * h + oy * st) * wd + ox * st];
                                float* gxp = &gx.data[(ci * h + oy * st) * wd + ox * st];
                                const float* wp = &w.data[((co * l.c_in + ci) * k) * k];
                                float* gwp = &gw.data[((co * l.c_in + ci) * k) * k];
                                for (std::size_t ky = 0; ky < k; ++ky)
                                    for (std::size_t kx = 0; kx < k; ++kx) {
                                        gwp[ky * k + kx] += go * xp[ky * wd + kx];
                                        gxp[ky * wd + kx] += go * wp[ky * k + kx];
                                    }
                            }
                        }
                }
                grad = std::move(gx);
                break;
            }
            case LayerKind::Relu: {
                for (std::size_t i = 0; i < grad.numel(); ++i)
                    if (x[i] <= 0.0f) grad[i] = 0.0f;
                break;
            }
            case LayerKind::Flatten: {
                grad.shape = x.shape;
                break;
            }
            case LayerKind::MaxPool2d: {
                std::size_t c = x.shape[0], h = x.shape[1], wd = x.shape[2], win = l.window;
                std::size_t ho = h / win, wo = wd / win;
                Tensor gx(x.shape);
                for (std::size_t ch = 0; ch < c; ++ch)
                    for (std::size_t oy = 0; oy < ho; ++oy)
                        for (std::size_t ox = 0; ox < wo; ++ox) {
                            // First max wins, matching the forward scan order.
                            std::size_t by = oy * win, bx = ox * win;
                            float best = x.at3(ch, by, bx);
                            for (std::size_t ky = 0; ky < win; ++ky)
                                for (std::size_t kx = 0; kx < win; ++kx) {
                                    float v = x.at3(ch, oy * win + ky, ox * win + kx);
                                    if (v > best) {
                                        best = v;
                                        by = oy * win + ky;
                                        bx = ox * win + kx;
                                    }
                                }
                            gx.at3(ch, by, bx) += grad.at3(ch, oy, ox);
                        }
                grad = std::move(gx);
                break;
            }
        }
    }
    out.input_grad = std::move(grad);
    return out;
}

Tensor grad_input(const TrainedModel& model, const Tensor& batch,
                  const std::vector<std::size_t>& targets) {
    if (batch.rank() != 4)
        throw std::invalid_argument("grad_input: batch must be [N,C,H,W]");
    std::size_t n = batch.shape[0];
    if (targets.size() != n)
        throw std::invalid_argument("grad_input: target count mismatch");
    std::vector<std::size_t> in_shape{batch.shape[1], batch.shape[2], batch.shape[3]};
    std::size_t sample_sz = shape_numel(in_shape);
    Tensor out(batch.shape);
    parallel_for(n, [&](std::size_t i) {
        Tensor img(in_shape);
        std::copy_n(batch.data.begin() + i * sample_sz, sample_sz, img.data.begin());
        auto g = backprop_sample(model, img, targets[i]);
        // backprop_sample normalizes by its batch of 1; rescale to the 1/N
        // convention of cross_entropy_to_target over this batch.
        for (std::size_t j = 0; j < sample_sz; ++j)
            out.data[i * sample_sz + j] = g.input_grad[j] / static_cast<float>(n);
    });
    return out;
}

TrainedModel train_model(const std::vector<LayerSpec>& spec, const LabeledDataset& dataset,
                         const TrainConfig& cfg) {
    if (dataset.size() == 0) throw std::invalid_argument("train_model: empty dataset");
    if (cfg.learning_rate <= 0.0) throw std::invalid_argument("train_model: learning_rate must be positive");
    if (cfg.batch_size == 0) throw std::invalid_argument("train_model: batch_size must be positive");
    dataset.validate();

    std::vector<std::size_t> in_shape{dataset.images.shape[1], dataset.images.shape[2],
                                      dataset.images.shape[3]};
    TrainedModel model = init_model(spec, in_shape, cfg.seed);
    Rng shuffle_rng = Rng(cfg.seed).fork(0x5u);

    std::size_t n = dataset.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        // Fisher-Yates with the dedicated shuffle stream.
        for (std::size_t i = n; i-- > 1;) {
            std::size_t j = static_cast<std::size_t>(shuffle_rng.next_below(i + 1));
            std::swap(order[i], order[j]);
        }
        for (std::size_t start = 0; start < n; start += cfg.batch_size) {
            std::size_t bs = std::min(cfg.batch_size, n - start);
            std::vector<SampleGrads> grads(bs);
            parallel_for(bs, [&](std::size_t bi) {
                std::size_t idx = order[start + bi];
                grads[bi] = backprop_sample(model, dataset.image(idx), dataset.labels[idx]);
            });
            double batch_loss = 0.0;
            for (std::size_t bi = 0; bi < bs; ++bi) batch_loss += grads[bi].loss;
            batch_loss /= bs;
            if (!std::isfinite(batch_loss))
                throw std::runtime_error(
                    "train_model: loss diverged (NaN/Inf) at epoch " + std::to_string(epoch) +
                    "; lower the learning rate");
            double scale = cfg.learning_rate / bs;
            for (std::size_t p = 0; p < model.params.size(); ++p) {
                Tensor& param = model.params[p];
                for (std::size_t e = 0; e < param.numel(); ++e) {
                    double acc = 0.0;
                    for (std::size_t bi = 0; bi < bs; ++bi) acc += grads[bi].param_grads[p][e];
                    param[e] = static_cast<float>(param[e] - scale * acc);
                }
            }
        }
    }

    // Final training accuracy, cached on the model.
    Tensor logits = forward(model, dataset.images);
    std::size_t hits = 0;
    std::size_t num_classes = logits.shape[1];
    for (std::size_t i = 0; i < n; ++i)
        if (top_k_hit_row(&logits.data[i * num_classes], num_classes, dataset.labels[i], 1))
            ++hits;
    model.clean_acc_cache = static_cast<double>(hits) / n;
    return model;
}

bool top_k_hit_row(const float* logits, std::size_t num_classes, std::size_t label,
                   std::size_t k) {
    if (k < 1 || k > num_classes)
        throw std::invalid_argument("top_k_hit: k=" + std::to_string(k) + " out of range [1," +
                                    std::to_string(num_classes) + "]");
    if (label >= num_classes) throw std::invalid_argument("top_k_hit: label out of range");
    // Rank of `label` under descending sort with lower index winning ties.
    std::size_t rank = 0;
    float lv = logits[label];
    for (std::size_t j = 0; j < num_classes; ++j) {
        if (logits[j] > lv || (logits[j] == lv && j < label)) ++rank;
    }
    return rank < k;
}

bool top_k_hit(const Tensor& logits, std::size_t label, std::size_t k) {
    if (logits.rank() != 1) throw std::invalid_argument("top_k_hit: logits must be rank 1");
    return top_k_hit_row(logits.data.data(), logits.numel(), label, k);
}

namespace {

json spec_to_json(const std::vector<LayerSpec>& spec) {
    json arr = json::array();
    for (const LayerSpec& l : spec) {
        json j;
        switch (l.kind) {
            case LayerKind::Dense:
                j = {{"kind", "dense"}, {"in", l.in}, {"out", l.out}};
                break;
            case LayerKind::Conv2d:
                j = {{"kind", "conv2d"}, {"c_in", l.c_in}, {"c_out", l.c_out},
                     {"kernel", l.kernel}, {"stride", l.stride}};
                break;
            case LayerKind::Relu:
                j = {{"kind", "relu"}};
                break;
            case LayerKind::Flatten:
                j = {{"kind", "flatten"}};
                break;
            case LayerKind::MaxPool2d:
                j = {{"kind", "maxpool2d"}, {"window", l.window}};
                break;
        }
        arr.push_back(j);
    }
    return arr;
}

std::vector<LayerSpec> spec_from_json(const json& arr) {
    std::vector<LayerSpec> spec;
    for (const json& j : arr) {
        std::string kind = j.at("kind");
        if (kind == "dense")
            spec.push_back(LayerSpec::dense(j.at("in"), j.at("out")));
        else if (kind == "conv2d")
            spec.push_back(LayerSpec::conv2d(j.at("c_in"), j.at("c_out"), j.at("kernel"),
                                             j.at("stride")));
        else if (kind == "relu")
            spec.push_back(LayerSpec::relu());
        else if (kind == "flatten")
            spec.push_back(LayerSpec::flatten());
        else if (kind == "maxpool2d")
            spec.push_back(LayerSpec::maxpool2d(j.at("window")));
        else
            throw std::runtime_error("model file: unknown layer kind " + kind);
    }
    return spec;
}

}  // namespace

void save_model(const TrainedModel& model, const std::string& path) {
    check_params(model);
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open for write: " + path);
    json header = {
        {"spec", spec_to_json(model.spec)},
        {"model_id", model.model_id},
        {"group", group_name(model.group)},
        {"train_seed", model.train_seed},
        {"num_params", model.params.size()},
    };
    if (model.clean_acc_cache)
        header["clean_acc"] = *model.clean_acc_cache;
    std::string htext = header.dump();
    os.write("PFM1", 4);
    write_u32(os, static_cast<std::uint32_t>(htext.size()));
    os.write(htext.data(), static_cast<std::streamsize>(htext.size()));
    for (const Tensor& p : model.params) write_tensor(os, p);
    if (!os) throw std::runtime_error("write failed: " + path);
}

TrainedModel load_model(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open: " + path);
    read_magic(is, "PFM1", "model " + path);
    std::uint32_t hlen = read_u32(is, "model header length");
    std::string htext(hlen, '\0');
    is.read(htext.data(), hlen);
    if (static_cast<std::uint32_t>(is.gcount()) != hlen)
        throw std::runtime_error("model " + path + ": truncated header at byte offset 8");
    json header = json::parse(htext);
    TrainedModel m;
    m.spec = spec_from_json(header.at("spec"));
    m.model_id = header.at("model_id");
    m.group = parse_group(header.at("group"));
    m.train_seed = header.at("train_seed");
    if (header.contains("clean_acc")) m.clean_acc_cache = header["clean_acc"].get<double>();
    std::size_t num_params = header.at("num_params");
    for (std::size_t i = 0; i < num_params; ++i) m.params.push_back(read_tensor(is));
    check_params(m);
    return m;
}

}  // namespace pf
