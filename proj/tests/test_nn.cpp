#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "pf/datasets.hpp"
#include "pf/gradcheck.hpp"
#include "pf/io.hpp"
#include "pf/nn.hpp"
#include "pf/rng.hpp"

using namespace pf;

namespace {

TrainedModel dense_model(std::size_t in, std::size_t out, std::vector<float> w,
                         std::vector<float> b) {
    TrainedModel m;
    m.spec = {LayerSpec::flatten(), LayerSpec::dense(in, out)};
    m.params.push_back(Tensor({out, in}, std::move(w)));
    m.params.push_back(Tensor({out}, std::move(b)));
    return m;
}

}  // namespace

TEST_CASE("forward: identity dense layer passes logits through") {
    TrainedModel m = dense_model(2, 2, {1, 0, 0, 1}, {0, 0});
    Tensor batch({1, 1, 1, 2}, {0.2f, 0.8f});
    Tensor logits = forward(m, batch);
    CHECK(logits.at2(0, 0) == doctest::Approx(0.2).epsilon(1e-6));
    CHECK(logits.at2(0, 1) == doctest::Approx(0.8).epsilon(1e-6));
}

TEST_CASE("forward: relu clips negatives") {
    TrainedModel m;
    m.spec = {LayerSpec::relu()};
    Tensor batch({1, 1, 1, 2}, {-1.0f, 2.0f});
    Tensor logits = forward(m, batch);
    CHECK(logits.at2(0, 0) == 0.0f);
    CHECK(logits.at2(0, 1) == 2.0f);
}

TEST_CASE("forward: two dense layers match hand-computed matrix products") {
    // h = W1 x + b1 = [-0.5, 1.5]; logits = W2 h + b2 = [1.0, 4.0]
    TrainedModel m;
    m.spec = {LayerSpec::flatten(), LayerSpec::dense(2, 2), LayerSpec::dense(2, 2)};
    m.params.push_back(Tensor({2, 2}, {1, -1, 2, 0}));
    m.params.push_back(Tensor({2}, {0.5f, -0.5f}));
    m.params.push_back(Tensor({2, 2}, {1, 1, 0, 2}));
    m.params.push_back(Tensor({2}, {0, 1}));
    Tensor logits = forward(m, Tensor({1, 1, 1, 2}, {1, 2}));
    CHECK(logits.at2(0, 0) == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(logits.at2(0, 1) == doctest::Approx(4.0).epsilon(1e-6));
}

TEST_CASE("forward: shape mismatch names the layer") {
    TrainedModel m = dense_model(2, 2, {1, 0, 0, 1}, {0, 0});
    CHECK_THROWS_WITH_AS(forward(m, Tensor({1, 1, 1, 3})), doctest::Contains("layer 1"),
                         std::invalid_argument);
}

TEST_CASE("forward is pure: repeated calls bit-identical") {
    TrainedModel m = init_model({LayerSpec::conv2d(1, 2, 3), LayerSpec::flatten(),
                                 LayerSpec::dense(2 * 4 * 4, 3)},
                                {1, 6, 6}, 9);
    Rng rng(4);
    Tensor batch({2, 1, 6, 6});
    for (float& v : batch.data) v = static_cast<float>(rng.next_unit());
    Tensor a = forward(m, batch);
    Tensor b = forward(m, batch);
    CHECK(a.data == b.data);
}

TEST_CASE("cross_entropy: uniform logits give ln K") {
    Tensor logits({1, 4}, {0.7f, 0.7f, 0.7f, 0.7f});
    auto r = cross_entropy_to_target(logits, {2});
    CHECK(r.loss == doctest::Approx(std::log(4.0)).epsilon(1e-6));
}

TEST_CASE("cross_entropy: huge logit gap is stable") {
    Tensor logits({1, 2}, {1000.0f, 0.0f});
    auto r = cross_entropy_to_target(logits, {0});
    CHECK(std::isfinite(r.loss));
    CHECK(r.loss == doctest::Approx(0.0).epsilon(1e-6));
    CHECK(r.grad_logits.all_finite());
}

TEST_CASE("cross_entropy: target out of range rejected") {
    Tensor logits({1, 3});
    CHECK_THROWS_AS(cross_entropy_to_target(logits, {3}), std::invalid_argument);
}

TEST_CASE("cross_entropy: gradient matches central finite differences") {
    Rng rng(77);
    Tensor logits({3, 5});
    for (float& v : logits.data) v = static_cast<float>(rng.uniform(-2.0, 2.0));
    std::vector<std::size_t> targets{1, 4, 0};
    auto r = cross_entropy_to_target(logits, targets);
    Tensor fd = finite_diff(
        [&](const Tensor& l) { return cross_entropy_to_target(l, targets).loss; }, logits);
    CHECK(max_rel_error(r.grad_logits, fd) <= 1e-3);
}

TEST_CASE("cross_entropy: softmax rows sum to one") {
    Rng rng(5);
    Tensor logits({4, 6});
    for (float& v : logits.data) v = static_cast<float>(rng.uniform(-3.0, 3.0));
    auto r = cross_entropy_to_target(logits, {0, 1, 2, 3});
    // grad row sums to (sum softmax - 1)/N = 0 when softmax normalizes.
    for (std::size_t i = 0; i < 4; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < 6; ++j) s += r.grad_logits.at2(i, j);
        CHECK(std::fabs(s) <= 1e-6);
    }
}

TEST_CASE("grad_input: constant model has zero input gradient") {
    TrainedModel m = dense_model(2, 2, {0, 0, 0, 0}, {0, 0});
    Tensor batch({1, 1, 1, 2}, {0.3f, 0.4f});
    Tensor g = grad_input(m, batch, {0});
    for (float v : g.data) CHECK(v == 0.0f);
}

TEST_CASE("grad_input: linear layer matches W^T (softmax - onehot) / N") {
    std::vector<float> w{0.5f, -1.0f, 2.0f, 0.25f};
    TrainedModel m = dense_model(2, 2, w, {0, 0});
    Tensor batch({1, 1, 1, 2}, {0.6f, -0.2f});
    Tensor logits = forward(m, batch);
    auto ce = cross_entropy_to_target(logits, {1});
    Tensor g = grad_input(m, batch, {1});
    for (std::size_t i = 0; i < 2; ++i) {
        double expect = 0.0;
        for (std::size_t o = 0; o < 2; ++o) expect += w[o * 2 + i] * ce.grad_logits.at2(0, o);
        CHECK(g[i] == doctest::Approx(expect).epsilon(1e-5));
    }
}

TEST_CASE("grad_input: small convnet matches finite differences") {
    TrainedModel m = init_model({LayerSpec::conv2d(1, 2, 3), LayerSpec::flatten(),
                                 LayerSpec::dense(2 * 3 * 3, 4)},
                                {1, 5, 5}, 13);
    Rng rng(14);
    Tensor batch({1, 1, 5, 5});
    for (float& v : batch.data) v = static_cast<float>(rng.uniform(0.1, 0.9));
    Tensor g = grad_input(m, batch, {2});
    Tensor img({1, 5, 5}, batch.data);
    Tensor fd = finite_diff(
        [&](const Tensor& x) {
            Tensor b({1, 1, 5, 5}, x.data);
            return cross_entropy_to_target(forward(m, b), {2}).loss;
        },
        img);
    Tensor gflat({1, 5, 5}, g.data);
    CHECK(max_rel_error(gflat, fd) <= 1e-3);
}

TEST_CASE("top_k_hit: ranking and tie rule") {
    Tensor logits({3}, {0.1f, 0.9f, 0.3f});
    CHECK(top_k_hit(logits, 1, 1));
    CHECK_FALSE(top_k_hit(logits, 0, 1));
    CHECK(top_k_hit(logits, 0, 3));  // k = K includes everything

    Tensor tied({3}, {0.5f, 0.5f, 0.1f});
    CHECK_FALSE(top_k_hit(tied, 1, 1));  // index 0 wins the tie
    CHECK(top_k_hit(tied, 0, 1));
    CHECK(top_k_hit(tied, 1, 2));

    CHECK_THROWS_AS(top_k_hit(logits, 0, 0), std::invalid_argument);
    CHECK_THROWS_AS(top_k_hit(logits, 0, 4), std::invalid_argument);
}

TEST_CASE("top_k_hit: monotone inclusion and sort-oracle agreement") {
    Rng rng(42);
    for (int trial = 0; trial < 50; ++trial) {
        std::size_t K = 2 + rng.next_below(6);
        Tensor logits({K});
        for (float& v : logits.data)
            v = static_cast<float>(rng.uniform(-1.0, 1.0));
        if (trial % 3 == 0 && K >= 2) logits[1] = logits[0];  // force ties sometimes
        for (std::size_t label = 0; label < K; ++label) {
            // Oracle: stable sort of (value desc, index asc).
            std::vector<std::size_t> idx(K);
            for (std::size_t i = 0; i < K; ++i) idx[i] = i;
            std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
                return logits[a] > logits[b];
            });
            for (std::size_t k = 1; k <= K; ++k) {
                bool oracle = std::find(idx.begin(), idx.begin() + k, label) != idx.begin() + k;
                CHECK(top_k_hit(logits, label, k) == oracle);
                if (k < K)
                    CHECK((!top_k_hit(logits, label, k) || top_k_hit(logits, label, k + 1)));
            }
        }
    }
}

TEST_CASE("train_model: separable two-blob toy reaches 0.95") {
    // Two Gaussian blobs in 2-D rendered as 1x1x2 "images"; a threshold on
    // x0 already separates them, verified below before training.
    Rng rng(101);
    std::size_t n = 200;
    LabeledDataset ds;
    ds.images = Tensor({n, 1, 1, 2});
    ds.labels.resize(n);
    ds.class_count = 2;
    std::size_t hand_hits = 0;
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t cls = i % 2;
        double cx = cls == 0 ? 0.25 : 0.75;
        double x0 = cx + rng.gaussian(0.0, 0.07);
        double x1 = 0.5 + rng.gaussian(0.0, 0.07);
        ds.images.at4(i, 0, 0, 0) = static_cast<float>(x0);
        ds.images.at4(i, 0, 0, 1) = static_cast<float>(x1);
        ds.labels[i] = cls;
        if ((x0 < 0.5) == (cls == 0)) ++hand_hits;
    }
    CHECK(static_cast<double>(hand_hits) / n >= 0.95);  // hand-fit threshold oracle

    TrainConfig tc{0.5, 20, 16, 3};
    TrainedModel m = train_model({LayerSpec::flatten(), LayerSpec::dense(2, 2)}, ds, tc);
    CHECK(m.clean_acc_cache.value() >= 0.95);
}

TEST_CASE("train_model: epochs=0 returns the initialized model bit-for-bit") {
    LabeledDataset ds;
    ds.images = Tensor({4, 1, 1, 2}, {0.1f, 0.2f, 0.3f, 0.4f, 0.5f, 0.6f, 0.7f, 0.8f});
    ds.labels = {0, 1, 0, 1};
    ds.class_count = 2;
    TrainConfig tc{0.1, 0, 4, 5};
    TrainedModel trained = train_model({LayerSpec::flatten(), LayerSpec::dense(2, 2)}, ds, tc);
    TrainedModel fresh = init_model({LayerSpec::flatten(), LayerSpec::dense(2, 2)}, {1, 1, 2}, 5);
    REQUIRE(trained.params.size() == fresh.params.size());
    for (std::size_t p = 0; p < fresh.params.size(); ++p)
        CHECK(trained.params[p].data == fresh.params[p].data);
}

TEST_CASE("train_model: same seed twice gives bit-identical params") {
    LabeledDataset ds = gen_shapes_dataset(3, 10, 1, 10, 10, 0.05, 8);
    TrainConfig tc{0.1, 2, 8, 77};
    auto spec = std::vector<LayerSpec>{LayerSpec::flatten(), LayerSpec::dense(100, 3)};
    TrainedModel a = train_model(spec, ds, tc);
    TrainedModel b = train_model(spec, ds, tc);
    for (std::size_t p = 0; p < a.params.size(); ++p) CHECK(a.params[p].data == b.params[p].data);
}

TEST_CASE("model file round-trip is bit-exact") {
    LabeledDataset ds = gen_shapes_dataset(3, 6, 1, 10, 10, 0.05, 8);
    TrainConfig tc{0.1, 1, 4, 3};
    TrainedModel m = train_model({LayerSpec::flatten(), LayerSpec::dense(100, 3)}, ds, tc);
    m.model_id = "roundtrip";
    m.group = ModelGroup::HeldOutStandard;

    auto path = (std::filesystem::temp_directory_path() / "pf_model_rt.pfm").string();
    save_model(m, path);
    TrainedModel r = load_model(path);
    CHECK(r.model_id == m.model_id);
    CHECK(r.group == m.group);
    CHECK(r.train_seed == m.train_seed);
    CHECK(r.clean_acc_cache.value() == m.clean_acc_cache.value());
    REQUIRE(r.params.size() == m.params.size());
    for (std::size_t p = 0; p < m.params.size(); ++p) CHECK(r.params[p].data == m.params[p].data);
    std::filesystem::remove(path);
}

TEST_CASE("model file: wrong magic and truncation rejected with offsets") {
    LabeledDataset ds = gen_shapes_dataset(2, 4, 1, 6, 6, 0.0, 8);
    TrainConfig tc{0.1, 1, 4, 3};
    TrainedModel m = train_model({LayerSpec::flatten(), LayerSpec::dense(36, 2)}, ds, tc);
    auto dir = std::filesystem::temp_directory_path();
    auto good = (dir / "pf_model_good.pfm").string();
    save_model(m, good);

    auto bad = (dir / "pf_model_bad.pfm").string();
    {
        std::ifstream is(good, std::ios::binary);
        std::string bytes((std::istreambuf_iterator<char>(is)), {});
        bytes[0] = 'X';
        std::ofstream os(bad, std::ios::binary);
        os << bytes;
    }
    CHECK_THROWS_WITH_AS(load_model(bad), doctest::Contains("bad magic"), std::runtime_error);

    auto trunc = (dir / "pf_model_trunc.pfm").string();
    {
        std::ifstream is(good, std::ios::binary);
        std::string bytes((std::istreambuf_iterator<char>(is)), {});
        bytes.resize(bytes.size() - 37);  // mid-tensor
        std::ofstream os(trunc, std::ios::binary);
        os << bytes;
    }
    CHECK_THROWS_WITH_AS(load_model(trunc), doctest::Contains("byte offset"), std::runtime_error);
    for (const auto& p : {good, bad, trunc}) std::filesystem::remove(p);
}

TEST_CASE("train_model: divergence reports a learning-rate hint") {
    LabeledDataset ds = gen_shapes_dataset(3, 10, 1, 8, 8, 0.05, 8);
    TrainConfig tc{1e12, 30, 8, 1};
    CHECK_THROWS_WITH_AS(
        train_model({LayerSpec::flatten(), LayerSpec::dense(64, 16), LayerSpec::dense(16, 3)},
                    ds, tc),
        doctest::Contains("learning rate"), std::runtime_error);
}
