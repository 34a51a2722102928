#include "pf/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <stdexcept>

#include "pf/parallel.hpp"
#include "pf/rng.hpp"

namespace pf {

namespace {

struct RsCounts {
    std::vector<std::size_t> robust_hits;   // per k
    std::vector<std::size_t> success_hits;  // per k
    std::size_t n_robust = 0;
    std::size_t n_success = 0;
};

// One pass over the test set: per image one transform from the counter-based
// substream of `seed`, scoring both the true label and the target label on
// the same perturbed image.
RsCounts eval_patched(const TrainedModel& model, const LabeledDataset& testset,
                      const Patch& patch, const TransformDistribution& dist,
                      const std::vector<std::size_t>& k_list, std::uint64_t seed,
                      bool exclude_target_class) {
    std::size_t n = testset.size();
    std::size_t H = testset.images.shape[2], W = testset.images.shape[3];
    std::size_t nk = k_list.size();
    std::vector<std::uint8_t> rhit(n * nk, 0), shit(n * nk, 0), counted(n, 1);
    Rng base(seed);
    parallel_for(n, [&](std::size_t i) {
        Rng sub = base.fork(i);
        AffineTransform t = sample_transform(dist, sub);
        Tensor adv = apply(testset.image(i), warp(patch, t, H, W));
        Tensor batch({1, adv.shape[0], adv.shape[1], adv.shape[2]}, std::move(adv.data));
        Tensor logits = forward(model, batch);
        const float* row = logits.data.data();
        std::size_t kk = logits.shape[1];
        for (std::size_t ki = 0; ki < nk; ++ki) {
            rhit[i * nk + ki] = top_k_hit_row(row, kk, testset.labels[i], k_list[ki]);
            shit[i * nk + ki] = top_k_hit_row(row, kk, patch.target_class, k_list[ki]);
        }
        if (exclude_target_class && testset.labels[i] == patch.target_class) counted[i] = 0;
    });
    RsCounts out;
    out.robust_hits.assign(nk, 0);
    out.success_hits.assign(nk, 0);
    for (std::size_t i = 0; i < n; ++i) {
        out.n_robust += 1;
        for (std::size_t ki = 0; ki < nk; ++ki) out.robust_hits[ki] += rhit[i * nk + ki];
        if (!counted[i]) continue;
        out.n_success += 1;
        for (std::size_t ki = 0; ki < nk; ++ki) out.success_hits[ki] += shit[i * nk + ki];
    }
    return out;
}

}  // namespace

double clean_accuracy(const TrainedModel& model, const LabeledDataset& testset, std::size_t k) {
    if (testset.size() == 0) throw std::invalid_argument("clean_accuracy: empty test set");
    Tensor logits = forward(model, testset.images);
    std::size_t n = testset.size(), kk = logits.shape[1];
    std::size_t hits = 0;
    for (std::size_t i = 0; i < n; ++i)
        if (top_k_hit_row(&logits.data[i * kk], kk, testset.labels[i], k)) ++hits;
    return static_cast<double>(hits) / n;
}

double robust_accuracy(const TrainedModel& model, const LabeledDataset& testset,
                       const Patch& patch, const TransformDistribution& dist, std::size_t k,
                       std::uint64_t seed) {
    if (testset.size() == 0) throw std::invalid_argument("robust_accuracy: empty test set");
    RsCounts c = eval_patched(model, testset, patch, dist, {k}, seed, false);
    return static_cast<double>(c.robust_hits[0]) / c.n_robust;
}

double success_rate(const TrainedModel& model, const LabeledDataset& testset,
                    const Patch& patch, const TransformDistribution& dist, std::size_t k,
                    std::uint64_t seed, bool exclude_target_class) {
    if (testset.size() == 0) throw std::invalid_argument("success_rate: empty test set");
    RsCounts c = eval_patched(model, testset, patch, dist, {k}, seed, exclude_target_class);
    if (c.n_success == 0) throw std::invalid_argument("success_rate: no scorable test images");
    return static_cast<double>(c.success_hits[0]) / c.n_success;
}

Patch random_patch(std::size_t side, std::size_t channels, std::uint64_t seed) {
    Patch p;
    p.patch_id = "random";
    p.target_class = 0;
    p.provenance.seed = seed;
    p.provenance.config_digest = "random";
    p.pixels = Tensor({channels, side, side});
    Rng rng(seed);
    for (float& v : p.pixels.data) v = static_cast<float>(rng.next_unit());
    return p;
}

CorrelationResult pearson(const std::vector<double>& xs, const std::vector<double>& ys) {
    if (xs.size() != ys.size()) throw std::invalid_argument("pearson: length mismatch");
    std::size_t n = xs.size();
    if (n < 3) throw std::invalid_argument("pearson: need n >= 3, got " + std::to_string(n));
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        mx += xs[i];
        my += ys[i];
    }
    mx /= n;
    my /= n;
    double sxx = 0.0, syy = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double dx = xs[i] - mx, dy = ys[i] - my;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if (sxx == 0.0 || syy == 0.0)
        throw std::invalid_argument("pearson: constant input, correlation undefined");
    CorrelationResult r;
    r.n = n;
    r.rho = sxy / std::sqrt(sxx * syy);
    r.slope = sxy / sxx;
    r.intercept = my - r.slope * mx;
    double df = static_cast<double>(n - 2);
    double denom = 1.0 - r.rho * r.rho;
    if (denom <= 0.0) {
        r.p_value = 0.0;
    } else {
        double t2 = r.rho * r.rho * df / denom;
        // Two-sided p for Student-t: I_{df/(df+t^2)}(df/2, 1/2).
        r.p_value = incomplete_beta(df / 2.0, 0.5, df / (df + t2));
    }
    return r;
}

double incomplete_beta(double a, double b, double x) {
    if (x < 0.0 || x > 1.0) throw std::invalid_argument("incomplete_beta: x outside [0,1]");
    if (x == 0.0) return 0.0;
    if (x == 1.0) return 1.0;
    // Continued fraction (modified Lentz), with the symmetry switch for
    // convergence.
    auto betacf = [](double a, double b, double x) {
        const double eps = 1e-15, fpmin = 1e-300;
        double qab = a + b, qap = a + 1.0, qam = a - 1.0;
        double c = 1.0, d = 1.0 - qab * x / qap;
        if (std::fabs(d) < fpmin) d = fpmin;
        d = 1.0 / d;
        double h = d;
        for (int m = 1; m <= 300; ++m) {
            int m2 = 2 * m;
            double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
            d = 1.0 + aa * d;
            if (std::fabs(d) < fpmin) d = fpmin;
            c = 1.0 + aa / c;
            if (std::fabs(c) < fpmin) c = fpmin;
            d = 1.0 / d;
            h *= d * c;
            aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
            d = 1.0 + aa * d;
            if (std::fabs(d) < fpmin) d = fpmin;
            c = 1.0 + aa / c;
            if (std::fabs(c) < fpmin) c = fpmin;
            d = 1.0 / d;
            double del = d * c;
            h *= del;
            if (std::fabs(del - 1.0) < eps) break;
        }
        return h;
    };
    double ln_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) +
                      b * std::log(1.0 - x);
    double front = std::exp(ln_front);
    if (x < (a + 1.0) / (a + b + 2.0))
        return front * betacf(a, b, x) / a;
    return 1.0 - front * betacf(b, a, 1.0 - x) / b;
}

EvalReport run_benchmark(const std::vector<TrainedModel>& models,
                         const std::vector<Patch>& bundle, const LabeledDataset& testset,
                         const TransformDistribution& dist,
                         const std::vector<std::size_t>& k_list, std::uint64_t seed) {
    if (models.empty()) throw std::invalid_argument("run_benchmark: no models");
    if (testset.size() == 0) throw std::invalid_argument("run_benchmark: empty test set");
    if (k_list.empty()) throw std::invalid_argument("run_benchmark: empty k list");

    EvalReport report;
    report.class_count = testset.class_count;
    report.k_list = k_list;
    report.dataset_digest = testset.source_digest;
    std::size_t n = testset.size();

    for (const TrainedModel& model : models) {
        std::string group = group_name(model.group);
        for (std::size_t k : k_list)
            report.rows.push_back({model.model_id, group, "clean", 'C', k,
                                   clean_accuracy(model, testset, k), n, seed});

        std::vector<std::vector<double>> bundle_r(k_list.size()), bundle_s(k_list.size());
        for (std::size_t pi = 0; pi < bundle.size(); ++pi) {
            const Patch& patch = bundle[pi];
            std::uint64_t pseed = seed ^ hash64(0x1000 + pi);
            RsCounts c = eval_patched(model, testset, patch, dist, k_list, pseed, false);
            for (std::size_t ki = 0; ki < k_list.size(); ++ki) {
                double rv = static_cast<double>(c.robust_hits[ki]) / c.n_robust;
                double sv = static_cast<double>(c.success_hits[ki]) / c.n_success;
                report.rows.push_back(
                    {model.model_id, group, patch.patch_id, 'R', k_list[ki], rv, n, pseed});
                report.rows.push_back(
                    {model.model_id, group, patch.patch_id, 'S', k_list[ki], sv, n, pseed});
                bundle_r[ki].push_back(rv);
                bundle_s[ki].push_back(sv);
            }
        }
        if (!bundle.empty()) {
            for (std::size_t ki = 0; ki < k_list.size(); ++ki) {
                double rm = 0.0, sm = 0.0;
                for (double v : bundle_r[ki]) rm += v;
                for (double v : bundle_s[ki]) sm += v;
                rm /= bundle_r[ki].size();
                sm /= bundle_s[ki].size();
                report.rows.push_back(
                    {model.model_id, group, "bundle-mean", 'R', k_list[ki], rm, n, seed});
                report.rows.push_back(
                    {model.model_id, group, "bundle-mean", 'S', k_list[ki], sm, n, seed});
            }
            // Random baseline with the bundle's geometry.
            Patch rnd = random_patch(bundle[0].side(), bundle[0].channels(),
                                     seed ^ hash64(0xBA5E));
            rnd.target_class = bundle[0].target_class;
            std::uint64_t rseed = seed ^ hash64(0x2000);
            RsCounts c = eval_patched(model, testset, rnd, dist, k_list, rseed, false);
            for (std::size_t ki = 0; ki < k_list.size(); ++ki) {
                report.rows.push_back({model.model_id, group, "random", 'R', k_list[ki],
                                       static_cast<double>(c.robust_hits[ki]) / c.n_robust, n,
                                       rseed});
                report.rows.push_back({model.model_id, group, "random", 'S', k_list[ki],
                                       static_cast<double>(c.success_hits[ki]) / c.n_success, n,
                                       rseed});
            }
        }
    }
    return report;
}

void write_report_csv(const EvalReport& report, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open for write: " + path);
    os << "model_id,group,patch_id,metric,k,value,n,seed\n";
    os << std::setprecision(17);
    for (const EvalRow& r : report.rows)
        os << r.model_id << ',' << r.group << ',' << r.patch_id << ',' << r.metric << ','
           << r.k << ',' << r.value << ',' << r.n_samples << ',' << r.seed << '\n';
    if (!os) throw std::runtime_error("write failed: " + path);
}

EvalReport read_report_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open: " + path);
    std::string line;
    if (!std::getline(is, line) || line != "model_id,group,patch_id,metric,k,value,n,seed")
        throw std::runtime_error("report " + path + ": unexpected header");
    EvalReport report;
    std::map<std::size_t, bool> ks;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::istringstream ss(line);
        EvalRow r;
        std::string field;
        std::getline(ss, r.model_id, ',');
        std::getline(ss, r.group, ',');
        std::getline(ss, r.patch_id, ',');
        std::getline(ss, field, ',');
        r.metric = field.at(0);
        std::getline(ss, field, ',');
        r.k = std::stoul(field);
        std::getline(ss, field, ',');
        r.value = std::stod(field);
        std::getline(ss, field, ',');
        r.n_samples = std::stoul(field);
        std::getline(ss, field, ',');
        r.seed = std::stoull(field);
        ks[r.k] = true;
        report.rows.push_back(r);
    }
    for (auto& [k, _] : ks) report.k_list.push_back(k);
    return report;
}

void write_clean_vs_robust_csv(const EvalReport& report, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open for write: " + path);
    os << "model_id,group,k,C_k,R_k,S_k\n";
    os << std::setprecision(17);
    // Index rows by (model, k).
    std::map<std::pair<std::string, std::size_t>, std::array<double, 3>> cells;
    std::map<std::string, std::string> groups;
    for (const EvalRow& r : report.rows) {
        groups[r.model_id] = r.group;
        if (r.patch_id == "clean" && r.metric == 'C')
            cells[{r.model_id, r.k}][0] = r.value;
        else if (r.patch_id == "bundle-mean" && r.metric == 'R')
            cells[{r.model_id, r.k}][1] = r.value;
        else if (r.patch_id == "bundle-mean" && r.metric == 'S')
            cells[{r.model_id, r.k}][2] = r.value;
    }
    for (const auto& [key, v] : cells)
        os << key.first << ',' << groups[key.first] << ',' << key.second << ',' << v[0] << ','
           << v[1] << ',' << v[2] << '\n';
    if (!os) throw std::runtime_error("write failed: " + path);
}

std::vector<std::pair<std::size_t, CorrelationResult>> clean_vs_robust_correlation(
    const EvalReport& report) {
    std::map<std::size_t, std::map<std::string, std::pair<double, double>>> by_k;
    for (const EvalRow& r : report.rows) {
        if (r.patch_id == "clean" && r.metric == 'C') by_k[r.k][r.model_id].first = r.value;
        if (r.patch_id == "bundle-mean" && r.metric == 'R')
            by_k[r.k][r.model_id].second = r.value;
    }
    std::vector<std::pair<std::size_t, CorrelationResult>> out;
    for (const auto& [k, models] : by_k) {
        std::vector<double> xs, ys;
        for (const auto& [_, cr] : models) {
            xs.push_back(cr.first);
            ys.push_back(cr.second);
        }
        try {
            out.emplace_back(k, pearson(xs, ys));
        } catch (const std::invalid_argument&) {
            // Too few models or degenerate values at this k; skip.
        }
    }
    return out;
}

}  // namespace pf
