#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "pf/crafting.hpp"
#include "pf/datasets.hpp"
#include "pf/gradcheck.hpp"
#include "pf/io.hpp"
#include "pf/metrics.hpp"
#include "pf/nn.hpp"
#include "pf/parallel.hpp"
#include "pf/patchops.hpp"
#include "pf/rng.hpp"

namespace fs = std::filesystem;
using namespace pf;

namespace {

// Exit codes: 0 success, 1 internal numerical failure, 2 user/config error.
struct UserError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct RunConfig {
    // dataset
    std::size_t class_count = 10;
    std::size_t per_class = 400;
    std::size_t channels = 1;
    std::size_t height = 28;
    std::size_t width = 28;
    double noise_std = 0.1;
    std::uint64_t data_seed = 11;
    std::size_t test_n = 500;
    // training
    std::vector<std::size_t> ensemble_widths = {8, 10, 12};
    std::vector<std::size_t> heldout_widths = {6, 14, 16};
    std::vector<std::size_t> heldout_mlp_widths;
    double train_lr = 0.1;
    std::size_t train_epochs = 3;
    double distractor_fraction = 0.3;
    std::size_t train_batch = 32;
    std::uint64_t train_seed = 21;
    // crafting
    std::vector<std::size_t> targets = {0, 1, 2};
    std::vector<std::string> ensemble_models;  // empty = every ENSEMBLE model
    double craft_lr = 1.0;
    std::size_t craft_epochs = 300;
    std::size_t corpus_size = 9;
    std::size_t patch_side = 8;
    double rot_bound = -1.0;    // <0 = default pi/8
    double trans_bound = -1.0;  // <0 = derived from geometry
    std::size_t craft_batch = 0;
    bool clamp_each_update = true;
    std::uint64_t craft_seed = 31;
    // evaluation / emission
    std::vector<std::size_t> k_list = {1, 3, 5};
    std::uint64_t eval_seed = 41;
    std::uint64_t gen_seed = 51;
    bool exclude_target_class = false;
    // io
    std::string out_dir = "out";
    std::size_t threads = 0;
};

std::vector<std::size_t> parse_size_list(const std::string& s, const std::string& key) {
    std::vector<std::size_t> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        try {
            out.push_back(std::stoul(item));
        } catch (const std::exception&) {
            throw UserError("config key '" + key + "': bad integer '" + item + "'");
        }
    }
    return out;
}

std::vector<std::string> parse_str_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

bool parse_bool(const std::string& v, const std::string& key) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw UserError("config key '" + key + "': expected true/false, got '" + v + "'");
}

void apply_kv(RunConfig& cfg, const std::string& key, const std::string& value) {
    try {
        if (key == "class_count") cfg.class_count = std::stoul(value);
        else if (key == "per_class") cfg.per_class = std::stoul(value);
        else if (key == "channels") cfg.channels = std::stoul(value);
        else if (key == "height") cfg.height = std::stoul(value);
        else if (key == "width") cfg.width = std::stoul(value);
        else if (key == "noise_std") cfg.noise_std = std::stod(value);
        else if (key == "data_seed") cfg.data_seed = std::stoull(value);
        else if (key == "test_n") cfg.test_n = std::stoul(value);
        else if (key == "ensemble_widths") cfg.ensemble_widths = parse_size_list(value, key);
        else if (key == "heldout_widths") cfg.heldout_widths = parse_size_list(value, key);
        else if (key == "heldout_mlp_widths") cfg.heldout_mlp_widths = parse_size_list(value, key);
        else if (key == "train_lr") cfg.train_lr = std::stod(value);
        else if (key == "train_epochs") cfg.train_epochs = std::stoul(value);
        else if (key == "distractor_fraction") cfg.distractor_fraction = std::stod(value);
        else if (key == "train_batch") cfg.train_batch = std::stoul(value);
        else if (key == "train_seed") cfg.train_seed = std::stoull(value);
        else if (key == "targets") cfg.targets = parse_size_list(value, key);
        else if (key == "ensemble_models") cfg.ensemble_models = parse_str_list(value);
        else if (key == "craft_lr") cfg.craft_lr = std::stod(value);
        else if (key == "craft_epochs") cfg.craft_epochs = std::stoul(value);
        else if (key == "corpus_size") cfg.corpus_size = std::stoul(value);
        else if (key == "patch_side") cfg.patch_side = std::stoul(value);
        else if (key == "rot_bound") cfg.rot_bound = std::stod(value);
        else if (key == "trans_bound") cfg.trans_bound = std::stod(value);
        else if (key == "craft_batch") cfg.craft_batch = std::stoul(value);
        else if (key == "clamp_each_update") cfg.clamp_each_update = parse_bool(value, key);
        else if (key == "craft_seed") cfg.craft_seed = std::stoull(value);
        else if (key == "k_list") cfg.k_list = parse_size_list(value, key);
        else if (key == "eval_seed") cfg.eval_seed = std::stoull(value);
        else if (key == "gen_seed") cfg.gen_seed = std::stoull(value);
        else if (key == "exclude_target_class") cfg.exclude_target_class = parse_bool(value, key);
        else if (key == "out") cfg.out_dir = value;
        else if (key == "threads") cfg.threads = std::stoul(value);
        else throw UserError("unknown config key '" + key + "'");
    } catch (const UserError&) {
        throw;
    } catch (const std::exception&) {
        throw UserError("config key '" + key + "': bad value '" + value + "'");
    }
}

void load_config_file(RunConfig& cfg, const std::string& path) {
    std::ifstream is(path);
    if (!is) throw UserError("cannot open config file: " + path);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        auto notspace = [](unsigned char c) { return !std::isspace(c); };
        line.erase(line.begin(), std::find_if(line.begin(), line.end(), notspace));
        line.erase(std::find_if(line.rbegin(), line.rend(), notspace).base(), line.end());
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw UserError(path + ":" + std::to_string(lineno) + ": expected key = value");
        std::string key = line.substr(0, eq);
        std::string value = line.substr(eq + 1);
        key.erase(std::find_if(key.rbegin(), key.rend(), notspace).base(), key.end());
        value.erase(value.begin(), std::find_if(value.begin(), value.end(), notspace));
        apply_kv(cfg, key, value);
    }
}

// Conv stack with a (near-)global max pool head: the logits track the
// strongest local feature response wherever it appears in the frame.
std::vector<LayerSpec> convnet_spec(const RunConfig& cfg, std::size_t width) {
    std::size_t h1 = (cfg.height - 4) / 2, w1 = (cfg.width - 4) / 2;
    std::size_t h2 = h1 - 2, w2 = w1 - 2;
    std::size_t pool = std::gcd(h2, w2);  // global when the frame is square
    return {LayerSpec::conv2d(cfg.channels, width, 5), LayerSpec::relu(),
            LayerSpec::maxpool2d(2), LayerSpec::conv2d(width, 2 * width, 3),
            LayerSpec::relu(),       LayerSpec::maxpool2d(pool),
            LayerSpec::flatten(),
            LayerSpec::dense(2 * width * (h2 / pool) * (w2 / pool), cfg.class_count)};
}

std::vector<LayerSpec> mlp_spec(const RunConfig& cfg, std::size_t width) {
    return {LayerSpec::flatten(),
            LayerSpec::dense(cfg.channels * cfg.height * cfg.width, width), LayerSpec::relu(),
            LayerSpec::dense(width, cfg.class_count)};
}

SplitResult make_splits(const RunConfig& cfg) {
    LabeledDataset ds = gen_shapes_dataset(cfg.class_count, cfg.per_class, cfg.channels,
                                           cfg.height, cfg.width, cfg.noise_std, cfg.data_seed);
    return select_splits(ds, cfg.test_n, cfg.data_seed ^ 0x5517ULL);
}

TransformDistribution resolve_dist(const RunConfig& cfg) {
    TransformDistribution d = default_distribution(cfg.patch_side, cfg.height, cfg.width);
    if (cfg.rot_bound >= 0.0) d.rot_bound = cfg.rot_bound;
    if (cfg.trans_bound >= 0.0) d.trans_bound = cfg.trans_bound;
    return d;
}

fs::path models_dir(const RunConfig& cfg) { return fs::path(cfg.out_dir) / "models"; }
fs::path patches_dir(const RunConfig& cfg) { return fs::path(cfg.out_dir) / "patches"; }

std::vector<TrainedModel> load_all_models(const RunConfig& cfg) {
    fs::path dir = models_dir(cfg);
    if (!fs::is_directory(dir)) throw UserError("no model directory: " + dir.string());
    std::vector<std::string> files;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.path().extension() == ".pfm") files.push_back(e.path().string());
    std::sort(files.begin(), files.end());
    if (files.empty()) throw UserError("no model files in " + dir.string());
    std::vector<TrainedModel> models;
    for (const std::string& f : files) models.push_back(load_model(f));
    return models;
}

std::vector<Patch> load_bundle(const RunConfig& cfg) {
    fs::path dir = patches_dir(cfg);
    if (!fs::is_directory(dir)) throw UserError("no patch directory: " + dir.string());
    std::vector<std::string> files;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.path().extension() == ".pfp") files.push_back(e.path().string());
    std::sort(files.begin(), files.end());
    if (files.empty()) throw UserError("no patch files in " + dir.string());
    std::vector<Patch> bundle;
    for (const std::string& f : files) bundle.push_back(load_patch(f));
    return bundle;
}

int cmd_train(const RunConfig& cfg) {
    SplitResult split = make_splits(cfg);
    fs::create_directories(models_dir(cfg));
    // Distractor occlusions teach the models to shrug off benign clutter, so
    // the benchmark's random-patch baseline stays near clean accuracy.
    LabeledDataset trainset =
        cfg.distractor_fraction > 0.0
            ? add_distractor_occlusions(split.reservoir, cfg.distractor_fraction,
                                        cfg.patch_side, resolve_dist(cfg),
                                        cfg.data_seed ^ 0xD157ULL)
            : split.reservoir;

    struct Job {
        std::string id;
        std::vector<LayerSpec> spec;
        ModelGroup group;
    };
    std::vector<Job> jobs;
    for (std::size_t i = 0; i < cfg.ensemble_widths.size(); ++i)
        jobs.push_back({"ens" + std::to_string(i) + "-w" + std::to_string(cfg.ensemble_widths[i]),
                        convnet_spec(cfg, cfg.ensemble_widths[i]), ModelGroup::Ensemble});
    for (std::size_t i = 0; i < cfg.heldout_widths.size(); ++i)
        jobs.push_back({"held" + std::to_string(i) + "-w" + std::to_string(cfg.heldout_widths[i]),
                        convnet_spec(cfg, cfg.heldout_widths[i]), ModelGroup::HeldOutStandard});
    for (std::size_t i = 0; i < cfg.heldout_mlp_widths.size(); ++i)
        jobs.push_back(
            {"mlp" + std::to_string(i) + "-w" + std::to_string(cfg.heldout_mlp_widths[i]),
             mlp_spec(cfg, cfg.heldout_mlp_widths[i]), ModelGroup::HeldOutOther});

    std::cout << "model_id,group,train_acc,clean_acc_top1 (" << cfg.class_count
              << " classes)\n";
    for (std::size_t i = 0; i < jobs.size(); ++i) {
        TrainConfig tc{cfg.train_lr, cfg.train_epochs, cfg.train_batch,
                       cfg.train_seed + 1000 * i};
        TrainedModel m = train_model(jobs[i].spec, trainset, tc);
        m.model_id = jobs[i].id;
        m.group = jobs[i].group;
        double train_acc = m.clean_acc_cache.value_or(0.0);
        double clean = clean_accuracy(m, split.testset, 1);
        m.clean_acc_cache = clean;
        save_model(m, (models_dir(cfg) / (jobs[i].id + ".pfm")).string());
        std::cout << m.model_id << ',' << group_name(m.group) << ',' << std::fixed
                  << std::setprecision(4) << train_acc << ',' << clean << '\n';
    }
    return 0;
}

int cmd_craft(const RunConfig& cfg) {
    SplitResult split = make_splits(cfg);
    std::vector<TrainedModel> all = load_all_models(cfg);

    std::vector<TrainedModel> ensemble;
    if (cfg.ensemble_models.empty()) {
        for (TrainedModel& m : all)
            if (m.group == ModelGroup::Ensemble) ensemble.push_back(std::move(m));
    } else {
        for (const std::string& id : cfg.ensemble_models) {
            auto it = std::find_if(all.begin(), all.end(),
                                   [&](const TrainedModel& m) { return m.model_id == id; });
            if (it == all.end()) throw UserError("ensemble_models: no model named '" + id + "'");
            if (it->group != ModelGroup::Ensemble)
                throw UserError("ensemble_models: model '" + id + "' is in group " +
                                group_name(it->group) + ", not ENSEMBLE");
            ensemble.push_back(*it);
        }
    }
    if (ensemble.empty()) throw UserError("no ENSEMBLE models available for crafting");

    CraftConfig cc;
    cc.learning_rate = cfg.craft_lr;
    cc.epochs = cfg.craft_epochs;
    cc.corpus_size = cfg.corpus_size;
    cc.patch_side = cfg.patch_side;
    cc.dist = resolve_dist(cfg);
    cc.batch_size = cfg.craft_batch;
    cc.clamp_each_update = cfg.clamp_each_update;
    cc.seed = cfg.craft_seed;

    fs::create_directories(patches_dir(cfg));
    auto results = craft_bundle(ensemble, split.reservoir, cfg.targets, cc);
    for (const CraftResult& r : results) {
        save_patch(r.patch, (patches_dir(cfg) / (r.patch.patch_id + ".pfp")).string());
        write_loss_log(r, (patches_dir(cfg) / ("loss_" + r.patch.patch_id + ".csv")).string());
        std::cout << r.patch.patch_id << ": final loss " << std::setprecision(6)
                  << r.patch.provenance.final_loss << ", ensemble success "
                  << r.final_ensemble_success << '\n';
    }
    return 0;
}

int cmd_gen_dataset(const RunConfig& cfg) {
    SplitResult split = make_splits(cfg);
    std::vector<Patch> bundle = load_bundle(cfg);
    fs::path out = fs::path(cfg.out_dir) / "patched";
    Manifest m = emit_patched_dataset(split.testset, bundle, resolve_dist(cfg), cfg.gen_seed,
                                      out.string());
    save_manifest(m, (out / "manifest.json").string());
    std::cout << "wrote " << m.entries.size() << " entries (" << m.bundle_size << " patches x "
              << m.testset_size << " images) to " << out.string() << '\n';
    return 0;
}

void print_group_table(const EvalReport& report, std::ostream& os) {
    // Table-2-shaped view: mean over models per group, C / bundle-mean R / S.
    std::map<std::string, std::map<std::pair<char, std::size_t>, std::pair<double, int>>> acc;
    for (const EvalRow& r : report.rows) {
        bool keep = (r.metric == 'C' && r.patch_id == "clean") ||
                    (r.patch_id == "bundle-mean" && (r.metric == 'R' || r.metric == 'S'));
        if (!keep) continue;
        auto& cell = acc[r.group][{r.metric, r.k}];
        cell.first += r.value;
        cell.second += 1;
    }
    std::set<std::size_t> ks;
    for (const EvalRow& r : report.rows) ks.insert(r.k);
    os << std::left << std::setw(20) << "group";
    for (char m : {'C', 'R', 'S'})
        for (std::size_t k : ks) os << std::setw(10) << (std::string(1, m) + std::to_string(k));
    os << '\n';
    for (const auto& [group, cells] : acc) {
        os << std::setw(20) << group;
        for (char m : {'C', 'R', 'S'})
            for (std::size_t k : ks) {
                auto it = cells.find({m, k});
                if (it == cells.end())
                    os << std::setw(10) << "-";
                else
                    os << std::setw(10) << std::fixed << std::setprecision(4)
                       << it->second.first / it->second.second;
            }
        os << '\n';
    }
}

void print_pearson_block(const EvalReport& report, std::ostream& os) {
    auto corr = clean_vs_robust_correlation(report);
    if (corr.empty()) {
        os << "clean-vs-robust correlation: not enough models\n";
        return;
    }
    os << "clean-vs-robust correlation (per k):\n";
    for (const auto& [k, c] : corr)
        os << "  k=" << k << "  rho=" << std::fixed << std::setprecision(4) << c.rho
           << "  p=" << c.p_value << "  slope=" << c.slope << "  intercept=" << c.intercept
           << "  n=" << c.n << '\n';
}

int cmd_eval(const RunConfig& cfg) {
    SplitResult split = make_splits(cfg);
    std::vector<TrainedModel> models = load_all_models(cfg);
    std::vector<Patch> bundle = load_bundle(cfg);
    EvalReport report =
        run_benchmark(models, bundle, split.testset, resolve_dist(cfg), cfg.k_list, cfg.eval_seed);
    write_report_csv(report, (fs::path(cfg.out_dir) / "report.csv").string());
    write_clean_vs_robust_csv(report, (fs::path(cfg.out_dir) / "clean_vs_robust.csv").string());
    std::cout << "report over " << models.size() << " models, " << bundle.size()
              << " patches, " << split.testset.size() << " test images, "
              << report.class_count << " classes\n";
    print_group_table(report, std::cout);
    print_pearson_block(report, std::cout);
    return 0;
}

int cmd_report(const RunConfig& cfg) {
    fs::path path = fs::path(cfg.out_dir) / "report.csv";
    if (!fs::exists(path)) throw UserError("no report at " + path.string());
    EvalReport report = read_report_csv(path.string());
    print_group_table(report, std::cout);
    print_pearson_block(report, std::cout);
    return 0;
}

int cmd_gradcheck(double tolerance, std::size_t instances, std::uint64_t seed, bool corrupt) {
    GradCheckOptions opts;
    opts.tolerance = tolerance;
    opts.instances = instances;
    opts.seed = seed;
    opts.corrupt = corrupt;
    auto results = run_gradcheck(opts);
    bool all_pass = true;
    for (const GradCheckResult& r : results) {
        std::cout << (r.pass ? "PASS" : "FAIL") << "  " << std::left << std::setw(28) << r.name
                  << "  max_rel_err=" << std::scientific << std::setprecision(3)
                  << r.max_rel_err << '\n';
        all_pass = all_pass && r.pass;
    }
    std::cout << (all_pass ? "gradcheck: all gradients match finite differences\n"
                           : "gradcheck: FAILURES above tolerance\n");
    return all_pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"patchlab: craft transferable adversarial patches against a model ensemble "
                 "and benchmark classifiers on the perturbed dataset"};
    app.require_subcommand(1);

    std::string config_path;
    RunConfig cfg;
    bool seed_set = false, out_set = false, threads_set = false, k_set = false;
    std::uint64_t seed_flag = 0;
    std::string out_flag, k_flag;
    std::size_t threads_flag = 0;

    app.add_option("--config", config_path, "key = value configuration file");
    app.add_option("--seed", seed_flag, "master seed; overrides every *_seed config value")
        ->each([&](const std::string&) { seed_set = true; });
    app.add_option("--out", out_flag, "output directory (flag wins over config)")
        ->each([&](const std::string&) { out_set = true; });
    app.add_option("--threads", threads_flag, "worker threads, 0 = auto (flag wins over config)")
        ->each([&](const std::string&) { threads_set = true; });
    app.add_option("--k", k_flag, "comma-separated top-k list, e.g. 1,3,5 (flag wins over config)")
        ->each([&](const std::string&) { k_set = true; });

    auto* train = app.add_subcommand("train", "train the ensemble and held-out models");
    auto* craft = app.add_subcommand("craft", "optimize the patch bundle on the ensemble");
    auto* gen = app.add_subcommand("gen-dataset", "emit the patched dataset + manifest");
    auto* eval = app.add_subcommand("eval", "run the benchmark and write report CSVs");
    auto* report = app.add_subcommand("report", "re-print tables from an existing report.csv");
    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient verification");

    double gc_tolerance = 1e-3;
    std::size_t gc_instances = 20;
    std::uint64_t gc_seed = 7;
    bool gc_corrupt = false;
    gradcheck->add_option("--tolerance", gc_tolerance, "max per-element relative error");
    gradcheck->add_option("--instances", gc_instances, "random instances per check");
    gradcheck->add_option("--gc-seed", gc_seed, "gradient-check seed");
    gradcheck->add_flag("--corrupt", gc_corrupt)->group("");  // fault-injection, test-only

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        if (!config_path.empty()) load_config_file(cfg, config_path);
        // Flags win over config file values.
        if (out_set) cfg.out_dir = out_flag;
        if (threads_set) cfg.threads = threads_flag;
        if (k_set) cfg.k_list = parse_size_list(k_flag, "--k");
        if (seed_set) {
            cfg.data_seed = seed_flag;
            cfg.train_seed = seed_flag + 1;
            cfg.craft_seed = seed_flag + 2;
            cfg.eval_seed = seed_flag + 3;
            cfg.gen_seed = seed_flag + 4;
        }
        set_thread_count(cfg.threads);

        if (train->parsed()) return cmd_train(cfg);
        if (craft->parsed()) return cmd_craft(cfg);
        if (gen->parsed()) return cmd_gen_dataset(cfg);
        if (eval->parsed()) return cmd_eval(cfg);
        if (report->parsed()) return cmd_report(cfg);
        if (gradcheck->parsed()) return cmd_gradcheck(gc_tolerance, gc_instances, gc_seed, gc_corrupt);
        return 2;
    } catch (const UserError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << '\n';
        return 1;
    }
}
