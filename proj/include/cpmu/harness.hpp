#ifndef CPMU_HARNESS_HPP
#define CPMU_HARNESS_HPP

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "cpmu/baselines.hpp"
#include "cpmu/dataset.hpp"
#include "cpmu/metrics.hpp"
#include "cpmu/model.hpp"
#include "cpmu/splits.hpp"
#include "cpmu/unlearn.hpp"

namespace cpmu {

struct EvalConfig {
    double alpha = 0.1;
    std::vector<int> c_values;  // empty means "the full label-set size"
    std::vector<int> d_values;
};

struct ExperimentConfig {
    // data generator
    int n_classes = 10;
    int n_dims = 8;
    int n_per_class = 200;
    double separation = 6.0;
    int hidden_width = 64;
    // scenario
    ScenarioSpec scenario;
    int n_clusters = 10;       // group_wise
    int forget_count = 0;      // instance_wise: sample this many train ids per seed
    bool rotate_forget = false;  // class_wise: seed k forgets a shifted class
    // training and unlearning
    TrainConfig train;
    std::string method = "none";  // cpmu | rt | amn | nabla_tau | none
    CpmuConfig cpmu;
    BaselineConfig baseline;
    EvalConfig eval;
    std::vector<std::uint64_t> seeds = {1};
    std::string output_dir = "out";
};

// ---------------------------------------------------------------------------
// Flat key=value config files with dotted sections, e.g. `train.epochs=6`.
// `#` starts a comment; whitespace around keys and values is ignored.
// ---------------------------------------------------------------------------

namespace detail {

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

inline double to_double(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const double x = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw ConfigError("config: key '" + key + "' expects a number, got '" + v + "'");
    }
}

inline long to_long(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const long x = std::stol(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw ConfigError("config: key '" + key + "' expects an integer, got '" + v + "'");
    }
}

inline bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("config: key '" + key + "' expects true/false, got '" + v + "'");
}

template <typename T>
inline std::vector<T> to_list(const std::string& key, const std::string& v) {
    std::vector<T> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (item.empty()) continue;
        out.push_back(static_cast<T>(to_long(key, item)));
    }
    if (out.empty()) throw ConfigError("config: key '" + key + "' expects a non-empty list");
    return out;
}

}  // namespace detail

inline ExperimentConfig parse_config(std::istream& is) {
    ExperimentConfig cfg;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) + ": expected key=value");
        const std::string key = detail::trim(line.substr(0, eq));
        const std::string val = detail::trim(line.substr(eq + 1));

        using detail::to_bool;
        using detail::to_double;
        using detail::to_list;
        using detail::to_long;

        if (key == "data.n_classes") cfg.n_classes = static_cast<int>(to_long(key, val));
        else if (key == "data.n_dims") cfg.n_dims = static_cast<int>(to_long(key, val));
        else if (key == "data.n_per_class") cfg.n_per_class = static_cast<int>(to_long(key, val));
        else if (key == "data.separation") cfg.separation = to_double(key, val);
        else if (key == "model.hidden_width") cfg.hidden_width = static_cast<int>(to_long(key, val));
        else if (key == "scenario.kind") {
            if (val == "class_wise") cfg.scenario.kind = ScenarioKind::class_wise;
            else if (val == "group_wise") cfg.scenario.kind = ScenarioKind::group_wise;
            else if (val == "instance_wise") cfg.scenario.kind = ScenarioKind::instance_wise;
            else throw ConfigError("config: key 'scenario.kind' got unknown value '" + val + "'");
        } else if (key == "scenario.forget_values")
            cfg.scenario.forget_values = to_list<std::int64_t>(key, val);
        else if (key == "scenario.forget_count") cfg.forget_count = static_cast<int>(to_long(key, val));
        else if (key == "scenario.n_clusters") cfg.n_clusters = static_cast<int>(to_long(key, val));
        else if (key == "scenario.rotate_forget") cfg.rotate_forget = to_bool(key, val);
        else if (key.rfind("scenario.fractions.", 0) == 0)
            cfg.scenario.fractions[key.substr(19)] = to_double(key, val);
        else if (key == "train.learning_rate") cfg.train.learning_rate = to_double(key, val);
        else if (key == "train.momentum") cfg.train.momentum = to_double(key, val);
        else if (key == "train.weight_decay") cfg.train.weight_decay = to_double(key, val);
        else if (key == "train.epochs") cfg.train.epochs = static_cast<int>(to_long(key, val));
        else if (key == "train.batch_size") cfg.train.batch_size = static_cast<int>(to_long(key, val));
        else if (key == "method") {
            if (val != "cpmu" && val != "rt" && val != "amn" && val != "nabla_tau" && val != "none")
                throw ConfigError("config: key 'method' got unknown value '" + val + "'");
            cfg.method = val;
        } else if (key == "cpmu.alpha") cfg.cpmu.alpha = to_double(key, val);
        else if (key == "cpmu.delta") cfg.cpmu.delta = to_double(key, val);
        else if (key == "cpmu.gamma") cfg.cpmu.gamma = to_double(key, val);
        else if (key == "cpmu.lambda") cfg.cpmu.lambda_reg = to_double(key, val);
        else if (key == "cpmu.reg_norm") {
            if (val == "l2_squared") cfg.cpmu.reg_norm = RegNorm::l2_squared;
            else if (val == "l1") cfg.cpmu.reg_norm = RegNorm::l1;
            else throw ConfigError("config: key 'cpmu.reg_norm' got unknown value '" + val + "'");
        } else if (key == "cpmu.epochs") cfg.cpmu.epochs = static_cast<int>(to_long(key, val));
        else if (key == "cpmu.learning_rate") cfg.cpmu.learning_rate = to_double(key, val);
        else if (key == "cpmu.batch_size") cfg.cpmu.batch_size = static_cast<int>(to_long(key, val));
        else if (key == "cpmu.loss_direction") {
            if (val == "corrected") cfg.cpmu.loss_direction = LossDirection::corrected;
            else if (val == "as_written") cfg.cpmu.loss_direction = LossDirection::as_written;
            else throw ConfigError("config: key 'cpmu.loss_direction' got unknown value '" + val + "'");
        } else if (key == "cpmu.momentum") cfg.cpmu.momentum = to_double(key, val);
        else if (key == "cpmu.weight_decay") cfg.cpmu.weight_decay = to_double(key, val);
        else if (key == "baseline.alpha_mix") cfg.baseline.alpha_mix = to_double(key, val);
        else if (key == "baseline.epochs") cfg.baseline.epochs = static_cast<int>(to_long(key, val));
        else if (key == "baseline.learning_rate") cfg.baseline.learning_rate = to_double(key, val);
        else if (key == "baseline.batch_size")
            cfg.baseline.batch_size = static_cast<int>(to_long(key, val));
        else if (key == "eval.alpha") cfg.eval.alpha = to_double(key, val);
        else if (key == "eval.c_values") cfg.eval.c_values = to_list<int>(key, val);
        else if (key == "eval.d_values") cfg.eval.d_values = to_list<int>(key, val);
        else if (key == "seeds") cfg.seeds = to_list<std::uint64_t>(key, val);
        else if (key == "output_dir") cfg.output_dir = val;
        else throw ConfigError("config: unknown key '" + key + "'");
    }
    if (cfg.seeds.empty()) throw ConfigError("config: key 'seeds' must be non-empty");
    if (cfg.scenario.fractions.empty())
        cfg.scenario.fractions = {{"train", 0.5},
                                  {"unlearn", 0.1},
                                  {"unlearn_calib", 0.2},
                                  {"test", 0.1},
                                  {"test_calib", 0.1}};
    if (cfg.eval.c_values.empty()) cfg.eval.c_values = {cfg.n_classes};
    if (cfg.eval.d_values.empty()) cfg.eval.d_values = {cfg.n_classes};
    for (int c : cfg.eval.c_values)
        if (c < 0 || c > cfg.n_classes) throw ConfigError("config: key 'eval.c_values' out of range");
    for (int d : cfg.eval.d_values)
        if (d < 0 || d > cfg.n_classes) throw ConfigError("config: key 'eval.d_values' out of range");
    return cfg;
}

inline ExperimentConfig parse_config_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("config: cannot open " + path);
    return parse_config(is);
}

// ---------------------------------------------------------------------------
// Per-seed pipeline pieces. Every stage draws from its own sub-stream of the
// seed so one seed's results never depend on another's.
// ---------------------------------------------------------------------------

namespace detail {

struct SeedRun {
    Dataset data;
    SplitBundle bundle;
    ModelParams theta_o;
};

inline std::set<int> forget_labels_for(const ExperimentConfig& cfg, std::size_t seed_index) {
    std::set<int> out;
    for (auto v : cfg.scenario.forget_values) {
        int label = static_cast<int>(v);
        if (cfg.rotate_forget)
            label = static_cast<int>((v + static_cast<std::int64_t>(seed_index)) % cfg.n_classes);
        out.insert(label);
    }
    return out;
}

inline SeedRun prepare_seed(const ExperimentConfig& cfg, std::uint64_t seed,
                            std::size_t seed_index) {
    SeedRun run;
    run.data = generate_mixture(cfg.n_classes, cfg.n_dims, cfg.n_per_class, cfg.separation,
                                mix_seed(seed, 1));
    const std::uint64_t split_seed = mix_seed(seed, 2);

    auto train_model = [&](const Dataset& pool) {
        TrainConfig tc = cfg.train;
        tc.seed = mix_seed(seed, 4);
        const ModelParams init =
            init_params(cfg.n_dims, {cfg.hidden_width}, cfg.n_classes, mix_seed(seed, 3));
        return train(init, pool, tc);
    };

    switch (cfg.scenario.kind) {
        case ScenarioKind::class_wise: {
            run.bundle = split_class_wise(run.data, forget_labels_for(cfg, seed_index),
                                          cfg.scenario.fractions, split_seed);
            run.theta_o = train_model(run.bundle.train);
            break;
        }
        case ScenarioKind::group_wise: {
            // Pool carving ignores the forget criterion, so a provisional
            // class-wise split with the same seed yields the same train pool;
            // the model trained on it provides the clustering embeddings.
            std::set<int> any_label = {run.data.labels.front()};
            const SplitBundle provisional =
                split_class_wise(run.data, any_label, cfg.scenario.fractions, split_seed);
            run.theta_o = train_model(provisional.train);
            Matrix embeddings(run.data.size(), static_cast<std::size_t>(cfg.hidden_width));
            for (std::size_t i = 0; i < run.data.size(); ++i) {
                const auto h = penultimate(run.theta_o, run.data.features.row(i));
                for (std::size_t j = 0; j < h.size(); ++j) embeddings(i, j) = h[j];
            }
            std::set<int> clusters;
            for (auto v : cfg.scenario.forget_values) clusters.insert(static_cast<int>(v));
            run.bundle = split_group_wise(run.data, embeddings, cfg.n_clusters, clusters,
                                          cfg.scenario.fractions, split_seed);
            break;
        }
        case ScenarioKind::instance_wise: {
            std::set<std::int64_t> ids(cfg.scenario.forget_values.begin(),
                                       cfg.scenario.forget_values.end());
            if (cfg.forget_count > 0) {
                // discover the train pool, then sample ids from it
                const SplitBundle probe =
                    split_instance_wise(run.data, {}, cfg.scenario.fractions, split_seed);
                std::vector<std::int64_t> pool_ids = probe.train.ids;
                Rng rng(mix_seed(seed, 6));
                rng.shuffle(pool_ids);
                if (static_cast<std::size_t>(cfg.forget_count) > pool_ids.size())
                    throw ConfigError("config: key 'scenario.forget_count' exceeds train pool");
                ids.clear();
                ids.insert(pool_ids.begin(), pool_ids.begin() + cfg.forget_count);
            }
            run.bundle = split_instance_wise(run.data, ids, cfg.scenario.fractions, split_seed);
            run.theta_o = train_model(run.bundle.train);
            break;
        }
    }
    return run;
}

inline ModelParams apply_method(const ExperimentConfig& cfg, const SeedRun& run,
                                std::uint64_t seed, double& tt_seconds,
                                std::vector<EpochTrace>* trace_out = nullptr) {
    const auto t0 = std::chrono::steady_clock::now();
    ModelParams theta_u = run.theta_o;
    if (cfg.method == "cpmu") {
        CpmuConfig mc = cfg.cpmu;
        mc.seed = mix_seed(seed, 5);
        auto [params, trace] = unlearn(run.theta_o, run.bundle, mc);
        theta_u = std::move(params);
        if (trace_out) *trace_out = std::move(trace);
    } else if (cfg.method == "rt") {
        TrainConfig tc = cfg.train;
        tc.seed = mix_seed(seed, 5);
        theta_u = retrain_from_scratch(run.bundle, cfg.hidden_width, tc);
    } else if (cfg.method == "amn") {
        BaselineConfig bc = cfg.baseline;
        bc.method = BaselineMethod::amn;
        bc.seed = mix_seed(seed, 5);
        theta_u = amn_unlearn(run.theta_o, run.bundle, bc);
    } else if (cfg.method == "nabla_tau") {
        BaselineConfig bc = cfg.baseline;
        bc.method = BaselineMethod::nabla_tau;
        bc.seed = mix_seed(seed, 5);
        theta_u = nabla_tau_unlearn(run.theta_o, run.bundle, nabla_tau_validation(run.bundle), bc);
    } else if (cfg.method != "none") {
        throw ConfigError("config: unknown method '" + cfg.method + "'");
    }
    tt_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (cfg.method == "none") tt_seconds = 0.0;
    return theta_u;
}

inline std::vector<std::pair<std::string, std::optional<double>>> flat_metrics(
    const MetricsReport& r) {
    std::vector<std::pair<std::string, std::optional<double>>> out;
    out.emplace_back("alpha", r.alpha_used);
    out.emplace_back("c", static_cast<double>(r.c));
    out.emplace_back("d", static_cast<double>(r.d));
    for (const auto& [k, v] : r.accuracy) out.emplace_back("acc." + k, v);
    for (const auto& [k, v] : r.ecf) out.emplace_back("ecf." + k + ".c", v);
    for (const auto& [k, v] : r.eucf) out.emplace_back("eucf." + k + ".d", v);
    for (const auto& [k, v] : r.inefficiency)
        out.emplace_back("ineff." + k + (k[1] == 'r' ? ".c" : ".d"), v);
    out.emplace_back("h_ce", r.h_ce);
    out.emplace_back("beta_hat", r.beta_hat);
    out.emplace_back("tt_s", r.tt_seconds);
    return out;
}

struct RunningStat {
    std::vector<double> values;
    void add(double v) { values.push_back(v); }
    // two-pass mean and sample standard deviation
    std::pair<double, double> mean_std() const {
        const double n = static_cast<double>(values.size());
        double mean = 0.0;
        for (double v : values) mean += v;
        mean /= n;
        if (values.size() < 2) return {mean, 0.0};
        double ss = 0.0;
        for (double v : values) ss += (v - mean) * (v - mean);
        return {mean, std::sqrt(ss / (n - 1.0))};
    }
};

}  // namespace detail

/// Runs the configured method for every seed and every (c,d) pair, writing one
/// metric CSV per (seed, c, d) plus aggregate.csv / aggregate.json with mean
/// and standard deviation rows over seeds. `only_seed` restricts execution to
/// a single seed and skips aggregation.
inline std::string run_experiment(const ExperimentConfig& cfg,
                                  std::optional<std::uint64_t> only_seed = std::nullopt) {
    namespace fs = std::filesystem;
    fs::create_directories(cfg.output_dir);
    if (!fs::is_directory(cfg.output_dir))
        throw ConfigError("config: output_dir not writable: " + cfg.output_dir);

    if (only_seed &&
        std::find(cfg.seeds.begin(), cfg.seeds.end(), *only_seed) == cfg.seeds.end())
        throw ConfigError("config: seed " + std::to_string(*only_seed) +
                          " is not in the configured seed list");

    // (c,d,key) -> stat over seeds
    std::map<std::tuple<int, int, std::string>, detail::RunningStat> stats;
    std::vector<std::string> key_order;

    for (std::size_t si = 0; si < cfg.seeds.size(); ++si) {
        const std::uint64_t seed = cfg.seeds[si];
        if (only_seed && seed != *only_seed) continue;
        const detail::SeedRun run = detail::prepare_seed(cfg, seed, si);
        double tt = 0.0;
        std::vector<EpochTrace> trace;
        const ModelParams theta_u = detail::apply_method(cfg, run, seed, tt, &trace);
        if (!trace.empty()) {
            std::ofstream ts(fs::path(cfg.output_dir) /
                             ("trace_seed" + std::to_string(seed) + ".tsv"));
            write_trace(trace, ts);
        }
        for (int c : cfg.eval.c_values) {
            for (int d : cfg.eval.d_values) {
                MetricsReport rep = evaluate_all(theta_u, run.bundle, cfg.eval.alpha, c, d);
                rep.tt_seconds = tt;
                const std::string name = "seed" + std::to_string(seed) + "_c" + std::to_string(c) +
                                         "_d" + std::to_string(d) + ".csv";
                std::ofstream os(fs::path(cfg.output_dir) / name);
                os << "key,value\n";
                for (const auto& [k, v] : detail::flat_metrics(rep))
                    os << k << "," << format_metric(v) << "\n";
                for (const auto& [k, v] : detail::flat_metrics(rep)) {
                    if (!v) continue;
                    auto key = std::tuple{c, d, k};
                    if (!stats.count(key)) key_order.push_back(k);
                    stats[key].add(*v);
                }
            }
        }
    }

    if (!only_seed) {
        std::ofstream agg(fs::path(cfg.output_dir) / "aggregate.csv");
        agg << "c,d,key,mean,std,n\n";
        nlohmann::ordered_json jroot;
        jroot["method"] = cfg.method;
        jroot["scenario"] = to_string(cfg.scenario.kind);
        jroot["seeds"] = cfg.seeds;
        auto& jres = jroot["results"];
        for (int c : cfg.eval.c_values) {
            for (int d : cfg.eval.d_values) {
                nlohmann::ordered_json jcell;
                jcell["c"] = c;
                jcell["d"] = d;
                for (const auto& [key, stat] : stats) {
                    if (std::get<0>(key) != c || std::get<1>(key) != d) continue;
                    const auto [mean, sd] = stat.mean_std();
                    agg << c << "," << d << "," << std::get<2>(key) << "," << format_metric(mean)
                        << "," << format_metric(sd) << "," << stat.values.size() << "\n";
                    jcell["metrics"][std::get<2>(key)] = {{"mean", mean}, {"std", sd},
                                                          {"n", stat.values.size()}};
                }
                jres.push_back(jcell);
            }
        }
        std::ofstream js(fs::path(cfg.output_dir) / "aggregate.json");
        js << jroot.dump(2) << "\n";
    }
    return cfg.output_dir;
}

enum class SweepKey { c, alpha, lambda, reg_norm };

inline SweepKey parse_sweep_key(const std::string& s) {
    if (s == "c") return SweepKey::c;
    if (s == "alpha") return SweepKey::alpha;
    if (s == "lambda") return SweepKey::lambda;
    if (s == "reg_norm") return SweepKey::reg_norm;
    throw ConfigError("ablation: unknown sweep key '" + s + "'");
}

/// Sweeps one knob over a grid, reusing the trained base model per seed (none
/// of the sweepable keys affect base training) and reusing the unlearned model
/// when the key only affects evaluation. Emits a long-format table keyed by
/// (sweep value, seed).
inline std::string run_ablation(const ExperimentConfig& cfg, SweepKey sweep,
                                const std::vector<std::string>& grid) {
    namespace fs = std::filesystem;
    if (grid.empty()) throw ConfigError("ablation: empty grid");
    fs::create_directories(cfg.output_dir);

    const std::vector<std::string> metric_keys = {"ecf.Tr.c",  "ecf.Dr.c",  "ecf.Vr.c",
                                                  "eucf.Tf.d", "eucf.Df.d", "eucf.Vf.d"};
    std::ofstream os(fs::path(cfg.output_dir) / "ablation.csv");
    os << "sweep,value,seed,h_ce";
    for (const auto& k : metric_keys) os << "," << k;
    os << "\n";
    const char* sweep_name = sweep == SweepKey::c        ? "c"
                             : sweep == SweepKey::alpha  ? "alpha"
                             : sweep == SweepKey::lambda ? "lambda"
                                                         : "reg_norm";

    for (std::size_t si = 0; si < cfg.seeds.size(); ++si) {
        const std::uint64_t seed = cfg.seeds[si];
        const detail::SeedRun run = detail::prepare_seed(cfg, seed, si);
        std::optional<ModelParams> reusable_theta_u;
        for (const std::string& value : grid) {
            ExperimentConfig vcfg = cfg;
            int c = cfg.eval.c_values.front();
            int d = cfg.eval.d_values.front();
            switch (sweep) {
                case SweepKey::c:
                    c = d = static_cast<int>(detail::to_long("ablation.grid", value));
                    if (c < 0 || c > cfg.n_classes)
                        throw ConfigError("ablation: c grid value out of range: " + value);
                    break;
                case SweepKey::alpha:
                    vcfg.cpmu.alpha = detail::to_double("ablation.grid", value);
                    vcfg.eval.alpha = vcfg.cpmu.alpha;
                    break;
                case SweepKey::lambda:
                    vcfg.cpmu.lambda_reg = detail::to_double("ablation.grid", value);
                    break;
                case SweepKey::reg_norm:
                    if (value == "l2_squared") vcfg.cpmu.reg_norm = RegNorm::l2_squared;
                    else if (value == "l1") vcfg.cpmu.reg_norm = RegNorm::l1;
                    else throw ConfigError("ablation: reg_norm grid value '" + value + "'");
                    break;
            }
            ModelParams theta_u = run.theta_o;
            if (sweep == SweepKey::c && reusable_theta_u) {
                theta_u = *reusable_theta_u;
            } else {
                double tt = 0.0;
                theta_u = detail::apply_method(vcfg, run, seed, tt);
                if (sweep == SweepKey::c) reusable_theta_u = theta_u;
            }
            const MetricsReport rep = evaluate_all(theta_u, run.bundle, vcfg.eval.alpha, c, d);
            std::map<std::string, std::optional<double>> flat;
            for (const auto& [k, v] : detail::flat_metrics(rep)) flat[k] = v;
            os << sweep_name << "," << value << "," << seed << "," << format_metric(rep.h_ce);
            for (const auto& k : metric_keys) {
                auto it = flat.find(k);
                os << "," << (it == flat.end() ? std::string("undefined") : format_metric(it->second));
            }
            os << "\n";
        }
    }
    return cfg.output_dir;
}

}  // namespace cpmu

#endif  // CPMU_HARNESS_HPP
