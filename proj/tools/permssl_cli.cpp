// permssl: command-line driver for dataset generation, pre-training,
// probing, pretext evaluation, gradient checks and operator benchmarks.
//
// Exit codes: 0 success, 1 runtime or check failure, 2 usage error.

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "permssl/dataset.hpp"
#include "permssl/gradcheck.hpp"
#include "permssl/pretext.hpp"
#include "permssl/probe.hpp"
#include "permssl/soft_rank.hpp"

namespace {

using nlohmann::json;

// Thrown for flag combinations CLI11 cannot reject on its own.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

json load_config_section(const std::string& path, const std::string& section) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw UsageError("malformed config file " + path + ": " + e.what());
    }
    if (!j.is_object()) throw UsageError("config file " + path + " must hold a JSON object");
    if (!j.contains(section)) return json::object();
    return j.at(section);
}

// Config-file merge: a key applies only when the matching flag was not given,
// so flags always win.
template <typename T>
void merge_key(const json& section, const char* key, const CLI::App& sub, const std::string& flag,
               T& target) {
    if (!section.contains(key) || sub.count(flag) > 0) return;
    try {
        target = section.at(key).get<T>();
    } catch (const json::exception& e) {
        throw UsageError(std::string("config key \"") + key + "\": " + e.what());
    }
}

std::vector<permssl::NoteRecord> load_split(const permssl::Manifest& m, const std::string& name) {
    auto it = m.splits.find(name);
    if (it == m.splits.end())
        throw std::runtime_error("manifest has no \"" + name + "\" split");
    return permssl::load_dataset(it->second.path);
}

void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open file for writing: " + path);
    out << text;
    if (!out) throw std::runtime_error("write failure: " + path);
}

// ---------------------------------------------------------------- gen-data

struct GenDataArgs {
    std::string out;
    std::string config;
    permssl::DatasetConfig data;
};

int cmd_gen_data(const CLI::App& sub, GenDataArgs& a) {
    if (!a.config.empty()) {
        json sec = load_config_section(a.config, "data");
        merge_key(sec, "train", sub, "--train", a.data.train);
        merge_key(sec, "valid", sub, "--valid", a.data.valid);
        merge_key(sec, "test", sub, "--test", a.data.test);
        merge_key(sec, "seed", sub, "--seed", a.data.seed);
        merge_key(sec, "F", sub, "--F", a.data.F);
        merge_key(sec, "T", sub, "--T", a.data.T);
    }
    std::string manifest = permssl::make_dataset(a.data, a.out);
    std::cout << manifest << "\n";
    return 0;
}

// ---------------------------------------------------------------- pretrain

struct PretrainArgs {
    std::string data;
    std::string out;
    std::string metrics;
    std::string config;
    std::string loss = "fy";
    int32_t n_x = 1;
    int32_t n_y = 6;
    permssl::PretrainConfig cfg;
};

json pretrain_config_json(const PretrainArgs& a) {
    return {{"loss", a.loss},
            {"epsilon", a.cfg.epsilon},
            {"mc_samples", a.cfg.mc_samples},
            {"n_x", a.cfg.slice.n_x},
            {"n_y", a.cfg.slice.n_y},
            {"fixed_set_size", a.cfg.fixed_set_size},
            {"fixed_set_pool", a.cfg.fixed_set_pool},
            {"epochs", a.cfg.epochs},
            {"batch", a.cfg.batch},
            {"lr", a.cfg.lr},
            {"seed", a.cfg.seed},
            {"encoder_widths", a.cfg.encoder_widths},
            {"head_hidden", a.cfg.head_hidden},
            {"data", a.data},
            {"out", a.out},
            {"metrics", a.metrics}};
}

int cmd_pretrain(const CLI::App& sub, PretrainArgs& a) {
    if (!a.config.empty()) {
        json sec = load_config_section(a.config, "pretrain");
        merge_key(sec, "loss", sub, "--loss", a.loss);
        merge_key(sec, "epsilon", sub, "--epsilon", a.cfg.epsilon);
        merge_key(sec, "mc_samples", sub, "--mc-samples", a.cfg.mc_samples);
        merge_key(sec, "n_x", sub, "--nx", a.n_x);
        merge_key(sec, "n_y", sub, "--ny", a.n_y);
        merge_key(sec, "fixed_set_size", sub, "--fixed-set-size", a.cfg.fixed_set_size);
        merge_key(sec, "fixed_set_pool", sub, "--fixed-set-pool", a.cfg.fixed_set_pool);
        merge_key(sec, "epochs", sub, "--epochs", a.cfg.epochs);
        merge_key(sec, "batch", sub, "--batch", a.cfg.batch);
        merge_key(sec, "lr", sub, "--lr", a.cfg.lr);
        merge_key(sec, "seed", sub, "--seed", a.cfg.seed);
        merge_key(sec, "encoder_widths", sub, "--enc-widths", a.cfg.encoder_widths);
        merge_key(sec, "head_hidden", sub, "--head-hidden", a.cfg.head_hidden);
    }
    a.cfg.loss = permssl::parse_loss_kind(a.loss);
    a.cfg.slice = permssl::SliceSpec{a.n_x, a.n_y};
    if (a.cfg.loss != permssl::LossKind::xe_fixed &&
        (sub.count("--fixed-set-size") > 0 || sub.count("--fixed-set-pool") > 0))
        throw UsageError("--fixed-set-size/--fixed-set-pool apply only to --loss xe-fixed");
    if (a.cfg.loss != permssl::LossKind::fy && sub.count("--mc-samples") > 0)
        throw UsageError("--mc-samples applies only to --loss fy");
    if (a.metrics.empty()) a.metrics = a.out + ".metrics.jsonl";

    permssl::Manifest m = permssl::read_manifest(a.data);
    auto train = load_split(m, "train");
    auto valid = load_split(m, "valid");
    permssl::PretrainResult result = permssl::pretrain(train, valid, a.cfg);

    permssl::CheckpointMeta meta{m.F, m.T, a.cfg.slice.n_x, a.cfg.slice.n_y};
    permssl::save_checkpoint(a.out, result.params, meta);

    std::string lines = json{{"config", pretrain_config_json(a)}}.dump() + "\n";
    for (const auto& r : result.metrics) lines += permssl::metrics_to_json(r).dump() + "\n";
    write_text_file(a.metrics, lines);
    std::cout << a.out << "\n";
    return 0;
}

// ------------------------------------------------------------ probe / grid

struct ProbeGridArgs {
    std::string data;
    std::string out;
    std::string config;
    std::vector<std::string> models;     // name=path
    std::vector<std::string> tasks = {"family"};
    std::vector<int64_t> train_sizes = {500};
    std::vector<uint64_t> seeds = {0};
    std::vector<int32_t> hidden = {128, 64};
    permssl::ProbeConfig base;
};

json probe_config_json(const ProbeGridArgs& a) {
    return {{"models", a.models},
            {"tasks", a.tasks},
            {"train_sizes", a.train_sizes},
            {"seeds", a.seeds},
            {"epochs", a.base.epochs},
            {"batch", a.base.batch},
            {"lr", a.base.lr},
            {"hidden", a.hidden},
            {"data", a.data},
            {"out", a.out}};
}

std::vector<std::pair<std::string, std::string>> parse_models(
    const std::vector<std::string>& specs) {
    std::vector<std::pair<std::string, std::string>> models;
    for (const auto& s : specs) {
        auto eq = s.find('=');
        if (eq == std::string::npos || eq == 0 || eq + 1 == s.size())
            throw UsageError("--models entries must look like name=path, got \"" + s + "\"");
        models.emplace_back(s.substr(0, eq), s.substr(eq + 1));
    }
    return models;
}

int run_probe_grid(const CLI::App& sub, ProbeGridArgs& a, bool single) {
    if (!a.config.empty()) {
        json sec = load_config_section(a.config, "probe");
        if (single) {
            merge_key(sec, "task", sub, "--task", a.tasks[0]);
            merge_key(sec, "train_size", sub, "--train-size", a.train_sizes[0]);
            merge_key(sec, "seed", sub, "--seed", a.seeds[0]);
        } else {
            merge_key(sec, "tasks", sub, "--tasks", a.tasks);
            merge_key(sec, "train_sizes", sub, "--train-sizes", a.train_sizes);
            merge_key(sec, "seeds", sub, "--seeds", a.seeds);
        }
        merge_key(sec, "epochs", sub, "--epochs", a.base.epochs);
        merge_key(sec, "batch", sub, "--batch", a.base.batch);
        merge_key(sec, "lr", sub, "--lr", a.base.lr);
        merge_key(sec, "hidden", sub, "--hidden", a.hidden);
    }
    if (a.hidden.size() != 2) throw UsageError("--hidden needs exactly two widths");
    a.base.hidden = {a.hidden[0], a.hidden[1]};
    std::vector<permssl::ProbeTask> tasks;
    for (const auto& t : a.tasks) tasks.push_back(permssl::parse_probe_task(t));
    auto models = parse_models(a.models);

    permssl::Manifest m = permssl::read_manifest(a.data);
    auto train = load_split(m, "train");
    auto test = load_split(m, "test");
    auto rows = permssl::run_experiment_grid(models, tasks, a.train_sizes, a.seeds, train, test,
                                             a.base);

    std::string config_line = json{{"config", probe_config_json(a)}}.dump() + "\n";
    std::string jsonl = config_line;
    for (const auto& r : rows) jsonl += permssl::grid_row_to_json(r).dump() + "\n";
    write_text_file(a.out + ".jsonl", jsonl);
    write_text_file(a.out + ".csv",
                    "# config: " + json(probe_config_json(a)).dump() + "\n" +
                        permssl::grid_summary_csv(rows));
    std::cout << a.out << ".jsonl\n" << a.out << ".csv\n";
    return 0;
}

// ----------------------------------------------------------------- evaluate

struct EvaluateArgs {
    std::string model;
    std::string data;
    std::string split = "valid";
    std::string loss = "fy";
    uint64_t eval_seed = 0;
    permssl::PretrainConfig cfg;
};

int cmd_evaluate(const CLI::App& sub, EvaluateArgs& a) {
    a.cfg.loss = permssl::parse_loss_kind(a.loss);
    if (a.cfg.loss != permssl::LossKind::xe_fixed &&
        (sub.count("--fixed-set-size") > 0 || sub.count("--fixed-set-pool") > 0))
        throw UsageError("--fixed-set-size/--fixed-set-pool apply only to --loss xe-fixed");
    if (a.cfg.loss != permssl::LossKind::fy && sub.count("--mc-samples") > 0)
        throw UsageError("--mc-samples applies only to --loss fy");
    if (sub.count("--eval-seed") == 0) a.eval_seed = a.cfg.seed;

    auto [params, meta] = permssl::load_checkpoint(a.model);
    a.cfg.slice = permssl::SliceSpec{meta.n_x, meta.n_y};
    int32_t want = a.cfg.loss == permssl::LossKind::xe_fixed ? a.cfg.fixed_set_size
                                                             : params.dims.n;
    if (params.dims.head_out() != want)
        throw UsageError("--loss " + a.loss + " expects a checkpoint head of width " +
                         std::to_string(want) + ", got " +
                         std::to_string(params.dims.head_out()));
    permssl::Manifest m = permssl::read_manifest(a.data);
    auto records = load_split(m, a.split);

    json config = {{"model", a.model},        {"data", a.data},
                   {"split", a.split},        {"loss", a.loss},
                   {"epsilon", a.cfg.epsilon}, {"mc_samples", a.cfg.mc_samples},
                   {"fixed_set_size", a.cfg.fixed_set_size},
                   {"fixed_set_pool", a.cfg.fixed_set_pool},
                   {"seed", a.cfg.seed},      {"eval_seed", a.eval_seed},
                   {"n_x", meta.n_x},         {"n_y", meta.n_y}};
    permssl::PretextEval ev = permssl::evaluate_pretext_full(params, records, a.cfg, a.eval_seed);
    std::cout << json{{"config", config}}.dump() << "\n"
              << json{{"loss", ev.loss},
                      {"partial_ranks_accuracy", ev.accuracy},
                      {"count", records.size()}}
                     .dump()
              << "\n";
    return 0;
}

// ---------------------------------------------------------------- gradcheck

struct GradcheckArgs {
    int32_t n = 6;
    double epsilon = 0.1;
    int32_t mc_samples = 64;
    uint64_t seed = 0;
};

int cmd_gradcheck(const GradcheckArgs& a) {
    auto results = permssl::run_gradient_checks(a.n, a.epsilon, a.mc_samples, a.seed);
    bool all = true;
    for (const auto& r : results) {
        std::printf("%-32s err=%.3e tol=%.1e %s\n", r.name.c_str(), r.error, r.tol,
                    r.pass ? "PASS" : "FAIL");
        all = all && r.pass;
    }
    std::printf("%s\n", all ? "all gradient checks passed" : "gradient checks FAILED");
    return all ? 0 : 1;
}

// -------------------------------------------------------------------- bench

struct BenchArgs {
    std::string out;
    int32_t mc_samples = 16;
    int32_t reps = 7;
    int32_t min_pow = 10;
    int32_t max_pow = 18;
    uint64_t seed = 0;
};

double median_seconds(std::vector<double>& t) {
    std::sort(t.begin(), t.end());
    size_t k = t.size() / 2;
    return t.size() % 2 ? t[k] : 0.5 * (t[k - 1] + t[k]);
}

int cmd_bench(const BenchArgs& a) {
    if (a.min_pow > a.max_pow) throw UsageError("--min-pow must be <= --max-pow");
    json config = {{"mc_samples", a.mc_samples}, {"reps", a.reps},     {"min_pow", a.min_pow},
                   {"max_pow", a.max_pow},       {"seed", a.seed},     {"out", a.out}};
    std::string csv = "# config: " + config.dump() + "\nop,n,seconds\n";
    double sink = 0.0;
    char buf[160];
    for (const char* op : {"soft_rank_reg", "soft_rank_perturbed"}) {
        for (int32_t p = a.min_pow; p <= a.max_pow; ++p) {
            int64_t n = int64_t{1} << p;
            permssl::Rng rng(permssl::derive_seed(a.seed, static_cast<uint64_t>(n)));
            std::vector<double> theta(static_cast<size_t>(n));
            for (auto& v : theta) v = rng.next_gaussian();
            std::vector<double> times;
            for (int32_t rep = 0; rep < a.reps; ++rep) {
                auto t0 = std::chrono::steady_clock::now();
                if (std::string(op) == "soft_rank_reg") {
                    auto [r, ctx] = permssl::soft_rank_reg(theta, 0.1);
                    sink += r[0];
                } else {
                    auto r = permssl::soft_rank_perturbed(theta, 0.1, a.mc_samples,
                                                          permssl::derive_seed(a.seed, 1, 2));
                    sink += r[0];
                }
                times.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                                              t0)
                                    .count());
            }
            std::snprintf(buf, sizeof(buf), "%s,%lld,%.6f\n", op, static_cast<long long>(n),
                          median_seconds(times));
            csv += buf;
        }
    }
    volatile double guard = sink;
    (void)guard;
    if (a.out.empty() || a.out == "-")
        std::cout << csv;
    else {
        write_text_file(a.out, csv);
        std::cout << a.out << "\n";
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"self-supervised permutation-inversion pre-training toolkit"};
    app.require_subcommand(1);

    GenDataArgs gen;
    auto* sub_gen = app.add_subcommand("gen-data", "generate a synthetic note dataset");
    sub_gen->add_option("--out", gen.out, "output directory")->required();
    sub_gen->add_option("--train", gen.data.train, "training split size");
    sub_gen->add_option("--valid", gen.data.valid, "validation split size");
    sub_gen->add_option("--test", gen.data.test, "test split size");
    sub_gen->add_option("--seed", gen.data.seed, "generator seed");
    sub_gen->add_option("--F", gen.data.F, "frequency bins");
    sub_gen->add_option("--T", gen.data.T, "time frames");
    sub_gen->add_option("--config", gen.config, "JSON config file (section \"data\")");

    PretrainArgs pre;
    auto* sub_pre = app.add_subcommand("pretrain", "pre-train an encoder on patch unshuffling");
    sub_pre->add_option("--data", pre.data, "dataset manifest path")->required();
    sub_pre->add_option("--out", pre.out, "checkpoint output path")->required();
    sub_pre->add_option("--metrics", pre.metrics, "metrics JSONL path (default: <out>.metrics.jsonl)");
    sub_pre->add_option("--loss", pre.loss, "loss kind")
        ->check(CLI::IsMember({"fy", "softrank-mse", "mse-raw", "xe-fixed"}));
    sub_pre->add_option("--nx", pre.n_x, "patch columns");
    sub_pre->add_option("--ny", pre.n_y, "patch rows");
    sub_pre->add_option("--epsilon", pre.cfg.epsilon, "soft-rank regularization strength")
        ->check(CLI::PositiveNumber);
    sub_pre->add_option("--mc-samples", pre.cfg.mc_samples, "perturbation samples (fy)")
        ->check(CLI::PositiveNumber);
    sub_pre->add_option("--fixed-set-size", pre.cfg.fixed_set_size,
                        "permutation class count (xe-fixed)");
    sub_pre->add_option("--fixed-set-pool", pre.cfg.fixed_set_pool,
                        "candidate pool for the fixed set (xe-fixed)");
    sub_pre->add_option("--epochs", pre.cfg.epochs, "training epochs");
    sub_pre->add_option("--batch", pre.cfg.batch, "batch size");
    sub_pre->add_option("--lr", pre.cfg.lr, "Adam learning rate");
    sub_pre->add_option("--seed", pre.cfg.seed, "training seed");
    sub_pre->add_option("--enc-widths", pre.cfg.encoder_widths, "encoder layer widths");
    sub_pre->add_option("--head-hidden", pre.cfg.head_hidden, "head hidden width");
    sub_pre->add_option("--config", pre.config, "JSON config file (section \"pretrain\")");

    ProbeGridArgs probe;
    auto* sub_probe = app.add_subcommand("probe", "train one downstream probe on frozen embeddings");
    sub_probe->add_option("--model", probe.models, "checkpoint as name=path")
        ->required()
        ->expected(1);
    sub_probe->add_option("--data", probe.data, "dataset manifest path")->required();
    sub_probe->add_option("--out", probe.out, "output basename (.jsonl and .csv added)")->required();
    sub_probe->add_option("--task", probe.tasks[0], "probe task")
        ->check(CLI::IsMember({"family", "instrument", "pitch"}));
    sub_probe->add_option("--train-size", probe.train_sizes[0], "labelled training rows");
    sub_probe->add_option("--seed", probe.seeds[0], "probe seed");
    sub_probe->add_option("--epochs", probe.base.epochs, "probe epochs");
    sub_probe->add_option("--batch", probe.base.batch, "probe batch size");
    sub_probe->add_option("--lr", probe.base.lr, "probe learning rate");
    sub_probe->add_option("--hidden", probe.hidden, "probe hidden widths (two)")->expected(2);
    sub_probe->add_option("--config", probe.config, "JSON config file (section \"probe\")");

    ProbeGridArgs grid;
    grid.seeds = {0, 1, 2};
    auto* sub_grid = app.add_subcommand("grid", "probe a grid of models x tasks x sizes x seeds");
    sub_grid->add_option("--models", grid.models, "checkpoints as name=path")->required();
    sub_grid->add_option("--data", grid.data, "dataset manifest path")->required();
    sub_grid->add_option("--out", grid.out, "output basename (.jsonl and .csv added)")->required();
    sub_grid->add_option("--tasks", grid.tasks, "probe tasks");
    sub_grid->add_option("--train-sizes", grid.train_sizes, "labelled training sizes");
    sub_grid->add_option("--seeds", grid.seeds, "probe seeds");
    sub_grid->add_option("--epochs", grid.base.epochs, "probe epochs");
    sub_grid->add_option("--batch", grid.base.batch, "probe batch size");
    sub_grid->add_option("--lr", grid.base.lr, "probe learning rate");
    sub_grid->add_option("--hidden", grid.hidden, "probe hidden widths (two)")->expected(2);
    sub_grid->add_option("--config", grid.config, "JSON config file (section \"probe\")");

    EvaluateArgs ev;
    auto* sub_eval = app.add_subcommand("evaluate", "partial-ranks accuracy of a checkpoint");
    sub_eval->add_option("--model", ev.model, "checkpoint path")->required();
    sub_eval->add_option("--data", ev.data, "dataset manifest path")->required();
    sub_eval->add_option("--split", ev.split, "dataset split")
        ->check(CLI::IsMember({"train", "valid", "test"}));
    sub_eval->add_option("--loss", ev.loss, "loss kind to score with")
        ->check(CLI::IsMember({"fy", "softrank-mse", "mse-raw", "xe-fixed"}));
    sub_eval->add_option("--epsilon", ev.cfg.epsilon, "soft-rank regularization strength")
        ->check(CLI::PositiveNumber);
    sub_eval->add_option("--mc-samples", ev.cfg.mc_samples, "perturbation samples (fy)")
        ->check(CLI::PositiveNumber);
    sub_eval->add_option("--fixed-set-size", ev.cfg.fixed_set_size,
                         "permutation class count (xe-fixed)");
    sub_eval->add_option("--fixed-set-pool", ev.cfg.fixed_set_pool,
                         "candidate pool for the fixed set (xe-fixed)");
    sub_eval->add_option("--seed", ev.cfg.seed, "run seed (fixed-set derivation)");
    sub_eval->add_option("--eval-seed", ev.eval_seed, "evaluation shuffle seed (default: --seed)");

    GradcheckArgs gc;
    auto* sub_gc = app.add_subcommand("gradcheck", "finite-difference and identity checks");
    sub_gc->add_option("--n", gc.n, "score vector length")->check(CLI::Range(2, 64));
    sub_gc->add_option("--epsilon", gc.epsilon, "regularization strength")
        ->check(CLI::PositiveNumber);
    sub_gc->add_option("--mc-samples", gc.mc_samples, "perturbation samples")
        ->check(CLI::PositiveNumber);
    sub_gc->add_option("--seed", gc.seed, "check seed");

    BenchArgs bench;
    auto* sub_bench = app.add_subcommand("bench", "soft-rank operator timing table");
    sub_bench->add_option("--out", bench.out, "CSV path (default: stdout)");
    sub_bench->add_option("--mc-samples", bench.mc_samples, "perturbation samples")
        ->check(CLI::PositiveNumber);
    sub_bench->add_option("--reps", bench.reps, "repetitions per point (median)")
        ->check(CLI::PositiveNumber);
    sub_bench->add_option("--min-pow", bench.min_pow, "smallest n as a power of two")
        ->check(CLI::Range(1, 26));
    sub_bench->add_option("--max-pow", bench.max_pow, "largest n as a power of two")
        ->check(CLI::Range(1, 26));
    sub_bench->add_option("--seed", bench.seed, "input seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (sub_gen->parsed()) return cmd_gen_data(*sub_gen, gen);
        if (sub_pre->parsed()) return cmd_pretrain(*sub_pre, pre);
        if (sub_probe->parsed()) return run_probe_grid(*sub_probe, probe, true);
        if (sub_grid->parsed()) return run_probe_grid(*sub_grid, grid, false);
        if (sub_eval->parsed()) return cmd_evaluate(*sub_eval, ev);
        if (sub_gc->parsed()) return cmd_gradcheck(gc);
        if (sub_bench->parsed()) return cmd_bench(bench);
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    } catch (const std::invalid_argument& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    } catch (const permssl::FormatError& e) {
        std::cerr << "format error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
