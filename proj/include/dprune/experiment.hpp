#pragma once

// Experiment orchestration behind the CLI: dataset recipes, source pretraining
// plus pruned target finetuning, sweep grids over (scorer, ratio, beta, seed),
// and the theory verification harness. All file outputs are written atomically
// and are byte-reproducible from (config, seed) under sgd.

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "dprune/dataset.hpp"
#include "dprune/error.hpp"
#include "dprune/metrics.hpp"
#include "dprune/model.hpp"
#include "dprune/theory.hpp"
#include "dprune/trainer.hpp"

namespace dprune {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct GeneratedDatasetConfig {
    int n_features = 20;
    int n_classes = 4;
    double class_mean_scale = 1.2;
    double class_cov_scale = 1.0;
    int source_samples = 20000;
    std::uint64_t source_seed = 11;
    int target_samples = 4000;
    std::uint64_t target_seed = 12;
    std::vector<double> shift_mean;  // broadcast from shift_mean_scalar when empty
    double shift_mean_scalar = 0.8;
    double shift_scale = 1.1;
    double label_noise = 0.0;
    std::optional<std::vector<double>> class_prior_target;
    std::uint64_t shift_seed = 13;
};

struct CsvDatasetConfig {
    std::string source_csv;  // empty: no source dataset, pretraining disabled
    std::string target_csv;
    std::string label_column = "label";
    Task task = Task::classification;
    std::string delimiter = ",";
};

struct DatasetConfig {
    enum class Kind { generated, csv };
    Kind kind = Kind::generated;
    GeneratedDatasetConfig generated;
    CsvDatasetConfig csv;
    double train_frac = 0.8;
    double val_frac = 0.1;
    double test_frac = 0.1;
    std::uint64_t split_seed = 5;
};

struct ModelConfig {
    std::vector<int> hidden_dims{32};
    Activation activation = Activation::tanh;
};

struct PretrainConfig {
    bool enabled = true;
    int epochs = 10;
    double learning_rate = 0.1;
    int batch_size = 256;
    Optimizer optimizer = Optimizer::sgd;
};

struct SweepConfig {
    std::vector<double> pruning_ratios{0.2, 0.4, 0.6, 0.7, 0.8, 0.9};
    std::vector<std::string> scorers{"molpeg", "soft_random"};
    std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
    std::vector<double> betas{0.5};
    int jobs = 1;
};

struct ExperimentConfig {
    std::string out_dir = "runs/out";
    DatasetConfig dataset;
    ModelConfig model;
    PretrainConfig pretrain;
    TrainConfig train;
    SweepConfig sweep;
};

inline ExperimentConfig default_config() {
    ExperimentConfig cfg;
    cfg.dataset.generated.class_mean_scale = 0.9;
    cfg.dataset.generated.shift_mean_scalar = 1.0;
    cfg.dataset.generated.shift_scale = 1.2;
    cfg.train.pruning_ratio = 0.4;
    cfg.train.beta = 0.5;
    cfg.train.learning_rate = 0.1;
    cfg.train.epochs = 30;
    cfg.train.batch_size = 256;
    cfg.train.scorer = ScorerKind::molpeg;
    cfg.train.optimizer = Optimizer::sgd;
    cfg.train.seed = 1;
    return cfg;
}

// Smaller recipe sized so the standard instrumented run has exactly 200 steps
// (800 train samples, batch 16, 4 epochs).
inline ExperimentConfig default_verify_config() {
    ExperimentConfig cfg;
    cfg.out_dir = "runs/verify";
    cfg.dataset.generated.n_features = 8;
    cfg.dataset.generated.n_classes = 4;
    cfg.dataset.generated.class_mean_scale = 1.0;
    cfg.dataset.generated.target_samples = 1000;
    cfg.dataset.generated.source_samples = 4000;
    cfg.dataset.generated.shift_mean_scalar = 0.5;
    cfg.dataset.generated.shift_scale = 1.0;
    cfg.pretrain.enabled = false;
    cfg.model.hidden_dims = {8};
    cfg.train.pruning_ratio = 0.5;
    cfg.train.beta = 0.5;
    cfg.train.learning_rate = 0.05;
    cfg.train.epochs = 4;
    cfg.train.batch_size = 16;
    cfg.train.scorer = ScorerKind::molpeg;
    cfg.train.optimizer = Optimizer::sgd;
    cfg.train.seed = 1;
    return cfg;
}

// ---------------------------------------------------------------------------
// JSON (file values overlay the defaults; flags overlay the file)
// ---------------------------------------------------------------------------

inline const char* activation_name(Activation a) {
    return a == Activation::tanh ? "tanh" : "relu";
}

inline Activation parse_activation(const std::string& s) {
    if (s == "tanh") return Activation::tanh;
    if (s == "relu") return Activation::relu;
    throw PreconditionError("unknown activation '" + s + "'");
}

inline Task parse_task(const std::string& s) {
    if (s == "classification") return Task::classification;
    if (s == "regression") return Task::regression;
    throw PreconditionError("unknown task '" + s + "'");
}

inline void config_from_json(const json& j, ExperimentConfig& cfg) {
    cfg.out_dir = j.value("out_dir", cfg.out_dir);
    if (j.contains("dataset")) {
        const json& d = j.at("dataset");
        const std::string kind = d.value("kind", cfg.dataset.kind == DatasetConfig::Kind::csv
                                                     ? std::string("csv")
                                                     : std::string("generated"));
        if (kind == "generated") cfg.dataset.kind = DatasetConfig::Kind::generated;
        else if (kind == "csv") cfg.dataset.kind = DatasetConfig::Kind::csv;
        else throw PreconditionError("dataset.kind must be 'generated' or 'csv'");

        auto& g = cfg.dataset.generated;
        g.n_features = d.value("n_features", g.n_features);
        g.n_classes = d.value("n_classes", g.n_classes);
        g.class_mean_scale = d.value("class_mean_scale", g.class_mean_scale);
        g.class_cov_scale = d.value("class_cov_scale", g.class_cov_scale);
        g.source_samples = d.value("source_samples", g.source_samples);
        g.source_seed = d.value("source_seed", g.source_seed);
        g.target_samples = d.value("target_samples", g.target_samples);
        g.target_seed = d.value("target_seed", g.target_seed);
        g.shift_scale = d.value("shift_scale", g.shift_scale);
        g.label_noise = d.value("label_noise", g.label_noise);
        g.shift_seed = d.value("shift_seed", g.shift_seed);
        if (d.contains("shift_mean")) {
            if (d.at("shift_mean").is_array()) {
                g.shift_mean = d.at("shift_mean").get<std::vector<double>>();
            } else {
                g.shift_mean_scalar = d.at("shift_mean").get<double>();
                g.shift_mean.clear();
            }
        }
        if (d.contains("class_prior_target")) {
            g.class_prior_target = d.at("class_prior_target").get<std::vector<double>>();
        }

        auto& c = cfg.dataset.csv;
        c.source_csv = d.value("source_csv", c.source_csv);
        c.target_csv = d.value("target_csv", c.target_csv);
        c.label_column = d.value("label_column", c.label_column);
        if (d.contains("task")) c.task = parse_task(d.at("task").get<std::string>());
        c.delimiter = d.value("delimiter", c.delimiter);

        cfg.dataset.train_frac = d.value("train_frac", cfg.dataset.train_frac);
        cfg.dataset.val_frac = d.value("val_frac", cfg.dataset.val_frac);
        cfg.dataset.test_frac = d.value("test_frac", cfg.dataset.test_frac);
        cfg.dataset.split_seed = d.value("split_seed", cfg.dataset.split_seed);
    }
    if (j.contains("model")) {
        const json& m = j.at("model");
        cfg.model.hidden_dims = m.value("hidden_dims", cfg.model.hidden_dims);
        if (m.contains("activation")) {
            cfg.model.activation = parse_activation(m.at("activation").get<std::string>());
        }
    }
    if (j.contains("pretrain")) {
        const json& p = j.at("pretrain");
        cfg.pretrain.enabled = p.value("enabled", cfg.pretrain.enabled);
        cfg.pretrain.epochs = p.value("epochs", cfg.pretrain.epochs);
        cfg.pretrain.learning_rate = p.value("learning_rate", cfg.pretrain.learning_rate);
        cfg.pretrain.batch_size = p.value("batch_size", cfg.pretrain.batch_size);
        if (p.contains("optimizer")) {
            cfg.pretrain.optimizer = parse_optimizer(p.at("optimizer").get<std::string>());
        }
    }
    if (j.contains("train")) {
        const json& t = j.at("train");
        cfg.train.pruning_ratio = t.value("pruning_ratio", cfg.train.pruning_ratio);
        cfg.train.beta = t.value("beta", cfg.train.beta);
        cfg.train.learning_rate = t.value("learning_rate", cfg.train.learning_rate);
        cfg.train.epochs = t.value("epochs", cfg.train.epochs);
        cfg.train.batch_size = t.value("batch_size", cfg.train.batch_size);
        if (t.contains("scorer")) cfg.train.scorer = parse_scorer(t.at("scorer").get<std::string>());
        if (t.contains("optimizer")) {
            cfg.train.optimizer = parse_optimizer(t.at("optimizer").get<std::string>());
        }
        if (t.contains("selection_mode")) {
            cfg.train.selection_mode = parse_selection_mode(t.at("selection_mode").get<std::string>());
        }
        cfg.train.seed = t.value("seed", cfg.train.seed);
        if (t.contains("adam_betas")) {
            const auto betas = t.at("adam_betas").get<std::vector<double>>();
            if (betas.size() != 2) throw PreconditionError("train.adam_betas must have 2 entries");
            cfg.train.adam_beta1 = betas[0];
            cfg.train.adam_beta2 = betas[1];
        }
        cfg.train.adam_eps = t.value("adam_eps", cfg.train.adam_eps);
    }
    if (j.contains("sweep")) {
        const json& s = j.at("sweep");
        cfg.sweep.pruning_ratios = s.value("pruning_ratios", cfg.sweep.pruning_ratios);
        cfg.sweep.scorers = s.value("scorers", cfg.sweep.scorers);
        cfg.sweep.seeds = s.value("seeds", cfg.sweep.seeds);
        cfg.sweep.betas = s.value("betas", cfg.sweep.betas);
        cfg.sweep.jobs = s.value("jobs", cfg.sweep.jobs);
    }
}

inline json config_to_json(const ExperimentConfig& cfg) {
    json d{
        {"kind", cfg.dataset.kind == DatasetConfig::Kind::csv ? "csv" : "generated"},
        {"n_features", cfg.dataset.generated.n_features},
        {"n_classes", cfg.dataset.generated.n_classes},
        {"class_mean_scale", cfg.dataset.generated.class_mean_scale},
        {"class_cov_scale", cfg.dataset.generated.class_cov_scale},
        {"source_samples", cfg.dataset.generated.source_samples},
        {"source_seed", cfg.dataset.generated.source_seed},
        {"target_samples", cfg.dataset.generated.target_samples},
        {"target_seed", cfg.dataset.generated.target_seed},
        {"shift_scale", cfg.dataset.generated.shift_scale},
        {"label_noise", cfg.dataset.generated.label_noise},
        {"shift_seed", cfg.dataset.generated.shift_seed},
        {"train_frac", cfg.dataset.train_frac},
        {"val_frac", cfg.dataset.val_frac},
        {"test_frac", cfg.dataset.test_frac},
        {"split_seed", cfg.dataset.split_seed},
    };
    if (!cfg.dataset.generated.shift_mean.empty()) {
        d["shift_mean"] = cfg.dataset.generated.shift_mean;
    } else {
        d["shift_mean"] = cfg.dataset.generated.shift_mean_scalar;
    }
    if (cfg.dataset.generated.class_prior_target) {
        d["class_prior_target"] = *cfg.dataset.generated.class_prior_target;
    }
    if (cfg.dataset.kind == DatasetConfig::Kind::csv) {
        d["source_csv"] = cfg.dataset.csv.source_csv;
        d["target_csv"] = cfg.dataset.csv.target_csv;
        d["label_column"] = cfg.dataset.csv.label_column;
        d["task"] = task_name(cfg.dataset.csv.task);
        d["delimiter"] = cfg.dataset.csv.delimiter;
    }
    return json{
        {"out_dir", cfg.out_dir},
        {"dataset", d},
        {"model",
         {{"hidden_dims", cfg.model.hidden_dims},
          {"activation", activation_name(cfg.model.activation)}}},
        {"pretrain",
         {{"enabled", cfg.pretrain.enabled},
          {"epochs", cfg.pretrain.epochs},
          {"learning_rate", cfg.pretrain.learning_rate},
          {"batch_size", cfg.pretrain.batch_size},
          {"optimizer", optimizer_name(cfg.pretrain.optimizer)}}},
        {"train",
         {{"pruning_ratio", cfg.train.pruning_ratio},
          {"beta", cfg.train.beta},
          {"learning_rate", cfg.train.learning_rate},
          {"epochs", cfg.train.epochs},
          {"batch_size", cfg.train.batch_size},
          {"scorer", scorer_name(cfg.train.scorer)},
          {"optimizer", optimizer_name(cfg.train.optimizer)},
          {"selection_mode", selection_mode_name(cfg.train.selection_mode)},
          {"seed", cfg.train.seed},
          {"adam_betas", std::vector<double>{cfg.train.adam_beta1, cfg.train.adam_beta2}},
          {"adam_eps", cfg.train.adam_eps}}},
        {"sweep",
         {{"pruning_ratios", cfg.sweep.pruning_ratios},
          {"scorers", cfg.sweep.scorers},
          {"seeds", cfg.sweep.seeds},
          {"betas", cfg.sweep.betas},
          {"jobs", cfg.sweep.jobs}}},
    };
}

// ---------------------------------------------------------------------------
// File helpers
// ---------------------------------------------------------------------------

inline void atomic_write_file(const std::filesystem::path& path, const std::string& content) {
    std::filesystem::create_directories(path.parent_path());
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
        out << content;
        if (!out) throw IoError("write failed for " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

inline std::string csv_number(double v) { return detail::format_double(v); }

// ---------------------------------------------------------------------------
// Dataset resolution
// ---------------------------------------------------------------------------

// Class c concentrates its mean mass on feature coordinates f with f mod
// n_classes == c; pairwise separation grows with scale.
inline std::vector<std::vector<double>> pattern_class_means(int n_classes, int n_features,
                                                            double scale) {
    std::vector<std::vector<double>> means(n_classes, std::vector<double>(n_features, 0.0));
    for (int c = 0; c < n_classes; ++c) {
        for (int f = 0; f < n_features; ++f) {
            if (f % n_classes == c) means[c][f] = scale;
        }
    }
    return means;
}

struct ResolvedData {
    std::optional<Dataset> source;  // split; absent for target-only configs
    Dataset target;                 // split
};

inline Dataset build_source_dataset(const DatasetConfig& dc) {
    const auto& g = dc.generated;
    const auto means = pattern_class_means(g.n_classes, g.n_features, g.class_mean_scale);
    return generate_gaussian_mixture(g.source_seed, g.source_samples, g.n_features, g.n_classes,
                                     means, g.class_cov_scale);
}

inline Dataset build_target_dataset(const DatasetConfig& dc) {
    const auto& g = dc.generated;
    const auto means = pattern_class_means(g.n_classes, g.n_features, g.class_mean_scale);
    Dataset base = generate_gaussian_mixture(g.target_seed, g.target_samples, g.n_features,
                                             g.n_classes, means, g.class_cov_scale);
    ShiftSpec shift;
    shift.mean_shift = g.shift_mean.empty()
                           ? std::vector<double>(g.n_features, g.shift_mean_scalar)
                           : g.shift_mean;
    shift.scale_shift = g.shift_scale;
    shift.label_noise = g.label_noise;
    shift.class_prior_target = g.class_prior_target;
    return apply_shift(base, shift, g.shift_seed);
}

inline ResolvedData resolve_datasets(const DatasetConfig& dc) {
    ResolvedData out;
    if (dc.kind == DatasetConfig::Kind::generated) {
        out.source = split_dataset(build_source_dataset(dc), dc.train_frac, dc.val_frac,
                                   dc.test_frac, dc.split_seed);
        out.target = split_dataset(build_target_dataset(dc), dc.train_frac, dc.val_frac,
                                   dc.test_frac, derive_seed(dc.split_seed, 2));
    } else {
        CsvSchema schema;
        schema.label_column = dc.csv.label_column;
        schema.task = dc.csv.task;
        if (dc.csv.delimiter.size() != 1) {
            throw PreconditionError("dataset.delimiter must be a single character");
        }
        schema.delimiter = dc.csv.delimiter[0];
        if (dc.csv.target_csv.empty()) {
            throw PreconditionError("dataset.target_csv is required for kind 'csv'");
        }
        if (!dc.csv.source_csv.empty()) {
            out.source = split_dataset(load_csv(dc.csv.source_csv, schema), dc.train_frac,
                                       dc.val_frac, dc.test_frac, dc.split_seed);
        }
        out.target = split_dataset(load_csv(dc.csv.target_csv, schema), dc.train_frac,
                                   dc.val_frac, dc.test_frac, derive_seed(dc.split_seed, 2));
    }
    return out;
}

inline ModelSpec make_spec(const Dataset& target, const ModelConfig& mc) {
    ModelSpec spec;
    spec.input_dim = target.feature_dim();
    spec.hidden_dims = mc.hidden_dims;
    spec.task = target.task;
    spec.output_dim = target.task == Task::classification ? target.num_classes : 1;
    spec.activation = mc.activation;
    spec.validate();
    return spec;
}

// ---------------------------------------------------------------------------
// gen-data
// ---------------------------------------------------------------------------

struct GenDataResult {
    std::string source_path;
    std::string target_path;
    std::string manifest_path;
};

inline GenDataResult cmd_gen_data(const ExperimentConfig& cfg) {
    if (cfg.dataset.kind != DatasetConfig::Kind::generated) {
        throw PreconditionError("gen-data requires dataset.kind 'generated'");
    }
    const std::filesystem::path dir(cfg.out_dir);
    std::filesystem::create_directories(dir);

    const Dataset source = build_source_dataset(cfg.dataset);
    const Dataset target = build_target_dataset(cfg.dataset);

    CsvSchema schema;
    GenDataResult result;
    result.source_path = (dir / "source.csv").string();
    result.target_path = (dir / "target.csv").string();
    result.manifest_path = (dir / "manifest.json").string();
    write_csv(result.source_path, source, schema);
    write_csv(result.target_path, target, schema);

    json manifest{
        {"source_csv", "source.csv"},
        {"target_csv", "target.csv"},
        {"source_rows", source.size()},
        {"target_rows", target.size()},
        {"label_column", schema.label_column},
        {"dataset", config_to_json(cfg).at("dataset")},
    };
    atomic_write_file(result.manifest_path, manifest.dump(2) + "\n");
    return result;
}

// ---------------------------------------------------------------------------
// Single run: optional source pretraining, then pruned target finetuning
// ---------------------------------------------------------------------------

inline std::uint64_t init_stream_seed(std::uint64_t seed) { return derive_seed(seed, 0x494EULL); }
inline std::uint64_t pretrain_stream_seed(std::uint64_t seed) {
    return derive_seed(seed, 0x5052ULL);
}

inline ParameterVector pretrain_source(const Dataset& source, const ExperimentConfig& cfg,
                                       const ModelSpec& spec, std::uint64_t seed) {
    const ParameterVector raw = init_params(spec, init_stream_seed(seed));
    if (!cfg.pretrain.enabled) return raw;
    TrainConfig pre;
    pre.pruning_ratio = 0.0;  // full-data supervised pretraining
    pre.beta = 1.0;           // reference bookkeeping is irrelevant here
    pre.learning_rate = cfg.pretrain.learning_rate;
    pre.epochs = cfg.pretrain.epochs;
    pre.batch_size = cfg.pretrain.batch_size;
    pre.scorer = ScorerKind::soft_random;
    pre.optimizer = cfg.pretrain.optimizer;
    pre.seed = pretrain_stream_seed(seed);
    return train(source, pre, spec, raw).final_online;
}

struct RunOutput {
    std::vector<EpochRecord> epochs;
    double final_val = 0.0;
    double final_test = 0.0;
    std::optional<double> zero_shot_target_val;  // pretrained model, before finetuning
    std::vector<MetricResult> final_metrics;     // named metrics over the test split
    double wall_time_seconds = 0.0;  // finetune total, deterministic work units
    double time_efficiency = 0.0;
};

inline RunOutput execute_run(const ResolvedData& data, const ExperimentConfig& cfg,
                             const ModelSpec& spec, const ParameterVector& pretrained,
                             const TrainHooks* hooks = nullptr) {
    RunOutput out;
    if (cfg.pretrain.enabled && data.source) {
        out.zero_shot_target_val = evaluate_split(pretrained, data.target, Split::val, spec);
    }
    const TrainResult result = train(data.target, cfg.train, spec, pretrained, hooks);
    out.epochs = result.epochs;
    out.final_val = result.epochs.back().val_metric;
    out.final_test = result.epochs.back().test_metric;
    out.wall_time_seconds = result.total_train_seconds;
    out.time_efficiency = time_efficiency(out.wall_time_seconds);

    const std::size_t n_test = data.target.ids_of(Split::test).size();
    out.final_metrics.push_back(
        {spec.task == Task::classification ? "accuracy" : "mae", out.final_test, n_test});
    if (spec.task == Task::classification && spec.output_dim == 2) {
        std::vector<double> scores;
        std::vector<int> labels;
        for (std::int64_t id : data.target.ids_of(Split::test)) {
            scores.push_back(
                forward_probabilities(result.final_online, data.target.samples[id], spec)[1]);
            labels.push_back(data.target.samples[id].label());
        }
        try {
            out.final_metrics.push_back({"roc_auc", roc_auc(scores, labels), n_test});
            out.final_metrics.push_back(
                {"average_precision", average_precision(scores, labels), n_test});
        } catch (const UndefinedMetricError&) {
            // single-class test split: leave the ranking metrics absent
        }
    }
    return out;
}

inline json epoch_record_to_json(const EpochRecord& r) {
    return json{
        {"epoch", r.epoch},
        {"train_loss", r.train_loss},
        {"val_metric", r.val_metric},
        {"test_metric", r.test_metric},
        {"selected_count", r.selected_count},
        {"wall_time_seconds", r.wall_time_seconds},
        {"delta_min", r.delta_stats.min},
        {"delta_mean", r.delta_stats.mean},
        {"delta_max", r.delta_stats.max},
    };
}

struct TrainCommandResult {
    std::string run_dir;
    RunOutput output;
};

inline TrainCommandResult cmd_train(const ExperimentConfig& cfg,
                                    const TrainHooks* hooks = nullptr) {
    const ResolvedData data = resolve_datasets(cfg.dataset);
    const ModelSpec spec = make_spec(data.target, cfg.model);
    const bool pretraining = cfg.pretrain.enabled && data.source.has_value();
    ExperimentConfig resolved = cfg;
    resolved.pretrain.enabled = pretraining;

    const ParameterVector start =
        pretraining ? pretrain_source(*data.source, resolved, spec, cfg.train.seed)
                    : init_params(spec, init_stream_seed(cfg.train.seed));
    const RunOutput out = execute_run(data, resolved, spec, start, hooks);

    const std::filesystem::path dir(cfg.out_dir);
    std::filesystem::create_directories(dir);
    atomic_write_file(dir / "resolved_config.json", config_to_json(resolved).dump(2) + "\n");

    std::string jsonl;
    for (const EpochRecord& r : out.epochs) jsonl += epoch_record_to_json(r).dump() + "\n";
    atomic_write_file(dir / "epochs.jsonl", jsonl);

    json final_metrics{
        {"final_val_metric", out.final_val},
        {"final_test_metric", out.final_test},
        {"wall_time_seconds", out.wall_time_seconds},
        {"time_efficiency", out.time_efficiency},
        {"epochs", out.epochs.size()},
        {"metric",
         spec.task == Task::classification ? "accuracy" : "mae"},
    };
    if (out.zero_shot_target_val) final_metrics["zero_shot_target_val"] = *out.zero_shot_target_val;
    json test_metrics = json::array();
    for (const MetricResult& m : out.final_metrics) {
        test_metrics.push_back({{"name", m.name}, {"value", m.value}, {"n_samples", m.n_samples}});
    }
    final_metrics["test_metrics"] = test_metrics;
    atomic_write_file(dir / "final_metrics.json", final_metrics.dump(2) + "\n");

    return {dir.string(), out};
}

// ---------------------------------------------------------------------------
// Sweep
// ---------------------------------------------------------------------------

struct SweepCell {
    std::string scorer;
    double pruning_ratio = 0.0;
    double beta = 0.5;
    std::uint64_t seed = 0;
    bool failed = false;
    std::string error;
    double val_metric = 0.0;
    double test_metric = 0.0;
    double wall_time_seconds = 0.0;
    double time_efficiency = 0.0;
};

struct SweepResult {
    std::vector<SweepCell> cells;  // grid order: scorer, ratio, beta, seed
    std::size_t failures = 0;
    std::string raw_csv_path;
    std::string agg_csv_path;
    std::string failures_csv_path;  // written only when failures > 0
};

// Observer for every PruneDecision made inside sweep cells; must be
// thread-safe when jobs > 1.
using DecisionObserver =
    std::function<void(const PruneDecision&, std::size_t pool_size, double keep_fraction)>;

inline SweepResult run_sweep(const ExperimentConfig& cfg,
                             const DecisionObserver& observer = nullptr) {
    if (cfg.sweep.pruning_ratios.empty() || cfg.sweep.scorers.empty() ||
        cfg.sweep.seeds.empty() || cfg.sweep.betas.empty()) {
        throw PreconditionError("sweep grids must be non-empty");
    }

    const ResolvedData data = resolve_datasets(cfg.dataset);
    const ModelSpec spec = make_spec(data.target, cfg.model);
    const bool pretraining = cfg.pretrain.enabled && data.source.has_value();

    // One pretrained model per seed, shared across that seed's cells.
    std::map<std::uint64_t, ParameterVector> start_by_seed;
    for (std::uint64_t seed : cfg.sweep.seeds) {
        if (start_by_seed.count(seed)) continue;
        ExperimentConfig resolved = cfg;
        resolved.pretrain.enabled = pretraining;
        start_by_seed[seed] = pretraining
                                  ? pretrain_source(*data.source, resolved, spec, seed)
                                  : init_params(spec, init_stream_seed(seed));
    }

    SweepResult result;
    for (const std::string& scorer : cfg.sweep.scorers) {
        (void)parse_scorer(scorer);  // fail fast on a bad grid
        for (double ratio : cfg.sweep.pruning_ratios) {
            for (double beta : cfg.sweep.betas) {
                for (std::uint64_t seed : cfg.sweep.seeds) {
                    SweepCell cell;
                    cell.scorer = scorer;
                    cell.pruning_ratio = ratio;
                    cell.beta = beta;
                    cell.seed = seed;
                    result.cells.push_back(cell);
                }
            }
        }
    }

    const auto run_cell = [&](SweepCell& cell) {
        try {
            ExperimentConfig cell_cfg = cfg;
            cell_cfg.pretrain.enabled = pretraining;
            cell_cfg.train.scorer = parse_scorer(cell.scorer);
            cell_cfg.train.pruning_ratio = cell.pruning_ratio;
            cell_cfg.train.beta = cell.beta;
            cell_cfg.train.seed = cell.seed;

            TrainHooks hooks;
            const double keep_fraction = 1.0 - cell.pruning_ratio;
            if (observer) {
                hooks.on_decision = [&observer, keep_fraction](const PruneDecision& d,
                                                               std::size_t pool, int, long) {
                    observer(d, pool, keep_fraction);
                };
            }
            const RunOutput out = execute_run(data, cell_cfg, spec, start_by_seed.at(cell.seed),
                                              observer ? &hooks : nullptr);
            cell.val_metric = out.final_val;
            cell.test_metric = out.final_test;
            cell.wall_time_seconds = out.wall_time_seconds;
            cell.time_efficiency = out.time_efficiency;
        } catch (const std::exception& e) {
            cell.failed = true;
            cell.error = e.what();
        }
    };

    const int jobs = std::max(1, cfg.sweep.jobs);
    if (jobs == 1 || result.cells.size() <= 1) {
        for (SweepCell& cell : result.cells) run_cell(cell);
    } else {
        std::atomic<std::size_t> next{0};
        const auto worker = [&] {
            for (;;) {
                const std::size_t i = next.fetch_add(1);
                if (i >= result.cells.size()) break;
                run_cell(result.cells[i]);
            }
        };
        std::vector<std::thread> pool;
        for (int t = 1; t < jobs; ++t) pool.emplace_back(worker);
        worker();
        for (std::thread& t : pool) t.join();
    }

    for (const SweepCell& cell : result.cells) result.failures += cell.failed ? 1 : 0;
    return result;
}

inline void write_sweep_csvs(SweepResult& result, const std::string& out_dir) {
    const std::filesystem::path dir(out_dir);
    std::filesystem::create_directories(dir);

    std::string raw =
        "scorer,pruning_ratio,beta,seed,val_metric,test_metric,wall_time_seconds,time_efficiency\n";
    for (const SweepCell& c : result.cells) {
        if (c.failed) continue;
        raw += c.scorer + "," + csv_number(c.pruning_ratio) + "," + csv_number(c.beta) + "," +
               std::to_string(c.seed) + "," + csv_number(c.val_metric) + "," +
               csv_number(c.test_metric) + "," + csv_number(c.wall_time_seconds) + "," +
               csv_number(c.time_efficiency) + "\n";
    }
    result.raw_csv_path = (dir / "sweep_raw.csv").string();
    atomic_write_file(result.raw_csv_path, raw);

    // aggregate over seeds per (scorer, ratio, beta), preserving grid order
    std::string agg =
        "scorer,pruning_ratio,beta,n_seeds,val_mean,val_std,test_mean,test_std,"
        "wall_time_mean,wall_time_std,time_efficiency_mean,time_efficiency_std\n";
    std::vector<std::tuple<std::string, double, double>> groups;
    for (const SweepCell& c : result.cells) {
        const auto key = std::make_tuple(c.scorer, c.pruning_ratio, c.beta);
        bool seen = false;
        for (const auto& g : groups) seen |= g == key;
        if (!seen) groups.push_back(key);
    }
    for (const auto& [scorer, ratio, beta] : groups) {
        std::vector<double> val, test, wall, te;
        for (const SweepCell& c : result.cells) {
            if (c.failed || c.scorer != scorer || c.pruning_ratio != ratio || c.beta != beta) {
                continue;
            }
            val.push_back(c.val_metric);
            test.push_back(c.test_metric);
            wall.push_back(c.wall_time_seconds);
            te.push_back(c.time_efficiency);
        }
        if (val.empty()) continue;
        const auto [vm, vs] = aggregate_seeds(val);
        const auto [tm, ts] = aggregate_seeds(test);
        const auto [wm, ws] = aggregate_seeds(wall);
        const auto [em, es] = aggregate_seeds(te);
        agg += scorer + "," + csv_number(ratio) + "," + csv_number(beta) + "," +
               std::to_string(val.size()) + "," + csv_number(vm) + "," + csv_number(vs) + "," +
               csv_number(tm) + "," + csv_number(ts) + "," + csv_number(wm) + "," +
               csv_number(ws) + "," + csv_number(em) + "," + csv_number(es) + "\n";
    }
    result.agg_csv_path = (dir / "sweep_agg.csv").string();
    atomic_write_file(result.agg_csv_path, agg);

    if (result.failures > 0) {
        std::string failures = "scorer,pruning_ratio,beta,seed,error\n";
        for (const SweepCell& c : result.cells) {
            if (!c.failed) continue;
            std::string msg = c.error;
            for (char& ch : msg) {
                if (ch == ',' || ch == '\n') ch = ';';
            }
            failures += c.scorer + "," + csv_number(c.pruning_ratio) + "," + csv_number(c.beta) +
                        "," + std::to_string(c.seed) + "," + msg + "\n";
        }
        result.failures_csv_path = (dir / "sweep_failures.csv").string();
        atomic_write_file(result.failures_csv_path, failures);
    }
}

inline SweepResult cmd_sweep(const ExperimentConfig& cfg,
                             const DecisionObserver& observer = nullptr) {
    SweepResult result = run_sweep(cfg, observer);
    write_sweep_csvs(result, cfg.out_dir);
    const std::filesystem::path dir(cfg.out_dir);
    atomic_write_file(dir / "resolved_config.json", config_to_json(cfg).dump(2) + "\n");
    return result;
}

}  // namespace dprune
