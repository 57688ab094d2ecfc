#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <vector>

#include "dprune/dataset.hpp"
#include "dprune/trainer.hpp"

using namespace dprune;

namespace {

Dataset small_dataset(std::uint64_t seed, int n = 60, int d = 3) {
    std::vector<std::vector<double>> means(2, std::vector<double>(d, 1.5));
    for (double& v : means[1]) v = -1.5;
    return split_dataset(generate_gaussian_mixture(seed, n, d, 2, means, 1.0), 0.8, 0.1, 0.1,
                         seed + 1);
}

ModelSpec small_spec(int d = 3) {
    ModelSpec spec;
    spec.input_dim = d;
    spec.hidden_dims = {4};
    spec.output_dim = 2;
    spec.task = Task::classification;
    spec.activation = Activation::tanh;
    return spec;
}

TrainConfig base_config() {
    TrainConfig cfg;
    cfg.pruning_ratio = 0.5;
    cfg.beta = 0.5;
    cfg.learning_rate = 0.1;
    cfg.epochs = 3;
    cfg.batch_size = 16;
    cfg.scorer = ScorerKind::molpeg;
    cfg.optimizer = Optimizer::sgd;
    cfg.selection_mode = SelectionMode::batch;
    cfg.seed = 7;
    return cfg;
}

bool records_equal(const EpochRecord& a, const EpochRecord& b) {
    return a.epoch == b.epoch && a.train_loss == b.train_loss && a.val_metric == b.val_metric &&
           a.test_metric == b.test_metric && a.selected_count == b.selected_count &&
           a.wall_time_seconds == b.wall_time_seconds && a.delta_stats.min == b.delta_stats.min &&
           a.delta_stats.mean == b.delta_stats.mean && a.delta_stats.max == b.delta_stats.max;
}

}  // namespace

TEST_CASE("pruning_ratio 0 reproduces a plain no-pruning trainer bit-exactly") {
    const auto ds = small_dataset(11);
    const auto spec = small_spec();
    const auto init = init_params(spec, 2);

    auto cfg = base_config();
    cfg.pruning_ratio = 0.0;
    cfg.scorer = ScorerKind::molpeg;  // scorer must be irrelevant at ratio 0
    const auto result = train(ds, cfg, spec, init);

    // independent plain loop: shuffle, batch, full-batch sgd
    ParameterVector params = init;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto order = epoch_shuffle(ds.ids_of(Split::train), cfg.seed, epoch);
        for (std::size_t begin = 0; begin < order.size();
             begin += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t end =
                std::min(order.size(), begin + static_cast<std::size_t>(cfg.batch_size));
            std::vector<const Sample*> batch;
            for (std::size_t i = begin; i < end; ++i) batch.push_back(&ds.samples[order[i]]);
            params = sgd_step(params, batch_gradient(params, batch, spec), cfg.learning_rate);
        }
    }
    CHECK(result.final_online == params);

    auto cfg2 = cfg;
    cfg2.scorer = ScorerKind::soft_random;
    const auto result2 = train(ds, cfg2, spec, init);
    CHECK(result2.final_online == params);
}

TEST_CASE("soft_random runs are reproducible: same seed, identical EpochRecords") {
    const auto ds = small_dataset(13);
    const auto spec = small_spec();
    const auto init = init_params(spec, 3);
    auto cfg = base_config();
    cfg.scorer = ScorerKind::soft_random;

    const auto a = train(ds, cfg, spec, init);
    const auto b = train(ds, cfg, spec, init);
    REQUIRE(a.epochs.size() == b.epochs.size());
    for (std::size_t i = 0; i < a.epochs.size(); ++i) {
        CHECK(records_equal(a.epochs[i], b.epochs[i]));
    }
    CHECK(a.final_online == b.final_online);
    CHECK(a.final_reference == b.final_reference);
}

TEST_CASE("adam runs are reproducible across executions") {
    const auto ds = small_dataset(17);
    const auto spec = small_spec();
    const auto init = init_params(spec, 5);
    auto cfg = base_config();
    cfg.optimizer = Optimizer::adam;
    cfg.learning_rate = 0.01;

    const auto a = train(ds, cfg, spec, init);
    const auto b = train(ds, cfg, spec, init);
    for (std::size_t i = 0; i < a.final_online.size(); ++i) {
        CHECK(a.final_online[i] == doctest::Approx(b.final_online[i]).epsilon(1e-12));
    }
    for (std::size_t i = 0; i < a.epochs.size(); ++i) {
        CHECK(records_equal(a.epochs[i], b.epochs[i]));
    }
}

TEST_CASE("single batch, single sgd step at ratio 0.5 replays by hand") {
    const auto ds = small_dataset(19, 20);
    const auto spec = small_spec();
    const auto init = init_params(spec, 8);

    auto cfg = base_config();
    cfg.epochs = 1;
    cfg.batch_size = 64;  // one ragged batch holding the whole train split
    cfg.pruning_ratio = 0.5;

    const auto result = train(ds, cfg, spec, init);

    // At step 0 both models are the pretrained init, so every molpeg score is
    // 0 and the tie-break keeps the lowest ceil(0.5 n) ids.
    const auto order = epoch_shuffle(ds.ids_of(Split::train), cfg.seed, 0);
    std::vector<std::int64_t> sorted(order.begin(), order.end());
    std::sort(sorted.begin(), sorted.end());
    const auto keep = static_cast<std::size_t>(
        std::ceil(0.5 * static_cast<double>(order.size()) - 1e-9));
    const std::set<std::int64_t> kept(sorted.begin(), sorted.begin() + keep);

    std::vector<const Sample*> chosen;  // batch order, filtered
    for (std::int64_t id : order) {
        if (kept.count(id)) chosen.push_back(&ds.samples[id]);
    }
    const auto expected = sgd_step(init, batch_gradient(init, chosen, spec), cfg.learning_rate);
    CHECK(result.final_online == expected);
    CHECK(result.epochs.front().selected_count == static_cast<std::int64_t>(keep));
}

TEST_CASE("beta 1 with learning rate 0: all scores zero, selection is the tie-break order") {
    const auto ds = small_dataset(23, 40);
    const auto spec = small_spec();
    const auto init = init_params(spec, 2);

    auto cfg = base_config();
    cfg.beta = 1.0;
    cfg.learning_rate = 0.0;
    cfg.epochs = 2;

    std::vector<PruneDecision> decisions;
    TrainHooks hooks;
    hooks.on_decision = [&](const PruneDecision& d, std::size_t, int, long) {
        decisions.push_back(d);
    };
    const auto result = train(ds, cfg, spec, init, &hooks);

    CHECK(result.final_online == init);
    CHECK(result.final_reference == init);
    for (const auto& d : decisions) {
        CHECK(d.delta == 0.0);
        std::vector<std::int64_t> ids;
        for (const auto& [id, score] : d.scores) {
            CHECK(score == 0.0);
            ids.push_back(id);
        }
        // tie-break: the keep_count lowest ids of the pool are selected
        std::sort(ids.begin(), ids.end());
        for (std::size_t i = 0; i < d.selected_ids.size(); ++i) {
            CHECK(d.selected_ids.count(ids[i]) == 1);
        }
    }
}

TEST_CASE("beta 1 makes the reference track the online model exactly") {
    // Pinned ordering: the reference reads the post-update online parameters,
    // so at beta 1 both models coincide at every scoring time and every
    // loss-discrepancy score is exactly 0 even while training moves.
    const auto ds = small_dataset(29, 40);
    const auto spec = small_spec();
    const auto init = init_params(spec, 6);
    auto cfg = base_config();
    cfg.beta = 1.0;

    std::vector<PruneDecision> decisions;
    TrainHooks hooks;
    hooks.on_decision = [&](const PruneDecision& d, std::size_t, int, long) {
        decisions.push_back(d);
    };
    const auto result = train(ds, cfg, spec, init, &hooks);
    CHECK(result.final_online == result.final_reference);
    CHECK(result.final_online != init);  // training really moved
    for (const auto& d : decisions) {
        for (const auto& [id, score] : d.scores) CHECK(score == 0.0);
    }
}

TEST_CASE("per-epoch selected_count matches the batch-wise ceil arithmetic") {
    const auto ds = small_dataset(31, 50);  // 40 train ids -> batches 16/16/8
    const auto spec = small_spec();
    const auto init = init_params(spec, 4);
    auto cfg = base_config();
    cfg.pruning_ratio = 0.7;
    cfg.epochs = 2;

    const auto result = train(ds, cfg, spec, init);
    const auto n_train = ds.ids_of(Split::train).size();
    std::int64_t expected = 0;
    for (std::size_t begin = 0; begin < n_train; begin += cfg.batch_size) {
        const std::size_t len = std::min<std::size_t>(cfg.batch_size, n_train - begin);
        expected += static_cast<std::int64_t>(
            std::ceil(0.3 * static_cast<double>(len) - 1e-9));
    }
    for (const auto& rec : result.epochs) {
        CHECK(rec.selected_count == expected);
        CHECK(rec.wall_time_seconds > 0.0);
    }
}

TEST_CASE("epoch mode: first selection is the tie-break, scores refresh only for selected") {
    const auto ds = small_dataset(37, 50);
    const auto spec = small_spec();
    const auto init = init_params(spec, 12);

    auto cfg = base_config();
    cfg.selection_mode = SelectionMode::epoch;
    cfg.epochs = 1;
    cfg.pruning_ratio = 0.5;

    std::vector<PruneDecision> decisions;
    TrainHooks hooks;
    hooks.on_decision = [&](const PruneDecision& d, std::size_t pool, int, long) {
        decisions.push_back(d);
        CHECK(pool == ds.ids_of(Split::train).size());
    };
    const auto result = train(ds, cfg, spec, init, &hooks);
    REQUIRE(decisions.size() == 1);  // one decision per epoch

    const auto train_ids = ds.ids_of(Split::train);
    const auto keep = static_cast<std::size_t>(
        std::ceil(0.5 * static_cast<double>(train_ids.size()) - 1e-9));
    CHECK(decisions[0].selected_ids.size() == keep);
    CHECK(result.epochs[0].selected_count == static_cast<std::int64_t>(keep));

    // all persistent scores start at 1, so the tie-break keeps the lowest ids
    std::vector<std::int64_t> sorted(train_ids);
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 0; i < keep; ++i) CHECK(decisions[0].selected_ids.count(sorted[i]) == 1);

    // unselected samples keep their initial score of 1
    for (std::int64_t id : train_ids) {
        if (!decisions[0].selected_ids.count(id)) CHECK(result.final_scores[id] == 1.0);
    }
}

TEST_CASE("epoch mode is reproducible and counts ceil((1-p) * train) per epoch") {
    const auto ds = small_dataset(41, 60);
    const auto spec = small_spec();
    const auto init = init_params(spec, 13);
    auto cfg = base_config();
    cfg.selection_mode = SelectionMode::epoch;
    cfg.epochs = 3;
    cfg.pruning_ratio = 0.4;

    const auto a = train(ds, cfg, spec, init);
    const auto b = train(ds, cfg, spec, init);
    CHECK(a.final_online == b.final_online);
    const auto n_train = static_cast<double>(ds.ids_of(Split::train).size());
    const auto expected = static_cast<std::int64_t>(std::ceil(0.6 * n_train - 1e-9));
    for (const auto& rec : a.epochs) CHECK(rec.selected_count == expected);
}

TEST_CASE("gradient history steps advance by one per processed batch") {
    const auto ds = small_dataset(43, 50);
    const auto spec = small_spec();
    const auto init = init_params(spec, 3);
    auto cfg = base_config();
    cfg.epochs = 2;

    long expected_step = 0;
    TrainHooks hooks;
    hooks.on_decision = [&](const PruneDecision&, std::size_t, int, long step) {
        CHECK(step == expected_step);
        ++expected_step;
    };
    train(ds, cfg, spec, init, &hooks);
    const auto n_train = ds.ids_of(Split::train).size();
    const long batches_per_epoch =
        static_cast<long>((n_train + cfg.batch_size - 1) / cfg.batch_size);
    CHECK(expected_step == batches_per_epoch * cfg.epochs);
}

TEST_CASE("instrumented runs record a replayable trajectory") {
    const auto ds = small_dataset(47, 40);
    const auto spec = small_spec();
    const auto init = init_params(spec, 9);
    auto cfg = base_config();
    cfg.epochs = 2;

    RunTrace trace;
    train(ds, cfg, spec, init, nullptr, &trace);
    REQUIRE(!trace.steps.empty());
    CHECK(trace.steps.front().theta == init);
    CHECK(trace.steps.front().xi == init);
    for (std::size_t i = 0; i < trace.steps.size(); ++i) {
        CHECK(trace.steps[i].step == static_cast<long>(i));
        if (i + 1 < trace.steps.size()) {
            ParameterVector advanced = trace.steps[i].theta;
            for (std::size_t k = 0; k < advanced.size(); ++k) {
                advanced[k] += trace.steps[i].delta_theta[k];
            }
            CHECK(advanced == trace.steps[i + 1].theta);
        }
    }
}

TEST_CASE("non-finite loss aborts with epoch and step context") {
    ModelSpec spec;
    spec.input_dim = 2;
    spec.output_dim = 1;
    spec.task = Task::regression;

    Dataset ds;
    ds.task = Task::regression;
    for (int i = 0; i < 10; ++i) {
        Sample s;
        s.id = i;
        s.features = {1.0, 2.0};
        s.target = 1.0;
        ds.samples.push_back(s);
    }
    ds.split.assign(10, Split::train);
    ds.split[8] = Split::val;
    ds.split[9] = Split::test;

    auto cfg = base_config();
    cfg.pruning_ratio = 0.0;
    cfg.learning_rate = 1e30;  // divergent on purpose
    cfg.epochs = 50;
    CHECK_THROWS_WITH_AS(train(ds, cfg, spec, init_params(spec, 0)),
                         doctest::Contains("epoch"), NumericError);
}

TEST_CASE("train validates config and inputs") {
    const auto ds = small_dataset(51, 40);
    const auto spec = small_spec();
    const auto init = init_params(spec, 1);

    auto bad = base_config();
    bad.pruning_ratio = 1.0;
    CHECK_THROWS_AS(train(ds, bad, spec, init), PreconditionError);

    auto cfg = base_config();
    CHECK_THROWS_AS(train(ds, cfg, spec, ParameterVector(3, 0.0)), DimensionError);

    Dataset unsplit = ds;
    unsplit.split.clear();
    CHECK_THROWS_AS(train(unsplit, cfg, spec, init), PreconditionError);
}

TEST_CASE("time_efficiency is 1000 over runtime") {
    CHECK(time_efficiency(1000.0) == 1.0);
    CHECK(time_efficiency(500.0) == 2.0);
    CHECK(time_efficiency(250.0) == 4.0);
    CHECK_THROWS_AS(time_efficiency(0.0), PreconditionError);
    CHECK_THROWS_AS(time_efficiency(-1.0), PreconditionError);
}

TEST_CASE("work accounting: molpeg scoring costs two forwards per sample") {
    const auto ds = small_dataset(53, 40);
    const auto spec = small_spec();
    const auto init = init_params(spec, 2);

    auto molpeg_cfg = base_config();
    molpeg_cfg.epochs = 1;
    auto random_cfg = molpeg_cfg;
    random_cfg.scorer = ScorerKind::soft_random;

    const auto a = train(ds, molpeg_cfg, spec, init);
    const auto b = train(ds, random_cfg, spec, init);
    const auto n_train = ds.ids_of(Split::train).size();
    const double extra = a.epochs[0].wall_time_seconds - b.epochs[0].wall_time_seconds;
    // molpeg pays 2 forward units per scored train sample, soft_random none
    CHECK(extra ==
          doctest::Approx(2.0 * static_cast<double>(n_train) * work::kSecondsPerUnit)
              .epsilon(1e-12));
}
