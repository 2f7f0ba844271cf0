#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sstream>

#include "attnfuse/errors.hpp"
#include "attnfuse/evaluation.hpp"
#include "attnfuse/losses.hpp"
#include "attnfuse/training.hpp"
#include "common/test_util.hpp"

using namespace attnfuse;

namespace {

std::vector<Sample> tiny_dataset(std::uint64_t seed, int n) {
    testutil::TempDir dir("train-data");
    const DatasetManifest manifest = generate_dataset(dir.path(), seed, n, 1);
    return load_split(manifest, "train");
}

} // namespace

TEST_CASE("config parsing: defaults, overrides, comments, unknown keys") {
    const TrainConfig def = parse_config("", "inline");
    CHECK(def.alpha == 100.0);
    CHECK(def.thr == 0.2);
    CHECK(def.scales == std::vector<double>{0.5, 1.0, 1.5, 2.0});
    CHECK(def.momentum == 0.9);
    CHECK(def.weight_decay == 5e-4);

    const TrainConfig cfg = parse_config(
        "# experiment\nalpha = 50\nscales = 0.5, 1\nseed = 9\nbatch = 4\n"
        "data_root = d\nout_dir = o\niters_pretrain = 10\niters_selftrain=20\n",
        "inline");
    CHECK(cfg.alpha == 50.0);
    CHECK(cfg.scales == std::vector<double>{0.5, 1.0});
    CHECK(cfg.seed == 9);
    CHECK(cfg.batch == 4);
    CHECK(cfg.iters_pretrain == 10);
    CHECK(cfg.iters_selftrain == 20);

    CHECK_THROWS_WITH_AS(parse_config("bogus = 1\n", "inline"),
                         doctest::Contains("unknown key 'bogus'"), ConfigError);
    CHECK_THROWS_AS(parse_config("alpha == 1\n", "inline"), ConfigError);
    CHECK_THROWS_AS(parse_config("scales = 0.5,2\n", "inline"), ConfigError); // missing 1.0
    CHECK_THROWS_AS(parse_config("thr = 0\n", "inline"), ConfigError);
    CHECK_THROWS_AS(load_config("/nonexistent/path.cfg"), ConfigError);
}

TEST_CASE("pretrain with zero iterations returns the initialization") {
    const std::vector<Sample> data = tiny_dataset(5, 3);
    Hyperparams hp;
    hp.iterations = 0;
    hp.seed = 77;
    const BackboneParams got = pretrain(data, hp);
    CHECK(got.bit_equal(init_backbone(77, kNumClasses)));
}

TEST_CASE("pretrain is deterministic") {
    const std::vector<Sample> data = tiny_dataset(6, 5);
    Hyperparams hp;
    hp.iterations = 6;
    hp.batch_size = 2;
    hp.seed = 3;
    const BackboneParams a = pretrain(data, hp);
    const BackboneParams b = pretrain(data, hp);
    CHECK(a.bit_equal(b));
}

TEST_CASE("overfit smoke test: one all-classes sample drives the loss below 0.05") {
    // find a deterministic sample containing every class
    testutil::TempDir dir("overfit");
    const DatasetManifest manifest = generate_dataset(dir.path(), 2, 40, 1);
    std::vector<Sample> all = load_split(manifest, "train");
    std::vector<Sample> one;
    for (const Sample& s : all) {
        if (s.labels.present == std::vector<std::uint8_t>{1, 1, 1}) {
            one.push_back(s);
            break;
        }
    }
    REQUIRE(one.size() == 1);

    Hyperparams hp;
    hp.iterations = 200;
    hp.batch_size = 1;
    hp.learning_rate = 0.1;
    hp.weight_decay = 0.0;
    hp.seed = 1;
    const BackboneParams trained = pretrain(one, hp);
    const ForwardResult r = forward(trained, one[0].image);
    const double loss = classification_loss(r.pred.logits, one[0].labels).value;
    CAPTURE(loss);
    CHECK(loss < 0.05);
}

TEST_CASE("non-finite loss aborts with the iteration index") {
    const std::vector<Sample> data = tiny_dataset(8, 3);
    Hyperparams hp;
    hp.iterations = 50;
    hp.batch_size = 2;
    hp.learning_rate = 1e18; // blows up immediately
    CHECK_THROWS_WITH_AS(pretrain(data, hp), doctest::Contains("iteration"), NumericalError);
}

TEST_CASE("self-training keeps the teacher frozen and is deterministic") {
    const std::vector<Sample> data = tiny_dataset(9, 4);
    Hyperparams hp;
    hp.iterations = 3;
    hp.batch_size = 2;
    hp.scales = {0.5, 1.0};
    hp.seed = 11;
    Hyperparams pre_hp = hp;
    pre_hp.iterations = 4;
    const BackboneParams pre = pretrain(data, pre_hp);

    SelfTrainRun run = self_train_begin(pre, hp);
    for (int i = 0; i < hp.iterations; ++i) self_train_step(run, data, hp);
    CHECK(run.state.teacher.bit_equal(pre)); // frozen, bit identical
    CHECK(run.state.iteration == 3);

    const BackboneParams again = self_train(pre, data, hp);
    CHECK(again.bit_equal(run.state.student));
}

TEST_CASE("alpha = 0 makes the teacher path inert") {
    const std::vector<Sample> data = tiny_dataset(10, 4);
    Hyperparams pre_hp;
    pre_hp.iterations = 3;
    pre_hp.batch_size = 2;
    pre_hp.seed = 4;
    const BackboneParams pre = pretrain(data, pre_hp);

    Hyperparams a = pre_hp;
    a.alpha = 0.0;
    a.iterations = 4;
    a.scales = {0.5, 1.0, 1.5, 2.0};
    Hyperparams b = a;
    b.scales = {1.0};
    b.thr = 0.7;
    const BackboneParams sa = self_train(pre, data, a);
    const BackboneParams sb = self_train(pre, data, b);
    CHECK(sa.bit_equal(sb)); // teacher configuration cannot influence the run
}

TEST_CASE("loss log records cls, mac and total per iteration") {
    const std::vector<Sample> data = tiny_dataset(12, 4);
    Hyperparams hp;
    hp.iterations = 2;
    hp.batch_size = 2;
    hp.scales = {1.0};
    const BackboneParams pre = pretrain(data, hp);
    std::vector<LossRecord> log;
    SelfTrainOptions opts;
    opts.log = &log;
    self_train(pre, data, hp, opts);
    REQUIRE(log.size() == 2);
    CHECK(log[0].iteration == 0);
    CHECK(log[1].iteration == 1);
    for (const auto& r : log)
        CHECK(r.total == doctest::Approx(r.cls + hp.alpha * r.mac).epsilon(1e-12));
    const std::string csv = loss_log_csv(log);
    CHECK(csv.substr(0, 24) == "iteration,cls,mac,total\r");
}

TEST_CASE("split run equals uninterrupted run via checkpoint/restore") {
    testutil::TempDir dir("state");
    const std::vector<Sample> data = tiny_dataset(13, 6);
    Hyperparams hp;
    hp.iterations = 10;
    hp.batch_size = 2;
    hp.scales = {0.5, 1.0};
    hp.seed = 19;
    Hyperparams pre_hp = hp;
    pre_hp.iterations = 3;
    const BackboneParams pre = pretrain(data, pre_hp);

    SelfTrainRun whole = self_train_begin(pre, hp);
    for (int i = 0; i < 10; ++i) self_train_step(whole, data, hp);

    SelfTrainRun first = self_train_begin(pre, hp);
    for (int i = 0; i < 5; ++i) self_train_step(first, data, hp);
    const auto path = dir.path() / "run.state";
    save_train_state(path, first.state);

    SelfTrainRun resumed;
    resumed.state = load_train_state(path);
    for (int i = 0; i < 5; ++i) self_train_step(resumed, data, hp);

    CHECK(resumed.state.student.bit_equal(whole.state.student));
    CHECK(resumed.state.iteration == whole.state.iteration);
    CHECK(resumed.state.loss_sum == whole.state.loss_sum);
}

TEST_CASE("train state round trip is exact") {
    const std::vector<Sample> data = tiny_dataset(14, 3);
    Hyperparams hp;
    hp.iterations = 2;
    hp.batch_size = 2;
    hp.scales = {1.0};
    const BackboneParams pre = pretrain(data, hp);
    SelfTrainRun run = self_train_begin(pre, hp);
    self_train_step(run, data, hp);
    self_train_step(run, data, hp);

    testutil::TempDir dir("state-rt");
    const auto path = dir.path() / "s.state";
    save_train_state(path, run.state);
    const TrainState back = load_train_state(path);
    CHECK(back.student.bit_equal(run.state.student));
    CHECK(back.teacher.bit_equal(run.state.teacher));
    CHECK(back.iteration == run.state.iteration);
    CHECK(back.perm == run.state.perm);
    CHECK(back.cursor == run.state.cursor);
    CHECK(back.loss_sum == run.state.loss_sum);
    CHECK(back.loss_count == run.state.loss_count);
    std::ostringstream r1, r2;
    r1 << run.state.rng;
    r2 << back.rng;
    CHECK(r1.str() == r2.str());
}

TEST_CASE("restore rejects corrupted state files") {
    testutil::TempDir dir("state-bad");
    const auto path = dir.path() / "bad.state";
    write_text_file(path, "NOTASTATE\nwhatever\n");
    CHECK_THROWS_AS(load_train_state(path), DataError);
    const std::string before = testutil::slurp(path);
    try {
        load_train_state(path);
    } catch (const DataError&) {
    }
    CHECK(testutil::slurp(path) == before); // restore never modifies the file
    CHECK_THROWS_AS(load_train_state(dir.path() / "missing.state"), DataError);
}
