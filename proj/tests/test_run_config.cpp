#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>

#include "eatseg/errors.hpp"
#include "eatseg/run_config.hpp"
#include "test_util.hpp"

using namespace eatseg;

namespace {

ErrorKind kind_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.kind();
    }
    ADD_FAILURE() << "no eatseg::Error thrown";
    return ErrorKind::io;
}

}  // namespace

TEST(RunConfig, DefaultsMatchTrainingSetup) {
    const RunConfig c = load_run_config(std::nullopt);
    EXPECT_EQ(c.seed, 42u);
    EXPECT_EQ(c.train.epochs, 200);
    EXPECT_EQ(c.train.batch_size, 8);
    EXPECT_DOUBLE_EQ(c.train.learning_rate, 1e-3);
    EXPECT_EQ(c.train.fold_count, 2);
    EXPECT_EQ(c.preprocess.target_size, 128);
    EXPECT_EQ(c.model.input_size, 128);
    EXPECT_DOUBLE_EQ(c.augment.p_hflip, 0.5);
    EXPECT_DOUBLE_EQ(c.quantify.threshold, 0.5);
}

TEST(RunConfig, JsonRoundTrip) {
    RunConfig c;
    c.seed = 7;
    c.train.seed = 7;
    c.model.input_size = c.preprocess.target_size = 64;
    c.quantify.aggregation = Aggregation::per_patient;
    nlohmann::json j = c;
    EXPECT_EQ(j.get<RunConfig>(), c);
}

TEST(RunConfig, PrecedenceDefaultsFileOverrides) {
    testutil::TempDir dir("cfg_prec");
    std::ofstream(dir / "run.json") << R"({"train": {"epochs": 5, "batch_size": 4}, "seed": 9})";
    const RunConfig c = load_run_config(dir / "run.json", {"train.epochs=3", "augment.p_hflip=0.25"});
    EXPECT_EQ(c.train.epochs, 3);
    EXPECT_EQ(c.train.batch_size, 4);
    EXPECT_EQ(c.seed, 9u);
    EXPECT_EQ(c.train.seed, 9u);
    EXPECT_DOUBLE_EQ(c.augment.p_hflip, 0.25);
    EXPECT_DOUBLE_EQ(c.train.learning_rate, 1e-3);
}

TEST(RunConfig, SeedsStayUnified) {
    const RunConfig a = load_run_config(std::nullopt, {"train.seed=5"});
    EXPECT_EQ(a.seed, 5u);
    EXPECT_EQ(a.train.seed, 5u);
    const RunConfig b = load_run_config(std::nullopt, {"seed=6"});
    EXPECT_EQ(b.train.seed, 6u);
}

TEST(RunConfig, OverrideValuesAreJsonOrString) {
    const RunConfig c = load_run_config(std::nullopt, {"paths.output_dir=some/dir", "preprocess.threshold_mode=intensity",
                                                       "preprocess.drop_empty_label_slices=false"});
    EXPECT_EQ(c.paths.output_dir, "some/dir");
    EXPECT_EQ(c.preprocess.mode, ThresholdMode::intensity);
    EXPECT_FALSE(c.preprocess.drop_empty_label_slices);
}

TEST(RunConfig, RejectsBadInput) {
    testutil::TempDir dir("cfg_bad");
    EXPECT_EQ(kind_of([] { load_run_config(std::nullopt, {"train.nonsense=1"}); }), ErrorKind::invalid_argument);
    EXPECT_EQ(kind_of([] { load_run_config(std::nullopt, {"train=1"}); }), ErrorKind::invalid_argument);
    EXPECT_EQ(kind_of([] { load_run_config(std::nullopt, {"no_equals_sign"}); }), ErrorKind::invalid_argument);
    EXPECT_EQ(kind_of([] { load_run_config(std::nullopt, {"model.input_size=64"}); }), ErrorKind::configuration);
    EXPECT_EQ(kind_of([&] { load_run_config(dir / "absent.json"); }), ErrorKind::missing_asset);
    std::ofstream(dir / "typo.json") << R"({"trian": {"epochs": 5}})";
    EXPECT_EQ(kind_of([&] { load_run_config(dir / "typo.json"); }), ErrorKind::parse);
    std::ofstream(dir / "broken.json") << "{";
    EXPECT_EQ(kind_of([&] { load_run_config(dir / "broken.json"); }), ErrorKind::parse);
    EXPECT_EQ(kind_of([] { load_run_config(std::nullopt, {"train.epochs=\"many\""}); }), ErrorKind::parse);
}

TEST(RunConfig, MatchedSizesValidate) {
    const RunConfig c = load_run_config(std::nullopt, {"model.input_size=32", "preprocess.target_size=32"});
    EXPECT_EQ(c.model.input_size, 32);
}

TEST(RunConfig, OutputRootEnvironment) {
    RunConfig c;
    c.paths.output_dir = "rel";
    ::unsetenv(kOutputRootEnv);
    EXPECT_EQ(resolve_output_dir(c), std::filesystem::path("rel"));
    ::setenv(kOutputRootEnv, "/tmp/root", 1);
    EXPECT_EQ(resolve_output_dir(c), std::filesystem::path("/tmp/root/rel"));
    c.paths.output_dir = "/abs";
    EXPECT_EQ(resolve_output_dir(c), std::filesystem::path("/abs"));
    ::unsetenv(kOutputRootEnv);
}

TEST(RunConfig, ArchivedConfigReloads) {
    testutil::TempDir dir("cfg_archive");
    const RunConfig c = load_run_config(std::nullopt, {"train.epochs=12", "seed=3"});
    archive_config(c, dir.path());
    EXPECT_EQ(load_run_config(dir / "effective_config.json"), c);
}
