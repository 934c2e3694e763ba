#include <gtest/gtest.h>

#include "eatseg/errors.hpp"
#include "eatseg/preprocess.hpp"
#include "test_util.hpp"

using namespace eatseg;

namespace {

LoadedStudy contiguous_study(const std::string& id, int slices, int size, std::uint64_t seed) {
    LoadedStudy s = testutil::random_study(id, slices, size, seed);
    for (int i = 0; i < slices; ++i) s.study.slices[i].slice_index = i;
    return s;
}

}  // namespace

TEST(Threshold, BinaryBandIsInclusive) {
    HuPlane hu(1, 6);
    hu.px = {-201, -200, -100, -30, -29, 500};
    const ImagePlane t = threshold_adipose(hu, PreprocessConfig{});
    EXPECT_EQ(t.px, (std::vector<float>{0, 1, 1, 1, 0, 0}));
    EXPECT_EQ(adipose_mask(hu, PreprocessConfig{}).px, (std::vector<std::uint8_t>{0, 1, 1, 1, 0, 0}));
}

TEST(Threshold, IntensityModeScalesInsideBand) {
    PreprocessConfig cfg;
    cfg.mode = ThresholdMode::intensity;
    HuPlane hu(1, 4);
    hu.px = {-200, -115, -30, 0};
    const ImagePlane t = threshold_adipose(hu, cfg);
    EXPECT_FLOAT_EQ(t.px[0], 0.f);
    EXPECT_FLOAT_EQ(t.px[1], 0.5f);
    EXPECT_FLOAT_EQ(t.px[2], 1.f);
    EXPECT_FLOAT_EQ(t.px[3], 0.f);
}

TEST(Normalize, SubtractsGlobalMean) {
    ImagePlane img(1, 3);
    img.px = {0.f, 1.f, 0.5f};
    PreprocessConfig cfg;
    cfg.global_mean = 0.25;
    EXPECT_EQ(normalize_and_center(img, cfg).px, (std::vector<float>{-0.25f, 0.75f, 0.25f}));
}

TEST(Resize, SameSizeIsIdentityAndConstantsStayConstant) {
    ImagePlane img(8, 8);
    for (std::size_t i = 0; i < img.size(); ++i) img.px[i] = static_cast<float>(i);
    EXPECT_EQ(resize_to_target(img, 8, false), img);
    const ImagePlane c = resize_to_target(ImagePlane(10, 10, 0.3f), 4, false);
    for (float v : c.px) EXPECT_FLOAT_EQ(v, 0.3f);
}

TEST(Resize, DownsampleByTwoAveragesPairs) {
    // Half-pixel centres: output pixel i samples input coordinate 2i + 0.5.
    ImagePlane img(4, 4);
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x) img.at(y, x) = static_cast<float>(x);
    const ImagePlane r = resize_to_target(img, 2, false);
    EXPECT_FLOAT_EQ(r.at(0, 0), 0.5f);
    EXPECT_FLOAT_EQ(r.at(1, 1), 2.5f);
}

TEST(Resize, MasksStayBinary) {
    Mask m(7, 7);
    for (int y = 2; y < 5; ++y)
        for (int x = 1; x < 6; ++x) m.at(y, x) = 1;
    for (int target : {3, 5, 16, 31}) {
        const Mask r = resize_mask(m, target);
        EXPECT_EQ(r.rows, target);
        for (auto v : r.px) EXPECT_TRUE(v == 0 || v == 1);
    }
    Mask up(2, 2);
    up.px = {1, 0, 0, 1};
    const Mask r = resize_mask(up, 4);
    EXPECT_EQ(r.px, (std::vector<std::uint8_t>{1, 1, 0, 0, 1, 1, 0, 0, 0, 0, 1, 1, 0, 0, 1, 1}));
}

TEST(Resize, RejectsNonSquare) { EXPECT_THROW(resize_to_target(ImagePlane(3, 4), 2, false), Error); }

TEST(Depth, NormalizedDepthEndpoints) {
    EXPECT_DOUBLE_EQ(normalized_depth(0, 10), 0.0);
    EXPECT_DOUBLE_EQ(normalized_depth(9, 10), 1.0);
    EXPECT_DOUBLE_EQ(normalized_depth(3, 7), 0.5);
    EXPECT_DOUBLE_EQ(normalized_depth(0, 1), 0.5);
    EXPECT_THROW(normalized_depth(10, 10), Error);
}

TEST(BuildSample, DepthChannelIsConstantAndMonotone) {
    const LoadedStudy ls = contiguous_study("p", 6, 16, 3);
    PreprocessConfig cfg;
    cfg.target_size = 8;
    double prev = -1.0;
    for (std::size_t i = 0; i < ls.study.slices.size(); ++i) {
        const TrainSample s = build_sample(ls.study.slices[i], ls.masks[i], ls.study, cfg);
        const double want = static_cast<double>(s.slice_index) / 5.0;
        EXPECT_EQ(s.input.shape(), (Shape4{1, 2, 8, 8}));
        for (std::size_t k = 0; k < s.input.plane_size(); ++k)
            ASSERT_FLOAT_EQ(s.input.plane(0, 1)[k], static_cast<float>(want));
        EXPECT_GT(s.normalized_depth, prev);
        prev = s.normalized_depth;
    }
}

TEST(BuildSample, ChannelZeroIsCentredThreshold) {
    const LoadedStudy ls = contiguous_study("p", 2, 8, 4);
    PreprocessConfig cfg;
    cfg.target_size = 8;
    const TrainSample s = build_sample(ls.study.slices[0], ls.masks[0], ls.study, cfg);
    const Mask fat = adipose_mask(ls.study.slices[0].pixels, cfg);
    for (std::size_t k = 0; k < fat.size(); ++k) {
        EXPECT_FLOAT_EQ(s.input.plane(0, 0)[k], static_cast<float>(fat.px[k] - cfg.global_mean));
        EXPECT_EQ(s.adipose.px[k], fat.px[k]);
    }
    EXPECT_EQ(s.target, ls.masks[0].pericardium);
    EXPECT_EQ(s.eat, ls.masks[0].eat);
}

TEST(BuildSample, SoftTissueSliceIsConstantNegativeMean) {
    LoadedStudy ls = contiguous_study("p", 3, 16, 5);
    for (auto& v : ls.study.slices[1].pixels.px) v = -500;
    PreprocessConfig cfg;
    cfg.target_size = 8;
    const TrainSample s = build_sample(ls.study.slices[1], ls.masks[1], ls.study, cfg);
    for (std::size_t k = 0; k < s.input.plane_size(); ++k) {
        ASSERT_FLOAT_EQ(s.input.plane(0, 0)[k], static_cast<float>(-cfg.global_mean));
        ASSERT_FLOAT_EQ(s.input.plane(0, 1)[k], 0.5f);
    }
}

TEST(BuildSample, ForeignSliceRejected) {
    const LoadedStudy a = contiguous_study("a", 2, 8, 1), b = contiguous_study("b", 2, 8, 2);
    PreprocessConfig cfg;
    cfg.target_size = 8;
    EXPECT_THROW(build_sample(a.study.slices[0], a.masks[0], b.study, cfg), Error);
}

TEST(Filter, DropsEmptyLabelSlicesAndReportsThem) {
    LoadedStudy a = contiguous_study("a", 3, 8, 1);
    LoadedStudy b = contiguous_study("b", 1, 8, 2);
    a.masks[1].eat = Mask(8, 8);
    b.masks[0].eat = Mask(8, 8);
    const FilteredDataset f = filter_empty_slices({a, b});
    ASSERT_EQ(f.studies.size(), 1u);
    EXPECT_EQ(f.studies[0].study.slices.size(), 2u);
    EXPECT_EQ(f.report.retained, 2u);
    ASSERT_EQ(f.report.removed.size(), 2u);
    EXPECT_EQ(f.report.removed[0].patient_id, "a");
    EXPECT_EQ(f.report.removed[0].slice_index, 1);
    EXPECT_EQ(f.report.emptied_patients, (std::vector<std::string>{"b"}));
}

TEST(Filter, DepthUsesRankAmongRetainedSlices) {
    LoadedStudy a = contiguous_study("a", 4, 8, 1);
    a.masks[0].eat = Mask(8, 8);
    const FilteredDataset f = filter_empty_slices({a});
    PreprocessConfig cfg;
    cfg.target_size = 8;
    const auto samples = build_samples(f.studies, cfg);
    ASSERT_EQ(samples.size(), 3u);
    EXPECT_DOUBLE_EQ(samples[0].normalized_depth, 0.0);
    EXPECT_DOUBLE_EQ(samples[1].normalized_depth, 0.5);
    EXPECT_DOUBLE_EQ(samples[2].normalized_depth, 1.0);
}

TEST(Config, ValidationAndJson) {
    PreprocessConfig c;
    c.adipose_hu_low = 0;
    c.adipose_hu_high = -10;
    EXPECT_THROW(validate(c), Error);
    PreprocessConfig d;
    d.mode = ThresholdMode::intensity;
    d.target_size = 64;
    nlohmann::json j = d;
    EXPECT_EQ(j.get<PreprocessConfig>(), d);
    j["threshold_mode"] = "fuzzy";
    EXPECT_THROW(j.get<PreprocessConfig>(), Error);
}
