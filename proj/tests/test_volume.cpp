#include "helpers.hpp"

#include "segqc/error.hpp"

#include <gtest/gtest.h>

using namespace segqc;
using segqc::test::registry;

TEST(Geometry, RejectsBadDimsAndSpacing)
{
    EXPECT_THROW(VoxelGeometry({0, 1, 1}, {1, 1, 1}), ValidationError);
    EXPECT_THROW(VoxelGeometry({1, 1, 1}, {1, 0, 1}), ValidationError);
    EXPECT_THROW(VoxelGeometry({1, 1, 1}, {1, 1, std::nan("")}), ValidationError);
    VoxelGeometry g({4, 3, 2}, {2, 2, 2});
    EXPECT_EQ(g.voxel_count(), 24u);
    EXPECT_DOUBLE_EQ(g.voxel_volume(), 8.0);
}

TEST(Registry, ValidatesEntries)
{
    EXPECT_THROW(StructureRegistry({{0, "bg"}, {1, "a"}, {1, "b"}}, 0), ValidationError);
    EXPECT_THROW(StructureRegistry({{0, "bg"}, {1, "a"}, {2, "a"}}, 0), ValidationError);
    EXPECT_THROW(StructureRegistry({{0, "bg"}, {1, "a"}}, 5), ValidationError);
    EXPECT_THROW(StructureRegistry({{0, "bg"}}, 0), ValidationError);
    StructureRegistry r({{0, "bg"}, {17, "hippo"}, {3, "x"}}, 0);
    EXPECT_EQ(r.index_of(17), 1u);
    EXPECT_FALSE(r.contains(4));
    EXPECT_FALSE(r.contains(-1));
    EXPECT_FALSE(r.contains(70000));
    const std::vector<std::size_t> asc{0, 2, 1};
    EXPECT_EQ(r.ascending_id_order(), asc);
}

TEST(SampleSet, ValidSetHasEmptyReport)
{
    auto reg = registry({0, 1, 2});
    auto g = test::line_geometry(4);
    std::vector<std::vector<Label>> s(15, {0, 1, 2, 1});
    auto set = test::label_set(reg, g, s);
    EXPECT_TRUE(validate_sample_set(set).empty());
    EXPECT_EQ(set.kind(), SampleKind::labels);
}

TEST(SampleSet, GeometryMismatchIsOneViolation)
{
    auto reg = registry({0, 1});
    std::vector<McSample> s;
    s.push_back({LabelVolume(VoxelGeometry({64, 64, 64}, {1, 1, 1}), Label{0}), std::nullopt});
    s.push_back({LabelVolume(VoxelGeometry({32, 32, 32}, {1, 1, 1}), Label{0}), std::nullopt});
    McSampleSet set(reg, std::move(s));
    auto report = validate_sample_set(set);
    ASSERT_EQ(report.size(), 1u);
    EXPECT_EQ(report[0].rule, "geometry-mismatch");
    ASSERT_TRUE(report[0].sample);
    EXPECT_EQ(*report[0].sample, 1u);
}

TEST(SampleSet, NormalizationViolationNamesEpsilon)
{
    auto reg = registry({0, 1});
    auto g = test::line_geometry(2);
    std::vector<McSample> s;
    s.push_back({std::nullopt, ProbMapStack(g, 2, {0.5f, 0.5f, 0.5f, 0.5f})});
    s.push_back({std::nullopt, ProbMapStack(g, 2, {0.5f, 0.5f, 0.4f, 0.4f})});
    McSampleSet set(reg, std::move(s));
    auto report = validate_sample_set(set);
    ASSERT_EQ(report.size(), 1u);
    EXPECT_EQ(report[0].rule, "probability-normalization");
    EXPECT_NE(report[0].message.find("eps = 0.0001"), std::string::npos) << report[0].message;
    EXPECT_EQ(format_report(report), format_report(validate_sample_set(set)));
}

TEST(SampleSet, OtherRules)
{
    auto reg = registry({0, 1});
    auto g = test::line_geometry(2);
    auto one = test::label_set(reg, g, {{0, 1}});
    EXPECT_EQ(validate_sample_set(one).at(0).rule, "sample-count");
    EXPECT_THROW(require_valid(one), ValidationError);

    auto bad_label = test::label_set(reg, g, {{0, 1}, {0, 9}});
    auto r = validate_sample_set(bad_label);
    ASSERT_EQ(r.size(), 1u);
    EXPECT_EQ(r[0].rule, "label-not-in-registry");

    std::vector<McSample> mixed;
    mixed.push_back({LabelVolume(g, Label{0}), std::nullopt});
    mixed.push_back({std::nullopt, ProbMapStack(g, 2, {1, 1, 0, 0})});
    auto rm = validate_sample_set(McSampleSet(reg, std::move(mixed)));
    ASSERT_FALSE(rm.empty());
    EXPECT_EQ(rm[0].rule, "kind-mismatch");

    std::vector<McSample> range;
    range.push_back({std::nullopt, ProbMapStack(g, 2, {1.5f, 1, -0.5f, 0})});
    range.push_back({std::nullopt, ProbMapStack(g, 2, {1, 1, 0, 0})});
    auto rr = validate_sample_set(McSampleSet(reg, std::move(range)));
    ASSERT_FALSE(rr.empty());
    EXPECT_EQ(rr[0].rule, "probability-range");
}

TEST(OneHot, DefinitionAndRoundTrip)
{
    auto reg = registry({0, 1, 3});
    auto g = test::line_geometry(5);
    LabelVolume v(g, std::vector<Label>{3, 0, 1, 3, 0});
    auto p = labels_to_onehot_probs(v, *reg);
    const auto m3 = p.map(*reg->index_of(3));
    EXPECT_EQ(m3[0], 1.0f);
    EXPECT_EQ(p.map(0)[0], 0.0f);
    EXPECT_EQ(p.map(1)[0], 0.0f);
    EXPECT_FALSE(check_probabilities(p, *reg, 0.0));
    EXPECT_EQ(argmax_labels(p, *reg), v);

    LabelVolume bg(g, Label{0});
    auto pb = labels_to_onehot_probs(bg, *reg);
    for (float x : pb.map(0))
        EXPECT_EQ(x, 1.0f);
}

TEST(OneHot, RandomRoundTrip)
{
    std::mt19937_64 rng(5);
    auto reg = registry({0, 2, 5, 9});
    VoxelGeometry g({6, 5, 4}, {1, 1, 1});
    for (int t = 0; t < 20; ++t) {
        std::vector<Label> d(g.voxel_count());
        for (auto& l : d)
            l = reg->entries()[rng() % 4].id;
        LabelVolume v(g, d);
        auto p = labels_to_onehot_probs(v, *reg);
        EXPECT_FALSE(check_probabilities(p, *reg, 0.0));
        EXPECT_EQ(argmax_labels(p, *reg), v);
    }
}

TEST(StructureVolume, Examples)
{
    auto reg = registry({0, 1, 2});
    std::vector<Label> d(20, 0);
    std::fill(d.begin(), d.begin() + 10, Label{1});
    LabelVolume unit(test::line_geometry(20), d);
    EXPECT_EQ(structure_volume(unit, *reg, 1), 10.0);
    LabelVolume big(VoxelGeometry({20, 1, 1}, {2, 2, 2}), d);
    EXPECT_EQ(structure_volume(big, *reg, 1), 80.0);
    EXPECT_EQ(structure_volume(big, *reg, 2), 0.0);
    EXPECT_THROW(structure_volume(big, *reg, 7), ValidationError);
}

TEST(StructureVolume, SumsToTotal)
{
    std::mt19937_64 rng(9);
    auto reg = registry({0, 1, 2, 4});
    VoxelGeometry g({7, 6, 5}, {0.7, 1.3, 2.1});
    std::vector<Label> d(g.voxel_count());
    for (auto& l : d)
        l = reg->entries()[rng() % 4].id;
    LabelVolume v(g, d);
    double total = 0.0;
    for (const auto& e : reg->entries())
        total += structure_volume(v, *reg, e.id);
    EXPECT_DOUBLE_EQ(total, static_cast<double>(g.voxel_count()) * g.voxel_volume());
}

TEST(Argmax, TieGoesToLowestId)
{
    auto reg = std::make_shared<const StructureRegistry>(
        std::vector<StructureEntry>{{0, "bg"}, {7, "b"}, {2, "a"}}, 0);
    ProbMapStack p(test::line_geometry(1), 3, {0.0f, 0.5f, 0.5f});
    EXPECT_EQ(argmax_labels(p, *reg)[0], 2);
}
