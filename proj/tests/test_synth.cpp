#include "helpers.hpp"

#include "segqc/error.hpp"

#include <gtest/gtest.h>

using namespace segqc;

namespace {

PhantomSpec single_sphere(double r)
{
    PhantomSpec spec;
    spec.structures.push_back({1, "ball", ShapeKind::sphere, {15.5, 15.5, 15.5}, {r, r, r}});
    return spec;
}

double mean_gt_dice(const McSampleSet& set, const LabelVolume& gt)
{
    double total = 0.0;
    int n = 0;
    for (std::size_t i = 0; i < set.size(); ++i)
        for (const auto& e : set.registry().entries())
            if (e.id != set.registry().background_id()) {
                total += dice_vs_gt(*set[i].labels, gt, e.id);
                ++n;
            }
    return total / n;
}

} // namespace

TEST(Phantom, SphereVolume)
{
    auto spec = single_sphere(5.0);
    auto gt = make_phantom(spec);
    auto reg = phantom_registry(spec);
    const double analytic = 4.0 / 3.0 * M_PI * 125.0;
    const double v = structure_volume(gt, reg, 1);
    EXPECT_NEAR(v, analytic, 0.15 * analytic);
    std::size_t count = 0;
    for (std::int64_t z = 0; z < 32; ++z)
        for (std::int64_t y = 0; y < 32; ++y)
            for (std::int64_t x = 0; x < 32; ++x) {
                const double dx = x - 15.5, dy = y - 15.5, dz = z - 15.5;
                count += dx * dx + dy * dy + dz * dz <= 25.0;
            }
    EXPECT_EQ(v, static_cast<double>(count));
}

TEST(Phantom, EmptyAndDeterministic)
{
    PhantomSpec empty;
    auto gt = make_phantom(empty);
    for (Label l : gt.data())
        ASSERT_EQ(l, 0);
    auto spec = random_grid_phantom({40, 40, 40}, {2, 2, 2}, 4, 8.5, 3);
    EXPECT_EQ(spec.structures.size(), 8u);
    EXPECT_EQ(make_phantom(spec), make_phantom(spec));
    EXPECT_EQ(make_phantom(random_grid_phantom({40, 40, 40}, {2, 2, 2}, 4, 8.5, 3)), make_phantom(spec));
}

TEST(Phantom, FirstShapeWinsAndBounds)
{
    PhantomSpec spec;
    spec.structures.push_back({1, "a", ShapeKind::box, {10, 10, 10}, {3, 3, 3}});
    spec.structures.push_back({2, "b", ShapeKind::box, {12, 10, 10}, {3, 3, 3}});
    auto gt = make_phantom(spec);
    EXPECT_EQ(gt[spec.geometry.index(12, 10, 10)], 1);
    EXPECT_EQ(gt[spec.geometry.index(14, 10, 10)], 2);
    PhantomSpec out;
    out.structures.push_back({1, "a", ShapeKind::sphere, {2, 16, 16}, {5, 5, 5}});
    EXPECT_THROW(make_phantom(out), ValidationError);
}

TEST(Sampler, ZeroNoiseIsFixedPoint)
{
    auto spec = random_grid_phantom({24, 24, 24}, {2, 2, 1}, 3, 5, 1);
    auto reg = std::make_shared<const StructureRegistry>(phantom_registry(spec));
    auto gt = make_phantom(spec);
    NoiseSpec noise;
    noise.n_samples = 5;
    auto set = sample_mc(gt, reg, noise);
    for (std::size_t i = 0; i < set.size(); ++i)
        EXPECT_EQ(*set[i].labels, gt);
    auto out = structure_report(set, &gt);
    for (const auto& m : out.report.structures) {
        EXPECT_EQ(*m.cv, 0.0);
        EXPECT_EQ(*m.mc_dice, 1.0);
        EXPECT_EQ(*m.mean_unc, 0.0);
        EXPECT_EQ(*m.gt_dice, 1.0);
    }
    for (double u : out.uncertainty.values())
        ASSERT_EQ(u, 0.0);
}

TEST(Sampler, DeterministicAndValid)
{
    auto spec = random_grid_phantom({24, 24, 24}, {2, 2, 1}, 3, 5, 2);
    auto reg = std::make_shared<const StructureRegistry>(phantom_registry(spec));
    auto gt = make_phantom(spec);
    NoiseSpec noise;
    noise.default_flip_prob = 0.2;
    noise.erosion_dilation_radius = 1;
    noise.n_samples = 4;
    noise.seed = 99;
    auto a = sample_mc(gt, reg, noise);
    setenv("SEGQC_THREADS", "1", 1);
    auto b = sample_mc(gt, reg, noise);
    unsetenv("SEGQC_THREADS");
    ASSERT_EQ(a.size(), 4u);
    EXPECT_EQ(a.kind(), SampleKind::both);
    EXPECT_TRUE(validate_sample_set(a).empty()) << format_report(validate_sample_set(a));
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(*a[i].labels, *b[i].labels);
        EXPECT_EQ(*a[i].probs, *b[i].probs);
        EXPECT_EQ(argmax_labels(*a[i].probs, *reg), *a[i].labels);
    }
    noise.seed = 100;
    auto c = sample_mc(gt, reg, noise);
    EXPECT_NE(*a[0].labels, *c[0].labels);

    auto out = structure_report(a, &gt);
    for (const auto& m : out.report.structures) {
        EXPECT_TRUE(std::isfinite(m.mean_volume));
        EXPECT_GE(*m.cv, 0.0);
        EXPECT_GE(*m.mc_dice, 0.0);
        EXPECT_LE(*m.mc_dice, 1.0);
    }
}

TEST(Sampler, DiceDecreasesWithFlipProbability)
{
    auto spec = random_grid_phantom({32, 32, 32}, {2, 2, 2}, 4, 7, 4);
    auto reg = std::make_shared<const StructureRegistry>(phantom_registry(spec));
    auto gt = make_phantom(spec);
    const std::vector<double> levels{0.02, 0.1, 0.2, 0.35};
    std::vector<double> mean(levels.size(), 0.0);
    int low_wins = 0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        std::vector<double> d;
        for (double f : levels) {
            NoiseSpec noise;
            noise.default_flip_prob = f;
            noise.n_samples = 3;
            noise.seed = seed;
            noise.soft_probabilities = false;
            d.push_back(mean_gt_dice(sample_mc(gt, reg, noise), gt));
        }
        for (std::size_t k = 0; k < levels.size(); ++k)
            mean[k] += d[k] / 20.0;
        NoiseSpec lo, hi;
        lo.default_flip_prob = 0.05;
        hi.default_flip_prob = 0.4;
        lo.seed = hi.seed = seed;
        lo.n_samples = hi.n_samples = 3;
        low_wins += mean_gt_dice(sample_mc(gt, reg, hi), gt) < mean_gt_dice(sample_mc(gt, reg, lo), gt);
    }
    for (std::size_t k = 1; k < levels.size(); ++k)
        EXPECT_LT(mean[k], mean[k - 1]);
    EXPECT_EQ(low_wins, 20);
}

TEST(Sampler, RejectsBadSpec)
{
    NoiseSpec n;
    n.default_flip_prob = 1.0;
    EXPECT_THROW(n.validate(), ValidationError);
    n.default_flip_prob = 0.1;
    n.n_samples = 1;
    EXPECT_THROW(n.validate(), ValidationError);
}

TEST(Rng, StreamsAreOrderIndependent)
{
    const auto k1 = stream_key(7, 3, 12);
    EXPECT_EQ(hashed_uniform(k1, 5), hashed_uniform(stream_key(7, 3, 12), 5));
    EXPECT_NE(k1, stream_key(7, 12, 3));
    Rng a(1), b(1);
    for (int i = 0; i < 10; ++i)
        EXPECT_EQ(a.normal(), b.normal());
    double m = 0.0;
    for (int i = 0; i < 100000; ++i)
        m += hashed_uniform(k1, static_cast<std::uint64_t>(i));
    EXPECT_NEAR(m / 100000, 0.5, 0.01);
}

TEST(Cohort, DeterministicAndShaped)
{
    auto a = make_cohort(60, Eigen::Vector4d(0, 0.01, 0.2, 1.0), NoiseLink::cv_scaled, 3);
    auto b = make_cohort(60, Eigen::Vector4d(0, 0.01, 0.2, 1.0), NoiseLink::cv_scaled, 3);
    EXPECT_EQ(a.table, b.table);
    ASSERT_EQ(a.table.rows.size(), 60u);
    EXPECT_TRUE(a.table.has_cv && a.table.has_mc_dice && a.table.has_site);
    for (const auto& r : a.table.rows) {
        EXPECT_GE(r.age, 20.0);
        EXPECT_LE(r.age, 90.0);
        EXPECT_GT(*r.cv, 0.0);
        EXPECT_NEAR(*r.mc_dice, std::exp(-*r.cv), 1e-15);
    }
    EXPECT_EQ(a.beta.size(), 6);
    EXPECT_THROW(make_cohort(60, Eigen::Vector3d(0, 0, 0), NoiseLink::none, 1), ValidationError);
}
