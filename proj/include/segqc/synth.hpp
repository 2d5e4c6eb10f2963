#pragma once

#include "segqc/stats.hpp"
#include "segqc/volume.hpp"

#include <array>
#include <cstdint>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <vector>

namespace segqc {

/// Seedable generator with hand-written uniform/normal transforms so streams are
/// identical across standard libraries (std:: distributions are not).
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    /// Uniform in [0, 1).
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    /// Box-Muller, one draw per call.
    double normal();
    bool bernoulli(double p) { return uniform() < p; }
    std::size_t index(std::size_t n) { return static_cast<std::size_t>(uniform() * static_cast<double>(n)); }

private:
    std::mt19937_64 engine_;
};

/// splitmix64 finalizer.
std::uint64_t mix64(std::uint64_t x);

/// Stream key for (seed, sample, label); substreams never depend on generation order.
std::uint64_t stream_key(std::uint64_t seed, std::uint64_t sample, std::uint64_t label);

/// Counter-based uniform in [0, 1) for element `counter` of stream `key`.
double hashed_uniform(std::uint64_t key, std::uint64_t counter);

enum class ShapeKind { sphere, box };

struct ShapeSpec {
    Label id = 1;
    std::string name;
    ShapeKind kind = ShapeKind::sphere;
    std::array<double, 3> center{};  // voxel coordinates
    std::array<double, 3> size{};    // semi-axes (sphere) or half-extents (box), voxels
};

struct PhantomSpec {
    VoxelGeometry geometry{{32, 32, 32}, {1.0, 1.0, 1.0}};
    std::vector<ShapeSpec> structures;
    Label background_id = 0;
    std::string background_name = "background";
    std::uint64_t seed = 0;
};

/// Background first, then structures in spec order.
StructureRegistry phantom_registry(const PhantomSpec& spec);

/// Each voxel takes the label of the first shape containing its center, else background.
/// Throws ValidationError when a shape leaves the volume.
LabelVolume make_phantom(const PhantomSpec& spec);

/// One ellipsoid per cell of a grid[0] x grid[1] x grid[2] lattice, semi-axes drawn
/// uniformly from [min_radius, max_radius] (clipped to the cell).
PhantomSpec random_grid_phantom(std::array<std::int64_t, 3> dims, std::array<int, 3> grid, double min_radius,
                                double max_radius, std::uint64_t seed, std::array<double, 3> spacing = {1, 1, 1});

struct NoiseSpec {
    /// Flip probability for structures without an explicit entry (background never uses it).
    double default_flip_prob = 0.0;
    std::map<Label, double> flip_prob;
    int erosion_dilation_radius = 0;
    std::size_t n_samples = 15;
    std::uint64_t seed = 0;
    /// Share of the flip probability realised once per set, common to all samples.
    double systematic_fraction = 0.5;
    /// Amplitude of the per-sample, per-structure grow/shrink bias on boundary flips.
    double extent_bias = 0.5;
    /// Emit per-sample soft probability maps alongside the labels.
    bool soft_probabilities = true;

    double flip_prob_for(Label id, Label background) const;
    void validate() const;
};

/// N noisy segmentations of gt. Boundary voxels (6-connected) swap between their gt
/// label and the neighbouring label; each structure is then randomly eroded or
/// dilated (into background) by erosion_dilation_radius.
///
/// Randomness per voxel comes from hashed_uniform on (seed, sample, label) keys, so
/// samples can be generated in any order or in parallel with identical output.
McSampleSet sample_mc(const LabelVolume& gt, std::shared_ptr<const StructureRegistry> registry,
                      const NoiseSpec& noise);

enum class NoiseLink { none, cv_scaled };

struct CohortSimOptions {
    double noise_scale = 1.0;
    std::size_t n_sites = 3;
    /// log-normal CV: exp(N(log(cv_median), cv_log_sd^2)).
    double cv_median = 0.1;
    double cv_log_sd = 1.0;
};

struct CohortSim {
    CohortTable table;
    Eigen::VectorXd beta;  // intercept, age, sex, dx, site effects (raw scale)
};

/// Simulated cohort: age ~ U[20, 90], sex and dx ~ Bernoulli(0.5), site uniform over
/// n_sites levels. volume = X beta + noise; under cv_scaled the noise SD is
/// noise_scale * cv / cv_median, otherwise noise_scale. mc_dice = exp(-cv).
/// `effect` holds 4 entries (site effects zero) or 4 + n_sites - 1.
CohortSim make_cohort(std::size_t n_subjects, const Eigen::VectorXd& effect, NoiseLink link, std::uint64_t seed,
                      const CohortSimOptions& opts = {});

} // namespace segqc
