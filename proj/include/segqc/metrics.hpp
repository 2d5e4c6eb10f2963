#pragma once

#include "segqc/volume.hpp"

#include <optional>
#include <string>
#include <vector>

namespace segqc {

/// Voxel-wise uncertainty U(x), summed over all registry entries.
class UncertaintyVolume {
public:
    UncertaintyVolume(VoxelGeometry geometry, std::vector<double> values);

    const VoxelGeometry& geometry() const { return geometry_; }
    std::span<const double> values() const { return values_; }
    double operator[](std::size_t i) const { return values_[i]; }

private:
    VoxelGeometry geometry_;
    std::vector<double> values_;
};

struct EntropyOptions {
    /// Divide U by N so values are comparable across sample counts. Off by default.
    bool normalize = false;
};

/// U(x) = sum_s sum_i -p_s^i(x) ln p_s^i(x), with 0 ln 0 = 0.
///
/// The sum runs over the samples' own probability maps; it is not the entropy of
/// the mean map and it grows with N. Label-only samples are one-hot, so every
/// term vanishes and they contribute exactly zero.
UncertaintyVolume voxel_uncertainty(const McSampleSet& set, const EntropyOptions& opts = {});

/// U_s(x) = sum_i -p_s^i(x) ln p_s^i(x) for one structure; U is the sum of these over the registry.
UncertaintyVolume structure_uncertainty(const McSampleSet& set, Label s, const EntropyOptions& opts = {});

/// Argmax of the mean probability map; majority vote for label-only sets.
/// Ties go to the lowest label id.
LabelVolume consensus_segmentation(const McSampleSet& set);

struct VolumeStats {
    double mean = 0.0;              // mm^3
    double std = 0.0;               // sample std (N - 1), mm^3
    std::optional<double> cv;       // absent when mean == 0
};

/// Type-1: coefficient of variation of the per-sample structure volumes.
VolumeStats cv_volume(const McSampleSet& set, Label s);

/// Type-2: mean Dice over all unordered sample pairs. Absent when s is empty in every sample.
std::optional<double> mc_dice(const McSampleSet& set, Label s);

/// Type-3: mean of U(x) over the consensus voxels labeled s. Absent when no voxel is labeled s.
std::optional<double> mean_structure_uncertainty(const McSampleSet& set, const LabelVolume& consensus,
                                                 const UncertaintyVolume& u, Label s);

/// Dice between the masks (seg == s) and (gt == s). Both empty gives 1, one empty gives 0.
double dice_vs_gt(const LabelVolume& seg, const LabelVolume& gt, Label s);

/// Dice from mask sizes and overlap with the empty-mask conventions above.
double dice_from_counts(std::size_t a, std::size_t b, std::size_t overlap);

struct StructureMetrics {
    Label id = 0;
    std::string name;
    double mean_volume = 0.0;
    double std_volume = 0.0;
    std::optional<double> cv;
    std::optional<double> mc_dice;
    std::optional<double> mean_unc;
    std::optional<double> gt_dice;
    double consensus_volume = 0.0;

    bool operator==(const StructureMetrics&) const = default;
};

struct UncertaintySummary {
    double min = 0.0;
    double mean = 0.0;
    double max = 0.0;

    bool operator==(const UncertaintySummary&) const = default;
};

/// Fixed floating-point reduction order used for every sum in a report.
inline constexpr const char* kReductionOrder =
    "row-major voxel order (x fastest); structures in registry order; ascending sample index; "
    "sample pairs (i<j) in lexicographic order";

struct StructureReport {
    std::string scan_id;
    std::string dataset;
    std::size_t n_samples = 0;
    bool entropy_normalized = false;
    bool has_ground_truth = false;
    UncertaintySummary voxel_uncertainty;
    /// One record per non-background registry entry, in registry order.
    std::vector<StructureMetrics> structures;

    bool operator==(const StructureReport&) const = default;
};

struct ReportOutputs {
    StructureReport report;
    LabelVolume consensus;
    UncertaintyVolume uncertainty;
};

/// Consensus, voxel uncertainty and all per-structure metrics for one scan.
ReportOutputs structure_report(const McSampleSet& set, const LabelVolume* gt = nullptr,
                               const EntropyOptions& opts = {});

} // namespace segqc
