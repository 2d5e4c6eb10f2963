#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace segqc {

using Label = std::uint16_t;

/// Largest label id a registry may hold (labels are stored as 16-bit).
inline constexpr std::int64_t kMaxLabelId = 65535;

/// Tolerance on the per-voxel probability sum of a ProbMapStack.
inline constexpr double kProbSumTolerance = 1e-4;

class VoxelGeometry {
public:
    VoxelGeometry(std::array<std::int64_t, 3> dims, std::array<double, 3> spacing);

    const std::array<std::int64_t, 3>& dims() const { return dims_; }
    const std::array<double, 3>& spacing() const { return spacing_; }

    std::size_t voxel_count() const { return count_; }
    /// mm^3 per voxel.
    double voxel_volume() const { return spacing_[0] * spacing_[1] * spacing_[2]; }

    /// Row-major, x fastest.
    std::size_t index(std::int64_t x, std::int64_t y, std::int64_t z) const
    {
        return static_cast<std::size_t>((z * dims_[1] + y) * dims_[0] + x);
    }

    bool operator==(const VoxelGeometry&) const = default;

private:
    std::array<std::int64_t, 3> dims_;
    std::array<double, 3> spacing_;
    std::size_t count_;
};

std::string to_string(const VoxelGeometry& g);

struct StructureEntry {
    Label id;
    std::string name;

    bool operator==(const StructureEntry&) const = default;
};

/// Ordered label table. Entry order is the order every per-structure output follows;
/// the background entry is kept but skipped by structure-wise metrics.
class StructureRegistry {
public:
    StructureRegistry(std::vector<StructureEntry> entries, Label background_id);

    const std::vector<StructureEntry>& entries() const { return entries_; }
    std::size_t size() const { return entries_.size(); }
    Label background_id() const { return background_; }
    std::size_t background_index() const { return background_index_; }

    std::optional<std::size_t> index_of(std::int64_t label) const
    {
        if (label < 0 || label >= static_cast<std::int64_t>(lut_.size()) || lut_[label] < 0)
            return std::nullopt;
        return static_cast<std::size_t>(lut_[label]);
    }
    bool contains(std::int64_t label) const { return index_of(label).has_value(); }

    /// Entry indices sorted by ascending label id (argmax tie-break order).
    const std::vector<std::size_t>& ascending_id_order() const { return ascending_; }

    /// Raw lookup table label -> entry index (-1 when absent).
    std::span<const std::int32_t> lookup() const { return lut_; }

    bool operator==(const StructureRegistry& o) const
    {
        return entries_ == o.entries_ && background_ == o.background_;
    }

private:
    std::vector<StructureEntry> entries_;
    Label background_;
    std::size_t background_index_ = 0;
    std::vector<std::int32_t> lut_;
    std::vector<std::size_t> ascending_;
};

class LabelVolume {
public:
    LabelVolume(VoxelGeometry geometry, std::vector<Label> data);
    /// Volume filled with a single label.
    LabelVolume(VoxelGeometry geometry, Label fill);

    const VoxelGeometry& geometry() const { return geometry_; }
    std::span<const Label> data() const { return data_; }
    std::size_t size() const { return data_.size(); }
    Label operator[](std::size_t i) const { return data_[i]; }

    bool operator==(const LabelVolume&) const = default;

private:
    VoxelGeometry geometry_;
    std::vector<Label> data_;
};

/// One probability volume per registry entry, stored map-major: map m occupies
/// [m * voxels, (m + 1) * voxels). Map m belongs to registry entry m.
class ProbMapStack {
public:
    ProbMapStack(VoxelGeometry geometry, std::size_t n_maps, std::vector<float> data);

    const VoxelGeometry& geometry() const { return geometry_; }
    std::size_t map_count() const { return n_maps_; }
    std::span<const float> map(std::size_t m) const
    {
        return std::span<const float>(data_).subspan(m * geometry_.voxel_count(), geometry_.voxel_count());
    }
    std::span<const float> data() const { return data_; }

    bool operator==(const ProbMapStack&) const = default;

private:
    VoxelGeometry geometry_;
    std::size_t n_maps_;
    std::vector<float> data_;
};

struct McSample {
    std::optional<LabelVolume> labels;
    std::optional<ProbMapStack> probs;
};

enum class SampleKind { labels, probs, both, mixed, empty };

/// N Monte Carlo segmentation samples sharing one registry. Construction does not
/// validate; run validate_sample_set (or require_valid) before computing on it.
class McSampleSet {
public:
    McSampleSet(std::shared_ptr<const StructureRegistry> registry, std::vector<McSample> samples);

    std::size_t size() const { return samples_.size(); }
    const StructureRegistry& registry() const { return *registry_; }
    std::shared_ptr<const StructureRegistry> registry_ptr() const { return registry_; }
    const std::vector<McSample>& samples() const { return samples_; }
    const McSample& operator[](std::size_t i) const { return samples_[i]; }

    SampleKind kind() const;
    /// Geometry of the first sample; throws if the set is empty.
    const VoxelGeometry& geometry() const;

private:
    std::shared_ptr<const StructureRegistry> registry_;
    std::vector<McSample> samples_;
};

struct Violation {
    std::optional<std::size_t> sample;
    std::string rule;
    std::string message;
};

using ValidationReport = std::vector<Violation>;

/// Checks every McSampleSet invariant; returns an empty report iff all hold.
ValidationReport validate_sample_set(const McSampleSet& set);

/// Throws ValidationError listing the violations when the report is non-empty.
void require_valid(const McSampleSet& set);

std::string format_report(const ValidationReport& report);

/// Voxel indices whose value is not a registry label (first few, plus total count).
std::optional<Violation> check_labels(const LabelVolume& v, const StructureRegistry& registry);

/// Per-voxel sum and range checks for a probability stack with tolerance eps.
std::optional<Violation> check_probabilities(const ProbMapStack& p, const StructureRegistry& registry,
                                             double eps = kProbSumTolerance);

ProbMapStack labels_to_onehot_probs(const LabelVolume& v, const StructureRegistry& registry);

/// Per-voxel argmax over maps; ties go to the lowest label id.
LabelVolume argmax_labels(const ProbMapStack& p, const StructureRegistry& registry);

/// Voxel counts per registry entry. Throws ValidationError on a label outside the registry.
std::vector<std::size_t> label_counts(const LabelVolume& v, const StructureRegistry& registry);

/// Volume of structure s in mm^3.
double structure_volume(const LabelVolume& v, const StructureRegistry& registry, Label s);

/// Labels of sample i: its stored label volume, else the argmax of its probabilities.
LabelVolume sample_labels(const McSampleSet& set, std::size_t i);

} // namespace segqc
