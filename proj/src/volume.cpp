#include "segqc/volume.hpp"

#include "segqc/error.hpp"
#include "segqc/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

namespace segqc {

VoxelGeometry::VoxelGeometry(std::array<std::int64_t, 3> dims, std::array<double, 3> spacing)
    : dims_(dims), spacing_(spacing), count_(1)
{
    for (int a = 0; a < 3; ++a) {
        if (dims[a] < 1)
            throw ValidationError("geometry: dims[" + std::to_string(a) + "] must be >= 1, got " +
                                  std::to_string(dims[a]));
        if (!std::isfinite(spacing[a]) || spacing[a] <= 0.0)
            throw ValidationError("geometry: spacing[" + std::to_string(a) + "] must be finite and > 0");
        count_ *= static_cast<std::size_t>(dims[a]);
    }
}

std::string to_string(const VoxelGeometry& g)
{
    std::ostringstream os;
    os << g.dims()[0] << "x" << g.dims()[1] << "x" << g.dims()[2] << " @ " << g.spacing()[0] << "x"
       << g.spacing()[1] << "x" << g.spacing()[2] << " mm";
    return os.str();
}

StructureRegistry::StructureRegistry(std::vector<StructureEntry> entries, Label background_id)
    : entries_(std::move(entries)), background_(background_id)
{
    std::set<std::string> names;
    Label max_id = 0;
    for (const auto& e : entries_) {
        if (!names.insert(e.name).second)
            throw ValidationError("registry: duplicate structure name '" + e.name + "'");
        max_id = std::max(max_id, e.id);
    }
    lut_.assign(static_cast<std::size_t>(max_id) + 1, -1);
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        auto& slot = lut_[entries_[i].id];
        if (slot >= 0)
            throw ValidationError("registry: duplicate label id " + std::to_string(entries_[i].id));
        slot = static_cast<std::int32_t>(i);
    }
    auto bg = index_of(background_);
    if (!bg)
        throw ValidationError("registry: background id " + std::to_string(background_) +
                              " is not a registry entry");
    background_index_ = *bg;
    if (entries_.size() < 2)
        throw ValidationError("registry: needs at least one non-background structure");

    ascending_.resize(entries_.size());
    std::iota(ascending_.begin(), ascending_.end(), std::size_t{0});
    std::sort(ascending_.begin(), ascending_.end(),
              [&](std::size_t a, std::size_t b) { return entries_[a].id < entries_[b].id; });
}

LabelVolume::LabelVolume(VoxelGeometry geometry, std::vector<Label> data)
    : geometry_(geometry), data_(std::move(data))
{
    if (data_.size() != geometry_.voxel_count())
        throw ValidationError("label volume: " + std::to_string(data_.size()) + " values for " +
                              std::to_string(geometry_.voxel_count()) + " voxels");
}

LabelVolume::LabelVolume(VoxelGeometry geometry, Label fill)
    : geometry_(geometry), data_(geometry.voxel_count(), fill)
{
}

ProbMapStack::ProbMapStack(VoxelGeometry geometry, std::size_t n_maps, std::vector<float> data)
    : geometry_(geometry), n_maps_(n_maps), data_(std::move(data))
{
    if (data_.size() != n_maps_ * geometry_.voxel_count())
        throw ValidationError("probability stack: " + std::to_string(data_.size()) + " values for " +
                              std::to_string(n_maps_) + " maps of " +
                              std::to_string(geometry_.voxel_count()) + " voxels");
}

McSampleSet::McSampleSet(std::shared_ptr<const StructureRegistry> registry, std::vector<McSample> samples)
    : registry_(std::move(registry)), samples_(std::move(samples))
{
    if (!registry_)
        throw ValidationError("sample set: missing registry");
}

namespace {

SampleKind kind_of(const McSample& s)
{
    if (s.labels && s.probs)
        return SampleKind::both;
    if (s.labels)
        return SampleKind::labels;
    if (s.probs)
        return SampleKind::probs;
    return SampleKind::empty;
}

const char* kind_name(SampleKind k)
{
    switch (k) {
    case SampleKind::labels: return "labels";
    case SampleKind::probs: return "probabilities";
    case SampleKind::both: return "labels+probabilities";
    case SampleKind::mixed: return "mixed";
    case SampleKind::empty: return "empty";
    }
    return "?";
}

const VoxelGeometry* geometry_of(const McSample& s)
{
    if (s.labels)
        return &s.labels->geometry();
    if (s.probs)
        return &s.probs->geometry();
    return nullptr;
}

} // namespace

SampleKind McSampleSet::kind() const
{
    if (samples_.empty())
        return SampleKind::empty;
    SampleKind k = kind_of(samples_.front());
    for (const auto& s : samples_)
        if (kind_of(s) != k)
            return SampleKind::mixed;
    return k;
}

const VoxelGeometry& McSampleSet::geometry() const
{
    if (samples_.empty() || !geometry_of(samples_.front()))
        throw ValidationError("sample set: no samples");
    return *geometry_of(samples_.front());
}

std::optional<Violation> check_labels(const LabelVolume& v, const StructureRegistry& registry)
{
    auto lut = registry.lookup();
    std::size_t bad = 0;
    std::size_t first = 0;
    Label first_value = 0;
    auto data = v.data();
    for (std::size_t i = 0; i < data.size(); ++i) {
        Label l = data[i];
        if (l >= lut.size() || lut[l] < 0) {
            if (bad == 0) {
                first = i;
                first_value = l;
            }
            ++bad;
        }
    }
    if (bad == 0)
        return std::nullopt;
    return Violation{std::nullopt, "label-not-in-registry",
                     std::to_string(bad) + " voxel(s) carry labels missing from the registry (first: value " +
                         std::to_string(first_value) + " at voxel " + std::to_string(first) + ")"};
}

std::optional<Violation> check_probabilities(const ProbMapStack& p, const StructureRegistry& registry,
                                             double eps)
{
    if (p.map_count() != registry.size())
        return Violation{std::nullopt, "registry-mismatch",
                         "probability stack has " + std::to_string(p.map_count()) + " maps, registry has " +
                             std::to_string(registry.size()) + " entries"};
    const std::size_t nv = p.geometry().voxel_count();
    std::size_t bad_value = 0;
    std::size_t bad_sum = 0;
    std::size_t first_sum = 0;
    double first_total = 0.0;
    for (std::size_t m = 0; m < p.map_count(); ++m)
        for (float v : p.map(m))
            if (!std::isfinite(v) || v < 0.0f || v > 1.0f)
                ++bad_value;
    if (bad_value)
        return Violation{std::nullopt, "probability-range",
                         std::to_string(bad_value) + " probability value(s) non-finite or outside [0,1]"};
    auto data = p.data();
    for (std::size_t x = 0; x < nv; ++x) {
        double total = 0.0;
        for (std::size_t m = 0; m < p.map_count(); ++m)
            total += data[m * nv + x];
        if (std::abs(total - 1.0) > eps) {
            if (bad_sum == 0) {
                first_sum = x;
                first_total = total;
            }
            ++bad_sum;
        }
    }
    if (bad_sum == 0)
        return std::nullopt;
    std::ostringstream os;
    os << bad_sum << " voxel(s) with probabilities not summing to 1 within eps = " << eps << " (first: voxel "
       << first_sum << " sums to " << first_total << ")";
    return Violation{std::nullopt, "probability-normalization", os.str()};
}

ValidationReport validate_sample_set(const McSampleSet& set)
{
    ValidationReport report;
    const auto& reg = set.registry();
    if (set.size() < 2)
        report.push_back({std::nullopt, "sample-count",
                          "need N >= 2 samples for uncertainty, got " + std::to_string(set.size())});
    if (set.size() == 0)
        return report;

    SampleKind k0 = kind_of(set[0]);
    const VoxelGeometry* g0 = geometry_of(set[0]);
    for (std::size_t i = 0; i < set.size(); ++i) {
        const auto& s = set[i];
        SampleKind k = kind_of(s);
        if (k == SampleKind::empty) {
            report.push_back({i, "empty-sample", "sample carries neither labels nor probabilities"});
            continue;
        }
        if (k != k0)
            report.push_back({i, "kind-mismatch",
                              std::string("sample kind ") + kind_name(k) + " differs from sample 0 kind " +
                                  kind_name(k0)});
        if (s.labels && s.probs && !(s.labels->geometry() == s.probs->geometry()))
            report.push_back({i, "geometry-mismatch", "labels and probabilities of one sample differ in geometry"});
        const VoxelGeometry* g = geometry_of(s);
        if (g0 && !(*g == *g0))
            report.push_back({i, "geometry-mismatch",
                              "geometry " + to_string(*g) + " differs from sample 0 geometry " + to_string(*g0)});
        if (s.labels)
            if (auto v = check_labels(*s.labels, reg)) {
                v->sample = i;
                report.push_back(*v);
            }
        if (s.probs)
            if (auto v = check_probabilities(*s.probs, reg)) {
                v->sample = i;
                report.push_back(*v);
            }
    }
    return report;
}

std::string format_report(const ValidationReport& report)
{
    std::ostringstream os;
    for (std::size_t i = 0; i < report.size(); ++i) {
        const auto& v = report[i];
        if (i)
            os << "\n";
        if (v.sample)
            os << "sample " << *v.sample << ": ";
        os << "[" << v.rule << "] " << v.message;
    }
    return os.str();
}

void require_valid(const McSampleSet& set)
{
    auto report = validate_sample_set(set);
    if (!report.empty())
        throw ValidationError("invalid sample set:\n" + format_report(report));
}

ProbMapStack labels_to_onehot_probs(const LabelVolume& v, const StructureRegistry& registry)
{
    const std::size_t nv = v.size();
    std::vector<float> data(registry.size() * nv, 0.0f);
    auto lut = registry.lookup();
    auto labels = v.data();
    for (std::size_t x = 0; x < nv; ++x) {
        Label l = labels[x];
        if (l >= lut.size() || lut[l] < 0)
            throw ValidationError("label " + std::to_string(l) + " at voxel " + std::to_string(x) +
                                  " is not in the registry");
        data[static_cast<std::size_t>(lut[l]) * nv + x] = 1.0f;
    }
    return ProbMapStack(v.geometry(), registry.size(), std::move(data));
}

LabelVolume argmax_labels(const ProbMapStack& p, const StructureRegistry& registry)
{
    if (p.map_count() != registry.size())
        throw ValidationError("argmax: probability stack does not match registry");
    const std::size_t nv = p.geometry().voxel_count();
    const auto& order = registry.ascending_id_order();
    auto data = p.data();
    std::vector<Label> out(nv);
    parallel_for(nv, [&](std::size_t b, std::size_t e) {
        for (std::size_t x = b; x < e; ++x) {
            std::size_t best = order[0];
            float best_p = data[best * nv + x];
            for (std::size_t k = 1; k < order.size(); ++k) {
                float v = data[order[k] * nv + x];
                if (v > best_p) {
                    best_p = v;
                    best = order[k];
                }
            }
            out[x] = registry.entries()[best].id;
        }
    });
    return LabelVolume(p.geometry(), std::move(out));
}

std::vector<std::size_t> label_counts(const LabelVolume& v, const StructureRegistry& registry)
{
    std::vector<std::size_t> counts(registry.size(), 0);
    auto lut = registry.lookup();
    for (Label l : v.data()) {
        if (l >= lut.size() || lut[l] < 0)
            throw ValidationError("label " + std::to_string(l) + " is not in the registry");
        ++counts[static_cast<std::size_t>(lut[l])];
    }
    return counts;
}

double structure_volume(const LabelVolume& v, const StructureRegistry& registry, Label s)
{
    if (!registry.contains(s))
        throw ValidationError("unknown label id " + std::to_string(s));
    auto n = std::count(v.data().begin(), v.data().end(), s);
    return static_cast<double>(n) * v.geometry().voxel_volume();
}

LabelVolume sample_labels(const McSampleSet& set, std::size_t i)
{
    const auto& s = set[i];
    if (s.labels)
        return *s.labels;
    if (s.probs)
        return argmax_labels(*s.probs, set.registry());
    throw ValidationError("sample " + std::to_string(i) + " is empty");
}

} // namespace segqc
