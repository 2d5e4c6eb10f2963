#include "segqc/metrics.hpp"

#include "segqc/error.hpp"
#include "segqc/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace segqc {

UncertaintyVolume::UncertaintyVolume(VoxelGeometry geometry, std::vector<double> values)
    : geometry_(geometry), values_(std::move(values))
{
    if (values_.size() != geometry_.voxel_count())
        throw ValidationError("uncertainty volume: value count does not match geometry");
}

namespace {

/// Label view of every sample; prob-only samples are argmax'ed once and owned here.
struct SampleLabelViews {
    std::vector<LabelVolume> owned;
    std::vector<const LabelVolume*> views;
};

SampleLabelViews label_views(const McSampleSet& set)
{
    SampleLabelViews out;
    out.owned.reserve(set.size());
    for (std::size_t i = 0; i < set.size(); ++i) {
        if (set[i].labels) {
            out.views.push_back(&*set[i].labels);
        } else {
            out.owned.push_back(argmax_labels(*set[i].probs, set.registry()));
            out.views.push_back(nullptr);
        }
    }
    std::size_t k = 0;
    for (auto& v : out.views)
        if (!v)
            v = &out.owned[k++];
    return out;
}

void require_samples(const McSampleSet& set)
{
    if (set.size() < 2)
        throw ValidationError("need N >= 2 samples, got " + std::to_string(set.size()));
}

bool has_probabilities(const McSampleSet& set)
{
    return set.size() > 0 && set[0].probs.has_value();
}

/// Terms of maps [m_begin, m_end), accumulated map-major, then by ascending sample index.
UncertaintyVolume entropy_terms(const McSampleSet& set, std::size_t m_begin, std::size_t m_end,
                                const EntropyOptions& opts)
{
    const auto& geom = set.geometry();
    const std::size_t nv = geom.voxel_count();
    std::vector<double> u(nv, 0.0);
    if (has_probabilities(set)) {
        parallel_for(nv, [&](std::size_t b, std::size_t e) {
            for (std::size_t m = m_begin; m < m_end; ++m) {
                for (std::size_t i = 0; i < set.size(); ++i) {
                    auto p = set[i].probs->map(m);
                    for (std::size_t x = b; x < e; ++x) {
                        double v = p[x];
                        if (v > 0.0 && v < 1.0)
                            u[x] -= v * std::log(v);
                    }
                }
            }
        });
        if (opts.normalize) {
            const double n = static_cast<double>(set.size());
            for (auto& v : u)
                v /= n;
        }
    }
    return UncertaintyVolume(geom, std::move(u));
}

UncertaintyVolume voxel_uncertainty_unchecked(const McSampleSet& set, const EntropyOptions& opts)
{
    return entropy_terms(set, 0, set.registry().size(), opts);
}

LabelVolume consensus_unchecked(const McSampleSet& set, const std::vector<const LabelVolume*>& labels)
{
    const auto& reg = set.registry();
    const auto& geom = set.geometry();
    const std::size_t nv = geom.voxel_count();
    const std::size_t n_maps = reg.size();
    const auto& order = reg.ascending_id_order();
    std::vector<Label> out(nv);

    if (has_probabilities(set)) {
        const double inv_n = 1.0 / static_cast<double>(set.size());
        parallel_for(nv, [&](std::size_t b, std::size_t e) {
            const std::size_t len = e - b;
            std::vector<double> mean(n_maps * len, 0.0);
            for (std::size_t m = 0; m < n_maps; ++m)
                for (std::size_t i = 0; i < set.size(); ++i) {
                    auto p = set[i].probs->map(m);
                    double* acc = &mean[m * len];
                    for (std::size_t x = b; x < e; ++x)
                        acc[x - b] += p[x];
                }
            for (std::size_t x = 0; x < len; ++x) {
                std::size_t best = order[0];
                double best_p = mean[best * len + x] * inv_n;
                for (std::size_t k = 1; k < order.size(); ++k) {
                    double v = mean[order[k] * len + x] * inv_n;
                    if (v > best_p) {
                        best_p = v;
                        best = order[k];
                    }
                }
                out[b + x] = reg.entries()[best].id;
            }
        });
    } else {
        auto lut = reg.lookup();
        parallel_for(nv, [&](std::size_t b, std::size_t e) {
            std::vector<std::uint32_t> votes(n_maps, 0);
            for (std::size_t x = b; x < e; ++x) {
                for (const auto* v : labels)
                    ++votes[static_cast<std::size_t>(lut[(*v)[x]])];
                std::size_t best = order[0];
                for (std::size_t k = 1; k < order.size(); ++k)
                    if (votes[order[k]] > votes[best])
                        best = order[k];
                out[x] = reg.entries()[best].id;
                for (const auto* v : labels)
                    votes[static_cast<std::size_t>(lut[(*v)[x]])] = 0;
            }
        });
    }
    return LabelVolume(geom, std::move(out));
}

/// d^MC for every registry entry from pairwise intersection counts.
std::vector<std::optional<double>> mc_dice_all(const StructureRegistry& reg,
                                               const std::vector<const LabelVolume*>& labels,
                                               const std::vector<std::vector<std::size_t>>& counts)
{
    const std::size_t n = labels.size();
    const std::size_t n_maps = reg.size();
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            pairs.emplace_back(i, j);

    std::vector<std::vector<std::size_t>> overlap(pairs.size(), std::vector<std::size_t>(n_maps, 0));
    auto lut = reg.lookup();
    parallel_for(
        pairs.size(),
        [&](std::size_t b, std::size_t e) {
            for (std::size_t p = b; p < e; ++p) {
                auto a = labels[pairs[p].first]->data();
                auto c = labels[pairs[p].second]->data();
                auto& ov = overlap[p];
                for (std::size_t x = 0; x < a.size(); ++x)
                    if (a[x] == c[x])
                        ++ov[static_cast<std::size_t>(lut[a[x]])];
            }
        },
        1);

    std::vector<std::optional<double>> out(n_maps);
    for (std::size_t m = 0; m < n_maps; ++m) {
        bool present = false;
        for (std::size_t i = 0; i < n; ++i)
            present = present || counts[i][m] > 0;
        if (!present)
            continue;
        double sum = 0.0;
        for (std::size_t p = 0; p < pairs.size(); ++p)
            sum += dice_from_counts(counts[pairs[p].first][m], counts[pairs[p].second][m], overlap[p][m]);
        out[m] = sum / static_cast<double>(pairs.size());
    }
    return out;
}

VolumeStats volume_stats(const std::vector<std::vector<std::size_t>>& counts, std::size_t m, double voxel_volume)
{
    const std::size_t n = counts.size();
    VolumeStats st;
    // Integer voxel counts first so identical samples give a deviation of exactly 0.
    std::size_t total = 0;
    for (std::size_t i = 0; i < n; ++i)
        total += counts[i][m];
    const double mean_count = static_cast<double>(total) / static_cast<double>(n);
    st.mean = mean_count * voxel_volume;
    double ss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double d = (static_cast<double>(counts[i][m]) - mean_count) * voxel_volume;
        ss += d * d;
    }
    st.std = n > 1 ? std::sqrt(ss / static_cast<double>(n - 1)) : 0.0;
    if (st.mean > 0.0)
        st.cv = st.std / st.mean;
    return st;
}

std::size_t entry_index(const StructureRegistry& reg, Label s)
{
    auto idx = reg.index_of(s);
    if (!idx)
        throw ValidationError("unknown label id " + std::to_string(s));
    return *idx;
}

std::vector<std::vector<std::size_t>> all_counts(const StructureRegistry& reg,
                                                 const std::vector<const LabelVolume*>& labels)
{
    std::vector<std::vector<std::size_t>> counts;
    counts.reserve(labels.size());
    for (const auto* v : labels)
        counts.push_back(label_counts(*v, reg));
    return counts;
}

} // namespace

double dice_from_counts(std::size_t a, std::size_t b, std::size_t overlap)
{
    if (a + b == 0)
        return 1.0;
    return 2.0 * static_cast<double>(overlap) / static_cast<double>(a + b);
}

UncertaintyVolume voxel_uncertainty(const McSampleSet& set, const EntropyOptions& opts)
{
    require_samples(set);
    require_valid(set);
    return voxel_uncertainty_unchecked(set, opts);
}

LabelVolume consensus_segmentation(const McSampleSet& set)
{
    require_valid(set);
    auto views = label_views(set);
    return consensus_unchecked(set, views.views);
}

UncertaintyVolume structure_uncertainty(const McSampleSet& set, Label s, const EntropyOptions& opts)
{
    require_samples(set);
    require_valid(set);
    auto m = set.registry().index_of(s);
    if (!m)
        throw ValidationError("label " + std::to_string(s) + " is not in the registry");
    return entropy_terms(set, *m, *m + 1, opts);
}

VolumeStats cv_volume(const McSampleSet& set, Label s)
{
    require_valid(set);
    std::size_t m = entry_index(set.registry(), s);
    auto views = label_views(set);
    auto counts = all_counts(set.registry(), views.views);
    return volume_stats(counts, m, set.geometry().voxel_volume());
}

std::optional<double> mc_dice(const McSampleSet& set, Label s)
{
    require_samples(set);
    require_valid(set);
    std::size_t m = entry_index(set.registry(), s);
    auto views = label_views(set);
    auto counts = all_counts(set.registry(), views.views);
    return mc_dice_all(set.registry(), views.views, counts)[m];
}

std::optional<double> mean_structure_uncertainty(const McSampleSet& set, const LabelVolume& consensus,
                                                 const UncertaintyVolume& u, Label s)
{
    entry_index(set.registry(), s);
    if (!(consensus.geometry() == set.geometry()) || !(u.geometry() == set.geometry()))
        throw ValidationError("mean uncertainty: consensus/uncertainty geometry does not match the sample set");
    double sum = 0.0;
    std::size_t count = 0;
    auto labels = consensus.data();
    auto values = u.values();
    for (std::size_t x = 0; x < labels.size(); ++x)
        if (labels[x] == s) {
            sum += values[x];
            ++count;
        }
    if (count == 0)
        return std::nullopt;
    return sum / static_cast<double>(count);
}

double dice_vs_gt(const LabelVolume& seg, const LabelVolume& gt, Label s)
{
    if (!(seg.geometry() == gt.geometry()))
        throw ValidationError("dice: geometry mismatch (" + to_string(seg.geometry()) + " vs " +
                              to_string(gt.geometry()) + ")");
    std::size_t a = 0, b = 0, ov = 0;
    auto sd = seg.data();
    auto gd = gt.data();
    for (std::size_t x = 0; x < sd.size(); ++x) {
        bool in_a = sd[x] == s;
        bool in_b = gd[x] == s;
        a += in_a;
        b += in_b;
        ov += in_a && in_b;
    }
    return dice_from_counts(a, b, ov);
}

ReportOutputs structure_report(const McSampleSet& set, const LabelVolume* gt, const EntropyOptions& opts)
{
    require_samples(set);
    require_valid(set);
    const auto& reg = set.registry();
    const auto& geom = set.geometry();
    if (gt) {
        if (!(gt->geometry() == geom))
            throw ValidationError("ground truth geometry " + to_string(gt->geometry()) +
                                  " differs from sample geometry " + to_string(geom));
        if (auto v = check_labels(*gt, reg))
            throw ValidationError("ground truth: " + v->message);
    }

    auto views = label_views(set);
    auto counts = all_counts(reg, views.views);
    auto consensus = consensus_unchecked(set, views.views);
    auto u = voxel_uncertainty_unchecked(set, opts);
    auto dmc = mc_dice_all(reg, views.views, counts);

    const std::size_t n_maps = reg.size();
    const std::size_t nv = geom.voxel_count();
    auto lut = reg.lookup();
    std::vector<std::size_t> cons_count(n_maps, 0), gt_count(n_maps, 0), gt_overlap(n_maps, 0);
    std::vector<double> unc_sum(n_maps, 0.0);
    UncertaintySummary summary{std::numeric_limits<double>::infinity(), 0.0,
                               -std::numeric_limits<double>::infinity()};
    double u_total = 0.0;
    auto cd = consensus.data();
    auto uv = u.values();
    for (std::size_t x = 0; x < nv; ++x) {
        auto m = static_cast<std::size_t>(lut[cd[x]]);
        ++cons_count[m];
        unc_sum[m] += uv[x];
        u_total += uv[x];
        summary.min = std::min(summary.min, uv[x]);
        summary.max = std::max(summary.max, uv[x]);
        if (gt) {
            auto g = static_cast<std::size_t>(lut[(*gt)[x]]);
            ++gt_count[g];
            if (g == m)
                ++gt_overlap[m];
        }
    }
    summary.mean = u_total / static_cast<double>(nv);

    StructureReport report;
    report.n_samples = set.size();
    report.entropy_normalized = opts.normalize;
    report.has_ground_truth = gt != nullptr;
    report.voxel_uncertainty = summary;
    const double vv = geom.voxel_volume();
    for (std::size_t m = 0; m < n_maps; ++m) {
        if (m == reg.background_index())
            continue;
        StructureMetrics sm;
        sm.id = reg.entries()[m].id;
        sm.name = reg.entries()[m].name;
        auto vs = volume_stats(counts, m, vv);
        sm.mean_volume = vs.mean;
        sm.std_volume = vs.std;
        sm.cv = vs.cv;
        sm.mc_dice = dmc[m];
        if (cons_count[m] > 0)
            sm.mean_unc = unc_sum[m] / static_cast<double>(cons_count[m]);
        if (gt)
            sm.gt_dice = dice_from_counts(cons_count[m], gt_count[m], gt_overlap[m]);
        sm.consensus_volume = static_cast<double>(cons_count[m]) * vv;
        report.structures.push_back(std::move(sm));
    }
    return ReportOutputs{std::move(report), std::move(consensus), std::move(u)};
}

} // namespace segqc
