#include "segqc/synth.hpp"

#include "segqc/error.hpp"
#include "segqc/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace segqc {

double Rng::normal()
{
    double u1 = uniform();
    while (u1 <= 0.0)
        u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t mix64(std::uint64_t x)
{
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::uint64_t stream_key(std::uint64_t seed, std::uint64_t sample, std::uint64_t label)
{
    return mix64(mix64(mix64(seed) ^ sample) ^ (label * 0x632be59bd9b4e019ULL));
}

double hashed_uniform(std::uint64_t key, std::uint64_t counter)
{
    return static_cast<double>(mix64(key ^ mix64(counter)) >> 11) * 0x1.0p-53;
}

// ---------------------------------------------------------------------------
// Phantoms

StructureRegistry phantom_registry(const PhantomSpec& spec)
{
    std::vector<StructureEntry> entries;
    entries.push_back({spec.background_id, spec.background_name});
    for (const auto& s : spec.structures)
        entries.push_back({s.id, s.name.empty() ? "structure_" + std::to_string(s.id) : s.name});
    return StructureRegistry(std::move(entries), spec.background_id);
}

namespace {

bool contains(const ShapeSpec& s, double x, double y, double z)
{
    const double d[3] = {x - s.center[0], y - s.center[1], z - s.center[2]};
    if (s.kind == ShapeKind::box)
        return std::abs(d[0]) <= s.size[0] && std::abs(d[1]) <= s.size[1] && std::abs(d[2]) <= s.size[2];
    double q = 0.0;
    for (int a = 0; a < 3; ++a)
        q += (d[a] / s.size[a]) * (d[a] / s.size[a]);
    return q <= 1.0;
}

} // namespace

LabelVolume make_phantom(const PhantomSpec& spec)
{
    if (!spec.structures.empty())
        phantom_registry(spec);  // validates ids and names
    const auto& g = spec.geometry;
    const auto& dims = g.dims();
    for (const auto& s : spec.structures)
        for (int a = 0; a < 3; ++a) {
            if (!(s.size[a] > 0.0) || !std::isfinite(s.center[a]))
                throw ValidationError("phantom: structure " + std::to_string(s.id) + " has a non-positive size");
            if (s.center[a] - s.size[a] < -0.5 || s.center[a] + s.size[a] > static_cast<double>(dims[a]) - 0.5)
                throw ValidationError("phantom: structure " + std::to_string(s.id) + " extends outside the volume on axis " +
                                      std::to_string(a));
        }
    std::vector<Label> data(g.voxel_count(), spec.background_id);
    for (std::int64_t z = 0; z < dims[2]; ++z)
        for (std::int64_t y = 0; y < dims[1]; ++y)
            for (std::int64_t x = 0; x < dims[0]; ++x)
                for (const auto& s : spec.structures)
                    if (contains(s, static_cast<double>(x), static_cast<double>(y), static_cast<double>(z))) {
                        data[g.index(x, y, z)] = s.id;
                        break;
                    }
    return LabelVolume(g, std::move(data));
}

PhantomSpec random_grid_phantom(std::array<std::int64_t, 3> dims, std::array<int, 3> grid, double min_radius,
                                double max_radius, std::uint64_t seed, std::array<double, 3> spacing)
{
    PhantomSpec spec;
    spec.geometry = VoxelGeometry(dims, spacing);
    spec.seed = seed;
    Rng rng(seed);
    Label id = 1;
    for (int gz = 0; gz < grid[2]; ++gz)
        for (int gy = 0; gy < grid[1]; ++gy)
            for (int gx = 0; gx < grid[0]; ++gx) {
                const int cell[3] = {gx, gy, gz};
                ShapeSpec s;
                s.id = id;
                s.name = "structure_" + std::to_string(id);
                for (int a = 0; a < 3; ++a) {
                    const double width = static_cast<double>(dims[a]) / grid[a];
                    s.center[a] = std::floor(width * (cell[a] + 0.5));
                    // Leave one background voxel between neighbouring cells.
                    const double room = std::min(s.center[a] - width * cell[a], width * (cell[a] + 1) - s.center[a]) - 1.0;
                    s.size[a] = std::clamp(rng.uniform(min_radius, max_radius), 1.0, std::max(1.0, room));
                }
                spec.structures.push_back(s);
                ++id;
            }
    return spec;
}

// ---------------------------------------------------------------------------
// MC sampler

double NoiseSpec::flip_prob_for(Label id, Label background) const
{
    if (auto it = flip_prob.find(id); it != flip_prob.end())
        return it->second;
    return id == background ? 0.0 : default_flip_prob;
}

void NoiseSpec::validate() const
{
    auto check = [](double p, const std::string& what) {
        if (!(p >= 0.0 && p < 1.0))
            throw ValidationError("noise: " + what + " must lie in [0, 1)");
    };
    check(default_flip_prob, "default flip probability");
    for (const auto& [id, p] : flip_prob)
        check(p, "flip probability of label " + std::to_string(id));
    if (erosion_dilation_radius < 0)
        throw ValidationError("noise: erosion/dilation radius must be >= 0");
    if (n_samples < 2)
        throw ValidationError("noise: n_samples must be >= 2");
    if (!(systematic_fraction >= 0.0 && systematic_fraction <= 1.0))
        throw ValidationError("noise: systematic_fraction must lie in [0, 1]");
    if (!(extent_bias >= 0.0 && extent_bias <= 1.0))
        throw ValidationError("noise: extent_bias must lie in [0, 1]");
}

namespace {

// Stream ids outside the 16-bit label range.
constexpr std::uint64_t kSystematicSample = 0xffffffffULL;
constexpr std::uint64_t kSoftProbLabel = 0x10000ULL;

/// Per-voxel swap candidate derived from the ground truth.
struct BoundaryMap {
    std::vector<Label> alt;      // neighbouring label a boundary voxel swaps with
    std::vector<Label> owner;    // structure whose flip probability applies
    std::vector<double> prob;    // 0 for non-boundary voxels
};

BoundaryMap analyse_boundaries(const LabelVolume& gt, const StructureRegistry& reg, const NoiseSpec& noise)
{
    const auto& g = gt.geometry();
    const auto& d = g.dims();
    const std::size_t nv = g.voxel_count();
    std::vector<double> fl(reg.lookup().size(), 0.0);
    for (const auto& e : reg.entries())
        fl[e.id] = noise.flip_prob_for(e.id, reg.background_id());

    BoundaryMap b{std::vector<Label>(nv, 0), std::vector<Label>(nv, 0), std::vector<double>(nv, 0.0)};
    const std::int64_t offs[6][3] = {{-1, 0, 0}, {1, 0, 0}, {0, -1, 0}, {0, 1, 0}, {0, 0, -1}, {0, 0, 1}};
    for (std::int64_t z = 0; z < d[2]; ++z)
        for (std::int64_t y = 0; y < d[1]; ++y)
            for (std::int64_t x = 0; x < d[0]; ++x) {
                const std::size_t i = g.index(x, y, z);
                const Label own = gt[i];
                bool found = false;
                Label alt = 0;
                for (const auto& o : offs) {
                    const std::int64_t nx = x + o[0], ny = y + o[1], nz = z + o[2];
                    if (nx < 0 || ny < 0 || nz < 0 || nx >= d[0] || ny >= d[1] || nz >= d[2])
                        continue;
                    const Label l = gt[g.index(nx, ny, nz)];
                    if (l == own)
                        continue;
                    if (!found || fl[l] > fl[alt] || (fl[l] == fl[alt] && l < alt))
                        alt = l;
                    found = true;
                }
                if (!found)
                    continue;
                b.alt[i] = alt;
                b.owner[i] = fl[own] >= fl[alt] ? own : alt;
                b.prob[i] = std::max(fl[own], fl[alt]);
            }
    return b;
}

void jitter_structure(std::vector<Label>& labels, const VoxelGeometry& g, Label s, Label background, int r,
                      bool dilate)
{
    const auto& d = g.dims();
    std::int64_t lo[3] = {d[0], d[1], d[2]}, hi[3] = {-1, -1, -1};
    for (std::int64_t z = 0; z < d[2]; ++z)
        for (std::int64_t y = 0; y < d[1]; ++y)
            for (std::int64_t x = 0; x < d[0]; ++x)
                if (labels[g.index(x, y, z)] == s) {
                    const std::int64_t c[3] = {x, y, z};
                    for (int a = 0; a < 3; ++a) {
                        lo[a] = std::min(lo[a], c[a]);
                        hi[a] = std::max(hi[a], c[a]);
                    }
                }
    if (hi[0] < 0)
        return;
    for (int a = 0; a < 3; ++a) {
        lo[a] = std::max<std::int64_t>(0, lo[a] - r);
        hi[a] = std::min<std::int64_t>(d[a] - 1, hi[a] + r);
    }
    const std::vector<Label> snapshot = labels;
    for (std::int64_t z = lo[2]; z <= hi[2]; ++z)
        for (std::int64_t y = lo[1]; y <= hi[1]; ++y)
            for (std::int64_t x = lo[0]; x <= hi[0]; ++x) {
                const std::size_t i = g.index(x, y, z);
                const Label cur = snapshot[i];
                if (dilate ? cur != background : cur != s)
                    continue;
                bool hit = false;
                Label replacement = background;
                for (std::int64_t dz = -r; dz <= r && !hit; ++dz)
                    for (std::int64_t dy = -r; dy <= r && !hit; ++dy)
                        for (std::int64_t dx = -r; dx <= r && !hit; ++dx) {
                            const std::int64_t nx = x + dx, ny = y + dy, nz = z + dz;
                            if (nx < 0 || ny < 0 || nz < 0 || nx >= d[0] || ny >= d[1] || nz >= d[2])
                                continue;
                            const Label l = snapshot[g.index(nx, ny, nz)];
                            if (dilate ? l == s : l != s) {
                                hit = true;
                                replacement = l;
                            }
                        }
                if (hit)
                    labels[i] = dilate ? s : replacement;
            }
}

} // namespace

McSampleSet sample_mc(const LabelVolume& gt, std::shared_ptr<const StructureRegistry> registry,
                      const NoiseSpec& noise)
{
    noise.validate();
    if (!registry)
        throw ValidationError("sample_mc: missing registry");
    const auto& reg = *registry;
    if (auto v = check_labels(gt, reg))
        throw ValidationError("sample_mc: ground truth: " + v->message);

    const auto& g = gt.geometry();
    const std::size_t nv = g.voxel_count();
    const BoundaryMap b = analyse_boundaries(gt, reg, noise);
    auto gtd = gt.data();

    // Systematic component: one draw per voxel shared by every sample.
    std::vector<Label> base(gtd.begin(), gtd.end());
    if (noise.systematic_fraction > 0.0)
        for (std::size_t x = 0; x < nv; ++x)
            if (b.prob[x] > 0.0 &&
                hashed_uniform(stream_key(noise.seed, kSystematicSample, b.owner[x]), x) <
                    b.prob[x] * noise.systematic_fraction)
                base[x] = b.alt[x];

    std::vector<McSample> samples(noise.n_samples);
    auto lut = reg.lookup();
    auto make_sample = [&](std::size_t i) {
        // Per-structure grow/shrink bias and erosion-or-dilation choice.
        std::vector<double> bias(lut.size(), 0.0);
        std::vector<bool> dilate(lut.size(), false);
        for (const auto& e : reg.entries()) {
            Rng rng(stream_key(noise.seed, i, e.id));
            bias[e.id] = rng.uniform(-1.0, 1.0) * noise.extent_bias;
            dilate[e.id] = rng.bernoulli(0.5);
        }

        std::vector<Label> labels = base;
        for (std::size_t x = 0; x < nv; ++x) {
            const double f = b.prob[x];
            if (f <= 0.0)
                continue;
            const Label own = b.owner[x];
            // Flipping a voxel inside the owner shrinks it; outside, it grows it.
            const double sign = gtd[x] == own ? -1.0 : 1.0;
            const double p = std::clamp(f * (1.0 + sign * bias[own]), 0.0, 1.0);
            if (hashed_uniform(stream_key(noise.seed, i, own), x) < p)
                labels[x] = base[x] == gtd[x] ? b.alt[x] : gtd[x];
        }
        if (noise.erosion_dilation_radius > 0)
            for (const auto& e : reg.entries())
                if (e.id != reg.background_id())
                    jitter_structure(labels, g, e.id, reg.background_id(), noise.erosion_dilation_radius,
                                     dilate[e.id]);

        McSample s;
        if (noise.soft_probabilities) {
            std::vector<float> probs(reg.size() * nv, 0.0f);
            const std::uint64_t key = stream_key(noise.seed, i, kSoftProbLabel);
            for (std::size_t x = 0; x < nv; ++x) {
                const Label l = labels[x];
                const auto m = static_cast<std::size_t>(lut[l]);
                const double f = b.prob[x];
                const bool swappable = f > 0.0 && (l == gtd[x] || l == b.alt[x]);
                if (!swappable) {
                    probs[m * nv + x] = 1.0f;
                    continue;
                }
                const Label other = l == gtd[x] ? b.alt[x] : gtd[x];
                const double q = f * hashed_uniform(key, x);
                probs[m * nv + x] = static_cast<float>(1.0 - q);
                probs[static_cast<std::size_t>(lut[other]) * nv + x] = static_cast<float>(q);
            }
            s.probs = ProbMapStack(g, reg.size(), std::move(probs));
        }
        s.labels = LabelVolume(g, std::move(labels));
        samples[i] = std::move(s);
    };
    parallel_for(
        noise.n_samples,
        [&](std::size_t begin, std::size_t end) {
            for (std::size_t i = begin; i < end; ++i)
                make_sample(i);
        },
        1);
    return McSampleSet(std::move(registry), std::move(samples));
}

// ---------------------------------------------------------------------------
// Cohorts

CohortSim make_cohort(std::size_t n_subjects, const Eigen::VectorXd& effect, NoiseLink link, std::uint64_t seed,
                      const CohortSimOptions& opts)
{
    if (opts.n_sites < 1)
        throw ValidationError("cohort simulation: n_sites must be >= 1");
    const std::size_t n_cols = 4 + opts.n_sites - 1;
    if (n_subjects <= n_cols + 2)
        throw ValidationError("cohort simulation: need more than " + std::to_string(n_cols + 2) + " subjects");
    Eigen::VectorXd beta = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n_cols));
    if (effect.size() == 4)
        beta.head(4) = effect;
    else if (effect.size() == static_cast<Eigen::Index>(n_cols))
        beta = effect;
    else
        throw ValidationError("cohort simulation: effect vector needs 4 or " + std::to_string(n_cols) + " entries");
    if (!(opts.noise_scale >= 0.0) || !(opts.cv_median > 0.0) || !(opts.cv_log_sd >= 0.0))
        throw ValidationError("cohort simulation: invalid noise parameters");

    Rng rng(seed);
    CohortSim sim;
    sim.beta = beta;
    sim.table.has_site = true;
    sim.table.has_cv = true;
    sim.table.has_mc_dice = true;
    for (std::size_t i = 0; i < n_subjects; ++i) {
        CohortRow r;
        r.subject_id = "sub-" + std::to_string(i + 1);
        r.age = rng.uniform(20.0, 90.0);
        r.sex = rng.bernoulli(0.5) ? 1 : 0;
        r.dx = rng.bernoulli(0.5) ? 1 : 0;
        const std::size_t site = rng.index(opts.n_sites);
        r.site = "site_" + std::to_string(site + 1);
        const double cv = opts.cv_median * std::exp(opts.cv_log_sd * rng.normal());
        const double z = rng.normal();
        double mean = beta(0) + beta(1) * r.age + beta(2) * r.sex + beta(3) * r.dx;
        if (site > 0)
            mean += beta(static_cast<Eigen::Index>(3 + site));
        const double sd = link == NoiseLink::cv_scaled ? opts.noise_scale * cv / opts.cv_median : opts.noise_scale;
        r.volume = mean + sd * z;
        r.cv = cv;
        r.mc_dice = std::exp(-cv);
        sim.table.rows.push_back(std::move(r));
    }
    return sim;
}

} // namespace segqc
