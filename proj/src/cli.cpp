#include "segqc/cli.hpp"

#include "segqc/error.hpp"
#include "segqc/io.hpp"
#include "segqc/metrics.hpp"
#include "segqc/stats.hpp"
#include "segqc/synth.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>

namespace segqc {

namespace {

std::string cell(const std::optional<double>& v, int precision = 4)
{
    if (!v)
        return "-";
    std::ostringstream os;
    os << std::fixed << std::setprecision(precision) << *v;
    return os.str();
}

bool is_nifti_name(const fs::path& p)
{
    const std::string name = p.filename().string();
    return name.ends_with(".nii") || name.ends_with(".nii.gz");
}

std::vector<fs::path> list_dir(const fs::path& dir, bool (*keep)(const fs::path&))
{
    std::vector<fs::path> out;
    std::error_code ec;
    for (const auto& e : fs::directory_iterator(dir, ec))
        if (e.is_regular_file() && keep(e.path()))
            out.push_back(e.path());
    if (ec)
        throw IoError("cannot list directory '" + dir.string() + "': " + ec.message());
    std::sort(out.begin(), out.end(), [](const fs::path& a, const fs::path& b) {
        return a.filename().string() < b.filename().string();
    });
    return out;
}

/// Directories expand to their .nii/.nii.gz files in lexicographic order.
std::vector<fs::path> expand_sample_inputs(const std::vector<std::string>& inputs)
{
    std::vector<fs::path> files;
    for (const auto& in : inputs) {
        const fs::path p(in);
        if (fs::is_directory(p)) {
            auto listed = list_dir(p, is_nifti_name);
            files.insert(files.end(), listed.begin(), listed.end());
        } else if (fs::exists(p)) {
            files.push_back(p);
        } else {
            throw IoError("sample input '" + in + "' does not exist");
        }
    }
    return files;
}

std::string scan_name(const fs::path& p)
{
    fs::path q = fs::absolute(p).lexically_normal();
    if (q.filename().empty())
        q = q.parent_path();
    std::string name = q.filename().string();
    for (const char* ext : {".nii.gz", ".nii", ".json"})
        if (name.ends_with(ext) && name.size() > std::strlen(ext))
            return name.substr(0, name.size() - std::strlen(ext));
    return name;
}

void require_sample_count(std::size_t n)
{
    if (n < 2)
        throw ValidationError("need N >= 2 samples, got " + std::to_string(n));
}

void check_geometry(const VoxelGeometry& g, const fs::path& file, const VoxelGeometry& ref, const fs::path& ref_file)
{
    if (!(g == ref))
        throw ValidationError("geometry mismatch: " + file.string() + " is " + to_string(g) + " but " +
                              ref_file.string() + " is " + to_string(ref));
}

struct LoadedSamples {
    McSampleSet set;
    std::vector<fs::path> sources;
};

LoadedSamples load_cli_samples(const std::vector<std::string>& inputs, const std::string& manifest,
                               std::shared_ptr<const StructureRegistry> registry)
{
    if (!manifest.empty()) {
        auto m = read_manifest(manifest);
        require_sample_count(m.samples.size());
        std::vector<fs::path> sources;
        for (const auto& e : m.samples)
            sources.push_back(e.labels.empty() ? e.probs.begin()->second : e.labels);
        auto set = load_samples(m, registry);
        for (std::size_t i = 0; i < set.size(); ++i) {
            const auto& s = set[i];
            const auto& g = s.labels ? s.labels->geometry() : s.probs->geometry();
            const auto& g0 = set[0].labels ? set[0].labels->geometry() : set[0].probs->geometry();
            check_geometry(g, sources[i], g0, sources[0]);
            if (s.labels)
                if (auto bad = check_labels(*s.labels, *registry))
                    throw ValidationError(sources[i].string() + ": " + bad->message);
        }
        return {std::move(set), std::move(sources)};
    }
    auto files = expand_sample_inputs(inputs);
    require_sample_count(files.size());
    std::vector<McSample> samples;
    samples.reserve(files.size());
    for (const auto& f : files) {
        McSample s;
        s.labels = read_label_volume(f, registry.get());
        if (!samples.empty())
            check_geometry(s.labels->geometry(), f, samples.front().labels->geometry(), files.front());
        samples.push_back(std::move(s));
    }
    return {McSampleSet(std::move(registry), std::move(samples)), std::move(files)};
}

void require_distinct(const std::vector<std::string>& paths)
{
    std::set<std::string> seen;
    for (const auto& p : paths) {
        if (p.empty())
            continue;
        const auto key = fs::absolute(p).lexically_normal().string();
        if (!seen.insert(key).second)
            throw ValidationError("output path '" + p + "' is given more than once");
    }
}

// ---------------------------------------------------------------------------

struct MetricsArgs {
    std::vector<std::string> samples;
    std::string manifest, registry, gt, out, uncertainty_out, heatmap_out, heatmap_metric = "mc_dice";
    std::string scan_id, tag;
    bool normalize = false;
};

int cmd_metrics(const MetricsArgs& a, std::ostream& out)
{
    if (a.samples.empty() && a.manifest.empty())
        throw ValidationError("metrics: give sample files, a sample directory or --manifest");
    const auto metric = parse_heatmap_metric(a.heatmap_metric);
    require_distinct({a.out, a.uncertainty_out, a.heatmap_out});

    auto registry = std::make_shared<const StructureRegistry>(read_registry(a.registry));
    auto loaded = load_cli_samples(a.samples, a.manifest, registry);
    require_valid(loaded.set);

    std::optional<LabelVolume> gt;
    if (!a.gt.empty()) {
        gt = read_label_volume(a.gt, registry.get());
        check_geometry(gt->geometry(), a.gt, loaded.set.geometry(), loaded.sources.front());
    }

    auto res = structure_report(loaded.set, gt ? &*gt : nullptr, EntropyOptions{a.normalize});
    res.report.scan_id = !a.scan_id.empty()        ? a.scan_id
                         : !a.manifest.empty()     ? scan_name(fs::path(a.manifest).parent_path())
                         : a.samples.size() == 1   ? scan_name(a.samples.front())
                                                   : scan_name(loaded.sources.front());
    res.report.dataset = a.tag;

    OutputTransaction tx;
    write_report(res.report, tx.stage(a.out));
    if (!a.uncertainty_out.empty()) {
        auto u = res.uncertainty.values();
        write_real_volume(res.uncertainty.geometry(), std::vector<float>(u.begin(), u.end()),
                          tx.stage(a.uncertainty_out));
    }
    if (!a.heatmap_out.empty())
        write_heatmap_volume(res.consensus, res.report, metric, tx.stage(a.heatmap_out));
    tx.commit();

    const auto& r = res.report;
    out << "scan " << r.scan_id << ": " << r.n_samples << " samples, voxel uncertainty min/mean/max "
        << cell(r.voxel_uncertainty.min) << " / " << cell(r.voxel_uncertainty.mean) << " / "
        << cell(r.voxel_uncertainty.max) << (r.entropy_normalized ? " (divided by N)" : "") << "\n";
    out << std::left << std::setw(8) << "id" << std::setw(24) << "structure" << std::right << std::setw(14)
        << "mean_volume" << std::setw(10) << "cv" << std::setw(10) << "mc_dice" << std::setw(10) << "mean_unc"
        << std::setw(10) << "gt_dice" << "\n";
    for (const auto& s : r.structures)
        out << std::left << std::setw(8) << s.id << std::setw(24) << s.name << std::right << std::setw(14)
            << cell(s.mean_volume, 1) << std::setw(10) << cell(s.cv) << std::setw(10) << cell(s.mc_dice)
            << std::setw(10) << cell(s.mean_unc) << std::setw(10) << cell(s.gt_dice) << "\n";
    return kExitOk;
}

// ---------------------------------------------------------------------------

struct CorrelateArgs {
    std::vector<std::string> reports;
    std::string out;
};

bool is_json_name(const fs::path& p)
{
    return p.extension() == ".json";
}

int cmd_correlate(const CorrelateArgs& a, std::ostream& out)
{
    require_distinct({a.out});
    std::vector<fs::path> files;
    for (const auto& in : a.reports) {
        if (fs::is_directory(in)) {
            auto listed = list_dir(in, is_json_name);
            files.insert(files.end(), listed.begin(), listed.end());
        } else if (fs::exists(in)) {
            files.emplace_back(in);
        } else {
            throw IoError("report input '" + in + "' does not exist");
        }
    }
    if (files.size() < 3)
        throw ValidationError("correlate: need at least 3 reports, got " + std::to_string(files.size()));

    std::map<std::string, std::vector<StructureReport>> by_tag;
    std::vector<StructureReport> all;
    for (const auto& f : files) {
        auto r = read_report(f);
        by_tag[r.dataset].push_back(r);
        all.push_back(std::move(r));
    }

    std::vector<std::pair<std::string, UncertaintyCorrelation>> rows;
    for (const auto& [tag, reports] : by_tag) {
        try {
            rows.emplace_back(tag.empty() ? "-" : tag, correlate_uncertainty_accuracy(reports));
        } catch (const ValidationError& e) {
            throw ValidationError("dataset '" + tag + "': " + e.what());
        }
    }
    if (by_tag.size() > 1)
        rows.emplace_back("all", correlate_uncertainty_accuracy(all));

    std::string csv = "dataset,n_pairs,n_dropped,r_mc_dice,r_cv,r_mean_unc\n";
    out << std::left << std::setw(20) << "dataset" << std::right << std::setw(9) << "pairs" << std::setw(9)
        << "dropped" << std::setw(12) << "r(mc_dice)" << std::setw(12) << "r(cv)" << std::setw(12)
        << "r(mean_unc)" << "\n";
    for (const auto& [tag, c] : rows) {
        csv += tag + "," + std::to_string(c.n_pairs) + "," + std::to_string(c.n_dropped) + "," +
               format_double(c.r_mc_dice) + "," + format_double(c.r_cv) + "," + format_double(c.r_mean_unc) + "\n";
        out << std::left << std::setw(20) << tag << std::right << std::setw(9) << c.n_pairs << std::setw(9)
            << c.n_dropped << std::setw(12) << cell(c.r_mc_dice) << std::setw(12) << cell(c.r_cv) << std::setw(12)
            << cell(c.r_mean_unc) << "\n";
    }
    if (!a.out.empty()) {
        OutputTransaction tx;
        write_text_file(tx.stage(a.out), csv);
        tx.commit();
    }
    return kExitOk;
}

// ---------------------------------------------------------------------------

struct GroupArgs {
    std::string cohort, structure, out, site_reference;
    std::vector<std::string> modes;
    bool standardize = true;
};

int cmd_group(const GroupArgs& a, std::ostream& out)
{
    std::vector<GroupMode> modes;
    for (const auto& m : a.modes) {
        auto mode = GroupMode::parse(m);
        if (mode.weights == WeightMode::explicit_weights)
            throw ValidationError("group: weight mode 'explicit' needs per-subject weights and is library-only");
        modes.push_back(mode);
    }
    require_distinct({a.out});

    auto table = read_cohort_csv(a.cohort);
    if (modes.empty()) {
        modes.push_back(GroupMode::parse("none"));
        if (table.has_cv)
            modes.push_back(GroupMode::parse("inv_cv"));
        if (table.has_mc_dice)
            modes.push_back(GroupMode::parse("inv_one_minus_dice"));
        modes.push_back(GroupMode::parse("huber"));
    }
    FitOptions opts;
    opts.standardize = a.standardize;
    opts.site_reference = a.site_reference;
    const std::string structure = a.structure.empty() ? scan_name(a.cohort) : a.structure;
    auto rows = group_analysis(table, structure, modes, opts);

    out << "structure " << structure << (a.standardize ? " (age and volume z-scored)" : " (raw scale)") << "\n";
    out << std::left << std::setw(22) << "mode" << std::right << std::setw(12) << "beta_dx" << std::setw(12) << "se"
        << std::setw(12) << "p" << std::setw(8) << "n" << std::setw(9) << "dropped" << "\n";
    std::string csv = "structure,mode,beta_d,se_d,p_d,n_used,n_dropped\n";
    for (const auto& r : rows) {
        std::ostringstream p;
        p << std::setprecision(3) << (r.p_d < 1e-4 ? std::scientific : std::fixed) << r.p_d;
        out << std::left << std::setw(22) << r.mode << std::right << std::setw(12) << cell(r.beta_d) << std::setw(12)
            << cell(r.se_d) << std::setw(12) << p.str() << std::setw(8) << r.n_used << std::setw(9) << r.n_dropped
            << "\n";
        csv += structure + "," + r.mode + "," + format_double(r.beta_d) + "," + format_double(r.se_d) + "," +
               format_double(r.p_d) + "," + std::to_string(r.n_used) + "," + std::to_string(r.n_dropped) + "\n";
    }
    if (!a.out.empty()) {
        OutputTransaction tx;
        write_text_file(tx.stage(a.out), csv);
        tx.commit();
    }
    return kExitOk;
}

// ---------------------------------------------------------------------------

struct SimulateArgs {
    std::string phantom, noise, out;
    std::optional<std::uint64_t> seed;
    bool labels_only = false;
};

int cmd_simulate(const SimulateArgs& a, std::ostream& out)
{
    const fs::path target(a.out);
    if (fs::exists(target) && !(fs::is_directory(target) && fs::is_empty(target)))
        throw ValidationError("simulate: output directory '" + a.out + "' exists and is not empty");

    auto spec = phantom_from_json(read_json(a.phantom));
    NoiseSpec noise = a.noise.empty() ? NoiseSpec{} : noise_from_json(read_json(a.noise));
    if (a.seed)
        noise.seed = *a.seed;
    if (a.labels_only)
        noise.soft_probabilities = false;
    noise.validate();

    auto registry = std::make_shared<const StructureRegistry>(phantom_registry(spec));
    const auto gt = make_phantom(spec);
    const auto set = sample_mc(gt, registry, noise);

    OutputTransaction tx;
    const fs::path dir = tx.stage(target);
    fs::create_directories(dir / "samples");
    write_label_volume(gt, dir / "gt.nii");
    write_text_file(dir / "registry.json", registry_to_json(*registry).dump(2) + "\n");
    write_text_file(dir / "phantom.json", phantom_to_json(spec).dump(2) + "\n");
    write_text_file(dir / "noise.json", noise_to_json(noise).dump(2) + "\n");

    SampleManifest manifest;
    const bool soft = set[0].probs.has_value();
    if (soft)
        fs::create_directories(dir / "probs");
    for (std::size_t i = 0; i < set.size(); ++i) {
        char stem[32];
        std::snprintf(stem, sizeof stem, "sample_%03zu", i);
        ManifestEntry e;
        e.labels = fs::path("samples") / (std::string(stem) + ".nii");
        write_label_volume(*set[i].labels, dir / e.labels);
        if (soft) {
            const auto& p = *set[i].probs;
            for (std::size_t m = 0; m < registry->size(); ++m) {
                const Label id = registry->entries()[m].id;
                const fs::path rel = fs::path("probs") / (std::string(stem) + "_label" + std::to_string(id) + ".nii");
                auto map = p.map(m);
                write_real_volume(p.geometry(), std::vector<float>(map.begin(), map.end()), dir / rel);
                e.probs[id] = rel;
            }
        }
        manifest.samples.push_back(std::move(e));
    }
    write_text_file(dir / "manifest.json", manifest_to_json(manifest).dump(2) + "\n");
    tx.commit();

    out << "wrote " << set.size() << " samples of " << to_string(gt.geometry()) << " with "
        << registry->size() - 1 << " structures to " << target.string() << "\n";
    return kExitOk;
}

// ---------------------------------------------------------------------------

struct ConsensusArgs {
    std::vector<std::string> samples;
    std::string manifest, registry, out;
};

int cmd_consensus(const ConsensusArgs& a, std::ostream& out)
{
    if (a.samples.empty() && a.manifest.empty())
        throw ValidationError("consensus: give sample files, a sample directory or --manifest");
    auto registry = std::make_shared<const StructureRegistry>(read_registry(a.registry));
    auto loaded = load_cli_samples(a.samples, a.manifest, registry);
    require_valid(loaded.set);
    const auto consensus = consensus_segmentation(loaded.set);

    OutputTransaction tx;
    write_label_volume(consensus, tx.stage(a.out));
    tx.commit();
    out << "consensus of " << loaded.set.size() << " samples written to " << a.out << "\n";
    return kExitOk;
}

} // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err)
{
    CLI::App app{"Segmentation quality control from Monte Carlo samples", "segqc"};
    app.require_subcommand(1);

    MetricsArgs metrics;
    auto* m = app.add_subcommand("metrics", "Per-scan uncertainty metrics report");
    m->add_option("samples", metrics.samples, "Sample files or a directory of .nii files");
    m->add_option("--manifest", metrics.manifest, "Sample manifest JSON (overrides positional samples)");
    m->add_option("--registry", metrics.registry, "Structure registry JSON")->required();
    m->add_option("--gt", metrics.gt, "Ground-truth label volume");
    m->add_option("--out", metrics.out, "Report JSON path")->required();
    m->add_option("--uncertainty-out", metrics.uncertainty_out, "Voxel uncertainty volume (.nii)");
    auto* heat_out = m->add_option("--heatmap-out", metrics.heatmap_out, "Per-structure heat-map volume (.nii)");
    m->add_option("--heatmap-metric", metrics.heatmap_metric, "mc_dice, cv or mean_unc")->needs(heat_out);
    m->add_flag("--normalize-entropy", metrics.normalize, "Divide voxel uncertainty by N");
    m->add_option("--scan-id", metrics.scan_id, "Scan identifier stored in the report");
    m->add_option("--tag,--dataset", metrics.tag, "Dataset tag stored in the report");

    CorrelateArgs correlate;
    auto* c = app.add_subcommand("correlate", "Correlate structure uncertainty with ground-truth Dice");
    c->add_option("reports", correlate.reports, "Report files or directories of .json reports")->required();
    c->add_option("--out", correlate.out, "CSV output path");

    GroupArgs group;
    auto* g = app.add_subcommand("group", "Diagnosis effect on structure volume under several fits");
    g->add_option("cohort", group.cohort, "Cohort CSV")->required();
    g->add_option("--weight-mode", group.modes, "none, inv_cv, inv_one_minus_dice, huber (comma separated)")
        ->delimiter(',');
    g->add_flag("--standardize,!--no-standardize", group.standardize, "z-score age and volume (default on)");
    g->add_option("--site-reference", group.site_reference, "Reference site level");
    g->add_option("--structure", group.structure, "Structure name for the output table");
    g->add_option("--out", group.out, "CSV output path");

    SimulateArgs simulate;
    auto* s = app.add_subcommand("simulate", "Synthetic phantom and Monte Carlo samples");
    s->add_option("--phantom", simulate.phantom, "Phantom JSON")->required();
    s->add_option("--noise", simulate.noise, "Noise JSON");
    s->add_option("--out", simulate.out, "Output directory")->required();
    s->add_option("--seed", simulate.seed, "Overrides the noise seed");
    s->add_flag("--labels-only", simulate.labels_only, "Skip probability maps");

    ConsensusArgs consensus;
    auto* k = app.add_subcommand("consensus", "Consensus segmentation of Monte Carlo samples");
    k->add_option("samples", consensus.samples, "Sample files or a directory of .nii files");
    k->add_option("--manifest", consensus.manifest, "Sample manifest JSON");
    k->add_option("--registry", consensus.registry, "Structure registry JSON")->required();
    k->add_option("--out", consensus.out, "Consensus label volume (.nii)")->required();

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        app.exit(e, out, err);
        return kExitValidation;
    }

    try {
        if (m->parsed())
            return cmd_metrics(metrics, out);
        if (c->parsed())
            return cmd_correlate(correlate, out);
        if (g->parsed())
            return cmd_group(group, out);
        if (s->parsed())
            return cmd_simulate(simulate, out);
        return cmd_consensus(consensus, out);
    } catch (const IoError& e) {
        err << "error: " << e.what() << "\n";
        return kExitIo;
    } catch (const fs::filesystem_error& e) {
        err << "error: " << e.what() << "\n";
        return kExitIo;
    } catch (const std::bad_alloc&) {
        err << "error: out of memory\n";
        return kExitIo;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitValidation;
    }
}

} // namespace segqc
