#include "segqc/io.hpp"

#include "segqc/error.hpp"

#include <fstream>

namespace segqc {

using nlohmann::json;

namespace {

Label parse_label_id(const json& v, const std::string& where)
{
    if (!v.is_number_integer())
        throw ValidationError(where + ": label id must be an integer");
    const auto id = v.get<std::int64_t>();
    if (id < 0 || id > kMaxLabelId)
        throw ValidationError(where + ": label id " + std::to_string(id) + " outside [0, 65535]");
    return static_cast<Label>(id);
}

StructureEntry parse_entry(const json& e, std::size_t k)
{
    const std::string where = "registry entry " + std::to_string(k);
    if (!e.is_object() || !e.contains("id") || !e.contains("name") || !e["name"].is_string())
        throw ValidationError(where + ": expected {\"id\": int, \"name\": string}");
    return {parse_label_id(e["id"], where), e["name"].get<std::string>()};
}

json optional_number(const std::optional<double>& v)
{
    return v ? json(*v) : json(nullptr);
}

std::optional<double> read_optional(const json& j, const char* key)
{
    if (!j.contains(key) || j[key].is_null())
        return std::nullopt;
    return j[key].get<double>();
}

} // namespace

StructureRegistry parse_registry(const json& j)
{
    std::vector<StructureEntry> entries;
    std::optional<Label> background;
    if (j.is_object()) {
        if (!j.contains("structures") || !j["structures"].is_array())
            throw ValidationError("registry: missing \"structures\" array");
        if (!j.contains("background"))
            throw ValidationError("registry: missing \"background\" id");
        background = parse_label_id(j["background"], "registry background");
        std::size_t k = 0;
        for (const auto& e : j["structures"])
            entries.push_back(parse_entry(e, k++));
    } else if (j.is_array()) {
        std::size_t k = 0;
        for (const auto& e : j) {
            if (e.is_object() && e.contains("background") && !e.contains("id")) {
                if (background)
                    throw ValidationError("registry: background given twice");
                background = parse_label_id(e["background"], "registry background");
                ++k;
                continue;
            }
            entries.push_back(parse_entry(e, k++));
        }
        if (!background)
            throw ValidationError("registry: missing {\"background\": id} element");
    } else {
        throw ValidationError("registry: expected a JSON object or array");
    }
    return StructureRegistry(std::move(entries), *background);
}

StructureRegistry read_registry(const fs::path& path)
{
    const json j = read_json(path);
    try {
        return parse_registry(j);
    } catch (const ValidationError& e) {
        throw ValidationError(path.string() + ": " + e.what());
    }
}

json registry_to_json(const StructureRegistry& reg)
{
    json structures = json::array();
    for (const auto& e : reg.entries())
        structures.push_back({{"id", e.id}, {"name", e.name}});
    return {{"background", reg.background_id()}, {"structures", structures}};
}

json report_to_json(const StructureReport& r)
{
    json structures = json::array();
    for (const auto& s : r.structures) {
        structures.push_back({{"id", s.id},
                              {"name", s.name},
                              {"mean_volume", s.mean_volume},
                              {"std_volume", s.std_volume},
                              {"cv", optional_number(s.cv)},
                              {"mc_dice", optional_number(s.mc_dice)},
                              {"mean_unc", optional_number(s.mean_unc)},
                              {"gt_dice", optional_number(s.gt_dice)},
                              {"consensus_volume", s.consensus_volume}});
    }
    return {{"schema_version", kReportSchemaVersion},
            {"scan_id", r.scan_id},
            {"dataset", r.dataset},
            {"n_samples", r.n_samples},
            {"entropy_normalized", r.entropy_normalized},
            {"has_ground_truth", r.has_ground_truth},
            {"reduction_order", kReductionOrder},
            {"voxel_uncertainty",
             {{"min", r.voxel_uncertainty.min}, {"mean", r.voxel_uncertainty.mean}, {"max", r.voxel_uncertainty.max}}},
            {"structures", structures}};
}

StructureReport report_from_json(const json& j)
{
    if (!j.is_object() || !j.contains("schema_version"))
        throw FormatError("report: missing schema_version");
    if (j["schema_version"] != kReportSchemaVersion)
        throw FormatError("report: unsupported schema_version " + j["schema_version"].dump());
    try {
        StructureReport r;
        r.scan_id = j.at("scan_id").get<std::string>();
        r.dataset = j.value("dataset", std::string{});
        r.n_samples = j.at("n_samples").get<std::size_t>();
        r.entropy_normalized = j.value("entropy_normalized", false);
        r.has_ground_truth = j.value("has_ground_truth", false);
        const auto& vu = j.at("voxel_uncertainty");
        r.voxel_uncertainty = {vu.at("min").get<double>(), vu.at("mean").get<double>(), vu.at("max").get<double>()};
        for (const auto& s : j.at("structures")) {
            StructureMetrics m;
            m.id = parse_label_id(s.at("id"), "report structure");
            m.name = s.at("name").get<std::string>();
            m.mean_volume = s.at("mean_volume").get<double>();
            m.std_volume = s.at("std_volume").get<double>();
            m.cv = read_optional(s, "cv");
            m.mc_dice = read_optional(s, "mc_dice");
            m.mean_unc = read_optional(s, "mean_unc");
            m.gt_dice = read_optional(s, "gt_dice");
            m.consensus_volume = s.at("consensus_volume").get<double>();
            r.structures.push_back(std::move(m));
        }
        return r;
    } catch (const json::exception& e) {
        throw FormatError(std::string("report: ") + e.what());
    } catch (const ValidationError& e) {
        throw FormatError(e.what());
    }
}

void write_report(const StructureReport& report, const fs::path& path)
{
    write_text_file(path, report_to_json(report).dump(2) + "\n");
}

StructureReport read_report(const fs::path& path)
{
    try {
        return report_from_json(read_json(path));
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

HeatmapMetric parse_heatmap_metric(const std::string& s)
{
    if (s == "mc_dice")
        return HeatmapMetric::mc_dice;
    if (s == "cv")
        return HeatmapMetric::cv;
    if (s == "mean_unc")
        return HeatmapMetric::mean_unc;
    throw ValidationError("unknown heat-map metric '" + s + "' (expected mc_dice, cv or mean_unc)");
}

std::vector<float> heatmap_values(const LabelVolume& consensus, const StructureReport& report, HeatmapMetric metric)
{
    std::vector<float> table(static_cast<std::size_t>(kMaxLabelId) + 1, 0.0f);
    for (const auto& s : report.structures) {
        const auto& v = metric == HeatmapMetric::mc_dice ? s.mc_dice
                        : metric == HeatmapMetric::cv    ? s.cv
                                                         : s.mean_unc;
        table[s.id] = v ? static_cast<float>(*v) : 0.0f;
    }
    std::vector<float> out(consensus.size());
    auto d = consensus.data();
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = table[d[i]];
    return out;
}

void write_heatmap_volume(const LabelVolume& consensus, const StructureReport& report, HeatmapMetric metric,
                          const fs::path& path, const NiftiOrientation& orient)
{
    write_real_volume(consensus.geometry(), heatmap_values(consensus, report, metric), path, orient);
}

SampleManifest read_manifest(const fs::path& path)
{
    const json j = read_json(path);
    const fs::path base = path.parent_path();
    auto resolve = [&](const std::string& p) {
        fs::path q(p);
        return q.is_absolute() ? q : base / q;
    };
    SampleManifest m;
    try {
        const json& samples = j.is_array() ? j : j.at("samples");
        for (const auto& s : samples) {
            ManifestEntry e;
            if (s.is_string()) {
                e.labels = resolve(s.get<std::string>());
            } else {
                if (s.contains("labels"))
                    e.labels = resolve(s["labels"].get<std::string>());
                if (s.contains("probs"))
                    for (const auto& [k, v] : s["probs"].items()) {
                        std::size_t used = 0;
                        long id = -1;
                        try {
                            id = std::stol(k, &used);
                        } catch (const std::exception&) {
                        }
                        if (used != k.size() || id < 0 || id > kMaxLabelId)
                            throw ValidationError(path.string() + ": probability map key '" + k +
                                                  "' is not a label id");
                        e.probs[static_cast<Label>(id)] = resolve(v.get<std::string>());
                    }
            }
            if (e.labels.empty() && e.probs.empty())
                throw ValidationError(path.string() + ": manifest sample lists neither labels nor probs");
            m.samples.push_back(std::move(e));
        }
    } catch (const json::exception& e) {
        throw FormatError(path.string() + ": malformed manifest: " + e.what());
    }
    return m;
}

json manifest_to_json(const SampleManifest& m)
{
    json samples = json::array();
    for (const auto& e : m.samples) {
        json s = json::object();
        if (!e.labels.empty())
            s["labels"] = e.labels.generic_string();
        if (!e.probs.empty()) {
            json p = json::object();
            for (const auto& [id, path] : e.probs)
                p[std::to_string(id)] = path.generic_string();
            s["probs"] = p;
        }
        samples.push_back(s);
    }
    return {{"samples", samples}};
}

McSampleSet load_samples(const SampleManifest& m, std::shared_ptr<const StructureRegistry> registry)
{
    const auto& reg = *registry;
    std::vector<McSample> samples;
    samples.reserve(m.samples.size());
    for (const auto& e : m.samples) {
        McSample s;
        if (!e.labels.empty())
            s.labels = read_label_volume(e.labels);
        if (!e.probs.empty()) {
            std::optional<VoxelGeometry> g;
            std::vector<float> stack;
            for (std::size_t k = 0; k < reg.size(); ++k) {
                const Label id = reg.entries()[k].id;
                auto it = e.probs.find(id);
                if (it == e.probs.end())
                    throw ValidationError("probability maps for a sample must cover every registry label; label " +
                                          std::to_string(id) + " is missing");
                auto img = read_nifti(it->second);
                if (!g)
                    g = img.geometry();
                else if (!(img.geometry() == *g))
                    throw ValidationError("geometry mismatch: " + it->second.string() + " is " +
                                          to_string(img.geometry()) + ", expected " + to_string(*g));
                auto vals = to_real_values(img);
                if (stack.empty())
                    stack.reserve(vals.size() * reg.size());
                stack.insert(stack.end(), vals.begin(), vals.end());
            }
            for (const auto& [id, path] : e.probs)
                if (!reg.contains(id))
                    throw ValidationError(path.string() + ": probability map for label " + std::to_string(id) +
                                          " which is not in the registry");
            s.probs = ProbMapStack(*g, reg.size(), std::move(stack));
        }
        samples.push_back(std::move(s));
    }
    return McSampleSet(std::move(registry), std::move(samples));
}

} // namespace segqc
