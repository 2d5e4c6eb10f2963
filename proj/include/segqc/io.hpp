#pragma once

#include "segqc/metrics.hpp"
#include "segqc/stats.hpp"
#include "segqc/synth.hpp"
#include "segqc/volume.hpp"

#include <json.hpp>

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace segqc {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// NIfTI-1 (single file, uncompressed or gzip)

enum class NiftiDatatype : std::int16_t { uint8 = 2, int16 = 4, float32 = 16, uint16 = 512 };

inline constexpr std::int32_t kNiftiHeaderSize = 348;
inline constexpr float kNiftiVoxOffset = 352.0f;

struct NiftiHeaderSubset {
    std::array<std::int16_t, 8> dim{3, 1, 1, 1, 1, 1, 1, 1};
    std::int16_t datatype = static_cast<std::int16_t>(NiftiDatatype::uint8);
    std::int16_t bitpix = 8;
    std::array<float, 3> pixdim{1.0f, 1.0f, 1.0f};  // pixdim[1..3]
    float vox_offset = kNiftiVoxOffset;
    float scl_slope = 1.0f;
    float scl_inter = 0.0f;
    std::array<char, 4> magic{'n', '+', '1', '\0'};

    bool operator==(const NiftiHeaderSubset&) const = default;
};

/// Orientation fields carried through unchanged; never interpreted.
struct NiftiOrientation {
    float qfac = 1.0f;  // pixdim[0]
    std::int16_t qform_code = 0;
    std::int16_t sform_code = 0;
    std::array<float, 3> quatern{};
    std::array<float, 3> qoffset{};
    std::array<float, 12> srow{};
    std::uint8_t xyzt_units = 2;  // mm

    bool operator==(const NiftiOrientation&) const = default;
};

using NiftiPayload =
    std::variant<std::vector<std::uint8_t>, std::vector<std::int16_t>, std::vector<std::uint16_t>, std::vector<float>>;

struct NiftiImage {
    NiftiHeaderSubset header;
    NiftiOrientation orientation;
    NiftiPayload data;

    VoxelGeometry geometry() const;
};

/// Decodes a NIfTI-1 byte image (gzip detected by signature). Throws FormatError naming the bad field.
NiftiImage parse_nifti(std::span<const std::byte> bytes);
NiftiImage read_nifti(const fs::path& path);

/// Little-endian, vox_offset 352, scl_slope 1, scl_inter 0.
std::vector<std::byte> encode_nifti(const NiftiImage& image);
void write_nifti(const NiftiImage& image, const fs::path& path);

NiftiImage make_nifti(const VoxelGeometry& g, NiftiPayload data, const NiftiOrientation& orient = {});
/// uint8 when every label fits, else uint16.
NiftiImage make_label_nifti(const LabelVolume& v, const NiftiOrientation& orient = {});

/// Integer labels; float payloads must be integral. Rejects integer data whose scl_slope is not 0 or 1.
LabelVolume to_label_volume(const NiftiImage& image);
/// Real values with scl_slope/scl_inter applied (slope 0 treated as 1).
std::vector<float> to_real_values(const NiftiImage& image);

LabelVolume read_label_volume(const fs::path& path, const StructureRegistry* registry = nullptr);
void write_label_volume(const LabelVolume& v, const fs::path& path, const NiftiOrientation& orient = {});
void write_real_volume(const VoxelGeometry& g, std::vector<float> values, const fs::path& path,
                       const NiftiOrientation& orient = {});

// ---------------------------------------------------------------------------
// Registry JSON
//
//   {"background": 0, "structures": [{"id": 0, "name": "background"}, {"id": 17, "name": "hippocampus"}]}
//
// A top-level array of {"id", "name"} objects plus one {"background": id} object is accepted too.

StructureRegistry parse_registry(const nlohmann::json& j);
StructureRegistry read_registry(const fs::path& path);
nlohmann::json registry_to_json(const StructureRegistry& reg);

// ---------------------------------------------------------------------------
// Metric report JSON

inline constexpr const char* kReportSchemaVersion = "1";

nlohmann::json report_to_json(const StructureReport& report);
/// Unknown fields are ignored.
StructureReport report_from_json(const nlohmann::json& j);
void write_report(const StructureReport& report, const fs::path& path);
StructureReport read_report(const fs::path& path);

enum class HeatmapMetric { mc_dice, cv, mean_unc };
HeatmapMetric parse_heatmap_metric(const std::string& s);

/// Voxel value = metric of its consensus structure; background and absent metrics give 0.
std::vector<float> heatmap_values(const LabelVolume& consensus, const StructureReport& report, HeatmapMetric metric);
void write_heatmap_volume(const LabelVolume& consensus, const StructureReport& report, HeatmapMetric metric,
                          const fs::path& path, const NiftiOrientation& orient = {});

// ---------------------------------------------------------------------------
// Cohort CSV
//
// Header row naming subject_id, age, sex, dx, volume and optionally site, cv, mc_dice
// (any order). Empty cv/mc_dice cells are absent values.

CohortTable parse_cohort_csv(const std::string& text, const std::string& source = "<cohort>");
CohortTable read_cohort_csv(const fs::path& path);
std::string format_cohort_csv(const CohortTable& table);
void write_cohort_csv(const CohortTable& table, const fs::path& path);

/// Shortest decimal string that parses back to the same double.
std::string format_double(double v);

// ---------------------------------------------------------------------------
// Synthesis configs and sample manifests

PhantomSpec phantom_from_json(const nlohmann::json& j);
nlohmann::json phantom_to_json(const PhantomSpec& spec);
NoiseSpec noise_from_json(const nlohmann::json& j);
nlohmann::json noise_to_json(const NoiseSpec& noise);

struct ManifestEntry {
    fs::path labels;
    std::map<Label, fs::path> probs;  // one float32 volume per registry label
};

struct SampleManifest {
    std::vector<ManifestEntry> samples;
};

/// Relative paths resolve against the manifest's directory.
SampleManifest read_manifest(const fs::path& path);
nlohmann::json manifest_to_json(const SampleManifest& m);

/// Sample set from a manifest; probability maps are loaded when listed.
McSampleSet load_samples(const SampleManifest& m, std::shared_ptr<const StructureRegistry> registry);

nlohmann::json read_json(const fs::path& path);
std::string read_text(const fs::path& path);

// ---------------------------------------------------------------------------
// Atomic outputs

/// Stages outputs under temporary names and renames them on commit().
/// Staged files that were never committed are removed on destruction.
class OutputTransaction {
public:
    OutputTransaction() = default;
    OutputTransaction(const OutputTransaction&) = delete;
    OutputTransaction& operator=(const OutputTransaction&) = delete;
    ~OutputTransaction();

    /// Temporary path to write in place of `target`.
    fs::path stage(const fs::path& target);
    void commit();

private:
    std::vector<std::pair<fs::path, fs::path>> staged_;  // (temp, target)
    bool committed_ = false;
};

void write_text_file(const fs::path& path, const std::string& text);
void write_binary_file(const fs::path& path, std::span<const std::byte> bytes);

} // namespace segqc
