#include "helpers.hpp"

#include "segqc/error.hpp"
#include "segqc/io.hpp"

#include <gtest/gtest.h>

#include <zlib.h>

#include <charconv>
#include <cstring>
#include <fstream>

using namespace segqc;
using segqc::test::TempDir;

namespace {

template <typename T>
std::vector<T> random_payload(std::mt19937_64& rng, std::size_t n)
{
    std::vector<T> v(n);
    for (auto& x : v) {
        if constexpr (std::is_same_v<T, float>)
            x = std::bit_cast<float>(static_cast<std::uint32_t>(rng() & 0x7f7fffffu) | (rng() & 1 ? 0x80000000u : 0u));
        else
            x = static_cast<T>(rng());
    }
    return v;
}

template <typename T>
void round_trip(std::mt19937_64& rng)
{
    for (int t = 0; t < 10; ++t) {
        VoxelGeometry g({1 + static_cast<std::int64_t>(rng() % 9), 1 + static_cast<std::int64_t>(rng() % 9),
                         1 + static_cast<std::int64_t>(rng() % 9)},
                        {0.5 + (rng() % 8) * 0.25, 1.0, 1.25});
        NiftiOrientation o;
        o.qform_code = 1;
        o.sform_code = 2;
        o.quatern = {0.1f, 0.2f, 0.3f};
        o.srow[0] = 1.5f;
        o.qfac = -1.0f;
        auto img = make_nifti(g, random_payload<T>(rng, g.voxel_count()), o);
        auto bytes = encode_nifti(img);
        auto back = parse_nifti(bytes);
        EXPECT_EQ(back.header, img.header);
        EXPECT_EQ(back.orientation, img.orientation);
        const auto& a = std::get<std::vector<T>>(img.data);
        const auto& b = std::get<std::vector<T>>(back.data);
        ASSERT_EQ(a.size(), b.size());
        EXPECT_EQ(std::memcmp(a.data(), b.data(), a.size() * sizeof(T)), 0);
        EXPECT_EQ(back.geometry(), g);
    }
}

std::vector<std::byte> byteswap_header(std::vector<std::byte> b, int payload_width)
{
    auto swap = [&](std::size_t off, std::size_t n) { std::reverse(b.begin() + off, b.begin() + off + n); };
    swap(0, 4);
    for (std::size_t k = 0; k < 8; ++k)
        swap(40 + 2 * k, 2);
    swap(70, 2);
    swap(72, 2);
    for (std::size_t k = 0; k < 8; ++k)
        swap(76 + 4 * k, 4);
    for (std::size_t off : {108, 112, 116})
        swap(off, 4);
    swap(252, 2);
    swap(254, 2);
    for (std::size_t k = 0; k < 18; ++k)
        swap(256 + 4 * k, 4);
    if (payload_width > 1)
        for (std::size_t off = 352; off < b.size(); off += static_cast<std::size_t>(payload_width))
            swap(off, static_cast<std::size_t>(payload_width));
    return b;
}

std::string what_of(std::span<const std::byte> b)
{
    try {
        parse_nifti(b);
    } catch (const FormatError& e) {
        return e.what();
    }
    return "";
}

} // namespace

TEST(Nifti, MinimalUint8)
{
    VoxelGeometry g({4, 4, 4}, {1, 1, 1});
    LabelVolume v(g, Label{3});
    auto bytes = encode_nifti(make_label_nifti(v));
    EXPECT_EQ(bytes.size(), 352u + 64u);
    auto img = parse_nifti(bytes);
    EXPECT_EQ(img.header.datatype, 2);
    auto back = to_label_volume(img);
    EXPECT_EQ(back.size(), 64u);
    EXPECT_EQ(back, v);
}

TEST(Nifti, RoundTripAllTypes)
{
    std::mt19937_64 rng(42);
    round_trip<std::uint8_t>(rng);
    round_trip<std::int16_t>(rng);
    round_trip<std::uint16_t>(rng);
    round_trip<float>(rng);
}

TEST(Nifti, BigEndianAccepted)
{
    std::mt19937_64 rng(1);
    VoxelGeometry g({3, 4, 5}, {1, 2, 3});
    auto img = make_nifti(g, random_payload<std::int16_t>(rng, g.voxel_count()));
    auto be = byteswap_header(encode_nifti(img), 2);
    auto back = parse_nifti(be);
    EXPECT_EQ(back.header, img.header);
    EXPECT_EQ(std::get<std::vector<std::int16_t>>(back.data), std::get<std::vector<std::int16_t>>(img.data));
}

TEST(Nifti, GzipTransparent)
{
    TempDir dir;
    VoxelGeometry g({5, 5, 5}, {1, 1, 1});
    std::vector<Label> d(125);
    for (std::size_t i = 0; i < d.size(); ++i)
        d[i] = static_cast<Label>(i % 4);
    LabelVolume v(g, d);
    auto raw = encode_nifti(make_label_nifti(v));
    const auto path = dir.path / "v.nii.gz";
    gzFile f = gzopen(path.c_str(), "wb");
    ASSERT_NE(f, nullptr);
    gzwrite(f, raw.data(), static_cast<unsigned>(raw.size()));
    gzclose(f);
    EXPECT_EQ(read_label_volume(path), v);
}

TEST(Nifti, DistinctErrors)
{
    VoxelGeometry g({4, 4, 4}, {1, 1, 1});
    const auto good = encode_nifti(make_label_nifti(LabelVolume(g, Label{1})));
    auto mutate = [&](auto fn) {
        auto b = good;
        fn(b);
        return what_of(b);
    };
    auto put16 = [](std::vector<std::byte>& b, std::size_t off, std::int16_t v) { std::memcpy(&b[off], &v, 2); };

    EXPECT_NE(mutate([](auto& b) { b[345] = std::byte{'x'}; }).find("magic"), std::string::npos);
    const auto dt = mutate([&](auto& b) { put16(b, 70, 64); });
    EXPECT_NE(dt.find("datatype"), std::string::npos);
    EXPECT_NE(dt.find("64"), std::string::npos);
    EXPECT_NE(mutate([&](auto& b) { put16(b, 40, 4); }).find("dim[0]"), std::string::npos);
    EXPECT_NE(mutate([&](auto& b) { put16(b, 44, 0); }).find("dim[2]"), std::string::npos);
    EXPECT_NE(mutate([&](auto& b) { put16(b, 72, 16); }).find("bitpix"), std::string::npos);
    EXPECT_NE(mutate([](auto& b) { b.resize(b.size() - 1); }).find("truncated"), std::string::npos);
    EXPECT_NE(mutate([](auto& b) { b.resize(100); }).find("header"), std::string::npos);
    EXPECT_NE(mutate([](auto& b) { b[0] = std::byte{0}; }).find("sizeof_hdr"), std::string::npos);
}

TEST(Nifti, CorruptedHeaderFuzz)
{
    std::mt19937_64 rng(1000);
    VoxelGeometry g({6, 5, 4}, {1, 1, 1});
    const auto good = encode_nifti(make_label_nifti(LabelVolume(g, Label{1})));
    const std::size_t fields[][2] = {{344, 4}, {70, 2}, {40, 2}};
    int errors = 0;
    for (int t = 0; t < 1000; ++t) {
        auto b = good;
        const auto& f = fields[t % 3];
        bool changed = false;
        while (!changed) {
            for (std::size_t k = 0; k < f[1]; ++k)
                if (rng() % 2) {
                    b[f[0] + k] = std::byte{static_cast<std::uint8_t>(rng())};
                }
            changed = std::memcmp(&b[f[0]], &good[f[0]], f[1]) != 0;
            if (t % 3 == 1) {
                std::int16_t dt;
                std::memcpy(&dt, &b[70], 2);
                changed = changed && dt != 2;
            }
        }
        try {
            parse_nifti(b);
        } catch (const FormatError&) {
            ++errors;
        }
    }
    EXPECT_EQ(errors, 1000);
}

TEST(Nifti, LabelScaling)
{
    VoxelGeometry g({2, 1, 1}, {1, 1, 1});
    auto img = make_nifti(g, std::vector<std::uint8_t>{1, 2});
    img.header.scl_slope = 2.0f;
    EXPECT_THROW(to_label_volume(img), FormatError);
    img.header.scl_slope = 0.0f;
    EXPECT_EQ(to_label_volume(img)[1], 2);
    auto fimg = make_nifti(g, std::vector<float>{1.0f, 2.5f});
    EXPECT_THROW(to_label_volume(fimg), FormatError);
    auto scaled = make_nifti(g, std::vector<float>{1.0f, 2.0f});
    scaled.header.scl_slope = 0.5f;
    scaled.header.scl_inter = 1.0f;
    const auto real = to_real_values(scaled);
    EXPECT_EQ(real[0], 1.5f);
    EXPECT_EQ(real[1], 2.0f);
    auto back = parse_nifti(encode_nifti(scaled));
    EXPECT_EQ(back.header.scl_slope, 1.0f);
    EXPECT_EQ(to_real_values(back), real);
}

TEST(Registry, BothSchemas)
{
    auto obj = nlohmann::json::parse(R"({"background": 0, "structures": [{"id": 0, "name": "bg"}, {"id": 17, "name": "hippo"}]})");
    auto arr = nlohmann::json::parse(R"([{"id": 0, "name": "bg"}, {"id": 17, "name": "hippo"}, {"background": 0}])");
    EXPECT_EQ(parse_registry(obj), parse_registry(arr));
    EXPECT_EQ(parse_registry(registry_to_json(parse_registry(obj))), parse_registry(obj));
    EXPECT_THROW(parse_registry(nlohmann::json::parse(R"([{"id": 0, "name": "bg"}, {"id": 1, "name": "x"}])")),
                 ValidationError);
    EXPECT_THROW(parse_registry(nlohmann::json::parse(R"({"background": 0, "structures": [{"id": -1, "name": "x"}]})")),
                 ValidationError);
}

TEST(Report, RoundTrip)
{
    StructureReport r;
    r.scan_id = "scan-01";
    r.dataset = "demo";
    r.n_samples = 15;
    r.has_ground_truth = true;
    r.voxel_uncertainty = {0.0, 0.1 + 0.2, 5.518191617571635};
    StructureMetrics a;
    a.id = 17;
    a.name = "hippocampus";
    a.mean_volume = 1234.5678901234567;
    a.std_volume = 1.0 / 3.0;
    a.cv = 2.0 / 3.0 / 1234.5678901234567;
    a.mc_dice = 0.87654321;
    a.mean_unc = 1e-300;
    a.gt_dice = 0.9;
    a.consensus_volume = 1230;
    StructureMetrics b;
    b.id = 3;
    b.name = "gone";
    r.structures = {a, b};

    auto j = report_to_json(r);
    EXPECT_EQ(j["schema_version"], "1");
    EXPECT_TRUE(j["structures"][1]["cv"].is_null());
    EXPECT_EQ(report_from_json(j), r);
    EXPECT_EQ(report_from_json(nlohmann::json::parse(j.dump())), r);
    j["future_field"] = {1, 2, 3};
    j["structures"][0]["extra"] = "x";
    EXPECT_EQ(report_from_json(j), r);

    TempDir dir;
    write_report(r, dir.path / "r.json");
    EXPECT_EQ(read_report(dir.path / "r.json"), r);
    j.erase("schema_version");
    EXPECT_THROW(report_from_json(j), FormatError);
}

TEST(Heatmap, Values)
{
    VoxelGeometry g({5, 1, 1}, {1, 1, 1});
    LabelVolume consensus(g, std::vector<Label>{0, 1, 1, 2, 3});
    StructureReport r;
    for (auto [id, d] : std::vector<std::pair<Label, std::optional<double>>>{{1, 0.9}, {2, 0.6}, {3, std::nullopt}}) {
        StructureMetrics m;
        m.id = id;
        m.mc_dice = d;
        m.cv = 0.1 * id;
        r.structures.push_back(m);
    }
    auto v = heatmap_values(consensus, r, HeatmapMetric::mc_dice);
    const std::vector<float> want{0.0f, 0.9f, 0.9f, 0.6f, 0.0f};
    EXPECT_EQ(v, want);
    for (auto& m : r.structures)
        m.mc_dice = 1.0;
    auto ones = heatmap_values(consensus, r, HeatmapMetric::mc_dice);
    EXPECT_EQ(ones, (std::vector<float>{0, 1, 1, 1, 1}));
    EXPECT_THROW(parse_heatmap_metric("dice"), ValidationError);

    TempDir dir;
    write_heatmap_volume(consensus, r, HeatmapMetric::cv, dir.path / "h.nii");
    auto img = read_nifti(dir.path / "h.nii");
    EXPECT_EQ(img.header.datatype, 16);
    EXPECT_EQ(to_real_values(img), heatmap_values(consensus, r, HeatmapMetric::cv));
}

TEST(CohortCsv, ParsesAndRoundTrips)
{
    const std::string text =
        "subject_id,age,sex,dx,site,volume,cv,mc_dice\n"
        "a,71.5,0,1,s1,3500.25,0.05,0.9\n"
        "b,64,1,0,s2,3720,,0.85\n"
        "c,80.125,1,1,s1,3300,0.1,\n"
        "d,55,0,0,s3,3999.5,0.2,0.7\n"
        "e,60,1,1,s2,3100,0.3,0.6\n";
    auto t = parse_cohort_csv(text);
    ASSERT_EQ(t.rows.size(), 5u);
    EXPECT_TRUE(t.has_site && t.has_cv && t.has_mc_dice);
    EXPECT_FALSE(t.rows[1].cv);
    EXPECT_FALSE(t.rows[2].mc_dice);
    EXPECT_EQ(t.rows[2].age, 80.125);
    EXPECT_EQ(parse_cohort_csv(format_cohort_csv(t)), t);
}

TEST(CohortCsv, ExactRoundTripOfRandomDoubles)
{
    std::mt19937_64 rng(77);
    auto sim = make_cohort(100, Eigen::Vector4d(3000, -2.5, 40, -120), NoiseLink::cv_scaled, 77);
    EXPECT_EQ(parse_cohort_csv(format_cohort_csv(sim.table)), sim.table);
    for (int t = 0; t < 1000; ++t) {
        const double v = std::bit_cast<double>(rng() & 0x7fefffffffffffffULL);
        double back = 0.0;
        const auto s = format_double(v);
        std::from_chars(s.data(), s.data() + s.size(), back);
        EXPECT_EQ(back, v);
    }
}

TEST(CohortCsv, LineNumberedErrors)
{
    const std::string text =
        "subject_id,age,sex,dx,volume\n"
        "a,71,0,1,3500\n"
        "b,old,1,0,3720\n";
    try {
        parse_cohort_csv(text, "cohort.csv");
        FAIL();
    } catch (const ValidationError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("line 3"), std::string::npos) << msg;
        EXPECT_NE(msg.find("column age"), std::string::npos) << msg;
    }
    EXPECT_THROW(parse_cohort_csv("subject_id,age,sex,dx\n"), ValidationError);
    EXPECT_THROW(parse_cohort_csv("subject_id,age,sex,dx,volume\na,1,2,0,5\n"), ValidationError);
    EXPECT_THROW(parse_cohort_csv("subject_id,age,sex,dx,volume\na,1,1,0\n"), ValidationError);
    EXPECT_THROW(parse_cohort_csv("subject_id,age,sex,dx,volume\na,1e400,1,0,3\n"), ValidationError);
}

TEST(Configs, RoundTrip)
{
    auto spec = random_grid_phantom({20, 20, 20}, {2, 1, 1}, 2, 4, 5, {1, 1, 1.5});
    auto back = phantom_from_json(phantom_to_json(spec));
    EXPECT_EQ(make_phantom(back), make_phantom(spec));
    NoiseSpec n;
    n.default_flip_prob = 0.1;
    n.flip_prob[3] = 0.25;
    n.seed = 123456789012345ULL;
    n.erosion_dilation_radius = 1;
    auto nb = noise_from_json(noise_to_json(n));
    EXPECT_EQ(nb.flip_prob, n.flip_prob);
    EXPECT_EQ(nb.seed, n.seed);
    EXPECT_EQ(nb.erosion_dilation_radius, 1);
    EXPECT_THROW(noise_from_json(nlohmann::json::parse(R"({"default_flip_prob": 1.5})")), ValidationError);
}

TEST(Manifest, LoadsProbabilityMaps)
{
    TempDir dir;
    auto reg = test::registry({0, 1});
    VoxelGeometry g({2, 1, 1}, {1, 1, 1});
    SampleManifest m;
    for (int i = 0; i < 2; ++i) {
        ManifestEntry e;
        e.labels = "l" + std::to_string(i) + ".nii";
        write_label_volume(LabelVolume(g, std::vector<Label>{0, 1}), dir.path / e.labels);
        for (Label id : {0, 1}) {
            e.probs[id] = "p" + std::to_string(i) + "_" + std::to_string(id) + ".nii";
            write_real_volume(g, id == 0 ? std::vector<float>{0.75f, 0.25f} : std::vector<float>{0.25f, 0.75f},
                              dir.path / e.probs[id]);
        }
        m.samples.push_back(e);
    }
    write_text_file(dir.path / "manifest.json", manifest_to_json(m).dump());
    auto set = load_samples(read_manifest(dir.path / "manifest.json"), reg);
    EXPECT_EQ(set.kind(), SampleKind::both);
    EXPECT_TRUE(validate_sample_set(set).empty());
    EXPECT_EQ(set[1].probs->map(1)[1], 0.75f);
}

TEST(Transaction, UncommittedOutputsRemoved)
{
    TempDir dir;
    fs::path staged;
    {
        OutputTransaction tx;
        staged = tx.stage(dir.path / "out.txt");
        write_text_file(staged, "x");
    }
    EXPECT_FALSE(fs::exists(staged));
    EXPECT_FALSE(fs::exists(dir.path / "out.txt"));
    {
        OutputTransaction tx;
        write_text_file(tx.stage(dir.path / "out.txt"), "y");
        tx.commit();
    }
    EXPECT_EQ(read_text(dir.path / "out.txt"), "y");
    EXPECT_THROW(read_text(dir.path / "missing.txt"), IoError);
}
