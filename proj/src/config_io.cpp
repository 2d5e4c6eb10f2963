#include "segqc/io.hpp"

#include "segqc/error.hpp"

#include <atomic>
#include <fstream>
#include <sstream>

#include <unistd.h>

namespace segqc {

using nlohmann::json;

namespace {

template <typename T, std::size_t K>
std::array<T, K> read_array(const json& j, const char* key)
{
    const auto& v = j.at(key);
    if (!v.is_array() || v.size() != K)
        throw ValidationError(std::string("\"") + key + "\" must be an array of " + std::to_string(K) + " numbers");
    std::array<T, K> out{};
    for (std::size_t k = 0; k < K; ++k)
        out[k] = v[k].get<T>();
    return out;
}

ShapeKind parse_shape(const std::string& s)
{
    if (s == "sphere" || s == "ellipsoid")
        return ShapeKind::sphere;
    if (s == "box")
        return ShapeKind::box;
    throw ValidationError("unknown shape '" + s + "' (expected sphere or box)");
}

} // namespace

PhantomSpec phantom_from_json(const json& j)
{
    try {
        const auto dims = read_array<std::int64_t, 3>(j, "dims");
        const auto spacing = j.contains("spacing") ? read_array<double, 3>(j, "spacing") : std::array<double, 3>{1, 1, 1};
        const auto seed = j.value("seed", std::uint64_t{0});
        PhantomSpec spec;
        if (j.contains("random_grid")) {
            const auto& g = j["random_grid"];
            spec = random_grid_phantom(dims, read_array<int, 3>(g, "grid"), g.at("min_radius").get<double>(),
                                       g.at("max_radius").get<double>(), seed, spacing);
        } else {
            spec.geometry = VoxelGeometry(dims, spacing);
            spec.seed = seed;
            for (const auto& s : j.at("structures")) {
                ShapeSpec shape;
                const auto id = s.at("id").get<std::int64_t>();
                if (id < 0 || id > kMaxLabelId)
                    throw ValidationError("structure id " + std::to_string(id) + " outside [0, 65535]");
                shape.id = static_cast<Label>(id);
                shape.name = s.at("name").get<std::string>();
                shape.kind = parse_shape(s.value("shape", std::string("sphere")));
                shape.center = read_array<double, 3>(s, "center");
                shape.size = read_array<double, 3>(s, "size");
                spec.structures.push_back(std::move(shape));
            }
        }
        if (j.contains("background")) {
            const auto& b = j["background"];
            spec.background_id = static_cast<Label>(b.at("id").get<std::uint16_t>());
            spec.background_name = b.value("name", std::string("background"));
        }
        return spec;
    } catch (const json::exception& e) {
        throw ValidationError(std::string("phantom config: ") + e.what());
    }
}

json phantom_to_json(const PhantomSpec& spec)
{
    json structures = json::array();
    for (const auto& s : spec.structures)
        structures.push_back({{"id", s.id},
                              {"name", s.name},
                              {"shape", s.kind == ShapeKind::sphere ? "sphere" : "box"},
                              {"center", s.center},
                              {"size", s.size}});
    return {{"dims", spec.geometry.dims()},
            {"spacing", spec.geometry.spacing()},
            {"background", {{"id", spec.background_id}, {"name", spec.background_name}}},
            {"seed", spec.seed},
            {"structures", structures}};
}

NoiseSpec noise_from_json(const json& j)
{
    try {
        NoiseSpec n;
        n.default_flip_prob = j.value("default_flip_prob", n.default_flip_prob);
        if (j.contains("flip_prob"))
            for (const auto& [k, v] : j["flip_prob"].items()) {
                std::size_t used = 0;
                long id = -1;
                try {
                    id = std::stol(k, &used);
                } catch (const std::exception&) {
                }
                if (used != k.size() || id < 0 || id > kMaxLabelId)
                    throw ValidationError("noise config: flip_prob key '" + k + "' is not a label id");
                n.flip_prob[static_cast<Label>(id)] = v.get<double>();
            }
        n.erosion_dilation_radius = j.value("erosion_dilation_radius", n.erosion_dilation_radius);
        n.n_samples = j.value("n_samples", n.n_samples);
        n.seed = j.value("seed", n.seed);
        n.systematic_fraction = j.value("systematic_fraction", n.systematic_fraction);
        n.extent_bias = j.value("extent_bias", n.extent_bias);
        n.soft_probabilities = j.value("soft_probabilities", n.soft_probabilities);
        n.validate();
        return n;
    } catch (const json::exception& e) {
        throw ValidationError(std::string("noise config: ") + e.what());
    }
}

json noise_to_json(const NoiseSpec& n)
{
    json flips = json::object();
    for (const auto& [id, p] : n.flip_prob)
        flips[std::to_string(id)] = p;
    return {{"default_flip_prob", n.default_flip_prob},
            {"flip_prob", flips},
            {"erosion_dilation_radius", n.erosion_dilation_radius},
            {"n_samples", n.n_samples},
            {"seed", n.seed},
            {"systematic_fraction", n.systematic_fraction},
            {"extent_bias", n.extent_bias},
            {"soft_probabilities", n.soft_probabilities}};
}

std::string read_text(const fs::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw IoError("cannot open '" + path.string() + "' for reading");
    std::ostringstream ss;
    ss << in.rdbuf();
    if (in.bad())
        throw IoError("cannot read '" + path.string() + "'");
    return ss.str();
}

json read_json(const fs::path& path)
{
    const std::string text = read_text(path);
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        throw FormatError(path.string() + ": invalid JSON: " + e.what());
    }
}

void write_text_file(const fs::path& path, const std::string& text)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw IoError("cannot open '" + path.string() + "' for writing");
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    out.close();
    if (!out)
        throw IoError("failed writing '" + path.string() + "'");
}

void write_binary_file(const fs::path& path, std::span<const std::byte> bytes)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw IoError("cannot open '" + path.string() + "' for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    out.close();
    if (!out)
        throw IoError("failed writing '" + path.string() + "'");
}

fs::path OutputTransaction::stage(const fs::path& target)
{
    static std::atomic<unsigned> counter{0};
    const fs::path dir = target.has_parent_path() ? target.parent_path() : fs::path(".");
    const fs::path temp = dir / ("." + target.filename().string() + ".tmp" + std::to_string(::getpid()) + "-" +
                                 std::to_string(counter++));
    staged_.emplace_back(temp, target);
    return temp;
}

void OutputTransaction::commit()
{
    for (const auto& [temp, target] : staged_) {
        std::error_code ec;
        if (fs::is_directory(target, ec) && fs::is_empty(target, ec))
            fs::remove(target, ec);
        fs::rename(temp, target, ec);
        if (ec)
            throw IoError("cannot move output into place at '" + target.string() + "': " + ec.message());
    }
    committed_ = true;
}

OutputTransaction::~OutputTransaction()
{
    if (committed_)
        return;
    for (const auto& [temp, target] : staged_) {
        std::error_code ec;
        fs::remove_all(temp, ec);
    }
}

} // namespace segqc
