#include "segqc/io.hpp"

#include "segqc/error.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace segqc {

namespace {

// Header field offsets (NIfTI-1).
constexpr std::size_t kOffSizeofHdr = 0;
constexpr std::size_t kOffDim = 40;
constexpr std::size_t kOffDatatype = 70;
constexpr std::size_t kOffBitpix = 72;
constexpr std::size_t kOffPixdim = 76;
constexpr std::size_t kOffVoxOffset = 108;
constexpr std::size_t kOffSclSlope = 112;
constexpr std::size_t kOffSclInter = 116;
constexpr std::size_t kOffXyztUnits = 123;
constexpr std::size_t kOffQformCode = 252;
constexpr std::size_t kOffSformCode = 254;
constexpr std::size_t kOffQuatern = 256;
constexpr std::size_t kOffQoffset = 268;
constexpr std::size_t kOffSrow = 280;
constexpr std::size_t kOffMagic = 344;

/// Fixed-endianness field access over a byte span.
class ByteReader {
public:
    ByteReader(std::span<const std::byte> bytes, bool big_endian) : bytes_(bytes), big_(big_endian) {}

    std::uint32_t u32(std::size_t off) const { return static_cast<std::uint32_t>(assemble(off, 4)); }
    std::uint16_t u16(std::size_t off) const { return static_cast<std::uint16_t>(assemble(off, 2)); }
    std::int16_t i16(std::size_t off) const { return std::bit_cast<std::int16_t>(u16(off)); }
    std::int32_t i32(std::size_t off) const { return std::bit_cast<std::int32_t>(u32(off)); }
    float f32(std::size_t off) const { return std::bit_cast<float>(u32(off)); }
    std::uint8_t u8(std::size_t off) const { return std::to_integer<std::uint8_t>(bytes_[off]); }

private:
    std::uint64_t assemble(std::size_t off, std::size_t n) const
    {
        std::uint64_t v = 0;
        for (std::size_t k = 0; k < n; ++k) {
            const std::size_t idx = big_ ? off + k : off + n - 1 - k;
            v = (v << 8) | std::to_integer<std::uint64_t>(bytes_[idx]);
        }
        return v;
    }

    std::span<const std::byte> bytes_;
    bool big_;
};

class ByteWriter {
public:
    explicit ByteWriter(std::vector<std::byte>& out) : out_(out) {}

    void u16(std::size_t off, std::uint16_t v) { put(off, v, 2); }
    void i16(std::size_t off, std::int16_t v) { u16(off, std::bit_cast<std::uint16_t>(v)); }
    void u32(std::size_t off, std::uint32_t v) { put(off, v, 4); }
    void i32(std::size_t off, std::int32_t v) { u32(off, std::bit_cast<std::uint32_t>(v)); }
    void f32(std::size_t off, float v) { u32(off, std::bit_cast<std::uint32_t>(v)); }
    void u8(std::size_t off, std::uint8_t v) { out_[off] = std::byte{v}; }

private:
    void put(std::size_t off, std::uint64_t v, std::size_t n)
    {
        for (std::size_t k = 0; k < n; ++k)
            out_[off + k] = std::byte{static_cast<std::uint8_t>((v >> (8 * k)) & 0xff)};
    }

    std::vector<std::byte>& out_;
};

std::vector<std::byte> gunzip(std::span<const std::byte> in)
{
    z_stream zs{};
    if (inflateInit2(&zs, 16 + MAX_WBITS) != Z_OK)
        throw FormatError("NIfTI: cannot initialise gzip decoder");
    zs.next_in = reinterpret_cast<Bytef*>(const_cast<std::byte*>(in.data()));
    zs.avail_in = static_cast<uInt>(in.size());
    std::vector<std::byte> out;
    std::vector<std::byte> chunk(1 << 20);
    int rc = Z_OK;
    while (rc != Z_STREAM_END) {
        zs.next_out = reinterpret_cast<Bytef*>(chunk.data());
        zs.avail_out = static_cast<uInt>(chunk.size());
        rc = inflate(&zs, Z_NO_FLUSH);
        if (rc != Z_OK && rc != Z_STREAM_END) {
            inflateEnd(&zs);
            throw FormatError("NIfTI: corrupt gzip stream");
        }
        out.insert(out.end(), chunk.begin(), chunk.begin() + static_cast<std::ptrdiff_t>(chunk.size() - zs.avail_out));
        if (rc != Z_STREAM_END && zs.avail_in == 0 && zs.avail_out != 0) {
            inflateEnd(&zs);
            throw FormatError("NIfTI: truncated gzip stream");
        }
    }
    inflateEnd(&zs);
    return out;
}

int bytes_per_voxel(std::int16_t datatype)
{
    switch (static_cast<NiftiDatatype>(datatype)) {
    case NiftiDatatype::uint8: return 1;
    case NiftiDatatype::int16: return 2;
    case NiftiDatatype::uint16: return 2;
    case NiftiDatatype::float32: return 4;
    }
    return 0;
}

bool supported(std::int16_t datatype)
{
    return datatype == 2 || datatype == 4 || datatype == 16 || datatype == 512;
}

std::vector<std::byte> read_binary(const fs::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw IoError("cannot open '" + path.string() + "' for reading");
    in.seekg(0, std::ios::end);
    const auto size = in.tellg();
    in.seekg(0, std::ios::beg);
    std::vector<std::byte> buf(static_cast<std::size_t>(size));
    if (size > 0 && !in.read(reinterpret_cast<char*>(buf.data()), size))
        throw IoError("cannot read '" + path.string() + "'");
    return buf;
}

} // namespace

VoxelGeometry NiftiImage::geometry() const
{
    return VoxelGeometry({header.dim[1], header.dim[2], header.dim[3]},
                         {header.pixdim[0], header.pixdim[1], header.pixdim[2]});
}

NiftiImage parse_nifti(std::span<const std::byte> raw)
{
    std::vector<std::byte> inflated;
    std::span<const std::byte> bytes = raw;
    if (raw.size() >= 2 && raw[0] == std::byte{0x1f} && raw[1] == std::byte{0x8b}) {
        inflated = gunzip(raw);
        bytes = inflated;
    }
    if (bytes.size() < static_cast<std::size_t>(kNiftiHeaderSize))
        throw FormatError("NIfTI: header truncated (" + std::to_string(bytes.size()) + " bytes, need 348)");

    bool big = false;
    if (ByteReader(bytes, false).i32(kOffSizeofHdr) == kNiftiHeaderSize)
        big = false;
    else if (ByteReader(bytes, true).i32(kOffSizeofHdr) == kNiftiHeaderSize)
        big = true;
    else
        throw FormatError("NIfTI: sizeof_hdr is " + std::to_string(ByteReader(bytes, false).i32(kOffSizeofHdr)) +
                          ", expected 348");
    ByteReader r(bytes, big);

    NiftiImage img;
    auto& h = img.header;
    for (int k = 0; k < 4; ++k)
        h.magic[static_cast<std::size_t>(k)] = static_cast<char>(r.u8(kOffMagic + static_cast<std::size_t>(k)));
    if (std::memcmp(h.magic.data(), "n+1\0", 4) != 0) {
        std::ostringstream os;
        os << "NIfTI: bad magic (bytes";
        for (char c : h.magic)
            os << " 0x" << std::hex << static_cast<int>(static_cast<unsigned char>(c));
        os << "), expected \"n+1\\0\"";
        throw FormatError(os.str());
    }
    for (std::size_t k = 0; k < 8; ++k)
        h.dim[k] = r.i16(kOffDim + 2 * k);
    if (h.dim[0] != 3)
        throw FormatError("NIfTI: dim[0] = " + std::to_string(h.dim[0]) + ", expected 3");
    for (std::size_t k = 1; k <= 3; ++k)
        if (h.dim[k] < 1)
            throw FormatError("NIfTI: dim[" + std::to_string(k) + "] = " + std::to_string(h.dim[k]) + " must be >= 1");
    h.datatype = r.i16(kOffDatatype);
    if (!supported(h.datatype))
        throw FormatError("NIfTI: unsupported datatype code " + std::to_string(h.datatype) +
                          " (supported: 2 uint8, 4 int16, 512 uint16, 16 float32)");
    h.bitpix = r.i16(kOffBitpix);
    if (h.bitpix != 8 * bytes_per_voxel(h.datatype))
        throw FormatError("NIfTI: bitpix " + std::to_string(h.bitpix) + " does not match datatype " +
                          std::to_string(h.datatype));
    for (std::size_t k = 0; k < 3; ++k) {
        const float p = r.f32(kOffPixdim + 4 * (k + 1));
        if (!std::isfinite(p) || p == 0.0f)
            throw FormatError("NIfTI: pixdim[" + std::to_string(k + 1) + "] must be finite and non-zero");
        h.pixdim[k] = std::abs(p);
    }
    h.vox_offset = r.f32(kOffVoxOffset);
    if (!std::isfinite(h.vox_offset) || h.vox_offset < static_cast<float>(kNiftiHeaderSize) ||
        h.vox_offset != std::floor(h.vox_offset) || h.vox_offset > 1e9f)
        throw FormatError("NIfTI: vox_offset " + std::to_string(h.vox_offset) + " is invalid");
    h.scl_slope = r.f32(kOffSclSlope);
    h.scl_inter = r.f32(kOffSclInter);

    auto& o = img.orientation;
    o.qfac = r.f32(kOffPixdim);
    o.xyzt_units = r.u8(kOffXyztUnits);
    o.qform_code = r.i16(kOffQformCode);
    o.sform_code = r.i16(kOffSformCode);
    for (std::size_t k = 0; k < 3; ++k) {
        o.quatern[k] = r.f32(kOffQuatern + 4 * k);
        o.qoffset[k] = r.f32(kOffQoffset + 4 * k);
    }
    for (std::size_t k = 0; k < 12; ++k)
        o.srow[k] = r.f32(kOffSrow + 4 * k);

    const std::size_t n = static_cast<std::size_t>(h.dim[1]) * static_cast<std::size_t>(h.dim[2]) *
                          static_cast<std::size_t>(h.dim[3]);
    const std::size_t bpv = static_cast<std::size_t>(bytes_per_voxel(h.datatype));
    const auto offset = static_cast<std::size_t>(h.vox_offset);
    if (offset > bytes.size() || bytes.size() - offset < n * bpv)
        throw FormatError("NIfTI: data section truncated: need " + std::to_string(n * bpv) + " bytes at offset " +
                          std::to_string(offset) + ", file has " + std::to_string(bytes.size()));

    switch (static_cast<NiftiDatatype>(h.datatype)) {
    case NiftiDatatype::uint8: {
        std::vector<std::uint8_t> v(n);
        for (std::size_t i = 0; i < n; ++i)
            v[i] = r.u8(offset + i);
        img.data = std::move(v);
        break;
    }
    case NiftiDatatype::int16: {
        std::vector<std::int16_t> v(n);
        for (std::size_t i = 0; i < n; ++i)
            v[i] = r.i16(offset + 2 * i);
        img.data = std::move(v);
        break;
    }
    case NiftiDatatype::uint16: {
        std::vector<std::uint16_t> v(n);
        for (std::size_t i = 0; i < n; ++i)
            v[i] = r.u16(offset + 2 * i);
        img.data = std::move(v);
        break;
    }
    case NiftiDatatype::float32: {
        std::vector<float> v(n);
        for (std::size_t i = 0; i < n; ++i)
            v[i] = r.f32(offset + 4 * i);
        img.data = std::move(v);
        break;
    }
    }
    return img;
}

NiftiImage read_nifti(const fs::path& path)
{
    auto bytes = read_binary(path);
    try {
        return parse_nifti(bytes);
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

std::vector<std::byte> encode_nifti(const NiftiImage& image)
{
    NiftiImage img = image;
    const bool identity_scale =
        (img.header.scl_slope == 0.0f || img.header.scl_slope == 1.0f) && img.header.scl_inter == 0.0f;
    if (!identity_scale)
        img.data = to_real_values(image);  // bake the scaling so slope 1 / inter 0 stays truthful

    const std::int16_t datatype = std::visit(
        [](const auto& v) -> std::int16_t {
            using T = typename std::decay_t<decltype(v)>::value_type;
            if constexpr (std::is_same_v<T, std::uint8_t>)
                return 2;
            else if constexpr (std::is_same_v<T, std::int16_t>)
                return 4;
            else if constexpr (std::is_same_v<T, std::uint16_t>)
                return 512;
            else
                return 16;
        },
        img.data);
    const std::size_t n = img.geometry().voxel_count();
    const std::size_t count = std::visit([](const auto& v) { return v.size(); }, img.data);
    if (count != n)
        throw ValidationError("NIfTI: payload holds " + std::to_string(count) + " values for " + std::to_string(n) +
                              " voxels");
    const auto bpv = static_cast<std::size_t>(bytes_per_voxel(datatype));
    const auto offset = static_cast<std::size_t>(kNiftiVoxOffset);
    std::vector<std::byte> out(offset + n * bpv, std::byte{0});
    ByteWriter w(out);
    w.i32(kOffSizeofHdr, kNiftiHeaderSize);
    w.i16(kOffDim, 3);
    for (std::size_t k = 1; k < 8; ++k)
        w.i16(kOffDim + 2 * k, k <= 3 ? img.header.dim[k] : 1);
    w.i16(kOffDatatype, datatype);
    w.i16(kOffBitpix, static_cast<std::int16_t>(8 * bpv));
    w.f32(kOffPixdim, img.orientation.qfac);
    for (std::size_t k = 0; k < 3; ++k)
        w.f32(kOffPixdim + 4 * (k + 1), img.header.pixdim[k]);
    w.f32(kOffVoxOffset, kNiftiVoxOffset);
    w.f32(kOffSclSlope, 1.0f);
    w.f32(kOffSclInter, 0.0f);
    w.u8(kOffXyztUnits, img.orientation.xyzt_units);
    w.i16(kOffQformCode, img.orientation.qform_code);
    w.i16(kOffSformCode, img.orientation.sform_code);
    for (std::size_t k = 0; k < 3; ++k) {
        w.f32(kOffQuatern + 4 * k, img.orientation.quatern[k]);
        w.f32(kOffQoffset + 4 * k, img.orientation.qoffset[k]);
    }
    for (std::size_t k = 0; k < 12; ++k)
        w.f32(kOffSrow + 4 * k, img.orientation.srow[k]);
    std::memcpy(&out[kOffMagic], "n+1\0", 4);

    std::visit(
        [&](const auto& v) {
            using T = typename std::decay_t<decltype(v)>::value_type;
            for (std::size_t i = 0; i < n; ++i) {
                if constexpr (std::is_same_v<T, std::uint8_t>)
                    w.u8(offset + i, v[i]);
                else if constexpr (std::is_same_v<T, std::int16_t>)
                    w.i16(offset + 2 * i, v[i]);
                else if constexpr (std::is_same_v<T, std::uint16_t>)
                    w.u16(offset + 2 * i, v[i]);
                else
                    w.f32(offset + 4 * i, v[i]);
            }
        },
        img.data);
    return out;
}

void write_nifti(const NiftiImage& image, const fs::path& path)
{
    auto bytes = encode_nifti(image);
    write_binary_file(path, bytes);
}

NiftiImage make_nifti(const VoxelGeometry& g, NiftiPayload data, const NiftiOrientation& orient)
{
    NiftiImage img;
    img.orientation = orient;
    for (std::size_t k = 0; k < 3; ++k) {
        if (g.dims()[k] > 32767)
            throw ValidationError("NIfTI-1 cannot store dimension " + std::to_string(g.dims()[k]));
        img.header.dim[k + 1] = static_cast<std::int16_t>(g.dims()[k]);
        img.header.pixdim[k] = static_cast<float>(g.spacing()[k]);
    }
    img.data = std::move(data);
    img.header.datatype = std::visit(
        [](const auto& v) -> std::int16_t {
            using T = typename std::decay_t<decltype(v)>::value_type;
            if constexpr (std::is_same_v<T, std::uint8_t>)
                return 2;
            else if constexpr (std::is_same_v<T, std::int16_t>)
                return 4;
            else if constexpr (std::is_same_v<T, std::uint16_t>)
                return 512;
            else
                return 16;
        },
        img.data);
    img.header.bitpix = static_cast<std::int16_t>(8 * bytes_per_voxel(img.header.datatype));
    const std::size_t count = std::visit([](const auto& v) { return v.size(); }, img.data);
    if (count != g.voxel_count())
        throw ValidationError("NIfTI: payload size does not match geometry");
    return img;
}

NiftiImage make_label_nifti(const LabelVolume& v, const NiftiOrientation& orient)
{
    auto d = v.data();
    const bool fits = std::all_of(d.begin(), d.end(), [](Label l) { return l <= 255; });
    if (fits)
        return make_nifti(v.geometry(), std::vector<std::uint8_t>(d.begin(), d.end()), orient);
    return make_nifti(v.geometry(), std::vector<std::uint16_t>(d.begin(), d.end()), orient);
}

LabelVolume to_label_volume(const NiftiImage& image)
{
    const auto& h = image.header;
    const bool is_float = h.datatype == static_cast<std::int16_t>(NiftiDatatype::float32);
    if (!is_float && (h.scl_slope != 0.0f && h.scl_slope != 1.0f))
        throw FormatError("NIfTI: integer data with scl_slope " + std::to_string(h.scl_slope) +
                          " cannot be used as labels");
    if (!is_float && h.scl_inter != 0.0f && h.scl_slope != 0.0f)
        throw FormatError("NIfTI: integer data with scl_inter " + std::to_string(h.scl_inter) +
                          " cannot be used as labels");
    std::vector<Label> out;
    std::visit(
        [&](const auto& v) {
            out.reserve(v.size());
            for (std::size_t i = 0; i < v.size(); ++i) {
                using T = typename std::decay_t<decltype(v)>::value_type;
                double x = static_cast<double>(v[i]);
                if constexpr (std::is_same_v<T, float>) {
                    const double slope = h.scl_slope == 0.0f ? 1.0 : h.scl_slope;
                    x = x * slope + h.scl_inter;
                }
                if (!(x >= 0.0 && x <= static_cast<double>(kMaxLabelId)) || x != std::floor(x))
                    throw FormatError("NIfTI: voxel " + std::to_string(i) + " holds " + std::to_string(x) +
                                      ", not a label id in [0, 65535]");
                out.push_back(static_cast<Label>(x));
            }
        },
        image.data);
    return LabelVolume(image.geometry(), std::move(out));
}

std::vector<float> to_real_values(const NiftiImage& image)
{
    const double slope = image.header.scl_slope == 0.0f ? 1.0 : image.header.scl_slope;
    const double inter = image.header.scl_inter;
    std::vector<float> out;
    std::visit(
        [&](const auto& v) {
            out.reserve(v.size());
            for (auto x : v)
                out.push_back(static_cast<float>(static_cast<double>(x) * slope + inter));
        },
        image.data);
    return out;
}

LabelVolume read_label_volume(const fs::path& path, const StructureRegistry* registry)
{
    auto img = read_nifti(path);
    LabelVolume v = [&] {
        try {
            return to_label_volume(img);
        } catch (const FormatError& e) {
            throw FormatError(path.string() + ": " + e.what());
        }
    }();
    if (registry)
        if (auto bad = check_labels(v, *registry))
            throw ValidationError(path.string() + ": " + bad->message);
    return v;
}

void write_label_volume(const LabelVolume& v, const fs::path& path, const NiftiOrientation& orient)
{
    write_nifti(make_label_nifti(v, orient), path);
}

void write_real_volume(const VoxelGeometry& g, std::vector<float> values, const fs::path& path,
                       const NiftiOrientation& orient)
{
    write_nifti(make_nifti(g, std::move(values), orient), path);
}

} // namespace segqc
