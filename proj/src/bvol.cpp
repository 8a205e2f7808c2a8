#include "hdseg/bvol.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace hdseg {

namespace {

constexpr char kMagic[6] = {'B', 'V', 'O', 'L', '1', '\0'};
constexpr uint8_t kDtypeF32 = 0;
constexpr uint8_t kDtypeU8 = 1;

void put_u32_le(std::string& out, uint32_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
    out.push_back(static_cast<char>((v >> 16) & 0xff));
    out.push_back(static_cast<char>((v >> 24) & 0xff));
}

uint32_t get_u32_le(const uint8_t* p) {
    return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
           (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}

void write_file(const std::string& path, const std::string& header, const void* payload, size_t bytes) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("bvol: cannot open for writing: " + path);
    f.write(header.data(), static_cast<std::streamsize>(header.size()));
    f.write(static_cast<const char*>(payload), static_cast<std::streamsize>(bytes));
    if (!f) throw std::runtime_error("bvol: write failed: " + path);
}

std::string make_header(const std::vector<int>& dims4, uint8_t dtype) {
    std::string h(kMagic, sizeof(kMagic));
    for (int d : dims4) put_u32_le(h, static_cast<uint32_t>(d));
    h.push_back(static_cast<char>(dtype));
    return h;
}

struct RawBvol {
    std::vector<int> dims;  // always 4 entries
    uint8_t dtype;
    std::vector<uint8_t> payload;
};

RawBvol read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("bvol: cannot open: " + path);
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (bytes.size() < sizeof(kMagic) || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0)
        throw std::runtime_error("bvol: bad magic in " + path);
    const size_t header = sizeof(kMagic) + 4 * 4 + 1;
    if (bytes.size() < header) throw std::runtime_error("bvol: truncated header in " + path);
    RawBvol raw;
    raw.dims.resize(4);
    size_t count = 1;
    for (int i = 0; i < 4; ++i) {
        const uint32_t d = get_u32_le(bytes.data() + sizeof(kMagic) + 4 * static_cast<size_t>(i));
        if (d == 0 || d > (1u << 24)) throw std::runtime_error("bvol: implausible dimension in " + path);
        raw.dims[static_cast<size_t>(i)] = static_cast<int>(d);
        count *= d;
    }
    raw.dtype = bytes[header - 1];
    size_t elem = 0;
    if (raw.dtype == kDtypeF32)
        elem = 4;
    else if (raw.dtype == kDtypeU8)
        elem = 1;
    else
        throw std::runtime_error("bvol: unknown dtype code in " + path);
    if (bytes.size() != header + count * elem)
        throw std::runtime_error("bvol: truncated payload in " + path);
    raw.payload.assign(bytes.begin() + static_cast<std::ptrdiff_t>(header), bytes.end());
    return raw;
}

}  // namespace

void write_bvol(const std::string& path, const Volume& vol) {
    if (vol.rank() != 4) throw std::invalid_argument("write_bvol: volume must be rank 4 (D,H,W,C)");
    const std::string header = make_header(vol.shape(), kDtypeF32);
    static_assert(std::endian::native == std::endian::little,
                  "f32 payload is written via memcpy; big-endian hosts need byte swapping");
    write_file(path, header, vol.data(), vol.size() * sizeof(float));
}

void write_bvol(const std::string& path, const LabelVolume& labels) {
    if (labels.rank() != 3) throw std::invalid_argument("write_bvol: labels must be rank 3 (D,H,W)");
    std::vector<int> dims = labels.shape();
    dims.push_back(1);
    const std::string header = make_header(dims, kDtypeU8);
    write_file(path, header, labels.data(), labels.size());
}

Volume read_bvol_volume(const std::string& path) {
    RawBvol raw = read_file(path);
    if (raw.dtype != kDtypeF32) throw std::runtime_error("bvol: expected f32 volume in " + path);
    Volume v(raw.dims);
    std::memcpy(v.data(), raw.payload.data(), raw.payload.size());
    return v;
}

LabelVolume read_bvol_labels(const std::string& path) {
    RawBvol raw = read_file(path);
    if (raw.dtype != kDtypeU8) throw std::runtime_error("bvol: expected u8 labels in " + path);
    if (raw.dims[3] != 1) throw std::runtime_error("bvol: label volume must have channel dim 1: " + path);
    LabelVolume l({raw.dims[0], raw.dims[1], raw.dims[2]});
    std::memcpy(l.data(), raw.payload.data(), raw.payload.size());
    return l;
}

void write_manifest(const std::string& path, const std::vector<CasePaths>& cases) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw std::runtime_error("manifest: cannot open for writing: " + path);
    for (const auto& c : cases) f << c.volume << '\t' << c.labels << '\n';
    if (!f) throw std::runtime_error("manifest: write failed: " + path);
}

std::vector<CasePaths> read_manifest(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("manifest: cannot open: " + path);
    std::vector<CasePaths> cases;
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        const size_t tab = line.find('\t');
        if (tab == std::string::npos)
            throw std::runtime_error("manifest: malformed line (expected volume<TAB>labels): " + line);
        cases.push_back({line.substr(0, tab), line.substr(tab + 1)});
    }
    return cases;
}

}  // namespace hdseg
