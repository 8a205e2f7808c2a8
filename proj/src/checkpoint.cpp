#include "hdseg/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <vector>

namespace hdseg {

namespace {

constexpr char kMagic[6] = {'H', 'N', 'C', 'K', '1', '\0'};
constexpr uint8_t kF32 = 0;
constexpr uint8_t kU8 = 1;
constexpr uint8_t kU64 = 2;

static_assert(std::endian::native == std::endian::little,
              "payloads are written via memcpy; big-endian hosts need byte swapping");

void put_u32(std::string& out, uint32_t v) { out.append(reinterpret_cast<const char*>(&v), 4); }
void put_u64(std::string& out, uint64_t v) { out.append(reinterpret_cast<const char*>(&v), 8); }

struct Reader {
    const uint8_t* p;
    const uint8_t* end;
    const std::string& path;

    void need(size_t n) const {
        if (static_cast<size_t>(end - p) < n)
            throw std::runtime_error("checkpoint: truncated file: " + path);
    }
    uint32_t u32() {
        need(4);
        uint32_t v;
        std::memcpy(&v, p, 4);
        p += 4;
        return v;
    }
    uint64_t u64() {
        need(8);
        uint64_t v;
        std::memcpy(&v, p, 8);
        p += 8;
        return v;
    }
    uint8_t u8() {
        need(1);
        return *p++;
    }
    std::string str(size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(p), n);
        p += n;
        return s;
    }
};

void append_tensor_record(std::string& out, const std::string& name, const Tensor<float>& t) {
    put_u32(out, static_cast<uint32_t>(name.size()));
    out.append(name);
    out.push_back(static_cast<char>(kF32));
    out.push_back(static_cast<char>(t.rank()));
    for (int d : t.shape()) put_u32(out, static_cast<uint32_t>(d));
    out.append(reinterpret_cast<const char*>(t.data()), t.size() * sizeof(float));
}

void append_u64_record(std::string& out, const std::string& name, uint64_t v) {
    put_u32(out, static_cast<uint32_t>(name.size()));
    out.append(name);
    out.push_back(static_cast<char>(kU64));
    out.push_back(0);  // rank 0 scalar
    put_u64(out, v);
}

void append_bytes_record(std::string& out, const std::string& name, const std::string& bytes) {
    put_u32(out, static_cast<uint32_t>(name.size()));
    out.append(name);
    out.push_back(static_cast<char>(kU8));
    out.push_back(1);
    put_u32(out, static_cast<uint32_t>(bytes.size()));
    out.append(bytes);
}

}  // namespace

void write_checkpoint(const std::string& path, const Checkpoint& ck) {
    std::string body;
    uint32_t count = 0;
    auto tensors = [&](const char* group, const std::map<std::string, Tensor<float>>& m) {
        for (const auto& [name, t] : m) {
            append_tensor_record(body, std::string(group) + "/" + name, t);
            ++count;
        }
    };
    tensors("param", ck.params);
    tensors("ema", ck.ema);
    tensors("adam_m", ck.adam_m);
    tensors("adam_v", ck.adam_v);
    append_u64_record(body, "meta/iteration", ck.iteration);
    ++count;
    append_u64_record(body, "meta/adam_t", ck.adam_t);
    ++count;
    append_bytes_record(body, "meta/config", ck.config_text);
    ++count;

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("checkpoint: cannot open for writing: " + path);
    f.write(kMagic, sizeof(kMagic));
    f.write(reinterpret_cast<const char*>(&count), 4);
    f.write(body.data(), static_cast<std::streamsize>(body.size()));
    if (!f) throw std::runtime_error("checkpoint: write failed: " + path);
}

Checkpoint read_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("checkpoint: cannot open: " + path);
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (bytes.size() < sizeof(kMagic) + 4 || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0)
        throw std::runtime_error("checkpoint: bad magic: " + path);

    Reader r{bytes.data() + sizeof(kMagic), bytes.data() + bytes.size(), path};
    const uint32_t count = r.u32();
    Checkpoint ck;
    for (uint32_t i = 0; i < count; ++i) {
        const uint32_t name_len = r.u32();
        const std::string name = r.str(name_len);
        const uint8_t dtype = r.u8();
        const uint8_t rank = r.u8();
        std::vector<int> dims(rank);
        size_t n = 1;
        for (uint8_t d = 0; d < rank; ++d) {
            dims[d] = static_cast<int>(r.u32());
            n *= static_cast<size_t>(dims[d]);
        }
        if (dtype == kF32) {
            r.need(n * sizeof(float));
            Tensor<float> t(dims);
            std::memcpy(t.data(), r.p, n * sizeof(float));
            r.p += n * sizeof(float);
            const size_t slash = name.find('/');
            if (slash == std::string::npos)
                throw std::runtime_error("checkpoint: malformed record name: " + name);
            const std::string group = name.substr(0, slash);
            const std::string key = name.substr(slash + 1);
            if (group == "param")
                ck.params.emplace(key, std::move(t));
            else if (group == "ema")
                ck.ema.emplace(key, std::move(t));
            else if (group == "adam_m")
                ck.adam_m.emplace(key, std::move(t));
            else if (group == "adam_v")
                ck.adam_v.emplace(key, std::move(t));
            else
                throw std::runtime_error("checkpoint: unknown tensor group: " + group);
        } else if (dtype == kU64) {
            const uint64_t v = r.u64();
            if (name == "meta/iteration")
                ck.iteration = v;
            else if (name == "meta/adam_t")
                ck.adam_t = v;
            else
                throw std::runtime_error("checkpoint: unknown counter record: " + name);
        } else if (dtype == kU8) {
            const std::string s = r.str(n);
            if (name == "meta/config")
                ck.config_text = s;
            else
                throw std::runtime_error("checkpoint: unknown byte record: " + name);
        } else {
            throw std::runtime_error("checkpoint: unknown dtype code in " + path);
        }
    }
    if (r.p != r.end) throw std::runtime_error("checkpoint: trailing bytes in " + path);
    return ck;
}

}  // namespace hdseg
