#include "tabledet/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>

namespace tabledet {

namespace {

constexpr char kMagic[8] = {'T', 'B', 'L', 'D', 'E', 'T', 'C', 'K'};
constexpr uint32_t kVersion = 1;

template <typename T>
void write_le(std::ostream& os, T v) {
    // x86/ARM little-endian; byte-swap would go here for big-endian hosts
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_le(std::istream& is, const char* what) {
    T v;
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw std::runtime_error(std::string("checkpoint truncated while reading ") + what);
    return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const NamedParams& params) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open checkpoint for writing: " + path);
    os.write(kMagic, sizeof(kMagic));
    write_le<uint32_t>(os, kVersion);
    write_le<uint64_t>(os, params.size());
    for (const auto& [name, t] : params) {
        write_le<uint32_t>(os, static_cast<uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_le<uint32_t>(os, static_cast<uint32_t>(t.shape().size()));
        for (int d : t.shape()) write_le<uint64_t>(os, static_cast<uint64_t>(d));
        os.write(reinterpret_cast<const char*>(t.data().data()),
                 static_cast<std::streamsize>(t.data().size() * sizeof(double)));
    }
    if (!os) throw std::runtime_error("write failure on checkpoint: " + path);
}

NamedParams read_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open checkpoint: " + path);
    char magic[8];
    is.read(magic, sizeof(magic));
    if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw std::runtime_error("not a checkpoint file (bad magic): " + path);
    uint32_t version = read_le<uint32_t>(is, "version");
    if (version != kVersion)
        throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
    uint64_t count = read_le<uint64_t>(is, "entry count");

    NamedParams out;
    out.reserve(count);
    for (uint64_t e = 0; e < count; ++e) {
        uint32_t name_len = read_le<uint32_t>(is, "name length");
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        if (!is) throw std::runtime_error("checkpoint truncated in entry name");
        uint32_t rank = read_le<uint32_t>(is, "rank");
        std::vector<int> shape(rank);
        int64_t n = 1;
        for (uint32_t d = 0; d < rank; ++d) {
            uint64_t dim = read_le<uint64_t>(is, "dim");
            shape[d] = static_cast<int>(dim);
            n *= shape[d];
        }
        std::vector<double> data(static_cast<size_t>(n));
        is.read(reinterpret_cast<char*>(data.data()),
                static_cast<std::streamsize>(data.size() * sizeof(double)));
        if (!is) throw std::runtime_error("checkpoint truncated in entry '" + name + "'");
        out.emplace_back(name, Tensor::from_data(shape, std::move(data)));
    }
    return out;
}

void load_checkpoint(const std::string& path, NamedParams& dest) {
    NamedParams stored = read_checkpoint(path);
    std::map<std::string, const Tensor*> by_name;
    for (const auto& [name, t] : stored) by_name[name] = &t;
    for (auto& [name, t] : dest) {
        auto it = by_name.find(name);
        if (it == by_name.end())
            throw std::runtime_error("checkpoint missing parameter '" + name + "'");
        if (it->second->shape() != t.shape())
            throw std::runtime_error("checkpoint shape mismatch for '" + name + "': stored " +
                                     shape_str(it->second->shape()) + " vs model " +
                                     shape_str(t.shape()));
        t.mutable_data() = it->second->data();
    }
}

}  // namespace tabledet
