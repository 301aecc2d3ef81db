#include "longctx/serialize.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace longctx {

namespace {
constexpr char kMagic[8] = {'L', 'C', 'T', 'X', 'C', 'K', 'P', 'T'};

template <typename T>
void write_pod(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T read_pod(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!is) throw std::runtime_error("checkpoint: truncated file");
    return v;
}
}  // namespace

Eigen::MatrixXd as_matrix(const Tensor& t) {
    if (t.dims.size() == 1)
        return Eigen::Map<const Eigen::MatrixXd>(t.data.data(), Eigen::Index(t.dims[0]), 1);
    if (t.dims.size() == 2)
        return Eigen::Map<const Eigen::MatrixXd>(t.data.data(), Eigen::Index(t.dims[0]),
                                                 Eigen::Index(t.dims[1]));
    throw std::runtime_error("checkpoint: unsupported tensor rank");
}

Eigen::VectorXd as_vector(const Tensor& t) { return t.data; }

void save_tensors(const std::string& path, const TensorMap& tensors, uint32_t version) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("checkpoint: cannot open for write: " + path);
    os.write(kMagic, sizeof kMagic);
    write_pod<uint32_t>(os, version);
    write_pod<uint32_t>(os, uint32_t(tensors.size()));
    for (const auto& [name, t] : tensors) {
        write_pod<uint32_t>(os, uint32_t(name.size()));
        os.write(name.data(), std::streamsize(name.size()));
        write_pod<uint32_t>(os, uint32_t(t.dims.size()));
        for (uint64_t d : t.dims) write_pod<uint64_t>(os, d);
        os.write(reinterpret_cast<const char*>(t.data.data()),
                 std::streamsize(sizeof(double) * size_t(t.data.size())));
    }
    if (!os) throw std::runtime_error("checkpoint: write failed: " + path);
}

TensorMap load_tensors(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("checkpoint: cannot open: " + path);
    char magic[8];
    is.read(magic, sizeof magic);
    if (!is || std::memcmp(magic, kMagic, sizeof kMagic) != 0)
        throw std::runtime_error("checkpoint: bad magic: " + path);
    uint32_t version = read_pod<uint32_t>(is);
    if (version != 1) throw std::runtime_error("checkpoint: unsupported version");
    uint32_t count = read_pod<uint32_t>(is);
    TensorMap out;
    for (uint32_t i = 0; i < count; ++i) {
        uint32_t name_len = read_pod<uint32_t>(is);
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        uint32_t rank = read_pod<uint32_t>(is);
        Tensor t;
        uint64_t total = 1;
        for (uint32_t r = 0; r < rank; ++r) {
            uint64_t d = read_pod<uint64_t>(is);
            t.dims.push_back(d);
            total *= d;
        }
        t.data.resize(Eigen::Index(total));
        is.read(reinterpret_cast<char*>(t.data.data()),
                std::streamsize(sizeof(double) * total));
        if (!is) throw std::runtime_error("checkpoint: truncated tensor data");
        out.emplace(std::move(name), std::move(t));
    }
    return out;
}

uint64_t fnv1a_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("fnv1a_file: cannot open: " + path);
    uint64_t h = 0xCBF2'9CE4'8422'2325ULL;
    char buf[4096];
    while (is) {
        is.read(buf, sizeof buf);
        for (std::streamsize i = 0; i < is.gcount(); ++i) {
            h ^= uint64_t(uint8_t(buf[i]));
            h *= 0x0000'0100'0000'01B3ULL;
        }
    }
    return h;
}

}  // namespace longctx
