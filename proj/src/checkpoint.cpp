#include <cstdint>
#include <cstring>
#include <fstream>

#include "ecnn/errors.hpp"
#include "ecnn/netspec.hpp"

namespace ecnn {

namespace {

constexpr char kMagic[5] = {'E', 'C', 'N', 'N', '1'};

void write_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 4);
}

void write_u64(std::ostream& os, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 8);
}

void write_f64(std::ostream& os, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    write_u64(os, bits);
}

std::uint32_t read_u32(std::istream& is) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4)) throw DataError("truncated checkpoint");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
}

std::uint64_t read_u64(std::istream& is) {
    unsigned char b[8];
    if (!is.read(reinterpret_cast<char*>(b), 8)) throw DataError("truncated checkpoint");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

double read_f64(std::istream& is) {
    const std::uint64_t bits = read_u64(is);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
}

void write_tensor(std::ostream& os, const std::string& name, const Tensor& t) {
    write_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u32(os, static_cast<std::uint32_t>(t.rank()));
    for (int i = 0; i < t.rank(); ++i) write_u32(os, static_cast<std::uint32_t>(t.extent(i)));
    for (std::int64_t i = 0; i < t.size(); ++i) write_f64(os, t[i]);
}

}  // namespace

void save_checkpoint(const Model& m, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open checkpoint for writing: " + path);

    os.write(kMagic, 5);
    const std::string spec_text = arch_to_string(m.spec);
    write_u32(os, static_cast<std::uint32_t>(spec_text.size()));
    os.write(spec_text.data(), static_cast<std::streamsize>(spec_text.size()));
    write_u64(os, m.seed);

    // learnable parameters and BN buffers, merged in name order
    std::map<std::string, const Tensor*> entries;
    for (auto& [name, tensor] : m.param_map()) entries[name] = tensor;
    for (auto& [name, tensor] : m.buffer_map()) entries[name] = tensor;
    for (auto& [name, tensor] : entries) write_tensor(os, name, *tensor);

    if (!os) throw IoError("failed writing checkpoint: " + path);
}

Model load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open checkpoint: " + path);

    char magic[5];
    if (!is.read(magic, 5) || std::memcmp(magic, kMagic, 5) != 0) {
        throw DataError("bad checkpoint magic in " + path);
    }
    const std::uint32_t spec_len = read_u32(is);
    std::string spec_text(spec_len, '\0');
    if (!is.read(spec_text.data(), spec_len)) throw DataError("truncated checkpoint");
    const std::uint64_t seed = read_u64(is);

    Model m = build_model(parse_arch(spec_text), seed);
    std::map<std::string, Tensor*> entries;
    for (auto& [name, tensor] : m.param_map()) entries[name] = tensor;
    for (auto& [name, tensor] : m.buffer_map()) entries[name] = tensor;

    std::size_t loaded = 0;
    while (true) {
        is.peek();
        if (is.eof()) break;
        const std::uint32_t name_len = read_u32(is);
        std::string name(name_len, '\0');
        if (!is.read(name.data(), name_len)) throw DataError("truncated checkpoint");
        const std::uint32_t rank = read_u32(is);
        std::vector<int> shape(rank);
        for (std::uint32_t i = 0; i < rank; ++i) shape[i] = static_cast<int>(read_u32(is));

        const auto it = entries.find(name);
        if (it == entries.end()) throw DataError("unknown tensor '" + name + "' in " + path);
        if (it->second->shape() != shape) {
            throw DataError("tensor '" + name + "' has unexpected shape in " + path);
        }
        for (std::int64_t i = 0; i < it->second->size(); ++i) (*it->second)[i] = read_f64(is);
        ++loaded;
    }
    if (loaded != entries.size()) {
        throw DataError("checkpoint is missing tensors: " + path);
    }
    return m;
}

}  // namespace ecnn
