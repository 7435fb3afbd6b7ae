#include "mdm/checkpoint.hpp"

#include "mdm/errors.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>

namespace mdm::nn {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

constexpr char kMagic[4] = {'M', 'D', 'M', '1'};

void write_u32(std::ostream& os, std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), sizeof v); }

bool read_exact(std::istream& is, void* dst, std::size_t n) {
    is.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
    return static_cast<std::size_t>(is.gcount()) == n;
}

std::uint32_t read_u32(std::istream& is, const std::string& what) {
    std::uint32_t v = 0;
    if (!read_exact(is, &v, sizeof v)) throw LoadError("checkpoint truncated while reading " + what);
    return v;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, std::span<Parameter* const> params) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw LoadError("cannot open checkpoint for writing: " + path.string());
    os.write(kMagic, sizeof kMagic);
    write_u32(os, kCheckpointVersion);
    for (const Parameter* p : params) {
        write_u32(os, static_cast<std::uint32_t>(p->name.size()));
        os.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
        write_u32(os, static_cast<std::uint32_t>(p->shape.size()));
        for (std::size_t d : p->shape) write_u32(os, static_cast<std::uint32_t>(d));
        os.write(reinterpret_cast<const char*>(p->value.data()),
                 static_cast<std::streamsize>(p->value.size() * sizeof(double)));
    }
    if (!os) throw LoadError("failed writing checkpoint " + path.string());
}

std::vector<Parameter> load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw LoadError("cannot open checkpoint: " + path.string());
    char magic[4];
    if (!read_exact(is, magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof magic) != 0) {
        throw LoadError("not a checkpoint (bad magic): " + path.string());
    }
    const std::uint32_t version = read_u32(is, "version");
    if (version != kCheckpointVersion) {
        throw LoadError("unsupported checkpoint version " + std::to_string(version));
    }
    std::vector<Parameter> out;
    while (is.peek() != std::char_traits<char>::eof()) {
        const std::uint32_t name_len = read_u32(is, "name length");
        std::string name(name_len, '\0');
        if (!read_exact(is, name.data(), name_len)) throw LoadError("checkpoint truncated in parameter name");
        const std::uint32_t rank = read_u32(is, "rank of " + name);
        ad::Shape shape;
        for (std::uint32_t r = 0; r < rank; ++r) shape.push_back(read_u32(is, "dims of " + name));
        Parameter p(std::move(name), std::move(shape));
        if (!read_exact(is, p.value.data(), p.value.size() * sizeof(double))) {
            throw LoadError("checkpoint truncated in payload of " + p.name);
        }
        out.push_back(std::move(p));
    }
    return out;
}

void assign_parameters(std::span<const Parameter> loaded, std::span<Parameter* const> params) {
    std::map<std::string, const Parameter*> by_name;
    for (const Parameter& p : loaded) by_name[p.name] = &p;
    for (Parameter* p : params) {
        auto it = by_name.find(p->name);
        if (it == by_name.end()) throw LoadError("checkpoint has no parameter '" + p->name + "'");
        if (it->second->shape != p->shape) {
            throw LoadError("shape mismatch for '" + p->name + "': checkpoint " + ad::to_string(it->second->shape) +
                            ", model " + ad::to_string(p->shape));
        }
        p->value = it->second->value;
        p->zero_grad();
    }
}

}  // namespace mdm::nn
