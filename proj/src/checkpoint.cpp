#include "poisonlab/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <vector>

#include "poisonlab/errors.hpp"

namespace poisonlab {

static_assert(std::endian::native == std::endian::little,
              "checkpoint payload is written as native little-endian");

namespace {

constexpr char kMagic[4] = {'B', 'D', 'L', '1'};

void write_u32(std::ostream& out, uint32_t v) {
    const char b[4] = {static_cast<char>(v & 0xFF), static_cast<char>((v >> 8) & 0xFF),
                       static_cast<char>((v >> 16) & 0xFF), static_cast<char>((v >> 24) & 0xFF)};
    out.write(b, 4);
}

uint32_t read_u32(std::istream& in, const std::string& path) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) throw FormatError("checkpoint truncated: " + path);
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

}  // namespace

void save_checkpoint(const SmallConvNet& net, int epoch, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open checkpoint for writing: " + path);
    out.write(kMagic, 4);
    const auto params = net.parameters();
    write_u32(out, static_cast<uint32_t>(epoch));
    write_u32(out, static_cast<uint32_t>(params.size()));
    for (const Tensor4* p : params) {
        write_u32(out, static_cast<uint32_t>(p->n));
        write_u32(out, static_cast<uint32_t>(p->c));
        write_u32(out, static_cast<uint32_t>(p->h));
        write_u32(out, static_cast<uint32_t>(p->w));
        out.write(reinterpret_cast<const char*>(p->data.data()),
                  static_cast<std::streamsize>(p->size() * sizeof(float)));
    }
    if (!out) throw IoError("checkpoint write failed: " + path);
}

int load_checkpoint(SmallConvNet& net, const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint: " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0)
        throw FormatError("bad checkpoint magic (expected BDL1): " + path);
    const uint32_t epoch = read_u32(in, path);
    const uint32_t count = read_u32(in, path);
    auto params = net.parameters();
    if (count != params.size())
        throw FormatError("checkpoint tensor count mismatch: " + path);

    std::vector<std::vector<float>> staged(params.size());
    for (size_t t = 0; t < params.size(); ++t) {
        const uint32_t dims[4] = {read_u32(in, path), read_u32(in, path),
                                  read_u32(in, path), read_u32(in, path)};
        const Tensor4* p = params[t];
        if (dims[0] != static_cast<uint32_t>(p->n) || dims[1] != static_cast<uint32_t>(p->c) ||
            dims[2] != static_cast<uint32_t>(p->h) || dims[3] != static_cast<uint32_t>(p->w))
            throw FormatError("checkpoint tensor shape mismatch: " + path);
        staged[t].resize(p->size());
        in.read(reinterpret_cast<char*>(staged[t].data()),
                static_cast<std::streamsize>(staged[t].size() * sizeof(float)));
        if (!in) throw FormatError("checkpoint truncated: " + path);
    }
    for (size_t t = 0; t < params.size(); ++t) params[t]->data = std::move(staged[t]);
    return static_cast<int>(epoch);
}

}  // namespace poisonlab
