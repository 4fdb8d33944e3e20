#include "dmh/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <vector>

namespace dmh {

namespace {

constexpr char kMagic[4] = {'D', 'M', 'H', '1'};
constexpr uint32_t kVersion = 1;

void write_u32(std::ofstream& out, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t read_u32(std::ifstream& in, const std::string& path) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  DMH_CHECK_T(ParseError, in.good(), "truncated checkpoint ", path);
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

}  // namespace

void save_checkpoint(const ParameterRegistry<float>& params, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  DMH_CHECK_T(ParseError, out.good(), "cannot open ", path, " for writing");
  out.write(kMagic, 4);
  write_u32(out, kVersion);
  write_u32(out, static_cast<uint32_t>(params.entries().size()));
  for (const auto& e : params.entries()) {
    write_u32(out, static_cast<uint32_t>(e.name.size()));
    out.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    const auto& shape = e.tensor.shape();
    write_u32(out, static_cast<uint32_t>(shape.size()));
    for (int64_t d : shape) write_u32(out, static_cast<uint32_t>(d));
    static_assert(sizeof(float) == 4, "float must be 32-bit");
    out.write(reinterpret_cast<const char*>(e.tensor.data()),
              static_cast<std::streamsize>(e.tensor.values().size() * sizeof(float)));
  }
  out.flush();
  DMH_CHECK_T(ParseError, out.good(), "write to ", path, " failed");
}

void load_checkpoint(ParameterRegistry<float>& params, const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  DMH_CHECK_T(ParseError, in.good(), "cannot open checkpoint ", path);
  char magic[4];
  in.read(magic, 4);
  DMH_CHECK_T(ParseError, in.good() && std::memcmp(magic, kMagic, 4) == 0,
              "not a checkpoint file: ", path);
  uint32_t version = read_u32(in, path);
  DMH_CHECK_T(ParseError, version == kVersion, "unsupported checkpoint version ", version,
              " in ", path);
  uint32_t count = read_u32(in, path);
  DMH_CHECK_T(ParseError, count == params.entries().size(), "checkpoint has ", count,
              " entries, model expects ", params.entries().size());
  for (uint32_t i = 0; i < count; ++i) {
    uint32_t name_len = read_u32(in, path);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    DMH_CHECK_T(ParseError, in.good(), "truncated checkpoint ", path);
    uint32_t rank = read_u32(in, path);
    Shape shape(rank);
    for (uint32_t r = 0; r < rank; ++r) shape[r] = static_cast<int64_t>(read_u32(in, path));
    auto& t = params.get(name);
    DMH_CHECK_T(ParseError, t.shape() == shape, "checkpoint shape mismatch for ", name);
    in.read(reinterpret_cast<char*>(t.data()),
            static_cast<std::streamsize>(t.values().size() * sizeof(float)));
    DMH_CHECK_T(ParseError, in.good(), "truncated checkpoint ", path);
  }
}

}  // namespace dmh
