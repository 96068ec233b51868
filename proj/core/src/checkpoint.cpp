#include "vlif/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace vlif {

namespace {

void put_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (is.gcount() != 4) throw ParseError("checkpoint: truncated u32", 0);
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint for writing: " + path);
  f.write("SPKC", 4);
  put_u32(f, 1);
  put_u32(f, static_cast<uint32_t>(ck.manifest_json.size()));
  f.write(ck.manifest_json.data(), static_cast<std::streamsize>(ck.manifest_json.size()));
  put_u32(f, static_cast<uint32_t>(ck.tensors.size()));
  for (const auto& [name, t] : ck.tensors) {
    put_u32(f, static_cast<uint32_t>(name.size()));
    f.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_spkt(f, t);
  }
  if (!f) throw IoError("checkpoint write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ValueError("cannot open checkpoint: " + path);
  char magic[4];
  f.read(magic, 4);
  if (f.gcount() != 4 || std::memcmp(magic, "SPKC", 4) != 0)
    throw ParseError("bad checkpoint magic", 0);
  const uint32_t version = get_u32(f);
  if (version != 1) throw ParseError("unsupported checkpoint version " + std::to_string(version), 4);
  Checkpoint ck;
  const uint32_t mlen = get_u32(f);
  ck.manifest_json.resize(mlen);
  f.read(ck.manifest_json.data(), mlen);
  if (f.gcount() != static_cast<std::streamsize>(mlen))
    throw ParseError("checkpoint: truncated manifest", 12);
  const uint32_t count = get_u32(f);
  for (uint32_t i = 0; i < count; ++i) {
    const uint32_t nlen = get_u32(f);
    std::string name(nlen, '\0');
    f.read(name.data(), nlen);
    if (f.gcount() != static_cast<std::streamsize>(nlen))
      throw ParseError("checkpoint: truncated tensor name", 0);
    ck.tensors.emplace_back(std::move(name), read_spkt(f));
  }
  return ck;
}

}  // namespace vlif
