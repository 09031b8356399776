#include "promptot/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "promptot/errors.hpp"

namespace promptot {

namespace {

constexpr char kMagic[5] = {'C', 'K', 'P', 'T', '1'};

void put_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

}  // namespace

void write_checkpoint_file(const std::filesystem::path& file, const NamedTensors& records) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw DataError("cannot open " + file.string() + " for writing");
  out.write(kMagic, 5);
  for (const auto& [name, tensor] : records) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_tensor(out, tensor);
  }
  if (!out) throw DataError("write failed for " + file.string());
}

NamedTensors read_checkpoint_file(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + file.string());
  char magic[5];
  in.read(magic, 5);
  if (in.gcount() != 5) throw FormatError("truncated checkpoint magic", 0);
  if (std::memcmp(magic, kMagic, 5) != 0) throw FormatError("bad checkpoint magic", 0);
  std::size_t offset = 5;
  NamedTensors records;
  while (true) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (in.gcount() == 0) break;  // clean end of container
    if (in.gcount() != 4) throw FormatError("truncated record name length", offset);
    const std::uint32_t len = static_cast<std::uint32_t>(b[0]) |
                              (static_cast<std::uint32_t>(b[1]) << 8) |
                              (static_cast<std::uint32_t>(b[2]) << 16) |
                              (static_cast<std::uint32_t>(b[3]) << 24);
    offset += 4;
    if (len > 4096) throw FormatError("implausible record name length", offset - 4);
    std::string name(len, '\0');
    in.read(name.data(), len);
    if (in.gcount() != static_cast<std::streamsize>(len)) {
      throw FormatError("truncated record name", offset);
    }
    offset += len;
    Tensor t = read_tensor(in, offset);
    offset += 4 + 4 + 4 * t.rank() + 8 * t.size();
    records.emplace_back(std::move(name), std::move(t));
  }
  return records;
}

const Tensor& find_record(const NamedTensors& records, const std::string& name) {
  for (const auto& [n, t] : records) {
    if (n == name) return t;
  }
  throw DataError("checkpoint record `" + name + "` not found");
}

bool has_record(const NamedTensors& records, const std::string& name) {
  for (const auto& [n, t] : records) {
    if (n == name) return true;
  }
  return false;
}

Tensor text_to_tensor(const std::string& text) {
  Tensor t({text.size()});
  for (std::size_t i = 0; i < text.size(); ++i) {
    t[i] = static_cast<double>(static_cast<unsigned char>(text[i]));
  }
  return t;
}

std::string tensor_to_text(const Tensor& t) {
  std::string s(t.size(), '\0');
  for (std::size_t i = 0; i < t.size(); ++i) {
    s[i] = static_cast<char>(static_cast<unsigned char>(t[i]));
  }
  return s;
}

}  // namespace promptot
