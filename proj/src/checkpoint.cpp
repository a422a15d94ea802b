#include "msl/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace msl {

namespace {

template <typename U>
void put_le(std::ostream& out, U v) {
  std::array<char, sizeof(U)> bytes;
  for (std::size_t i = 0; i < sizeof(U); ++i) bytes[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(bytes.data(), bytes.size());
}

template <typename U>
U get_le(std::istream& in, const char* what) {
  std::array<unsigned char, sizeof(U)> bytes;
  if (!in.read(reinterpret_cast<char*>(bytes.data()), bytes.size())) {
    throw FormatError(std::string("checkpoint truncated while reading ") + what);
  }
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(bytes[i]) << (8 * i);
  return v;
}

}  // namespace

void write_checkpoint(std::ostream& out, const ParamSet& params) {
  out.write(kCheckpointMagic.data(), kCheckpointMagic.size());
  for (const auto& [name, t] : params) {
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (Index d : t.shape()) put_le<std::uint64_t>(out, static_cast<std::uint64_t>(d));
    for (Index i = 0; i < t.size(); ++i) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(t[i]));
  }
  if (!out) throw FormatError("failed writing checkpoint");
}

void write_checkpoint(const std::filesystem::path& path, const ParamSet& params) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open checkpoint for writing: " + path.string());
  write_checkpoint(out, params);
}

ParamSet read_checkpoint(std::istream& in) {
  std::array<char, kCheckpointMagic.size()> magic{};
  if (!in.read(magic.data(), magic.size()) ||
      std::string_view(magic.data(), magic.size()) != kCheckpointMagic) {
    throw FormatError("checkpoint magic mismatch");
  }
  ParamSet params;
  while (in.peek() != std::char_traits<char>::eof()) {
    const auto name_len = get_le<std::uint32_t>(in, "name length");
    std::string name(name_len, '\0');
    if (!in.read(name.data(), name_len)) throw FormatError("checkpoint truncated in parameter name");
    const auto rank = get_le<std::uint32_t>(in, "rank");
    Shape shape;
    for (std::uint32_t i = 0; i < rank; ++i) {
      const auto d = get_le<std::uint64_t>(in, "dimension");
      if (d == 0 || d > (1ULL << 40)) throw FormatError("checkpoint has invalid dimension for " + name);
      shape.push_back(static_cast<Index>(d));
    }
    Tensor t(shape);
    for (Index i = 0; i < t.size(); ++i) t[i] = std::bit_cast<double>(get_le<std::uint64_t>(in, "values"));
    params.add(std::move(name), std::move(t));
  }
  return params;
}

ParamSet read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint: " + path.string());
  return read_checkpoint(in);
}

}  // namespace msl
