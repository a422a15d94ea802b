#pragma once

#include <filesystem>
#include <iosfwd>
#include <string_view>

#include "msl/param_set.hpp"

namespace msl {

/// Binary parameter file: the 8-byte magic, then one record per parameter in
/// ParamSet order until end of file. A record is
///   u32 name length, name bytes, u32 rank, rank x u64 dims,
///   product(dims) x f64 values (row-major).
/// All integers and floats are little-endian.
inline constexpr std::string_view kCheckpointMagic = "MSLCKPT1";

void write_checkpoint(std::ostream& out, const ParamSet& params);
void write_checkpoint(const std::filesystem::path& path, const ParamSet& params);

/// Throws FormatError on a magic mismatch or a truncated record.
ParamSet read_checkpoint(std::istream& in);
ParamSet read_checkpoint(const std::filesystem::path& path);

}  // namespace msl
