#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "ddipnet/params.hpp"

namespace ddipnet {

/// Checkpoint on disk: a text manifest plus one little-endian float32 blob.
///
///   ddipnet-checkpoint 1
///   blob <file name, relative to the manifest>
///   meta <key> <value to end of line>
///   tensor <name> <d0>x<d1>x... <byte offset>
///
/// Tensors are stored back to back in manifest order.
struct Checkpoint {
    std::map<std::string, std::string> meta;
    ParamSet tensors;
};

/// Writes `manifest` and a sibling blob named like the manifest with a
/// ".bin" extension. Throws IoError when either file cannot be written.
void write_checkpoint(const std::filesystem::path& manifest, const Checkpoint& ckpt);

/// Throws IoError on a missing file and DataError on a malformed manifest or
/// a short blob.
Checkpoint read_checkpoint(const std::filesystem::path& manifest);

/// For every tensor `name` in `target`, copies the values of
/// `source[prefix + name]`. Shapes must match.
void restore_params(ParamSet& target, const ParamSet& source, const std::string& prefix);

/// Adds every entry of `params` to `ckpt` under `prefix`.
void store_params(Checkpoint& ckpt, const ParamSet& params, const std::string& prefix);

}  // namespace ddipnet
