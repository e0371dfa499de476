#pragma once

#include <cstdint>
#include <string>

#include "relstm/model.hpp"

namespace relstm {

inline constexpr std::uint32_t kCheckpointVersion = 1;

// Binary layout, all little-endian:
//   magic "RLSM", u32 version,
//   u64 config length + canonical JSON config,
//   u64 parameter count, then per parameter:
//     u64 path length + path, u32 rank, u64 extents[rank], raw f64 payload,
//   u64 stat count with the same record layout (batch-norm running stats),
//   u64 RNG-state length + decimal mt19937_64 state.
// Round-trips are byte-identical.
void save_checkpoint(const Model& model, const std::string& path);
Model load_checkpoint(const std::string& path);

// Plain parameter loading between models of identical architecture (how one
// stream seeds the other). Copies parameters and running statistics; the
// target keeps its own config and RNG.
void load_params_into(Model& model, const std::string& path);

}  // namespace relstm
