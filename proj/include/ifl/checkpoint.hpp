#pragma once

#include <string>
#include <vector>

#include "ifl/eval.hpp"
#include "ifl/gpmem.hpp"
#include "ifl/model.hpp"

namespace ifl {

struct CheckpointState {
  Network net;
  std::vector<GradientMemory> memories;
  ClassStats stats;
};

// Little-endian binary: magic "IFLR", version u32, then length-prefixed named
// f64 tensors. Layout is documented in docs/FORMATS.md. Writes are atomic
// (temp file + rename).
void save_checkpoint(const std::string& path, const Network& net,
                     const std::vector<GradientMemory>& memories,
                     const ClassStats& stats);

CheckpointState load_checkpoint(const std::string& path);

}  // namespace ifl
