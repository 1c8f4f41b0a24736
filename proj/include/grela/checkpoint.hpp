#pragma once

// Single-file checkpoint:
//
//   GRELA-CKPT 1\n
//   manifest_bytes <n>\n
//   <n bytes of manifest text>
//   <raw little-endian IEEE-754 doubles, parameters back to back>
//
// The manifest holds "key = value" metadata lines, a "[config]" section with
// the full run config, and a "[parameters]" section with one
// "<name> <shape> <offset> <count>" line per tensor (offset and count in
// doubles, shape like 64x256).

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "grela/config.hpp"
#include "grela/model.hpp"

namespace grela {

inline constexpr int kCheckpointVersion = 1;

struct CheckpointData {
  RunConfig config;
  std::uint64_t seed = 0;
  std::map<std::string, std::string> meta;
  std::vector<std::pair<std::string, Tensor>> params;
};

void save_checkpoint(const std::string& path, const GrelaModel& model, const RunConfig& config, std::uint64_t seed,
                     const std::map<std::string, std::string>& meta = {});
// Missing file: DataError with class "checkpoint-not-found". Malformed
// content: FormatError.
CheckpointData read_checkpoint(const std::string& path);
// Copies parameters into an existing model; names and shapes must match.
void load_parameters(GrelaModel& model, const CheckpointData& data);
// Builds a model from the stored config and loads its parameters.
GrelaModel restore_model(const CheckpointData& data);

}  // namespace grela
