#pragma once

// Binary checkpoint layout (little-endian):
//   8 bytes  magic "GCTCKPT\0"
//   u32      format version
//   u64      header length L
//   L bytes  JSON header {"format_version","model","vocab","params":[{"name","rows","cols"}],"extra"}
//   f64[]    parameter values, row-major, in header order

#include "gct/models/model.hpp"

#include "json.hpp"

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace gct::models {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ModelSpec spec;
  Vocab vocab;
  nlohmann::json extra;
  std::vector<std::pair<std::string, Matrix>> params;
};

void save_checkpoint(const std::filesystem::path& path, const Model& model,
                     const nlohmann::json& extra = nlohmann::json::object());
/// Throws StructuralError on a malformed or foreign file.
Checkpoint read_checkpoint(const std::filesystem::path& path);
/// Copies values by name. Throws ContractError on missing names or shape mismatch.
void load_parameters(ParameterStore& store, const Checkpoint& ckpt);

}  // namespace gct::models
