#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "casdet/numerics/optim.hpp"
#include "casdet/numerics/tensor.hpp"

namespace casdet::numerics {

// Text checkpoint, version 1:
//
//   casdet-checkpoint 1
//   tensors <count>
//   tensor <name> <rank> <dim_0> ... <dim_rank-1>
//   <values as C99 hex floats, up to 8 per line>
//   ...
//   end
//
// Hex floats make the round trip exact and the file byte-stable.
struct NamedTensor {
  std::string name;
  Tensor tensor;
};

inline constexpr int kCheckpointVersion = 1;

void write_checkpoint(std::ostream& os, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> read_checkpoint(std::istream& is);

void save_checkpoint(const std::filesystem::path& path,
                     std::span<const Parameter> params);

// Copies stored values into `params`. Every parameter must be present with a
// matching shape and the file may not hold extra tensors.
void load_checkpoint(const std::filesystem::path& path,
                     std::span<const Parameter> params);

}  // namespace casdet::numerics
