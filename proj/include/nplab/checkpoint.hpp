#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "nplab/tensor.hpp"

namespace nplab {

// Text checkpoint:
//
//   npcheckpoint v1
//   key=value            (zero or more metadata lines)
//   tensors <count>
//   tensor <name> <rank> <extent>...
//   <one value per line, C99 hexadecimal float, row-major>
//
// Hexadecimal floats round-trip every double exactly.
struct Checkpoint {
  std::map<std::string, std::string> metadata;
  std::vector<std::pair<std::string, Tensor>> tensors;
};

void write_checkpoint(std::ostream& os, const Checkpoint& checkpoint);
Checkpoint read_checkpoint(std::istream& is);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace nplab
