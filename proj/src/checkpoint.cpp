#include "nplab/checkpoint.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace nplab {

namespace {

constexpr const char* kHeader = "npcheckpoint v1";

std::runtime_error format_error(const std::string& what) {
  return std::runtime_error("checkpoint: " + what);
}

}  // namespace

void write_checkpoint(std::ostream& os, const Checkpoint& checkpoint) {
  os << kHeader << '\n';
  for (const auto& [key, value] : checkpoint.metadata) {
    if (key.find_first_of("= \n") != std::string::npos || value.find('\n') != std::string::npos) {
      throw format_error("invalid metadata entry '" + key + "'");
    }
    os << key << '=' << value << '\n';
  }
  os << "tensors " << checkpoint.tensors.size() << '\n';
  char buf[64];
  for (const auto& [name, tensor] : checkpoint.tensors) {
    os << "tensor " << name << ' ' << tensor.rank();
    for (auto d : tensor.shape()) os << ' ' << d;
    os << '\n';
    for (double v : tensor.values()) {
      std::snprintf(buf, sizeof buf, "%a\n", v);
      os << buf;
    }
  }
}

Checkpoint read_checkpoint(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != kHeader) throw format_error("missing header");
  Checkpoint checkpoint;
  std::size_t count = 0;
  while (true) {
    if (!std::getline(is, line)) throw format_error("truncated metadata");
    if (line.rfind("tensors ", 0) == 0) {
      count = std::stoul(line.substr(8));
      break;
    }
    auto eq = line.find('=');
    if (eq == std::string::npos) throw format_error("bad metadata line '" + line + "'");
    checkpoint.metadata[line.substr(0, eq)] = line.substr(eq + 1);
  }
  for (std::size_t t = 0; t < count; ++t) {
    if (!std::getline(is, line)) throw format_error("truncated tensor list");
    std::istringstream head(line);
    std::string tag, name;
    std::size_t rank = 0;
    head >> tag >> name >> rank;
    if (tag != "tensor" || !head) throw format_error("bad tensor header '" + line + "'");
    Shape shape(rank);
    for (auto& d : shape) head >> d;
    if (!head) throw format_error("bad shape in '" + line + "'");
    std::vector<double> values(numel(shape));
    for (auto& v : values) {
      if (!std::getline(is, line)) throw format_error("truncated values for " + name);
      char* end = nullptr;
      v = std::strtod(line.c_str(), &end);
      if (end == line.c_str()) throw format_error("bad value '" + line + "' in " + name);
    }
    checkpoint.tensors.emplace_back(name, Tensor(std::move(shape), std::move(values)));
  }
  return checkpoint;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw std::runtime_error("checkpoint: cannot open " + path.string());
  write_checkpoint(os, checkpoint);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("checkpoint: cannot open " + path.string());
  return read_checkpoint(is);
}

}  // namespace nplab
