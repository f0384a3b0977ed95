#include "casdet/numerics/checkpoint.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>

#include "casdet/error.hpp"

namespace casdet::numerics {

namespace {

constexpr const char* kMagic = "casdet-checkpoint";

std::string hex_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%a", v);
  return buf;
}

}  // namespace

void write_checkpoint(std::ostream& os, const std::vector<NamedTensor>& tensors) {
  os << kMagic << ' ' << kCheckpointVersion << '\n';
  os << "tensors " << tensors.size() << '\n';
  for (const auto& [name, t] : tensors) {
    if (name.empty() || name.find_first_of(" \t\n") != std::string::npos) {
      throw CheckpointError("invalid tensor name '" + name + "'");
    }
    os << "tensor " << name << ' ' << t.rank();
    for (std::size_t d : t.shape()) os << ' ' << d;
    os << '\n';
    auto data = t.data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      os << hex_double(data[i]);
      os << ((i % 8 == 7 || i + 1 == data.size()) ? '\n' : ' ');
    }
  }
  os << "end\n";
}

std::vector<NamedTensor> read_checkpoint(std::istream& is) {
  std::string magic;
  int version = 0;
  if (!(is >> magic >> version) || magic != kMagic) {
    throw CheckpointError("not a casdet checkpoint");
  }
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " +
                          std::to_string(version));
  }
  std::string word;
  std::size_t count = 0;
  if (!(is >> word >> count) || word != "tensors") {
    throw CheckpointError("missing tensor count");
  }
  std::vector<NamedTensor> out;
  for (std::size_t n = 0; n < count; ++n) {
    std::string name;
    std::size_t rank = 0;
    if (!(is >> word >> name >> rank) || word != "tensor") {
      throw CheckpointError("malformed header for tensor #" + std::to_string(n));
    }
    Shape shape(rank);
    for (auto& d : shape) {
      if (!(is >> d) || d == 0) {
        throw CheckpointError("bad shape for tensor '" + name + "'");
      }
    }
    std::vector<double> values(shape_numel(shape));
    for (double& v : values) {
      if (!(is >> word)) {
        throw CheckpointError("truncated values for tensor '" + name + "'");
      }
      char* end = nullptr;
      v = std::strtod(word.c_str(), &end);
      if (end == word.c_str() || *end != '\0') {
        throw CheckpointError("bad value '" + word + "' in tensor '" + name + "'");
      }
    }
    out.push_back({name, Tensor(std::move(shape), std::move(values))});
  }
  if (!(is >> word) || word != "end") {
    throw CheckpointError("missing end marker");
  }
  return out;
}

void save_checkpoint(const std::filesystem::path& path,
                     std::span<const Parameter> params) {
  std::vector<NamedTensor> tensors;
  for (const Parameter& p : params) {
    const Tensor& t = p.var.value();
    tensors.push_back(
        {p.name, Tensor(t.shape(), std::vector<double>(t.data().begin(), t.data().end()))});
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw CheckpointError("cannot open '" + path.string() + "' for writing");
  write_checkpoint(os, tensors);
  if (!os) throw CheckpointError("failed writing '" + path.string() + "'");
}

void load_checkpoint(const std::filesystem::path& path,
                     std::span<const Parameter> params) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open checkpoint '" + path.string() + "'");
  std::vector<NamedTensor> tensors = read_checkpoint(is);
  std::map<std::string, const Tensor*> by_name;
  for (const auto& nt : tensors) by_name[nt.name] = &nt.tensor;
  for (const Parameter& p : params) {
    auto it = by_name.find(p.name);
    if (it == by_name.end()) {
      throw CheckpointError("checkpoint lacks parameter '" + p.name +
                            "' required by the configured architecture");
    }
    if (it->second->shape() != p.var.shape()) {
      throw CheckpointError("parameter '" + p.name + "' has shape " +
                            shape_to_string(it->second->shape()) +
                            " in checkpoint but " +
                            shape_to_string(p.var.shape()) + " in the model");
    }
  }
  if (tensors.size() != params.size()) {
    for (const auto& nt : tensors) {
      bool known = false;
      for (const Parameter& p : params) known = known || p.name == nt.name;
      if (!known) {
        throw CheckpointError("checkpoint tensor '" + nt.name +
                              "' does not exist in the configured architecture");
      }
    }
  }
  for (const Parameter& p : params) {
    auto src = by_name[p.name]->data();
    auto dst = p.var.node()->value.data();
    std::copy(src.begin(), src.end(), dst.begin());
  }
}

}  // namespace casdet::numerics
