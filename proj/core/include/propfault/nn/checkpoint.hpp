#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "propfault/nn/tensor.hpp"

namespace propfault::nn {

// Self-describing weight file shared by every trained model in the project.
//
// Layout (all integers little-endian):
//   "PFCKPT01"                         8-byte magic
//   u64 meta_count, then per entry:    u64 len, key bytes, u64 len, value bytes
//   u64 tensor_count, then per tensor: u64 len, name bytes, u64 rank,
//                                      rank x u64 dims, dims-product x f64
//
// Doubles are written as raw IEEE-754 bit patterns, so a load/save round trip
// is bit-exact.
struct Checkpoint {
  std::map<std::string, std::string> meta;
  std::vector<std::pair<std::string, Tensor>> tensors;

  void add(std::string name, Tensor tensor) { tensors.emplace_back(std::move(name), std::move(tensor)); }
  const Tensor& tensor(const std::string& name) const;
  bool has_tensor(const std::string& name) const;
  const std::string& get(const std::string& key) const;

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::string serialize_checkpoint(const Checkpoint& checkpoint);
Checkpoint deserialize_checkpoint(const std::string& bytes, const std::string& origin = "<memory>");

// Shortest decimal text that parses back to the same double.
std::string format_double(double value);
double parse_double(const std::string& text);

}  // namespace propfault::nn
