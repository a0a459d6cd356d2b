#include "propfault/nn/checkpoint.hpp"

#include <bit>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "propfault/error.hpp"

namespace propfault::nn {

namespace {

constexpr char kMagic[8] = {'P', 'F', 'C', 'K', 'P', 'T', '0', '1'};

void put_u64(std::string& out, std::uint64_t v) {
  for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((v >> (8 * b)) & 0xffu));
}

void put_str(std::string& out, const std::string& s) {
  put_u64(out, s.size());
  out += s;
}

class Reader {
 public:
  Reader(const std::string& bytes, std::string origin) : bytes_(bytes), origin_(std::move(origin)) {}

  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int b = 0; b < 8; ++b) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + b])) << (8 * b);
    pos_ += 8;
    return v;
  }

  std::string str() {
    const std::uint64_t len = u64();
    need(len);
    std::string s = bytes_.substr(pos_, len);
    pos_ += len;
    return s;
  }

  double f64() { return std::bit_cast<double>(u64()); }

  void expect_magic() {
    need(sizeof(kMagic));
    if (std::memcmp(bytes_.data() + pos_, kMagic, sizeof(kMagic)) != 0) {
      throw IoError(origin_ + ": not a propfault checkpoint (bad magic)");
    }
    pos_ += sizeof(kMagic);
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::uint64_t n) const {
    if (n > bytes_.size() - pos_) throw IoError(origin_ + ": truncated checkpoint");
  }

  const std::string& bytes_;
  std::string origin_;
  std::size_t pos_ = 0;
};

}  // namespace

const Tensor& Checkpoint::tensor(const std::string& name) const {
  for (const auto& [key, value] : tensors) {
    if (key == name) return value;
  }
  throw IoError("checkpoint: missing tensor '" + name + "'");
}

bool Checkpoint::has_tensor(const std::string& name) const {
  for (const auto& entry : tensors) {
    if (entry.first == name) return true;
  }
  return false;
}

const std::string& Checkpoint::get(const std::string& key) const {
  auto it = meta.find(key);
  if (it == meta.end()) throw IoError("checkpoint: missing metadata key '" + key + "'");
  return it->second;
}

std::string serialize_checkpoint(const Checkpoint& checkpoint) {
  std::string out(kMagic, sizeof(kMagic));
  put_u64(out, checkpoint.meta.size());
  for (const auto& [key, value] : checkpoint.meta) {
    put_str(out, key);
    put_str(out, value);
  }
  put_u64(out, checkpoint.tensors.size());
  for (const auto& [name, tensor] : checkpoint.tensors) {
    put_str(out, name);
    put_u64(out, tensor.rank());
    for (std::size_t d : tensor.shape()) put_u64(out, d);
    for (double v : tensor.values()) put_u64(out, std::bit_cast<std::uint64_t>(v));
  }
  return out;
}

Checkpoint deserialize_checkpoint(const std::string& bytes, const std::string& origin) {
  Reader in(bytes, origin);
  in.expect_magic();
  Checkpoint ck;
  const std::uint64_t meta_count = in.u64();
  for (std::uint64_t m = 0; m < meta_count; ++m) {
    std::string key = in.str();
    ck.meta[key] = in.str();
  }
  const std::uint64_t tensor_count = in.u64();
  for (std::uint64_t t = 0; t < tensor_count; ++t) {
    std::string name = in.str();
    const std::uint64_t rank = in.u64();
    if (rank > 8) throw IoError(origin + ": implausible tensor rank for '" + name + "'");
    std::vector<std::size_t> shape(rank);
    for (auto& d : shape) d = in.u64();
    Tensor tensor(shape);
    for (double& v : tensor.values()) v = in.f64();
    ck.tensors.emplace_back(std::move(name), std::move(tensor));
  }
  if (!in.done()) throw IoError(origin + ": trailing bytes after checkpoint");
  return ck;
}

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  const std::string bytes = serialize_checkpoint(checkpoint);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path.string() + "'");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes, path.string());
}

std::string format_double(double value) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& text) {
  double value = 0.0;
  const char* first = text.data();
  const char* last = text.data() + text.size();
  while (first < last && (*first == ' ' || *first == '\t')) ++first;
  while (last > first && (last[-1] == ' ' || last[-1] == '\t' || last[-1] == '\r')) --last;
  auto res = std::from_chars(first, last, value);
  if (res.ec != std::errc() || res.ptr != last) throw InvalidArgument("not a number: '" + text + "'");
  return value;
}

}  // namespace propfault::nn
