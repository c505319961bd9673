// SPDX-License-Identifier: Apache-2.0

#include "rsr/cli/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <fstream>
#include <sstream>

#include "rsr/analysis/export.hpp"

namespace rsr::cli {

namespace {

constexpr char kMagic[8] = {'R', 'S', 'R', 'C', 'K', 'P', 'T', '\0'};

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

class Reader {
 public:
  explicit Reader(const std::string& b) : bytes_(b) {}

  std::uint64_t u(int width) {
    need(static_cast<std::size_t>(width));
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + static_cast<std::size_t>(i)])) << (8 * i);
    pos_ += static_cast<std::size_t>(width);
    return v;
  }
  std::string str(std::size_t n) {
    need(n);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw CheckpointError("checkpoint is truncated");
  }
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string encode_checkpoint(const std::string& config_text, const ParamList& params) {
  std::string out(kMagic, sizeof kMagic);
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(config_text.size()));
  out += config_text;
  put_u32(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, t] : params) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put_u32(out, static_cast<std::uint32_t>(t.shape().size()));
    for (auto d : t.shape()) put_u64(out, d);
    for (double v : t.values()) put_u64(out, std::bit_cast<std::uint64_t>(v));
  }
  put_u64(out, fnv1a64(out));
  return out;
}

Checkpoint decode_checkpoint(const std::string& bytes) {
  if (bytes.size() < sizeof kMagic + 4 + 8 || !std::equal(kMagic, kMagic + sizeof kMagic, bytes.begin()))
    throw CheckpointError("not a checkpoint (bad magic)");
  const auto body = bytes.substr(0, bytes.size() - 8);
  Reader tail(bytes.substr(bytes.size() - 8));
  if (tail.u(8) != fnv1a64(body)) throw CheckpointError("checkpoint checksum mismatch (file is corrupt)");
  Reader r(body);
  r.str(sizeof kMagic);
  const auto version = r.u(4);
  if (version != kCheckpointVersion)
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  Checkpoint ck;
  ck.config_text = r.str(r.u(4));
  const auto count = r.u(4);
  for (std::uint64_t i = 0; i < count; ++i) {
    StoredTensor t;
    t.name = r.str(r.u(4));
    const auto rank = r.u(4);
    std::size_t n = 1;
    for (std::uint64_t k = 0; k < rank; ++k) {
      t.shape.push_back(r.u(8));
      n *= t.shape.back();
    }
    if (n > body.size()) throw CheckpointError("checkpoint tensor " + t.name + " is larger than the file");
    t.values.resize(n);
    for (auto& v : t.values) v = std::bit_cast<double>(r.u(8));
    ck.tensors.push_back(std::move(t));
  }
  if (r.pos() != body.size()) throw CheckpointError("checkpoint has trailing bytes");
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const std::string& config_text, const ParamList& params) {
  analysis::write_text_file(path, encode_checkpoint(config_text, params));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot open checkpoint " + path.string());
  std::ostringstream s;
  s << f.rdbuf();
  return decode_checkpoint(s.str());
}

void apply_checkpoint(const Checkpoint& ckpt, const ParamList& params) {
  if (ckpt.tensors.size() != params.size())
    throw CheckpointError("checkpoint has " + std::to_string(ckpt.tensors.size()) + " tensors, model expects " +
                          std::to_string(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& [name, t] = params[i];
    const auto& s = ckpt.tensors[i];
    if (s.name != name || s.shape != t.shape())
      throw CheckpointError("checkpoint tensor " + s.name + " " + shape_str(s.shape) + " does not match " + name + " " +
                            shape_str(t.shape()));
    auto dst = Tensor(t).mutable_values();
    std::copy(s.values.begin(), s.values.end(), dst.begin());
  }
}

}  // namespace rsr::cli
