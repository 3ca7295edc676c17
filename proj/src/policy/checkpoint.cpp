// Copyright 2026 The mahalign Authors
// SPDX-License-Identifier: Apache-2.0

#include "policy/checkpoint.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace mah::policy {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'M', 'A', 'H', 'C', 'K', 'P', 'T', '\0'};

class Writer {
 public:
  template <class T>
  void pod(const T& v) {
    const auto* p = reinterpret_cast<const char*>(&v);
    buf_.insert(buf_.end(), p, p + sizeof(T));
  }
  void str(const std::string& s) {
    pod(static_cast<std::uint32_t>(s.size()));
    buf_.insert(buf_.end(), s.begin(), s.end());
  }
  void raw(const void* data, std::size_t n) {
    const auto* p = static_cast<const char*>(data);
    buf_.insert(buf_.end(), p, p + n);
  }
  std::vector<char>& bytes() { return buf_; }

 private:
  std::vector<char> buf_;
};

class Reader {
 public:
  Reader(const std::vector<char>& buf, std::size_t end) : buf_(buf), end_(end) {}
  template <class T>
  T pod() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, buf_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string str() {
    const auto n = pod<std::uint32_t>();
    need(n);
    std::string s(buf_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  void raw(void* out, std::size_t n) {
    need(n);
    std::memcpy(out, buf_.data() + pos_, n);
    pos_ += n;
  }
  bool done() const { return pos_ == end_; }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > end_) fail(ErrorCode::io, "checkpoint truncated");
  }
  const std::vector<char>& buf_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

std::uint32_t crc_of(const char* data, std::size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, reinterpret_cast<const Bytef*>(data), static_cast<uInt>(n));
  return static_cast<std::uint32_t>(crc);
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
  Writer w;
  w.raw(kMagic, sizeof kMagic);
  w.pod(kCheckpointVersion);
  w.str(c.kind);
  for (int v : {c.dims.vocab_size, c.dims.hidden_dim, c.dims.layers,
                c.dims.attn_heads, c.dims.max_positions,
                c.dims.objective_heads})
    w.pod(static_cast<std::int64_t>(v));
  w.str(c.alphabet);
  w.pod(static_cast<std::uint32_t>(c.meta.size()));
  for (const auto& [key, value] : c.meta) {
    w.str(key);
    w.str(value);
  }
  w.pod(static_cast<std::uint32_t>(c.arrays.size()));
  for (const auto& [name, t] : c.arrays) {
    w.str(name);
    w.pod(static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) w.pod(static_cast<std::uint64_t>(d));
    w.raw(t.values().data(), t.size() * sizeof(double));
  }
  const auto crc = crc_of(w.bytes().data(), w.bytes().size());
  w.pod(crc);

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::io, "cannot write checkpoint " + path.string());
  out.write(w.bytes().data(), static_cast<std::streamsize>(w.bytes().size()));
  if (!out) fail(ErrorCode::io, "short write on checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::io, "cannot open checkpoint " + path.string());
  std::vector<char> buf((std::istreambuf_iterator<char>(in)),
                        std::istreambuf_iterator<char>());
  if (buf.size() < sizeof kMagic + 8)
    fail(ErrorCode::io, "checkpoint too small: " + path.string());
  const std::size_t body = buf.size() - sizeof(std::uint32_t);
  std::uint32_t stored;
  std::memcpy(&stored, buf.data() + body, sizeof stored);
  if (stored != crc_of(buf.data(), body))
    fail(ErrorCode::checksum, "checkpoint checksum mismatch: " + path.string());

  Reader r(buf, body);
  char magic[8];
  r.raw(magic, sizeof magic);
  if (std::memcmp(magic, kMagic, sizeof magic) != 0)
    fail(ErrorCode::io, "not a checkpoint file: " + path.string());
  const auto version = r.pod<std::uint32_t>();
  if (version != kCheckpointVersion)
    fail(ErrorCode::io, "unsupported checkpoint version " +
                            std::to_string(version));
  Checkpoint c;
  c.kind = r.str();
  std::int64_t d[6];
  for (auto& v : d) v = r.pod<std::int64_t>();
  c.dims = {static_cast<int>(d[0]), static_cast<int>(d[1]),
            static_cast<int>(d[2]), static_cast<int>(d[3]),
            static_cast<int>(d[4]), static_cast<int>(d[5])};
  c.alphabet = r.str();
  const auto n_meta = r.pod<std::uint32_t>();
  for (std::uint32_t i = 0; i < n_meta; ++i) {
    auto key = r.str();
    c.meta[key] = r.str();
  }
  const auto n_arrays = r.pod<std::uint32_t>();
  for (std::uint32_t i = 0; i < n_arrays; ++i) {
    auto name = r.str();
    const auto rank = r.pod<std::uint32_t>();
    numcore::Shape shape(rank);
    for (auto& s : shape) s = static_cast<std::size_t>(r.pod<std::uint64_t>());
    std::vector<double> values(numcore::shape_numel(shape));
    r.raw(values.data(), values.size() * sizeof(double));
    c.arrays.emplace_back(std::move(name),
                          numcore::Tensor::from(std::move(shape),
                                                std::move(values), true));
  }
  if (!r.done()) fail(ErrorCode::io, "trailing bytes in checkpoint");
  return c;
}

void save_policy(const std::filesystem::path& path, const PolicyModel& model) {
  Checkpoint c;
  c.kind = "policy";
  c.dims = model.dims();
  c.alphabet = model.tokenizer().alphabet();
  const auto names = model.backbone().parameter_names();
  const auto params = model.backbone().parameters();
  for (std::size_t i = 0; i < params.size(); ++i)
    c.arrays.emplace_back(names[i], params[i]);
  for (int h = 0; h < model.num_heads(); ++h)
    c.arrays.emplace_back("head" + std::to_string(h), model.head(h));
  c.arrays.emplace_back("reference_head", model.reference_head());
  save_checkpoint(path, c);
}

PolicyModel load_policy(const std::filesystem::path& path) {
  Checkpoint c = load_checkpoint(path);
  if (c.kind != "policy")
    fail(ErrorCode::invalid_argument,
         "checkpoint " + path.string() + " holds '" + c.kind + "', not a policy");
  const std::size_t n_backbone = 4 + 12 * static_cast<std::size_t>(c.dims.layers);
  const std::size_t heads = static_cast<std::size_t>(c.dims.objective_heads);
  require(c.arrays.size() == n_backbone + heads + 1,
          "policy checkpoint has an unexpected array count");
  std::vector<numcore::Tensor> bb;
  for (std::size_t i = 0; i < n_backbone; ++i) bb.push_back(c.arrays[i].second);
  std::vector<numcore::Tensor> hs;
  for (std::size_t i = 0; i < heads; ++i)
    hs.push_back(c.arrays[n_backbone + i].second);
  const auto& ref = c.arrays.back().second;
  Tokenizer tok(c.alphabet);
  return PolicyModel(c.dims, Backbone::from_arrays(c.dims, std::move(bb)),
                     std::move(hs), ref.detach(), std::move(tok));
}

}  // namespace mah::policy
