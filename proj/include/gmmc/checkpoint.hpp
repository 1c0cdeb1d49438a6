// Binary model checkpoints.
//
// Layout, all integers little-endian:
//
//   "GMMC"            4-byte magic
//   u32 version       currently 1
//   blocks            sequence of (4-char tag, u64 payload length, payload)
//   u32 crc32         zlib crc32 of every block byte
//
// Blocks:
//   NETW  u32 input_dim, u32 n_layers, widths (u32 each), activation codes
//         (u8 each: tanh=0 relu=1 identity=2), u64 n_params, params (f64)
//   CENT  u32 num_classes, u32 feature_dim, f64 scale, means row-major (f64)
//   GAM2  f64 estimated gamma^2 (present only when estimated)
//   RBUF  u64 capacity, f64 reinit_prob, u32 input_dim, u64 rng_seed,
//         u64 n_entries, then per entry u32 label + input_dim f64
//
// NETW and CENT are mandatory. Loading restores the buffer rng by reseeding
// from rng_seed. Unknown tags, duplicate blocks, truncation and checksum
// mismatches all fail loudly.
#pragma once

#include <zlib.h>

#include <bit>
#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>

#include "gmmc/model.hpp"
#include "gmmc/sampler.hpp"

namespace gmmc {

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_f64(std::string& out, double d) { put_u64(out, std::bit_cast<std::uint64_t>(d)); }

struct ByteReader {
  const std::string& data;
  std::size_t pos = 0;

  bool done() const { return pos >= data.size(); }
  void need(std::size_t n, const char* what) const {
    if (pos + n > data.size()) throw CheckpointError(std::string("checkpoint: truncated ") + what);
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(data[pos + static_cast<std::size_t>(i)])) << (8 * i);
    pos += 4;
    return v;
  }
  std::uint64_t u64(const char* what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data[pos + static_cast<std::size_t>(i)])) << (8 * i);
    pos += 8;
    return v;
  }
  double f64(const char* what) { return std::bit_cast<double>(u64(what)); }
  std::uint8_t u8(const char* what) {
    need(1, what);
    return static_cast<std::uint8_t>(data[pos++]);
  }
  std::string tag() {
    need(4, "block tag");
    std::string t = data.substr(pos, 4);
    pos += 4;
    return t;
  }
};

inline std::uint32_t crc_of(const std::string& bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size()));
  return static_cast<std::uint32_t>(crc);
}

inline void append_block(std::string& out, const char* tag, const std::string& payload) {
  out.append(tag, 4);
  put_u64(out, payload.size());
  out += payload;
}

}  // namespace detail

struct Checkpoint {
  GmmcModel model;
  std::optional<ReplayBuffer> buffer;
};

inline std::string checkpoint_to_bytes(const GmmcModel& m, const ReplayBuffer* buf = nullptr) {
  validate_model(m);
  std::string blocks;
  {
    std::string p;
    detail::put_u32(p, static_cast<std::uint32_t>(m.spec.input_dim));
    detail::put_u32(p, static_cast<std::uint32_t>(m.spec.widths.size()));
    for (int w : m.spec.widths) detail::put_u32(p, static_cast<std::uint32_t>(w));
    for (Activation a : m.spec.activations) p.push_back(static_cast<char>(static_cast<int>(a)));
    detail::put_u64(p, m.params.size());
    for (double v : m.params) detail::put_f64(p, v);
    detail::append_block(blocks, "NETW", p);
  }
  {
    std::string p;
    detail::put_u32(p, static_cast<std::uint32_t>(m.centroids.num_classes));
    detail::put_u32(p, static_cast<std::uint32_t>(m.centroids.feature_dim));
    detail::put_f64(p, m.centroids.scale);
    for (const Vec& row : m.centroids.means)
      for (double v : row) detail::put_f64(p, v);
    detail::append_block(blocks, "CENT", p);
  }
  if (m.gamma2) {
    std::string p;
    detail::put_f64(p, *m.gamma2);
    detail::append_block(blocks, "GAM2", p);
  }
  if (buf) {
    std::string p;
    detail::put_u64(p, buf->capacity);
    detail::put_f64(p, buf->reinit_prob);
    detail::put_u32(p, static_cast<std::uint32_t>(buf->input_dim));
    detail::put_u64(p, buf->rng_seed);
    detail::put_u64(p, buf->xs.size());
    for (std::size_t i = 0; i < buf->xs.size(); ++i) {
      detail::put_u32(p, static_cast<std::uint32_t>(buf->labels[i]));
      for (double v : buf->xs[i]) detail::put_f64(p, v);
    }
    detail::append_block(blocks, "RBUF", p);
  }
  std::string out = "GMMC";
  detail::put_u32(out, 1u);
  out += blocks;
  detail::put_u32(out, detail::crc_of(blocks));
  return out;
}

inline Checkpoint checkpoint_from_bytes(const std::string& bytes) {
  if (bytes.size() < 12) throw CheckpointError("checkpoint: file too short");
  if (bytes.compare(0, 4, "GMMC") != 0) throw CheckpointError("checkpoint: bad magic");
  detail::ByteReader head{bytes, 4};
  const std::uint32_t version = head.u32("version");
  if (version != 1u) throw CheckpointError("checkpoint: unsupported version");
  const std::string payload = bytes.substr(8, bytes.size() - 12);
  detail::ByteReader tail{bytes, bytes.size() - 4};
  const std::uint32_t stored_crc = tail.u32("crc");
  if (stored_crc != detail::crc_of(payload)) throw CheckpointError("checkpoint: checksum mismatch");

  Checkpoint ck;
  bool have_net = false, have_cent = false, have_gam = false, have_buf = false;
  detail::ByteReader r{payload, 0};
  while (!r.done()) {
    const std::string tag = r.tag();
    const std::uint64_t len = r.u64("block length");
    r.need(len, "block payload");
    detail::ByteReader b{payload, r.pos};
    const std::size_t block_end = r.pos + len;
    if (tag == "NETW") {
      if (have_net) throw CheckpointError("checkpoint: duplicate NETW block");
      have_net = true;
      ck.model.spec.input_dim = static_cast<int>(b.u32("input_dim"));
      const std::uint32_t n_layers = b.u32("layer count");
      ck.model.spec.widths.resize(n_layers);
      for (auto& w : ck.model.spec.widths) w = static_cast<int>(b.u32("width"));
      ck.model.spec.activations.resize(n_layers);
      for (auto& a : ck.model.spec.activations) {
        const std::uint8_t code = b.u8("activation");
        if (code > 2) throw CheckpointError("checkpoint: unknown activation code");
        a = static_cast<Activation>(code);
      }
      const std::uint64_t n_params = b.u64("param count");
      if (n_params > len / 8) throw CheckpointError("checkpoint: param count exceeds block");
      ck.model.params.resize(n_params);
      for (auto& v : ck.model.params) v = b.f64("param");
    } else if (tag == "CENT") {
      if (have_cent) throw CheckpointError("checkpoint: duplicate CENT block");
      have_cent = true;
      ck.model.centroids.num_classes = static_cast<int>(b.u32("num_classes"));
      ck.model.centroids.feature_dim = static_cast<int>(b.u32("feature_dim"));
      ck.model.centroids.scale = b.f64("scale");
      ck.model.centroids.means.assign(
          static_cast<std::size_t>(ck.model.centroids.num_classes),
          Vec(static_cast<std::size_t>(ck.model.centroids.feature_dim), 0.0));
      for (auto& row : ck.model.centroids.means)
        for (double& v : row) v = b.f64("centroid");
    } else if (tag == "GAM2") {
      if (have_gam) throw CheckpointError("checkpoint: duplicate GAM2 block");
      have_gam = true;
      ck.model.gamma2 = b.f64("gamma2");
    } else if (tag == "RBUF") {
      if (have_buf) throw CheckpointError("checkpoint: duplicate RBUF block");
      have_buf = true;
      ReplayBuffer buf;
      buf.capacity = b.u64("capacity");
      buf.reinit_prob = b.f64("reinit_prob");
      buf.input_dim = static_cast<int>(b.u32("buffer input_dim"));
      buf.rng_seed = b.u64("rng_seed");
      buf.rng.seed(buf.rng_seed);
      const std::uint64_t n = b.u64("entry count");
      if (buf.input_dim < 1 || n > len / (4 + 8 * static_cast<std::uint64_t>(buf.input_dim)))
        throw CheckpointError("checkpoint: buffer entry count exceeds block");
      buf.xs.resize(n, Vec(static_cast<std::size_t>(buf.input_dim), 0.0));
      buf.labels.resize(n);
      for (std::uint64_t i = 0; i < n; ++i) {
        buf.labels[i] = static_cast<int>(b.u32("entry label"));
        for (double& v : buf.xs[i]) v = b.f64("entry value");
      }
      ck.buffer = std::move(buf);
    } else {
      throw CheckpointError("checkpoint: unknown block tag '" + tag + "'");
    }
    if (b.pos != block_end) throw CheckpointError("checkpoint: block length mismatch for " + tag);
    r.pos = block_end;
  }
  if (!have_net) throw CheckpointError("checkpoint: missing NETW block");
  if (!have_cent) throw CheckpointError("checkpoint: missing CENT block");
  try {
    validate_model(ck.model);
  } catch (const std::exception& e) {
    throw CheckpointError(std::string("checkpoint: invalid model: ") + e.what());
  }
  if (ck.buffer) {
    for (int y : ck.buffer->labels)
      if (y < 1 || y > ck.model.centroids.num_classes)
        throw CheckpointError("checkpoint: buffer label out of range");
  }
  return ck;
}

inline void save_checkpoint(const GmmcModel& m, const std::string& path,
                            const ReplayBuffer* buf = nullptr) {
  const std::string bytes = checkpoint_to_bytes(m, buf);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("checkpoint: cannot open " + path + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("checkpoint: write failed for " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("checkpoint: cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return checkpoint_from_bytes(buf.str());
}

}  // namespace gmmc
