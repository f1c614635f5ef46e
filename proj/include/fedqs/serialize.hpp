// Copyright 2026 The fedqs-sim Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
// =============================================================================

#pragma once

#include <bit>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fedqs/client.hpp"
#include "fedqs/error.hpp"

namespace fedqs::wire {

// Little-endian primitive encoding, independent of host byte order.
class Writer {
 public:
  void u8(std::uint8_t v) { buf_.push_back(static_cast<std::byte>(v)); }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<std::byte>((v >> (8 * i)) & 0xffu));
  }
  void i64(std::int64_t v) { u64(static_cast<std::uint64_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void bytes(std::span<const std::byte> b) { buf_.insert(buf_.end(), b.begin(), b.end()); }

  std::vector<std::byte>& buffer() noexcept { return buf_; }
  std::vector<std::byte> take() noexcept { return std::move(buf_); }

 private:
  std::vector<std::byte> buf_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::byte> data) : data_(data) {}

  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(data_[pos_++]);
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(data_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return v;
  }
  std::int64_t i64() { return static_cast<std::int64_t>(u64()); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::span<const std::byte> bytes(std::size_t n) {
    need(n);
    auto out = data_.subspan(pos_, n);
    pos_ += n;
    return out;
  }

  std::size_t remaining() const noexcept { return data_.size() - pos_; }
  bool done() const noexcept { return pos_ == data_.size(); }

 private:
  void need(std::size_t n) const {
    if (data_.size() - pos_ < n) throw IoError("wire: truncated record");
  }
  std::span<const std::byte> data_;
  std::size_t pos_ = 0;
};

// Record layout (after a u64 byte-length prefix):
//   i64 client_id, i64 base_round, u8 payload tag, u64 len, f64[len],
//   f64 eta_used, f64 similarity, u8 feedback, i64 n_i
inline void write_update(Writer& w, const LocalUpdate& u) {
  Writer body;
  body.i64(u.client_id);
  body.i64(u.base_round);
  body.u8(static_cast<std::uint8_t>(u.payload.kind));
  body.u64(u.payload.values.size());
  for (double v : u.payload.values) body.f64(v);
  body.f64(u.eta_used);
  body.f64(u.similarity);
  body.u8(u.feedback ? 1 : 0);
  body.i64(u.n_i);
  w.u64(body.buffer().size());
  w.bytes(body.buffer());
}

inline LocalUpdate read_update(Reader& r) {
  const std::uint64_t len = r.u64();
  Reader body(r.bytes(len));
  LocalUpdate u;
  u.client_id = static_cast<int>(body.i64());
  u.base_round = static_cast<int>(body.i64());
  const std::uint8_t tag = body.u8();
  if (tag > 1) throw IoError(detail::concat("wire: unknown payload tag ", int(tag)));
  u.payload.kind = static_cast<PayloadKind>(tag);
  const std::uint64_t n = body.u64();
  if (n > body.remaining() / 8) throw IoError("wire: payload length exceeds record");
  std::vector<double> values(n);
  for (auto& v : values) v = body.f64();
  u.payload.values = ParamVec(std::move(values));
  u.eta_used = body.f64();
  u.similarity = body.f64();
  u.feedback = body.u8() != 0;
  u.n_i = body.i64();
  if (!body.done()) throw IoError("wire: trailing bytes in update record");
  return u;
}

inline std::vector<std::byte> encode(const LocalUpdate& u) {
  Writer w;
  write_update(w, u);
  return w.take();
}

inline LocalUpdate decode(std::span<const std::byte> data) {
  Reader r(data);
  auto u = read_update(r);
  if (!r.done()) throw IoError("wire: trailing bytes after update");
  return u;
}

}  // namespace fedqs::wire
