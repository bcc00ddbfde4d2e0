// Copyright 2026 The calcseg Authors
// SPDX-License-Identifier: Apache-2.0

#include "calcseg/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <type_traits>

#include "calcseg/error.hpp"

namespace calcseg {

namespace {

constexpr char kMagic[8] = {'C', 'A', 'L', 'C', 'S', 'E', 'G', '1'};
constexpr std::uint32_t kVersion = 1;

class Writer {
 public:
  template <typename I>
  void num(I v) {
    static_assert(std::is_integral_v<I>);
    for (std::size_t i = 0; i < sizeof(I); ++i) buf_.push_back(static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xFF));
  }
  void f32(float v) { num(std::bit_cast<std::uint32_t>(v)); }
  void bytes(const std::string& s) { buf_.insert(buf_.end(), s.begin(), s.end()); }
  void str32(const std::string& s) {
    num(static_cast<std::uint32_t>(s.size()));
    bytes(s);
  }
  void tensor(const std::string& name, const Tensor<float>& t) {
    num(static_cast<std::uint16_t>(name.size()));
    bytes(name);
    num(static_cast<std::uint8_t>(t.rank()));
    for (std::size_t d : t.shape()) num(static_cast<std::uint64_t>(d));
    for (float v : t.data()) f32(v);
  }
  const std::vector<char>& data() const { return buf_; }

 private:
  std::vector<char> buf_;
};

class Reader {
 public:
  Reader(std::vector<char> buf, std::string path) : buf_(std::move(buf)), path_(std::move(path)) {}

  template <typename I>
  I num() {
    need(sizeof(I));
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(I); ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
    pos_ += sizeof(I);
    return static_cast<I>(v);
  }
  float f32() { return std::bit_cast<float>(num<std::uint32_t>()); }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s(buf_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  std::string str32() { return bytes(num<std::uint32_t>()); }
  void tensor(const std::string& expect_name, Tensor<float>& t) {
    const std::string name = bytes(num<std::uint16_t>());
    if (name != expect_name) fail("expected tensor '" + expect_name + "', found '" + name + "'");
    const std::size_t rank = num<std::uint8_t>();
    Shape shape(rank);
    for (auto& d : shape) d = num<std::uint64_t>();
    if (shape != t.shape()) {
      fail("tensor '" + name + "' has shape " + shape_to_string(shape) + ", config needs " + shape_to_string(t.shape()));
    }
    for (auto& v : t.data()) v = f32();
  }
  bool at_end() const { return pos_ == buf_.size(); }
  [[noreturn]] void fail(const std::string& msg) const { throw FormatError(path_ + ": " + msg); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > buf_.size()) fail("truncated checkpoint");
  }
  std::vector<char> buf_;
  std::string path_;
  std::size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(const std::string& path, const Network<float>& net, std::int64_t epoch,
                     const std::string& rng_state) {
  Writer w;
  w.bytes(std::string(kMagic, sizeof kMagic));
  w.num(kVersion);
  w.num(config_hash(net.config()));
  w.num(epoch);
  w.num(net.seed());
  w.str32(rng_state);
  w.str32(to_json(net.config()).dump());
  const auto& params = net.parameters();
  const auto& bns = net.batchnorms();
  w.num(static_cast<std::uint32_t>(params.size() + 2 * bns.size()));
  for (const auto& p : params) w.tensor(p.name, p.value);
  for (const auto& b : bns) {
    w.tensor(b.name + ".running_mean", b.state.running_mean);
    w.tensor(b.name + ".running_var", b.state.running_var);
  }
  w.num(static_cast<std::uint32_t>(bns.size()));
  for (const auto& b : bns) w.num(static_cast<std::uint64_t>(b.state.updates));

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint " + path);
  out.write(w.data().data(), static_cast<std::streamsize>(w.data().size()));
  if (!out) throw IoError("write failed for checkpoint " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path);
  std::vector<char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Reader r(std::move(buf), path);
  if (r.bytes(sizeof kMagic) != std::string(kMagic, sizeof kMagic)) r.fail("not a calcseg checkpoint");
  if (r.num<std::uint32_t>() != kVersion) r.fail("unsupported checkpoint version");
  const auto hash = r.num<std::uint64_t>();
  const auto epoch = r.num<std::int64_t>();
  const auto seed = r.num<std::uint64_t>();
  std::string rng_state = r.str32();
  NetworkConfig cfg;
  try {
    cfg = parse_network_config(nlohmann::json::parse(r.str32()));
  } catch (const nlohmann::json::exception& e) {
    r.fail(std::string("embedded config is not valid JSON: ") + e.what());
  } catch (const ConfigError& e) {
    r.fail(std::string("embedded config is invalid: ") + e.what());
  }
  if (config_hash(cfg) != hash) r.fail("config hash does not match the embedded config");
  Checkpoint ck{Network<float>::build(cfg, seed), epoch, std::move(rng_state), hash};
  auto& params = ck.network.parameters();
  auto& bns = ck.network.batchnorms();
  if (r.num<std::uint32_t>() != params.size() + 2 * bns.size()) r.fail("tensor count does not match the config");
  for (auto& p : params) r.tensor(p.name, p.value);
  for (auto& b : bns) {
    r.tensor(b.name + ".running_mean", b.state.running_mean);
    r.tensor(b.name + ".running_var", b.state.running_var);
  }
  if (r.num<std::uint32_t>() != bns.size()) r.fail("batch-norm count does not match the config");
  for (auto& b : bns) b.state.updates = r.num<std::uint64_t>();
  if (!r.at_end()) r.fail("trailing bytes after the last section");
  return ck;
}

}  // namespace calcseg
