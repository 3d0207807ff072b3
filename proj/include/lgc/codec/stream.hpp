#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "lgc/codec/model.hpp"
#include "lgc/entropy/cdf.hpp"
#include "lgc/entropy/gaussian.hpp"
#include "lgc/entropy/range_coder.hpp"
#include "lgc/entropy/rate.hpp"

namespace lgc::codec {

// Coded-image container: fixed header, then the three entropy-coded layers.
// The hyperlatent comes first because the decoder needs it to rebuild the
// per-element gaussian tables for z1. All multi-byte integers big-endian.
//
//   magic "LGC1" | version u8 | model digest u64 | H u16 | W u16 | c1 u16 |
//   c2 u16 | 3 x (alphabet lo i16, hi i16) | 3 x (len u32 + payload bytes)
inline constexpr char kStreamMagic[4] = {'L', 'G', 'C', '1'};
inline constexpr uint8_t kStreamVersion = 1;
inline constexpr size_t kStreamHeaderBytes = 45;  // incl. the three length prefixes

struct LatentSet {
  nn::TensorF y_hat;   // (1, c1, hh, hw) quantized hyperlatent
  nn::TensorF z1_hat;  // (1, c1, lh, lw) quantized grid latent
  nn::TensorF z2_hat;  // (1, c2) quantized semantic vector
};

struct StreamStats {
  size_t header_bytes = 0;
  size_t payload_bytes = 0;  // entropy-coded bytes only (headline rate)
  std::array<std::pair<int, int>, 3> bounds{};  // hyper, z1, z2 alphabets
};

namespace stream_detail {

inline void put_u16(std::vector<uint8_t>& out, uint16_t v) {
  out.push_back(static_cast<uint8_t>(v >> 8));
  out.push_back(static_cast<uint8_t>(v));
}
inline void put_u32(std::vector<uint8_t>& out, uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<uint8_t>(v >> s));
}
inline void put_u64(std::vector<uint8_t>& out, uint64_t v) {
  for (int s = 56; s >= 0; s -= 8) out.push_back(static_cast<uint8_t>(v >> s));
}
inline void put_i16(std::vector<uint8_t>& out, int v) {
  if (v < -32768 || v > 32767) throw RangeError("latent magnitude exceeds the coded range");
  put_u16(out, static_cast<uint16_t>(static_cast<int16_t>(v)));
}

class Reader {
 public:
  Reader(const uint8_t* p, size_t n) : p_(p), n_(n) {}
  uint8_t u8() { return need(1), p_[pos_++]; }
  uint16_t u16() {
    need(2);
    uint16_t v = static_cast<uint16_t>((p_[pos_] << 8) | p_[pos_ + 1]);
    pos_ += 2;
    return v;
  }
  int i16() { return static_cast<int16_t>(u16()); }
  uint32_t u32() {
    uint32_t v = 0;
    for (int i = 0; i < 4; i++) v = (v << 8) | u8();
    return v;
  }
  uint64_t u64() {
    uint64_t v = 0;
    for (int i = 0; i < 8; i++) v = (v << 8) | u8();
    return v;
  }
  const uint8_t* bytes(size_t n) {
    need(n);
    const uint8_t* out = p_ + pos_;
    pos_ += n;
    return out;
  }
  size_t pos() const { return pos_; }

 private:
  void need(size_t n) const {
    if (pos_ + n > n_) throw DecodeError("truncated bitstream");
  }
  const uint8_t* p_;
  size_t n_, pos_ = 0;
};

// integer alphabet bounds of a quantized tensor, clamped to a sane minimum
inline std::pair<int, int> tensor_bounds(const nn::TensorF& t) {
  check(t.numel() > 0, "empty latent tensor");
  int lo = 0, hi = 0;
  for (int64_t i = 0; i < t.numel(); i++) {
    int v = static_cast<int>(std::llround(t[i]));
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  return {lo, hi};
}

template <typename Model>
std::vector<entropy::QuantizedCdfTable> channel_tables(const Model& prior, int channels,
                                                       int lo, int hi) {
  std::vector<entropy::QuantizedCdfTable> tables;
  tables.reserve(static_cast<size_t>(channels));
  for (int c = 0; c < channels; c++)
    tables.push_back(entropy::build_cdf_table(prior.pmf(c, lo, hi), lo));
  return tables;
}

inline entropy::QuantizedCdfTable gaussian_table(double mu, double sigma, int lo, int hi) {
  std::vector<double> pmf(static_cast<size_t>(hi - lo + 1));
  for (int v = lo; v <= hi; v++)
    pmf[static_cast<size_t>(v - lo)] =
        entropy::gaussian_interval_mass(static_cast<double>(v), mu, sigma);
  return entropy::build_cdf_table(pmf, lo);
}

}  // namespace stream_detail

// Runs the analysis half of the codec and rounds every latent.
inline LatentSet encode_latents(const LayeredCodec<float>& model, const nn::TensorF& image) {
  check(image.ndim() == 3 && image.dim(0) == 3, "encode expects a (3,H,W) image");
  nn::TensorF batched({1, 3, image.dim(1), image.dim(2)}, image.data);
  auto x = nn::leaf(std::move(batched));
  auto z1 = model.encode_reconstruction(x);
  auto z2 = model.encode_semantic(x);
  auto y = model.hyper_encode(z1);
  LatentSet out;
  out.y_hat = nn::quantize(y, nn::QuantizeMode::eval)->value;
  out.z1_hat = nn::quantize(z1, nn::QuantizeMode::eval)->value;
  out.z2_hat = nn::quantize(z2, nn::QuantizeMode::eval)->value;
  return out;
}

// Conditional gaussian parameters for z1, recomputed identically on both
// sides from the decoded hyperlatent.
inline std::pair<nn::TensorF, nn::TensorF> z1_code_params(const LayeredCodec<float>& model,
                                                          const nn::TensorF& y_hat) {
  auto [mu, sigma] = model.hyper_decode(nn::leaf(y_hat));
  return {mu->value, sigma->value};
}

inline std::vector<uint8_t> serialize_latents(const LayeredCodec<float>& model,
                                              const LatentSet& lat,
                                              StreamStats* stats = nullptr) {
  using namespace stream_detail;
  const auto& cfg = model.config();
  check(lat.y_hat.ndim() == 4 && lat.z1_hat.ndim() == 4 && lat.z2_hat.ndim() == 2 &&
            lat.y_hat.dim(0) == 1 && lat.z1_hat.dim(0) == 1 && lat.z2_hat.dim(0) == 1,
        "serializer expects single-image latents");

  const auto by = tensor_bounds(lat.y_hat);
  const auto b1 = tensor_bounds(lat.z1_hat);
  const auto b2 = tensor_bounds(lat.z2_hat);

  // hyperlatent: per-channel factorized tables
  std::vector<uint8_t> p_hyper;
  {
    auto tables = channel_tables(model.hyper_prior(), cfg.c1, by.first, by.second);
    entropy::RangeEncoder enc;
    const int hh = lat.y_hat.dim(2), hw = lat.y_hat.dim(3);
    for (int c = 0; c < cfg.c1; c++)
      for (int64_t i = 0; i < static_cast<int64_t>(hh) * hw; i++) {
        int v = static_cast<int>(std::llround(lat.y_hat[c * hh * hw + i]));
        entropy::encode_symbol(enc, tables[static_cast<size_t>(c)], v);
      }
    p_hyper = enc.finish();
  }

  // grid latent: exact per-element gaussian tables from the hyperlatent
  std::vector<uint8_t> p_z1;
  {
    auto [mu, sigma] = z1_code_params(model, lat.y_hat);
    entropy::RangeEncoder enc;
    for (int64_t i = 0; i < lat.z1_hat.numel(); i++) {
      auto table = gaussian_table(mu[i], sigma[i], b1.first, b1.second);
      int v = static_cast<int>(std::llround(lat.z1_hat[i]));
      entropy::encode_symbol(enc, table, v);
    }
    p_z1 = enc.finish();
  }

  // semantic vector: per-channel factorized tables
  std::vector<uint8_t> p_z2;
  {
    auto tables = channel_tables(model.semantic_prior(), cfg.c2, b2.first, b2.second);
    entropy::RangeEncoder enc;
    for (int c = 0; c < cfg.c2; c++) {
      int v = static_cast<int>(std::llround(lat.z2_hat[c]));
      entropy::encode_symbol(enc, tables[static_cast<size_t>(c)], v);
    }
    p_z2 = enc.finish();
  }

  std::vector<uint8_t> out;
  out.reserve(kStreamHeaderBytes + p_hyper.size() + p_z1.size() + p_z2.size());
  out.insert(out.end(), kStreamMagic, kStreamMagic + 4);
  out.push_back(kStreamVersion);
  put_u64(out, model.digest());
  put_u16(out, static_cast<uint16_t>(cfg.height));
  put_u16(out, static_cast<uint16_t>(cfg.width));
  put_u16(out, static_cast<uint16_t>(cfg.c1));
  put_u16(out, static_cast<uint16_t>(cfg.c2));
  for (const auto& b : {by, b1, b2}) {
    put_i16(out, b.first);
    put_i16(out, b.second);
  }
  for (const auto* p : {&p_hyper, &p_z1, &p_z2}) {
    put_u32(out, static_cast<uint32_t>(p->size()));
    out.insert(out.end(), p->begin(), p->end());
  }

  if (stats) {
    stats->payload_bytes = p_hyper.size() + p_z1.size() + p_z2.size();
    stats->header_bytes = out.size() - stats->payload_bytes;
    stats->bounds = {by, b1, b2};
  }
  return out;
}

inline LatentSet deserialize_latents(const LayeredCodec<float>& model,
                                     const std::vector<uint8_t>& data,
                                     StreamStats* stats = nullptr) {
  using namespace stream_detail;
  Reader r(data.data(), data.size());
  const uint8_t* magic = r.bytes(4);
  if (!std::equal(magic, magic + 4, kStreamMagic))
    throw DecodeError("not a coded-image stream");
  if (r.u8() != kStreamVersion) throw DecodeError("unsupported stream version");
  const uint64_t digest = r.u64();
  if (digest != model.digest())
    throw DecodeError("model mismatch: stream was coded with a different model");

  const auto& cfg = model.config();
  const int h = r.u16(), w = r.u16(), c1 = r.u16(), c2 = r.u16();
  if (h != cfg.height || w != cfg.width || c1 != cfg.c1 || c2 != cfg.c2)
    throw DecodeError("stream geometry disagrees with the model configuration");

  std::array<std::pair<int, int>, 3> bounds;
  for (auto& b : bounds) {
    b.first = r.i16();
    b.second = r.i16();
    if (b.first > b.second) throw DecodeError("corrupt alphabet bounds");
  }

  std::array<std::pair<const uint8_t*, size_t>, 3> payloads;
  for (auto& p : payloads) {
    uint32_t len = r.u32();
    p = {r.bytes(len), len};
  }

  LatentSet lat;
  lat.y_hat = nn::TensorF({1, cfg.c1, cfg.hyper_height(), cfg.hyper_width()});
  lat.z1_hat = nn::TensorF({1, cfg.c1, cfg.latent_height(), cfg.latent_width()});
  lat.z2_hat = nn::TensorF({1, cfg.c2});

  {  // hyperlatent
    auto tables = channel_tables(model.hyper_prior(), cfg.c1, bounds[0].first, bounds[0].second);
    entropy::RangeDecoder dec(payloads[0].first, payloads[0].second, /*zero_tail=*/true);
    const int64_t hw = static_cast<int64_t>(cfg.hyper_height()) * cfg.hyper_width();
    for (int c = 0; c < cfg.c1; c++)
      for (int64_t i = 0; i < hw; i++)
        lat.y_hat[c * hw + i] = static_cast<float>(
            entropy::decode_symbol(dec, tables[static_cast<size_t>(c)]));
  }
  {  // grid latent, tables rebuilt from the just-decoded hyperlatent
    auto [mu, sigma] = z1_code_params(model, lat.y_hat);
    entropy::RangeDecoder dec(payloads[1].first, payloads[1].second, /*zero_tail=*/true);
    for (int64_t i = 0; i < lat.z1_hat.numel(); i++) {
      auto table = gaussian_table(mu[i], sigma[i], bounds[1].first, bounds[1].second);
      lat.z1_hat[i] = static_cast<float>(entropy::decode_symbol(dec, table));
    }
  }
  {  // semantic vector
    auto tables = channel_tables(model.semantic_prior(), cfg.c2, bounds[2].first, bounds[2].second);
    entropy::RangeDecoder dec(payloads[2].first, payloads[2].second, /*zero_tail=*/true);
    for (int c = 0; c < cfg.c2; c++)
      lat.z2_hat[c] = static_cast<float>(entropy::decode_symbol(dec, tables[static_cast<size_t>(c)]));
  }

  if (stats) {
    stats->payload_bytes = payloads[0].second + payloads[1].second + payloads[2].second;
    stats->header_bytes = data.size() - stats->payload_bytes;
    stats->bounds = bounds;
  }
  return lat;
}

inline void write_bitstream(const LayeredCodec<float>& model, const LatentSet& lat,
                            const std::string& path, StreamStats* stats = nullptr) {
  auto bytes = serialize_latents(model, lat, stats);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open for writing: " + path);
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("write failed: " + path);
}

inline LatentSet read_bitstream(const LayeredCodec<float>& model, const std::string& path,
                                StreamStats* stats = nullptr) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open: " + path);
  std::vector<uint8_t> data((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return deserialize_latents(model, data, stats);
}

// Ideal code length of a latent set under the model (bits, floored
// per-element at the coder's probability floor).
inline double estimate_rate_bits(const LayeredCodec<float>& model, const LatentSet& lat) {
  double bits = 0.0;
  bits += entropy::ideal_bits(model.hyper_prior().likelihood(nn::leaf(lat.y_hat))->value);
  auto [mu, sigma] = z1_code_params(model, lat.y_hat);
  bits += entropy::ideal_bits(
      entropy::gaussian_likelihood(nn::leaf(lat.z1_hat), nn::leaf(mu), nn::leaf(sigma))->value);
  bits += entropy::ideal_bits(model.semantic_prior().likelihood(nn::leaf(lat.z2_hat))->value);
  return bits;
}

// Runs the synthesis half on decoded latents.
inline nn::TensorF decode_image(const LayeredCodec<float>& model, const LatentSet& lat) {
  auto xhat = model.decode(nn::leaf(lat.z1_hat), nn::leaf(lat.z2_hat));
  nn::TensorF out({3, xhat->value.dim(2), xhat->value.dim(3)}, xhat->value.data);
  return out;
}

}  // namespace lgc::codec
