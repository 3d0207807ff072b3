#pragma once

#include <cstdint>
#include <vector>

#include "lgc/entropy/cdf.hpp"

namespace lgc::entropy {

// Byte-oriented arithmetic coder with a 32-bit range register and carry
// propagation through a cached-byte chain. Probabilities are fixed-point
// with kProbBits of resolution. The flush rounds the final code point up to
// a multiple of 2^24 so that the last bytes of a stream are almost always
// zero; containers may trim those and decode with `zero_tail = true`.
class RangeEncoder {
 public:
  RangeEncoder() = default;

  // Encodes a symbol occupying [cum, cum + freq) of the kProbScale total.
  void encode(uint32_t cum, uint32_t freq);

  // Flushes the final code point and returns the stream. The encoder is
  // spent afterwards.
  std::vector<uint8_t> finish();

 private:
  void shift_low();

  std::vector<uint8_t> out_;
  uint64_t low_ = 0;
  uint32_t range_ = 0xFFFFFFFFu;
  uint8_t cache_ = 0;
  uint64_t pending_ = 1;  // cached bytes awaiting carry resolution
  bool finished_ = false;
};

class RangeDecoder {
 public:
  // Does not own the buffer. With `zero_tail`, reads past the end yield
  // zero bytes (for streams whose trailing zeros were trimmed); otherwise
  // exhausting the buffer early raises DecodeError.
  RangeDecoder(const uint8_t* data, size_t size, bool zero_tail = false);

  // Cumulative value of the next symbol; pass to QuantizedCdfTable::find.
  uint32_t decode_freq();

  // Consumes the symbol previously located with decode_freq.
  void decode_update(uint32_t cum, uint32_t freq);

 private:
  uint8_t read_byte();

  const uint8_t* data_ = nullptr;
  size_t size_ = 0;
  size_t pos_ = 0;
  bool zero_tail_ = false;
  // 32-bit on purpose: carries wrap modulo 2^32 in lockstep with the
  // encoder's low register.
  uint32_t code_ = 0;
  uint32_t range_ = 0xFFFFFFFFu;
};

inline void encode_symbol(RangeEncoder& enc, const QuantizedCdfTable& table, int sym) {
  enc.encode(table.cum_freq(sym), table.freq(sym));
}

inline int decode_symbol(RangeDecoder& dec, const QuantizedCdfTable& table) {
  int sym = table.find(dec.decode_freq());
  dec.decode_update(table.cum_freq(sym), table.freq(sym));
  return sym;
}

}  // namespace lgc::entropy
