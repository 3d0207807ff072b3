#include "lgc/entropy/range_coder.hpp"

namespace lgc::entropy {

namespace {
constexpr uint32_t kTopValue = 1u << 24;  // renormalization threshold
}

void RangeEncoder::encode(uint32_t cum, uint32_t freq) {
  check(!finished_, "range encoder: already finished");
  check(freq >= 1 && cum <= kProbScale - freq, "range encoder: bad interval");
  range_ >>= kProbBits;
  low_ += static_cast<uint64_t>(cum) * range_;
  range_ *= freq;
  while (range_ < kTopValue) {
    shift_low();
    range_ <<= 8;
  }
}

void RangeEncoder::shift_low() {
  // Emit the cached byte chain once the carry of the top byte is settled:
  // either the top byte cannot overflow any more (< 0xFF) or a carry has
  // already happened (bit 32 set) and must be added to the cached bytes.
  if (static_cast<uint32_t>(low_) < 0xFF000000u || (low_ >> 32) != 0) {
    const uint8_t carry = static_cast<uint8_t>(low_ >> 32);
    uint8_t byte = cache_;
    do {
      out_.push_back(static_cast<uint8_t>(byte + carry));
      byte = 0xFF;
    } while (--pending_ != 0);
    cache_ = static_cast<uint8_t>(low_ >> 24);
  }
  pending_++;
  low_ = (low_ & 0x00FFFFFFull) << 8;
}

std::vector<uint8_t> RangeEncoder::finish() {
  check(!finished_, "range encoder: already finished");
  finished_ = true;
  // Any value in [low, low + range) decodes correctly. Choose the smallest
  // one with 24 trailing zero bits (range >= 2^24 guarantees it exists), so
  // the flush emits mostly zero bytes that a container can trim.
  low_ = (low_ + (kTopValue - 1)) & ~static_cast<uint64_t>(kTopValue - 1);
  for (int i = 0; i < 5; i++) shift_low();
  return std::move(out_);
}

RangeDecoder::RangeDecoder(const uint8_t* data, size_t size, bool zero_tail)
    : data_(data), size_(size), zero_tail_(zero_tail) {
  for (int i = 0; i < 5; i++) code_ = (code_ << 8) | read_byte();
}

uint8_t RangeDecoder::read_byte() {
  if (pos_ < size_) return data_[pos_++];
  if (zero_tail_) return 0;
  throw DecodeError("range decoder: unexpected end of stream");
}

uint32_t RangeDecoder::decode_freq() {
  range_ >>= kProbBits;
  const uint32_t v = static_cast<uint32_t>(code_ / range_);
  // Well-formed streams never land in the scale-truncation sliver at the
  // top of the interval.
  if (v >= kProbScale) throw DecodeError("range decoder: corrupt stream");
  return v;
}

void RangeDecoder::decode_update(uint32_t cum, uint32_t freq) {
  check(freq >= 1 && cum <= kProbScale - freq, "range decoder: bad interval");
  code_ -= cum * range_;
  range_ *= freq;
  while (range_ < kTopValue) {
    code_ = (code_ << 8) | read_byte();
    range_ <<= 8;
  }
}

}  // namespace lgc::entropy
