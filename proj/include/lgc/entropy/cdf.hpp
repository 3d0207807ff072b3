#pragma once

#include <cstdint>
#include <vector>

#include "lgc/common.hpp"

namespace lgc::entropy {

// Probability resolution of the range coder: all tables sum to 2^16.
inline constexpr int kProbBits = 16;
inline constexpr uint32_t kProbScale = 1u << kProbBits;

// Largest supported alphabet. Half the probability scale, so the zero-width
// repair below can always give every symbol at least one count.
inline constexpr int kMaxAlphabet = 32768;

// Quantized cumulative distribution over the integer symbols lo..hi
// inclusive. cum(lo) = 0, cum(hi + 1) = kProbScale, every symbol has
// frequency >= 1.
class QuantizedCdfTable {
 public:
  QuantizedCdfTable() = default;
  QuantizedCdfTable(int lo, std::vector<uint32_t> cum);

  int lo() const { return lo_; }
  int hi() const { return lo_ + size() - 1; }
  int size() const { return static_cast<int>(cum_.size()) - 1; }

  uint32_t freq(int sym) const {
    const size_t i = index_of(sym);
    return cum_[i + 1] - cum_[i];
  }
  uint32_t cum_freq(int sym) const { return cum_[index_of(sym)]; }

  // Symbol whose quantized interval [cum, cum + freq) contains `value`.
  int find(uint32_t value) const;

 private:
  size_t index_of(int sym) const {
    check(sym >= lo_ && sym <= hi(), "cdf table: symbol out of alphabet");
    return static_cast<size_t>(sym - lo_);
  }

  int lo_ = 0;
  std::vector<uint32_t> cum_;  // size() + 1 cumulative counts
};

// Quantizes a probability vector over symbols lo, lo+1, ... to a valid
// table: normalizes, rounds cumulatively (so quantization errors do not
// accumulate), then repairs zero-width symbols by stealing counts from the
// widest ones. Masses must be finite and non-negative with a positive sum.
QuantizedCdfTable build_cdf_table(const std::vector<double>& pmf, int lo);

}  // namespace lgc::entropy
