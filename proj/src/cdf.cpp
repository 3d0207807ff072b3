#include "lgc/entropy/cdf.hpp"

#include <algorithm>
#include <cmath>

namespace lgc::entropy {

QuantizedCdfTable::QuantizedCdfTable(int lo, std::vector<uint32_t> cum)
    : lo_(lo), cum_(std::move(cum)) {
  check(cum_.size() >= 2, "cdf table: empty alphabet");
  check(cum_.front() == 0 && cum_.back() == kProbScale,
        "cdf table: cumulative counts must span the probability scale");
  for (size_t i = 0; i + 1 < cum_.size(); i++)
    check(cum_[i] < cum_[i + 1], "cdf table: zero-width symbol");
  if (size() > kMaxAlphabet)
    throw RangeError("alphabet overflow: " + std::to_string(size()) +
                     " symbols exceeds " + std::to_string(kMaxAlphabet));
}

int QuantizedCdfTable::find(uint32_t value) const {
  check(value < kProbScale, "cdf table: cumulative value out of range");
  auto it = std::upper_bound(cum_.begin(), cum_.end(), value);
  return lo_ + static_cast<int>(it - cum_.begin()) - 1;
}

QuantizedCdfTable build_cdf_table(const std::vector<double>& pmf, int lo) {
  const int n = static_cast<int>(pmf.size());
  check(n >= 1, "build_cdf_table: empty alphabet");
  if (n > kMaxAlphabet)
    throw RangeError("alphabet overflow: " + std::to_string(n) +
                     " symbols exceeds " + std::to_string(kMaxAlphabet));
  double total = 0.0;
  for (double p : pmf) {
    check(std::isfinite(p) && p >= 0.0, "build_cdf_table: bad probability mass");
    total += p;
  }
  check(total > 0.0, "build_cdf_table: zero total mass");

  // Cumulative rounding keeps the global error of each boundary below one
  // count regardless of alphabet size.
  std::vector<uint32_t> cum(static_cast<size_t>(n) + 1, 0);
  double running = 0.0;
  for (int i = 0; i < n; i++) {
    running += pmf[static_cast<size_t>(i)];
    double q = static_cast<double>(kProbScale) * (running / total);
    cum[static_cast<size_t>(i) + 1] =
        static_cast<uint32_t>(std::min<int64_t>(std::llround(q), kProbScale));
  }
  cum[static_cast<size_t>(n)] = kProbScale;

  std::vector<uint32_t> freq(static_cast<size_t>(n));
  int zeros = 0;
  for (int i = 0; i < n; i++) {
    freq[static_cast<size_t>(i)] = cum[static_cast<size_t>(i) + 1] - cum[static_cast<size_t>(i)];
    if (freq[static_cast<size_t>(i)] == 0) zeros++;
  }
  // Give every zero-width symbol one count, taken from the currently widest
  // symbols. Feasible because the scale is at least twice the alphabet size.
  while (zeros > 0) {
    int widest = 0;
    for (int i = 1; i < n; i++)
      if (freq[static_cast<size_t>(i)] > freq[static_cast<size_t>(widest)]) widest = i;
    check(freq[static_cast<size_t>(widest)] >= 2, "build_cdf_table: repair failed");
    uint32_t spare = freq[static_cast<size_t>(widest)] - 1;
    for (int i = 0; i < n && spare > 0 && zeros > 0; i++) {
      if (freq[static_cast<size_t>(i)] != 0) continue;
      freq[static_cast<size_t>(i)] = 1;
      freq[static_cast<size_t>(widest)]--;
      spare--;
      zeros--;
    }
  }
  uint32_t acc = 0;
  for (int i = 0; i < n; i++) {
    cum[static_cast<size_t>(i)] = acc;
    acc += freq[static_cast<size_t>(i)];
  }
  cum[static_cast<size_t>(n)] = acc;
  return QuantizedCdfTable(lo, std::move(cum));
}

}  // namespace lgc::entropy
