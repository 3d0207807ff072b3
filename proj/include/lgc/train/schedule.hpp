#pragma once

#include <cmath>
#include <fstream>
#include <string>

#include <nlohmann/json.hpp>

#include "lgc/common.hpp"

namespace lgc::train {

// Step decay: the base rate is multiplied by `factor` once every
// `every` epochs. Epochs are 1-based, so epochs 1..every keep the base rate.
inline double step_lr(double base, int epoch, int every = 10, double factor = 0.1) {
  check(epoch >= 1 && every >= 1, "step_lr: epoch and period must be positive");
  return base * std::pow(factor, (epoch - 1) / every);
}

// Append-only JSONL training log; one self-describing record per line.
class TrainLog {
 public:
  TrainLog() = default;
  explicit TrainLog(const std::string& path) {
    if (!path.empty()) {
      file_.open(path, std::ios::trunc);
      if (!file_) throw IoError("cannot open training log: " + path);
    }
  }

  void record(const nlohmann::json& row) {
    rows_.push_back(row);
    if (file_.is_open()) {
      file_ << row.dump() << "\n";
      file_.flush();
    }
  }

  const std::vector<nlohmann::json>& rows() const { return rows_; }

 private:
  std::vector<nlohmann::json> rows_;
  std::ofstream file_;
};

}  // namespace lgc::train
