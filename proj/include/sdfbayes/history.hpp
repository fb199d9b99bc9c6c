#pragma once

#include <optional>
#include <vector>

#include "sdfbayes/toxicity_model.hpp"

namespace sdfb {

/// Allocation and DLT tallies per dose combination (n_a, s_a).
struct Counts {
  CellMatrix<int> n;
  CellMatrix<int> s;

  Counts() = default;
  Counts(int J, int K) : n(J, K, 0), s(J, K, 0) {}
  explicit Counts(const DoseGrid& grid) : Counts(grid.J(), grid.K()) {}

  void add(Dc dc, int y, int times = 1) {
    n(dc) += times;
    s(dc) += y * times;
  }

  int total() const {
    int t = 0;
    for (int x : n.data()) t += x;
    return t;
  }

  Counts& operator+=(const Counts& other) {
    if (!n.same_shape(other.n)) throw shape_error("cannot merge counts of different grids");
    for (int i = 0; i < n.cells(); ++i) {
      n.at(i) += other.n.at(i);
      s.at(i) += other.s.at(i);
    }
    return *this;
  }

  friend bool operator==(const Counts&, const Counts&) = default;
};

struct Observation {
  int round = 0;  // 1-based trial round tau
  Dc dc;
  int y = 0;  // 1 = dose-limiting toxicity
  std::optional<int> group;

  friend bool operator==(const Observation&, const Observation&) = default;
};

/// Ordered allocation/outcome record with its tallies kept in step.
class TrialHistory {
 public:
  TrialHistory() = default;
  explicit TrialHistory(const DoseGrid& grid) : counts_(grid) {}
  TrialHistory(int J, int K) : counts_(J, K) {}

  void record(Dc dc, int y, int round, std::optional<int> group = std::nullopt) {
    if (y != 0 && y != 1) throw invalid_parameter_error("outcome must be 0 or 1");
    counts_.add(dc, y);  // validates dc
    sequence_.push_back(Observation{round, dc, y, group});
  }
  void record(Dc dc, int y) { record(dc, y, size() + 1); }

  const Counts& counts() const { return counts_; }
  const CellMatrix<int>& n() const { return counts_.n; }
  const CellMatrix<int>& s() const { return counts_.s; }
  const std::vector<Observation>& sequence() const { return sequence_; }
  int size() const { return static_cast<int>(sequence_.size()); }
  bool empty() const { return sequence_.empty(); }

  int dlt_total() const {
    int d = 0;
    for (const auto& o : sequence_) d += o.y;
    return d;
  }

  friend bool operator==(const TrialHistory&, const TrialHistory&) = default;

 private:
  Counts counts_;
  std::vector<Observation> sequence_;
};

}  // namespace sdfb
