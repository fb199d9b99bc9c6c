#pragma once

#include <algorithm>
#include <compare>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace sdfb {

// Error taxonomy shared by every module.
struct invalid_parameter_error : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct not_found_error : std::out_of_range {
  using std::out_of_range::out_of_range;
};
struct shape_error : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct infeasible_state_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct numeric_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct invalid_state_error : std::logic_error {
  using std::logic_error::logic_error;
};
struct config_error : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// A dose combination (j, k), 1-based: j indexes drug A, k indexes drug B.
struct Dc {
  int j = 1;
  int k = 1;

  friend auto operator<=>(const Dc&, const Dc&) = default;
};

inline std::string to_string(Dc dc) {
  return "(" + std::to_string(dc.j) + "," + std::to_string(dc.k) + ")";
}

/// Dense J x K matrix addressed by 1-based dose combinations.
template <typename T>
class CellMatrix {
 public:
  CellMatrix() = default;
  CellMatrix(int rows, int cols, T fill = T{})
      : rows_(rows), cols_(cols), data_(static_cast<std::size_t>(rows * cols), fill) {
    if (rows < 1 || cols < 1) throw shape_error("CellMatrix dimensions must be positive");
  }

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  int cells() const { return rows_ * cols_; }

  int index(Dc dc) const {
    if (dc.j < 1 || dc.j > rows_ || dc.k < 1 || dc.k > cols_)
      throw std::out_of_range("dose combination " + to_string(dc) + " outside " +
                              std::to_string(rows_) + "x" + std::to_string(cols_) + " grid");
    return (dc.j - 1) * cols_ + (dc.k - 1);
  }
  Dc dc(int index) const { return Dc{index / cols_ + 1, index % cols_ + 1}; }

  T& operator()(Dc dc) { return data_[static_cast<std::size_t>(index(dc))]; }
  const T& operator()(Dc dc) const { return data_[static_cast<std::size_t>(index(dc))]; }
  T& operator()(int j, int k) { return (*this)(Dc{j, k}); }
  const T& operator()(int j, int k) const { return (*this)(Dc{j, k}); }

  T& at(int index) { return data_.at(static_cast<std::size_t>(index)); }
  const T& at(int index) const { return data_.at(static_cast<std::size_t>(index)); }

  const std::vector<T>& data() const { return data_; }
  std::vector<T>& data() { return data_; }

  template <typename U>
  bool same_shape(const CellMatrix<U>& other) const {
    return rows_ == other.rows() && cols_ == other.cols();
  }

  friend bool operator==(const CellMatrix&, const CellMatrix&) = default;

 private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<T> data_;
};

/// Every dose combination of a J x K lattice in row-major order.
inline std::vector<Dc> all_cells(int rows, int cols) {
  std::vector<Dc> out;
  out.reserve(static_cast<std::size_t>(rows * cols));
  for (int j = 1; j <= rows; ++j)
    for (int k = 1; k <= cols; ++k) out.push_back(Dc{j, k});
  return out;
}

}  // namespace sdfb
