// Dense row-major tensor of 64-bit floats. Rank is arbitrary for storage and
// serialization; arithmetic in this project only ever uses rank 1 and 2.
#pragma once

#include <cstddef>
#include <iosfwd>
#include <string>
#include <vector>

namespace promptot {

class Tensor {
 public:
  Tensor() = default;

  /// Zero-filled tensor of the given shape.
  explicit Tensor(std::vector<std::size_t> shape);

  Tensor(std::vector<std::size_t> shape, std::vector<double> data);

  static Tensor zeros(std::size_t rows, std::size_t cols);
  static Tensor scalar(double v);
  /// Rank-2 tensor from a nested initializer-style row list.
  static Tensor from_rows(const std::vector<std::vector<double>>& rows);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }

  /// Row/column extents; valid for rank 1 (treated as 1 x n) and rank 2.
  std::size_t rows() const;
  std::size_t cols() const;

  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& storage() { return data_; }
  const std::vector<double>& storage() const { return data_; }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  bool all_finite() const;
  void fill(double v);

  /// Scalar access for 1-element tensors.
  double item() const;

  std::string shape_str() const;

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

/// "TNS1" container: magic, u32 LE rank, rank u32 LE extents, row-major
/// IEEE-754 64-bit LE payload.
void write_tensor(std::ostream& out, const Tensor& t);

/// Parses a TNS1 record; throws FormatError with the byte offset on damage.
/// `base_offset` shifts reported offsets when the record is embedded in a
/// larger container.
Tensor read_tensor(std::istream& in, std::size_t base_offset = 0);

}  // namespace promptot
