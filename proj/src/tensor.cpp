#include "promptot/tensor.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>

#include "promptot/errors.hpp"

namespace promptot {

namespace {

std::size_t shape_product(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  return n;
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape)
    : shape_(std::move(shape)), data_(shape_product(shape_), 0.0) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != shape_product(shape_)) {
    throw InvalidInputError("tensor data length " + std::to_string(data_.size()) +
                            " does not match shape " + shape_str());
  }
}

Tensor Tensor::zeros(std::size_t rows, std::size_t cols) {
  return Tensor({rows, cols});
}

Tensor Tensor::scalar(double v) { return Tensor({1, 1}, {v}); }

Tensor Tensor::from_rows(const std::vector<std::vector<double>>& rows) {
  if (rows.empty()) throw InvalidInputError("from_rows: no rows");
  const std::size_t c = rows.front().size();
  std::vector<double> data;
  data.reserve(rows.size() * c);
  for (const auto& r : rows) {
    if (r.size() != c) throw InvalidInputError("from_rows: ragged rows");
    data.insert(data.end(), r.begin(), r.end());
  }
  return Tensor({rows.size(), c}, std::move(data));
}

std::size_t Tensor::rows() const {
  if (rank() == 1) return 1;
  if (rank() == 2) return shape_[0];
  throw InvalidInputError("rows() on rank-" + std::to_string(rank()) + " tensor");
}

std::size_t Tensor::cols() const {
  if (rank() == 1) return shape_[0];
  if (rank() == 2) return shape_[1];
  throw InvalidInputError("cols() on rank-" + std::to_string(rank()) + " tensor");
}

bool Tensor::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void Tensor::fill(double v) {
  for (double& x : data_) x = v;
}

double Tensor::item() const {
  if (size() != 1) {
    throw InvalidInputError("item() on tensor of size " + std::to_string(size()));
  }
  return data_[0];
}

std::string Tensor::shape_str() const {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape_.size(); ++i) {
    if (i) os << "x";
    os << shape_[i];
  }
  os << "]";
  return os.str();
}

namespace {

constexpr char kTensorMagic[4] = {'T', 'N', 'S', '1'};

void put_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& in, std::size_t offset, const char* what) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (in.gcount() != 4) {
    throw FormatError(std::string("truncated while reading ") + what, offset);
  }
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void put_f64(std::ostream& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(b), 8);
}

}  // namespace

void write_tensor(std::ostream& out, const Tensor& t) {
  out.write(kTensorMagic, 4);
  put_u32(out, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t e : t.shape()) put_u32(out, static_cast<std::uint32_t>(e));
  for (std::size_t i = 0; i < t.size(); ++i) put_f64(out, t[i]);
}

Tensor read_tensor(std::istream& in, std::size_t base_offset) {
  char magic[4];
  in.read(magic, 4);
  if (in.gcount() != 4) throw FormatError("truncated tensor magic", base_offset);
  if (std::memcmp(magic, kTensorMagic, 4) != 0) {
    throw FormatError("bad tensor magic", base_offset);
  }
  std::size_t off = base_offset + 4;
  const std::uint32_t rank = get_u32(in, off, "tensor rank");
  off += 4;
  if (rank > 8) throw FormatError("implausible tensor rank", off - 4);
  std::vector<std::size_t> shape(rank);
  std::size_t count = 1;
  for (std::uint32_t i = 0; i < rank; ++i) {
    shape[i] = get_u32(in, off, "tensor extent");
    off += 4;
    count *= shape[i];
    if (count > (1u << 30)) {
      throw FormatError("implausible tensor element count", off - 4);
    }
  }
  std::vector<double> data(count);
  for (std::size_t i = 0; i < count; ++i) {
    unsigned char b[8];
    in.read(reinterpret_cast<char*>(b), 8);
    if (in.gcount() != 8) throw FormatError("truncated tensor payload", off);
    std::uint64_t bits = 0;
    for (int k = 0; k < 8; ++k) bits |= static_cast<std::uint64_t>(b[k]) << (8 * k);
    std::memcpy(&data[i], &bits, 8);
    off += 8;
  }
  return Tensor(std::move(shape), std::move(data));
}

}  // namespace promptot
