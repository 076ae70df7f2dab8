#pragma once

// Dataset matrices (p features x n samples, column-major) and their sources:
// DMAT binary files, CSV, synthetic low-rank generation and grayscale image
// patches read from binary PGM.
//
// DMAT layout (all integers and values little-endian):
//   bytes 0-3   magic "DMAT"
//   byte  4     format version (1)
//   bytes 5-12  p as uint64
//   bytes 13-20 n as uint64
//   then p*n IEEE-754 binary64 values in column-major order

#include "somf/core.hpp"
#include "somf/dict_update.hpp"
#include "somf/proximal.hpp"
#include "somf/rng.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace somf {

/// A finite, nonempty p x n data matrix. Immutable once built.
class DatasetMatrix {
 public:
  explicit DatasetMatrix(Matrix values) : values_(std::move(values)) {
    if (values_.rows() < 1 || values_.cols() < 1) throw InputError("dataset must have at least one row and one column");
    if (!values_.allFinite()) throw InputError("dataset contains non-finite values");
  }

  Index p() const { return values_.rows(); }
  Index n() const { return values_.cols(); }
  const Matrix& values() const { return values_; }
  auto col(Index j) const { return values_.col(j); }
  double operator()(Index i, Index j) const { return values_(i, j); }

 private:
  Matrix values_;
};

enum class MatrixFormat { Binary, Csv };

inline MatrixFormat parse_matrix_format(std::string_view name) {
  if (name == "binary" || name == "dmat") return MatrixFormat::Binary;
  if (name == "csv") return MatrixFormat::Csv;
  throw ConfigError("unknown matrix format '" + std::string(name) + "'");
}

/// Format implied by a file extension (".csv" or anything else -> binary).
inline MatrixFormat format_from_path(const std::filesystem::path& path) {
  return path.extension() == ".csv" ? MatrixFormat::Csv : MatrixFormat::Binary;
}

namespace detail {

inline constexpr char kDmatMagic[4] = {'D', 'M', 'A', 'T'};
inline constexpr std::uint8_t kDmatVersion = 1;
inline constexpr std::size_t kDmatHeaderBytes = 4 + 1 + 8 + 8;

inline void put_u64_le(std::string& out, std::uint64_t v) {
  for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((v >> (8 * b)) & 0xFF));
}

inline std::uint64_t get_u64_le(const unsigned char* bytes) {
  std::uint64_t v = 0;
  for (int b = 7; b >= 0; --b) v = (v << 8) | bytes[b];
  return v;
}

inline std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

inline double parse_double(std::string_view token, std::size_t line) {
  token = trim(token);
  if (!token.empty() && token.front() == '+') token.remove_prefix(1);
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), value);
  if (token.empty() || ec != std::errc() || ptr != token.data() + token.size()) {
    throw FormatError("csv line " + std::to_string(line) + ": cannot parse '" + std::string(token) + "'");
  }
  return value;
}

}  // namespace detail

/// Serializes a matrix to the DMAT byte layout.
inline std::string encode_dmat(const Eigen::Ref<const Matrix>& M) {
  std::string out;
  out.reserve(detail::kDmatHeaderBytes + static_cast<std::size_t>(M.size()) * 8);
  out.append(detail::kDmatMagic, 4);
  out.push_back(static_cast<char>(detail::kDmatVersion));
  detail::put_u64_le(out, static_cast<std::uint64_t>(M.rows()));
  detail::put_u64_le(out, static_cast<std::uint64_t>(M.cols()));
  for (Index j = 0; j < M.cols(); ++j) {
    for (Index i = 0; i < M.rows(); ++i) detail::put_u64_le(out, std::bit_cast<std::uint64_t>(M(i, j)));
  }
  return out;
}

/// Parses DMAT bytes. Malformed or truncated input raises FormatError,
/// impossible dimensions DimensionOverflowError, non-finite values InputError.
inline DatasetMatrix decode_dmat(std::string_view bytes) {
  if (bytes.size() < detail::kDmatHeaderBytes) throw FormatError("DMAT: file shorter than its header");
  if (std::memcmp(bytes.data(), detail::kDmatMagic, 4) != 0) throw FormatError("DMAT: bad magic");
  const auto* raw = reinterpret_cast<const unsigned char*>(bytes.data());
  if (raw[4] != detail::kDmatVersion) throw FormatError("DMAT: unsupported version " + std::to_string(raw[4]));
  const std::uint64_t p = detail::get_u64_le(raw + 5);
  const std::uint64_t n = detail::get_u64_le(raw + 13);
  if (p == 0 || n == 0) throw FormatError("DMAT: zero dimension");
  constexpr auto kMaxIndex = static_cast<std::uint64_t>(std::numeric_limits<Index>::max());
  if (p > kMaxIndex || n > kMaxIndex || p > kMaxIndex / 8 / n) {
    throw DimensionOverflowError("DMAT: dimensions " + std::to_string(p) + " x " + std::to_string(n) + " overflow");
  }
  const std::uint64_t payload = p * n * 8;
  const std::uint64_t available = bytes.size() - detail::kDmatHeaderBytes;
  if (available < payload) throw FormatError("DMAT: truncated payload");
  if (available > payload) throw FormatError("DMAT: trailing bytes after payload");

  Matrix M(static_cast<Index>(p), static_cast<Index>(n));
  const unsigned char* src = raw + detail::kDmatHeaderBytes;
  if constexpr (std::endian::native == std::endian::little) {
    std::memcpy(M.data(), src, payload);
  } else {
    for (std::uint64_t i = 0; i < p * n; ++i) M.data()[i] = std::bit_cast<double>(detail::get_u64_le(src + 8 * i));
  }
  return DatasetMatrix(std::move(M));
}

/// One matrix row per line, comma separated.
inline std::string encode_csv(const Eigen::Ref<const Matrix>& M) {
  std::string out;
  char buf[64];
  for (Index i = 0; i < M.rows(); ++i) {
    for (Index j = 0; j < M.cols(); ++j) {
      const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, M(i, j));
      if (j > 0) out.push_back(',');
      out.append(buf, ptr);
    }
    out.push_back('\n');
  }
  return out;
}

inline DatasetMatrix decode_csv(std::string_view text) {
  std::vector<double> values;
  Index rows = 0;
  Index cols = -1;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto eol = text.find('\n');
    std::string_view line = text.substr(0, eol);
    text = eol == std::string_view::npos ? std::string_view{} : text.substr(eol + 1);
    ++line_no;
    if (detail::trim(line).empty()) continue;
    Index count = 0;
    while (true) {
      const auto comma = line.find(',');
      values.push_back(detail::parse_double(line.substr(0, comma), line_no));
      ++count;
      if (comma == std::string_view::npos) break;
      line.remove_prefix(comma + 1);
    }
    if (cols >= 0 && count != cols) {
      throw FormatError("csv line " + std::to_string(line_no) + ": expected " + std::to_string(cols) + " fields");
    }
    cols = count;
    ++rows;
  }
  if (rows == 0) throw FormatError("csv: no data");
  Matrix M(rows, cols);
  for (Index i = 0; i < rows; ++i) {
    for (Index j = 0; j < cols; ++j) M(i, j) = values[static_cast<std::size_t>(i * cols + j)];
  }
  return DatasetMatrix(std::move(M));
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return std::move(buf).str();
}

inline void write_file(const std::filesystem::path& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("short write to '" + path.string() + "'");
}

inline DatasetMatrix load_matrix(const std::filesystem::path& path, MatrixFormat format) {
  const std::string bytes = read_file(path);
  return format == MatrixFormat::Binary ? decode_dmat(bytes) : decode_csv(bytes);
}

inline void save_matrix(const std::filesystem::path& path, const Eigen::Ref<const Matrix>& M, MatrixFormat format) {
  write_file(path, format == MatrixFormat::Binary ? encode_dmat(M) : encode_csv(M));
}

// ---------------------------------------------------------------------------
// PGM (P5) grayscale images, values scaled to [0, 1].

inline Matrix decode_pgm(std::string_view bytes) {
  std::size_t pos = 0;
  auto next_token = [&]() -> std::string {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
    const std::size_t start = pos;
    while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos])) && bytes[pos] != '#') ++pos;
    if (start == pos) throw FormatError("PGM: truncated header");
    return std::string(bytes.substr(start, pos - start));
  };
  auto next_int = [&]() {
    const std::string tok = next_token();
    long value = 0;
    const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), value);
    if (ec != std::errc() || ptr != tok.data() + tok.size() || value <= 0) throw FormatError("PGM: bad header field '" + tok + "'");
    return value;
  };

  if (next_token() != "P5") throw FormatError("PGM: only binary P5 images are supported");
  const long width = next_int();
  const long height = next_int();
  const long maxval = next_int();
  if (maxval > 65535) throw FormatError("PGM: maxval above 65535");
  if (pos >= bytes.size()) throw FormatError("PGM: missing pixel data");
  ++pos;  // single whitespace byte after maxval

  const std::size_t depth = maxval < 256 ? 1 : 2;
  const auto need = static_cast<std::size_t>(width) * static_cast<std::size_t>(height) * depth;
  if (bytes.size() - pos < need) throw FormatError("PGM: truncated pixel data");
  Matrix image(height, width);
  const auto* px = reinterpret_cast<const unsigned char*>(bytes.data() + pos);
  for (long r = 0; r < height; ++r) {
    for (long c = 0; c < width; ++c) {
      const std::size_t at = (static_cast<std::size_t>(r) * static_cast<std::size_t>(width) + static_cast<std::size_t>(c)) * depth;
      const unsigned v = depth == 1 ? px[at] : (static_cast<unsigned>(px[at]) << 8) | px[at + 1];
      image(r, c) = static_cast<double>(v) / static_cast<double>(maxval);
    }
  }
  return image;
}

/// 8-bit P5 encoding of an image with values in [0, 1] (clamped).
inline std::string encode_pgm(const Eigen::Ref<const Matrix>& image) {
  std::string out = "P5\n" + std::to_string(image.cols()) + " " + std::to_string(image.rows()) + "\n255\n";
  for (Index r = 0; r < image.rows(); ++r) {
    for (Index c = 0; c < image.cols(); ++c) {
      const double v = std::clamp(image(r, c), 0.0, 1.0);
      out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0))));
    }
  }
  return out;
}

inline Matrix load_pgm(const std::filesystem::path& path) { return decode_pgm(read_file(path)); }

// ---------------------------------------------------------------------------
// Patches.

struct Extent {
  Index rows = 1;
  Index cols = 1;
};

/// Every h x w window of the image whose top-left corner lies on the stride
/// grid, in raster order of corners. Each window becomes one column, read
/// row by row (p = h w).
inline DatasetMatrix extract_patches(const Eigen::Ref<const Matrix>& image, Extent patch, Extent stride) {
  if (patch.rows < 1 || patch.cols < 1) throw DomainError("extract_patches: patch must be at least 1 x 1");
  if (stride.rows < 1 || stride.cols < 1) throw DomainError("extract_patches: stride must be at least 1");
  if (patch.rows > image.rows() || patch.cols > image.cols()) throw DimensionError("extract_patches: patch larger than image");
  const Index along_rows = (image.rows() - patch.rows) / stride.rows + 1;
  const Index along_cols = (image.cols() - patch.cols) / stride.cols + 1;
  Matrix X(patch.rows * patch.cols, along_rows * along_cols);
  Index column = 0;
  for (Index a = 0; a < along_rows; ++a) {
    for (Index b = 0; b < along_cols; ++b, ++column) {
      const Index top = a * stride.rows;
      const Index left = b * stride.cols;
      for (Index i = 0; i < patch.rows; ++i) {
        for (Index j = 0; j < patch.cols; ++j) X(i * patch.cols + j, column) = image(top + i, left + j);
      }
    }
  }
  return DatasetMatrix(std::move(X));
}

/// Optional preprocessing: subtract the column mean and/or scale columns to
/// unit l2 norm (zero columns are left as is).
inline DatasetMatrix normalize_columns(const DatasetMatrix& X, bool center, bool unit_norm) {
  Matrix M = X.values();
  for (Index j = 0; j < M.cols(); ++j) {
    if (center) M.col(j).array() -= M.col(j).mean();
    if (unit_norm) {
      const double norm = M.col(j).norm();
      if (norm > 0.0) M.col(j) /= norm;
    }
  }
  return DatasetMatrix(std::move(M));
}

// ---------------------------------------------------------------------------
// Synthetic data X = D A + noise.

struct SyntheticSpec {
  Index p = 64;
  Index n = 500;
  Index true_k = 8;
  double noise_sigma = 0.05;
  double dict_sparsity = 0.0;  // expected fraction of zero entries per atom
  double code_sparsity = 0.0;  // expected fraction of zero entries per code
  bool nonnegative = false;
  std::uint64_t seed = 0;
  Index row_repeat = 1;  // atoms live on p / row_repeat rows, each duplicated row_repeat times
  double mu = 1.0;       // atom constraint mix the true atoms are made feasible for

  void validate() const {
    if (p < 1 || n < 1) throw DomainError("synthetic: p and n must be >= 1");
    if (true_k < 1 || true_k > std::min(p, n)) throw DomainError("synthetic: true_k must lie in [1, min(p, n)]");
    if (!(noise_sigma >= 0.0)) throw DomainError("synthetic: noise_sigma must be >= 0");
    if (!(dict_sparsity >= 0.0 && dict_sparsity < 1.0)) throw DomainError("synthetic: dict_sparsity must lie in [0, 1)");
    if (!(code_sparsity >= 0.0 && code_sparsity < 1.0)) throw DomainError("synthetic: code_sparsity must lie in [0, 1)");
    if (row_repeat < 1 || p % row_repeat != 0) throw DomainError("synthetic: row_repeat must divide p");
    if (!(mu >= 0.0 && mu <= 1.0)) throw DomainError("synthetic: mu must lie in [0, 1]");
  }
};

struct SyntheticData {
  DatasetMatrix X;
  Matrix D_true;
  Matrix A_true;
};

namespace detail {

// Gaussian entries, each kept with probability 1 - sparsity; at least one
// entry per column survives.
inline Matrix sparse_gaussian(Index rows, Index cols, double sparsity, bool nonnegative, CounterRng& rng) {
  Matrix M = Matrix::Zero(rows, cols);
  for (Index j = 0; j < cols; ++j) {
    for (Index i = 0; i < rows; ++i) {
      const double g = rng.normal();
      if (rng.uniform() >= sparsity) M(i, j) = nonnegative ? std::abs(g) : g;
    }
    if (!M.col(j).any()) {
      const auto i = static_cast<Index>(rng.below(static_cast<std::uint64_t>(rows)));
      const double g = rng.normal();
      M(i, j) = nonnegative ? std::abs(g) : (g == 0.0 ? 1.0 : g);
    }
  }
  return M;
}

}  // namespace detail

inline SyntheticData generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  CounterRng rng(spec.seed, RngStream::Synthetic);
  const Index base_p = spec.p / spec.row_repeat;

  const Matrix base = detail::sparse_gaussian(base_p, spec.true_k, spec.dict_sparsity, spec.nonnegative, rng);
  Matrix D(spec.p, spec.true_k);
  for (Index i = 0; i < spec.p; ++i) D.row(i) = base.row(i / spec.row_repeat);
  for (Index j = 0; j < spec.true_k; ++j) {
    D.col(j) /= D.col(j).norm();
    D.col(j) = enet_projection(D.col(j), 1.0, spec.mu, spec.nonnegative);
  }

  Matrix A = detail::sparse_gaussian(spec.true_k, spec.n, spec.code_sparsity, spec.nonnegative, rng);
  Matrix X = D * A;
  if (spec.noise_sigma > 0.0) {
    for (Index j = 0; j < X.cols(); ++j) {
      for (Index i = 0; i < X.rows(); ++i) {
        const double g = rng.normal();
        X(i, j) += spec.noise_sigma * (spec.nonnegative ? std::abs(g) : g);
      }
    }
  }
  return {DatasetMatrix(std::move(X)), std::move(D), std::move(A)};
}

// ---------------------------------------------------------------------------
// Train/test split.

inline std::pair<DatasetMatrix, DatasetMatrix> train_test_split(const DatasetMatrix& X, double test_fraction,
                                                                std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw DomainError("train_test_split: fraction must lie in (0, 1)");
  const Index n = X.n();
  const auto n_test = static_cast<Index>(std::ceil(double(n) * test_fraction - 1e-9));
  const Index n_train = n - n_test;
  if (n_test < 1 || n_train < 1) throw DomainError("train_test_split: split leaves an empty side");

  CounterRng rng(seed, RngStream::Split);
  std::vector<Index> perm = random_permutation(n, rng);
  std::vector<Index> test(perm.begin(), perm.begin() + n_test);
  std::vector<Index> train(perm.begin() + n_test, perm.end());
  std::sort(test.begin(), test.end());
  std::sort(train.begin(), train.end());

  auto take = [&](const std::vector<Index>& cols) {
    Matrix M(X.p(), static_cast<Index>(cols.size()));
    for (std::size_t c = 0; c < cols.size(); ++c) M.col(static_cast<Index>(c)) = X.col(cols[c]);
    return DatasetMatrix(std::move(M));
  };
  return {take(train), take(test)};
}

}  // namespace somf
