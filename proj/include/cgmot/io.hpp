#pragma once

// Text formats:
//   histogram  one `index,value` record per line, indices 0..n-1 each exactly once
//   matrix     dense rectangular CSV, or `row,col,value` triplets (sparse)
//   grid       JSON {"rows": r, "cols": c, "q": q}
//   tree       JSON {"nodes": [...], "edges": [{"u", "v", "kernel"}], "observations": {id: ...}, "mass": F}
// Values are written with 17 significant digits, so save -> load is exact.

#include "cgmot/ctmc.hpp"
#include "cgmot/tree_cgm.hpp"
#include "cgmot/types.hpp"

#include <filesystem>
#include <iosfwd>
#include <string>

namespace cgmot::io {

/// File could not be opened, read or written.
class IOError : public Error {
 public:
  using Error::Error;
};

/// Malformed content. line() is 1-based; 0 when the error is not tied to a line.
class ParseError : public IOError {
 public:
  ParseError(const std::string& source, std::size_t line, const std::string& message);
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

/// A document refers to a file that does not exist.
class ResolutionError : public IOError {
 public:
  explicit ResolutionError(const std::filesystem::path& path);
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

/// Dense or triplet matrix as read from disk.
struct MatrixData {
  bool sparse = false;
  Matrix<double> dense;
  SparseMatrix<double> triplets;

  Matrix<double> to_dense() const { return sparse ? Matrix<double>(triplets) : dense; }
  Index rows() const { return sparse ? triplets.rows() : dense.rows(); }
  Index cols() const { return sparse ? triplets.cols() : dense.cols(); }
};

struct GridSpec {
  Index rows = 0;
  Index cols = 0;
  double q = 0;
};

Histogram<double> parse_histogram(std::istream& in, const std::string& source = "<stream>");
Histogram<double> load_histogram(const std::filesystem::path& path);
void write_histogram(std::ostream& out, const Histogram<double>& h);
void save_histogram(const std::filesystem::path& path, const Histogram<double>& h);

/// A file whose first line is `row,col,value` holds triplets. Otherwise a file
/// with exactly three columns is read as triplets unless it also has exactly
/// three rows (a dense 3x3 matrix); anything else is dense. Triplet shapes are
/// max index + 1 in each direction. Duplicate (row, col) pairs are rejected.
MatrixData parse_matrix(std::istream& in, const std::string& source = "<stream>");
MatrixData load_matrix(const std::filesystem::path& path);
void write_dense_matrix(std::ostream& out, const Matrix<double>& m);
/// Writes the header line followed by the stored entries.
void write_triplets(std::ostream& out, const SparseMatrix<double>& m);
void save_matrix(const std::filesystem::path& path, const Matrix<double>& m);
void save_matrix(const std::filesystem::path& path, const SparseMatrix<double>& m);

/// Kernel from a matrix file; triplet files give sparse kernels.
Kernel<double> load_kernel(const std::filesystem::path& path);

GridSpec parse_grid_spec(const std::string& text, const std::string& source = "<string>");
GridSpec load_grid_spec(const std::filesystem::path& path);

/// Kernels and observations are either inline JSON arrays or paths to matrix /
/// histogram files, resolved relative to `base_dir`.
TreeCGM<double> parse_tree(const std::string& text, const std::filesystem::path& base_dir,
                           const std::string& source = "<string>");
TreeCGM<double> load_tree(const std::filesystem::path& path);

/// Whole file as a string; IOError when it cannot be read.
std::string read_text(const std::filesystem::path& path);
/// Writes `text`, creating parent directories as needed.
void write_text(const std::filesystem::path& path, const std::string& text);

/// printf %.17g, which round-trips every double.
std::string format_double(double value);

}  // namespace cgmot::io
