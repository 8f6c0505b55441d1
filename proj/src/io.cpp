#include "cgmot/io.hpp"

#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <string_view>
#include <vector>

namespace cgmot::io {

namespace fs = std::filesystem;
using nlohmann::json;

ParseError::ParseError(const std::string& source, std::size_t line, const std::string& message)
    : IOError(line > 0 ? detail::concat(source, ":", line, ": ", message) : detail::concat(source, ": ", message)),
      line_(line) {}

ResolutionError::ResolutionError(const fs::path& path)
    : IOError(detail::concat("referenced file does not exist: ", path.string())), path_(path) {}

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    out.push_back(trim(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

bool to_double(std::string_view field, double& value) {
  if (field.empty()) return false;
  if (field.front() == '+') field.remove_prefix(1);
  const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
  return ec == std::errc() && ptr == field.data() + field.size();
}

bool to_index(std::string_view field, Index& value) {
  long long v = 0;
  const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
  if (ec != std::errc() || ptr != field.data() + field.size() || v < 0) return false;
  value = static_cast<Index>(v);
  return true;
}

struct Line {
  std::size_t number;
  std::vector<std::string_view> fields;
};

/// Non-blank lines split into fields. Views point into `storage`.
std::vector<Line> read_records(std::istream& in, std::vector<std::string>& storage) {
  std::string raw;
  std::vector<std::size_t> numbers;
  std::size_t number = 0;
  while (std::getline(in, raw)) {
    ++number;
    if (trim(raw).empty()) continue;
    storage.push_back(raw);
    numbers.push_back(number);
  }
  std::vector<Line> lines;
  for (std::size_t i = 0; i < storage.size(); ++i) lines.push_back({numbers[i], split_fields(storage[i])});
  return lines;
}

bool is_header(const Line& line, std::initializer_list<std::string_view> names) {
  if (line.fields.size() != names.size()) return false;
  return std::equal(names.begin(), names.end(), line.fields.begin());
}

std::ifstream open_input(const fs::path& path) {
  std::ifstream in(path);
  if (!in) {
    if (!fs::exists(path)) throw IOError(detail::concat("cannot open ", path.string(), ": no such file"));
    throw IOError(detail::concat("cannot open ", path.string()));
  }
  return in;
}

std::ofstream open_output(const fs::path& path) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
    if (ec) throw IOError(detail::concat("cannot create directory ", path.parent_path().string(), ": ", ec.message()));
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IOError(detail::concat("cannot write ", path.string()));
  return out;
}

void finish_output(std::ofstream& out, const fs::path& path) {
  out.flush();
  if (!out) throw IOError(detail::concat("write to ", path.string(), " failed"));
}

MatrixData parse_triplets(const std::vector<Line>& lines, std::size_t first, const std::string& source) {
  std::vector<Eigen::Triplet<double>> entries;
  std::set<std::pair<Index, Index>> seen;
  Index rows = 0, cols = 0;
  for (std::size_t k = first; k < lines.size(); ++k) {
    const auto& line = lines[k];
    if (line.fields.size() != 3) throw ParseError(source, line.number, "expected row,col,value");
    Index r = 0, c = 0;
    double v = 0;
    if (!to_index(line.fields[0], r) || !to_index(line.fields[1], c))
      throw ParseError(source, line.number, "row and column must be non-negative integers");
    if (!to_double(line.fields[2], v)) throw ParseError(source, line.number, "value is not a number");
    if (!seen.insert({r, c}).second)
      throw ParseError(source, line.number, detail::concat("duplicate entry (", r, ",", c, ")"));
    entries.emplace_back(r, c, v);
    rows = std::max(rows, r + 1);
    cols = std::max(cols, c + 1);
  }
  MatrixData out;
  out.sparse = true;
  out.triplets.resize(rows, cols);
  out.triplets.setFromTriplets(entries.begin(), entries.end());
  out.triplets.makeCompressed();
  return out;
}

MatrixData parse_dense(const std::vector<Line>& lines, const std::string& source) {
  const std::size_t cols = lines.front().fields.size();
  MatrixData out;
  out.dense.resize(static_cast<Index>(lines.size()), static_cast<Index>(cols));
  for (std::size_t r = 0; r < lines.size(); ++r) {
    const auto& line = lines[r];
    if (line.fields.size() != cols)
      throw ParseError(source, line.number,
                       detail::concat("expected ", cols, " columns, found ", line.fields.size()));
    for (std::size_t c = 0; c < cols; ++c) {
      double v = 0;
      if (!to_double(line.fields[c], v))
        throw ParseError(source, line.number, detail::concat("column ", c + 1, " is not a number"));
      out.dense(static_cast<Index>(r), static_cast<Index>(c)) = v;
    }
  }
  return out;
}

fs::path resolve(const fs::path& base_dir, const std::string& ref) {
  fs::path p(ref);
  if (p.is_relative()) p = base_dir / p;
  if (!fs::exists(p)) throw ResolutionError(p);
  return p;
}

}  // namespace

std::string format_double(double value) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", value);
  return buf;
}

std::string read_text(const fs::path& path) {
  std::ifstream in = open_input(path);
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IOError(detail::concat("read from ", path.string(), " failed"));
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out = open_output(path);
  out << text;
  finish_output(out, path);
}

// ---------------------------------------------------------------------------

Histogram<double> parse_histogram(std::istream& in, const std::string& source) {
  std::vector<std::string> storage;
  const auto lines = read_records(in, storage);
  std::size_t first = 0;
  if (!lines.empty() && is_header(lines.front(), {"index", "value"})) first = 1;
  std::vector<double> values(lines.size() - first, 0.0);
  std::vector<char> filled(values.size(), 0);
  for (std::size_t k = first; k < lines.size(); ++k) {
    const auto& line = lines[k];
    if (line.fields.size() != 2) throw ParseError(source, line.number, "expected index,value");
    Index i = 0;
    double v = 0;
    if (!to_index(line.fields[0], i)) throw ParseError(source, line.number, "index must be a non-negative integer");
    if (!to_double(line.fields[1], v)) throw ParseError(source, line.number, "value is not a number");
    if (static_cast<std::size_t>(i) >= values.size())
      throw ParseError(source, line.number, detail::concat("index ", i, " leaves a gap (", values.size(), " records)"));
    if (filled[static_cast<std::size_t>(i)]) throw ParseError(source, line.number, detail::concat("duplicate index ", i));
    if (!(v >= 0.0) || !std::isfinite(v))
      throw ParseError(source, line.number, "histogram values must be finite and non-negative");
    values[static_cast<std::size_t>(i)] = v;
    filled[static_cast<std::size_t>(i)] = 1;
  }
  if (values.empty()) throw ParseError(source, 0, "histogram is empty");
  return Histogram<double>(Eigen::Map<const Vector<double>>(values.data(), static_cast<Index>(values.size())));
}

Histogram<double> load_histogram(const fs::path& path) {
  std::ifstream in = open_input(path);
  return parse_histogram(in, path.string());
}

void write_histogram(std::ostream& out, const Histogram<double>& h) {
  for (Index i = 0; i < h.size(); ++i) out << i << ',' << format_double(h[i]) << '\n';
}

void save_histogram(const fs::path& path, const Histogram<double>& h) {
  std::ofstream out = open_output(path);
  write_histogram(out, h);
  finish_output(out, path);
}

// ---------------------------------------------------------------------------

MatrixData parse_matrix(std::istream& in, const std::string& source) {
  std::vector<std::string> storage;
  const auto lines = read_records(in, storage);
  if (lines.empty()) throw ParseError(source, 0, "matrix is empty");
  if (is_header(lines.front(), {"row", "col", "value"})) return parse_triplets(lines, 1, source);
  if (lines.front().fields.size() == 3 && lines.size() != 3) return parse_triplets(lines, 0, source);
  return parse_dense(lines, source);
}

MatrixData load_matrix(const fs::path& path) {
  std::ifstream in = open_input(path);
  return parse_matrix(in, path.string());
}

void write_dense_matrix(std::ostream& out, const Matrix<double>& m) {
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) out << (j ? "," : "") << format_double(m(i, j));
    out << '\n';
  }
}

void write_triplets(std::ostream& out, const SparseMatrix<double>& m) {
  out << "row,col,value\n";
  // Row-major order reads naturally.
  const Eigen::SparseMatrix<double, Eigen::RowMajor> r(m);
  for (Index k = 0; k < r.outerSize(); ++k)
    for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator it(r, k); it; ++it)
      out << it.row() << ',' << it.col() << ',' << format_double(it.value()) << '\n';
}

void save_matrix(const fs::path& path, const Matrix<double>& m) {
  std::ofstream out = open_output(path);
  write_dense_matrix(out, m);
  finish_output(out, path);
}

void save_matrix(const fs::path& path, const SparseMatrix<double>& m) {
  std::ofstream out = open_output(path);
  write_triplets(out, m);
  finish_output(out, path);
}

Kernel<double> load_kernel(const fs::path& path) {
  const MatrixData m = load_matrix(path);
  if (m.rows() != m.cols())
    throw ParseError(path.string(), 0, detail::concat("kernel must be square, got ", m.rows(), "x", m.cols()));
  if (m.sparse) return Kernel<double>(m.triplets);
  return Kernel<double>(m.dense);
}

// ---------------------------------------------------------------------------

namespace {

json parse_json(const std::string& text, const std::string& source) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    // nlohmann reports a byte offset; turn it into a line number.
    const std::size_t offset = std::min<std::size_t>(e.byte, text.size());
    const std::size_t line = 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + offset, '\n'));
    throw ParseError(source, line, e.what());
  }
}

Kernel<double> json_kernel(const json& value, const fs::path& base_dir, const std::string& source) {
  if (value.is_string()) return load_kernel(resolve(base_dir, value.get<std::string>()));
  if (!value.is_array() || value.empty()) throw ParseError(source, 0, "kernel must be a path or a nested array");
  const Index n = static_cast<Index>(value.size());
  Matrix<double> m(n, n);
  for (Index i = 0; i < n; ++i) {
    const auto& row = value[static_cast<std::size_t>(i)];
    if (!row.is_array() || static_cast<Index>(row.size()) != n)
      throw ParseError(source, 0, "inline kernel must be a square nested array");
    for (Index j = 0; j < n; ++j) {
      if (!row[static_cast<std::size_t>(j)].is_number()) throw ParseError(source, 0, "inline kernel entry is not a number");
      m(i, j) = row[static_cast<std::size_t>(j)].get<double>();
    }
  }
  return Kernel<double>(std::move(m));
}

Histogram<double> json_histogram(const json& value, const fs::path& base_dir, const std::string& source) {
  if (value.is_string()) return load_histogram(resolve(base_dir, value.get<std::string>()));
  if (!value.is_array() || value.empty()) throw ParseError(source, 0, "observation must be a path or an array");
  Vector<double> v(static_cast<Index>(value.size()));
  for (std::size_t i = 0; i < value.size(); ++i) {
    if (!value[i].is_number()) throw ParseError(source, 0, "inline observation entry is not a number");
    v[static_cast<Index>(i)] = value[i].get<double>();
  }
  return Histogram<double>(std::move(v));
}

NodeId json_node_id(const json& value, const std::string& source) {
  if (value.is_number_integer()) return value.get<NodeId>();
  if (value.is_string()) {
    const auto s = value.get<std::string>();
    NodeId id = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), id);
    if (ec == std::errc() && ptr == s.data() + s.size()) return id;
  }
  throw ParseError(source, 0, "node ids must be integers");
}

}  // namespace

GridSpec parse_grid_spec(const std::string& text, const std::string& source) {
  const json doc = parse_json(text, source);
  try {
    GridSpec spec;
    spec.rows = doc.at("rows").get<Index>();
    spec.cols = doc.at("cols").get<Index>();
    spec.q = doc.at("q").get<double>();
    return spec;
  } catch (const json::exception& e) {
    throw ParseError(source, 0, e.what());
  }
}

GridSpec load_grid_spec(const fs::path& path) { return parse_grid_spec(read_text(path), path.string()); }

TreeCGM<double> parse_tree(const std::string& text, const fs::path& base_dir, const std::string& source) {
  const json doc = parse_json(text, source);
  std::vector<NodeId> nodes;
  std::vector<TreeEdge<double>> edges;
  std::map<NodeId, Histogram<double>> observations;
  double mass = 0;
  try {
    for (const auto& id : doc.at("nodes")) nodes.push_back(json_node_id(id, source));
    for (const auto& e : doc.at("edges"))
      edges.push_back({json_node_id(e.at("u"), source), json_node_id(e.at("v"), source),
                       json_kernel(e.at("kernel"), base_dir, source)});
    if (doc.contains("observations")) {
      const auto& obs = doc.at("observations");
      if (!obs.is_object()) throw ParseError(source, 0, "observations must be an object keyed by node id");
      for (const auto& [key, value] : obs.items())
        observations.emplace(json_node_id(json(key), source), json_histogram(value, base_dir, source));
    }
    mass = doc.at("mass").get<double>();
  } catch (const json::exception& e) {
    throw ParseError(source, 0, e.what());
  }
  return TreeCGM<double>(std::move(nodes), std::move(edges), std::move(observations), mass);
}

TreeCGM<double> load_tree(const fs::path& path) {
  return parse_tree(read_text(path), path.parent_path(), path.string());
}

}  // namespace cgmot::io
