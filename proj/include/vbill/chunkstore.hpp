#pragma once

// Out-of-core dataset handling: CSV chunk files with a text manifest,
// chunk-at-a-time map/reduce, and random row access for subsampling.
// Binary sidecar copies are built on first read for O(1) row seeks.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "vbill/math.hpp"
#include "vbill/models.hpp"

namespace vbill::chunkstore {

namespace fs = std::filesystem;

enum class Schema { Logistic, Panel };

inline std::string schema_name(Schema s) {
  return s == Schema::Logistic ? "LOGISTIC" : "PANEL";
}
inline Schema schema_from_name(const std::string& s) {
  if (s == "LOGISTIC") return Schema::Logistic;
  if (s == "PANEL") return Schema::Panel;
  throw std::runtime_error("unknown schema tag: " + s);
}

struct ChunkInfo {
  std::string path;  // relative to the manifest directory
  long rows = 0;
  std::uint64_t hash = 0;
};

struct ChunkManifest {
  Schema schema = Schema::Logistic;
  long n = 0;
  int cols = 0;  // data columns per row (schema header columns)
  std::uint64_t fingerprint = 0;    // hash of chunk hashes, in order
  std::uint64_t content_check = 0;  // chunking-invariant row-content hash
  std::vector<ChunkInfo> chunks;
  std::string dir;  // set on read/write; not serialized

  long num_chunks() const { return static_cast<long>(chunks.size()); }

  std::vector<long> chunk_rows() const {
    std::vector<long> r;
    r.reserve(chunks.size());
    for (const auto& c : chunks) r.push_back(c.rows);
    return r;
  }
};

// Peak-memory accounting for the map/reduce path; the 8-chunk memory test
// reads these counters.
struct MemoryStats {
  static long long& current() { static long long v = 0; return v; }
  static long long& peak() { static long long v = 0; return v; }
  static void reset() { current() = 0; peak() = 0; }
  static void add(long long bytes) {
    current() += bytes;
    peak() = std::max(peak(), current());
  }
  static void sub(long long bytes) { current() -= bytes; }
};

namespace detail {

inline std::uint64_t row_hash(const double* row, int cols) {
  return fnv1a(row, static_cast<std::size_t>(cols) * sizeof(double));
}

inline std::string csv_header(Schema schema, int cols) {
  std::ostringstream h;
  if (schema == Schema::Logistic) {
    h << "y";
    for (int j = 1; j < cols; ++j) h << ",x" << j;
  } else {
    h << "panel_id,t,y";
    for (int j = 3; j < cols; ++j) h << ",x" << (j - 2);
  }
  return h.str();
}

inline void write_csv_chunk(const std::string& path, Schema schema,
                            const Matrix& rows) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write chunk: " + path);
  out << csv_header(schema, static_cast<int>(rows.cols())) << "\n";
  out.precision(17);
  for (Index i = 0; i < rows.rows(); ++i) {
    for (Index j = 0; j < rows.cols(); ++j) {
      if (j) out << ',';
      out << rows(i, j);
    }
    out << '\n';
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

inline Matrix read_csv_chunk(const std::string& path, int cols,
                             long expected_rows) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read chunk: " + path);
  std::string line;
  std::getline(in, line);  // header
  Matrix rows(expected_rows, cols);
  long r = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (r >= expected_rows) throw std::runtime_error("chunk longer than manifest: " + path);
    std::istringstream ss(line);
    std::string field;
    for (int j = 0; j < cols; ++j) {
      if (!std::getline(ss, field, ','))
        throw std::runtime_error("ragged row in " + path);
      rows(r, j) = std::stod(field);
    }
    ++r;
  }
  if (r != expected_rows) throw std::runtime_error("chunk shorter than manifest: " + path);
  return rows;
}

// Binary sidecar: 16-byte header (rows, cols) then row-major doubles.
inline std::string bin_path(const std::string& csv) { return csv + ".bin"; }

inline void ensure_bin_cache(const std::string& csv, int cols, long rows) {
  const std::string bp = bin_path(csv);
  if (fs::exists(bp) && fs::last_write_time(bp) >= fs::last_write_time(csv)) return;
  const Matrix data = read_csv_chunk(csv, cols, rows);
  std::ofstream out(bp, std::ios::binary);
  const std::int64_t r = rows, c = cols;
  out.write(reinterpret_cast<const char*>(&r), 8);
  out.write(reinterpret_cast<const char*>(&c), 8);
  Matrix rm = data.transpose();
  out.write(reinterpret_cast<const char*>(rm.data()), 8 * rows * cols);
  if (!out) throw std::runtime_error("cannot write binary cache: " + bp);
}

}  // namespace detail

inline std::string manifest_path(const std::string& dir) {
  return (fs::path(dir) / "manifest.txt").string();
}

inline void write_manifest(const ChunkManifest& m, const std::string& dir) {
  std::ofstream out(manifest_path(dir));
  if (!out) throw std::runtime_error("cannot write manifest in " + dir);
  out << "schema " << schema_name(m.schema) << "\n";
  out << "n " << m.n << "\n";
  out << "cols " << m.cols << "\n";
  out << "fingerprint " << m.fingerprint << "\n";
  out << "content_check " << m.content_check << "\n";
  for (const auto& c : m.chunks)
    out << "chunk " << c.path << " " << c.rows << " " << c.hash << "\n";
}

inline ChunkManifest read_manifest(const std::string& dir) {
  std::ifstream in(manifest_path(dir));
  if (!in) throw std::runtime_error("cannot read manifest in " + dir);
  ChunkManifest m;
  m.dir = dir;
  std::string key;
  while (in >> key) {
    if (key == "schema") {
      std::string s;
      in >> s;
      m.schema = schema_from_name(s);
    } else if (key == "n") {
      in >> m.n;
    } else if (key == "cols") {
      in >> m.cols;
    } else if (key == "fingerprint") {
      in >> m.fingerprint;
    } else if (key == "content_check") {
      in >> m.content_check;
    } else if (key == "chunk") {
      ChunkInfo c;
      in >> c.path >> c.rows >> c.hash;
      m.chunks.push_back(c);
    } else {
      throw std::runtime_error("unknown manifest key: " + key);
    }
  }
  long total = 0;
  for (const auto& c : m.chunks) total += c.rows;
  if (total != m.n) throw std::runtime_error("manifest row counts do not sum to n");
  return m;
}

// Split a row table into chunk files plus a manifest. Rows are chunked
// sequentially; pass shuffle_seed to randomize assignment first.
inline ChunkManifest write_chunks(const Matrix& rows, Schema schema,
                                  long rows_per_chunk, const std::string& dir,
                                  std::uint64_t shuffle_seed = 0,
                                  bool shuffle = false) {
  if (rows_per_chunk <= 0) throw std::invalid_argument("rows_per_chunk must be positive");
  const Index ycol = schema == Schema::Logistic ? 0 : 2;
  for (Index i = 0; i < rows.rows(); ++i) {
    const double y = rows(i, ycol);
    if (y != 0.0 && y != 1.0)
      throw std::invalid_argument("write_chunks: response must be 0 or 1 at row " +
                                  std::to_string(i));
  }
  fs::create_directories(dir);
  std::vector<long> order(static_cast<std::size_t>(rows.rows()));
  std::iota(order.begin(), order.end(), 0L);
  if (shuffle) {
    Rng rng(shuffle_seed);
    for (long i = rows.rows() - 1; i > 0; --i)
      std::swap(order[static_cast<std::size_t>(i)],
                order[static_cast<std::size_t>(rng.uniform_int(i + 1))]);
  }

  ChunkManifest m;
  m.schema = schema;
  m.n = rows.rows();
  m.cols = static_cast<int>(rows.cols());
  m.dir = dir;

  std::uint64_t fp = 0xcbf29ce484222325ull;
  std::uint64_t content = 0;
  long start = 0;
  int k = 0;
  while (start < rows.rows() || (rows.rows() == 0 && k == 0)) {
    const long count = std::min(rows_per_chunk, rows.rows() - start);
    Matrix chunk(std::max(count, 0L), rows.cols());
    for (long i = 0; i < count; ++i)
      chunk.row(i) = rows.row(order[static_cast<std::size_t>(start + i)]);
    ChunkInfo info;
    info.path = "chunk_" + std::to_string(k) + ".csv";
    info.rows = std::max(count, 0L);
    detail::write_csv_chunk((fs::path(dir) / info.path).string(), schema, chunk);
    Matrix rm = chunk.transpose();
    info.hash = fnv1a(rm.data(), static_cast<std::size_t>(chunk.size()) * sizeof(double));
    for (long i = 0; i < chunk.rows(); ++i) {
      Vector row = chunk.row(i);
      content += detail::row_hash(row.data(), m.cols);
    }
    fp = fnv1a(&info.hash, sizeof(info.hash), fp);
    m.chunks.push_back(info);
    start += std::max(count, 0L);
    ++k;
    if (rows.rows() == 0) break;
  }
  m.fingerprint = fp;
  m.content_check = content;
  write_manifest(m, dir);
  return m;
}

inline Matrix read_chunk(const ChunkManifest& m, long k) {
  if (k < 0 || k >= m.num_chunks()) throw std::out_of_range("chunk index");
  const auto& info = m.chunks[static_cast<std::size_t>(k)];
  const std::string path = (fs::path(m.dir) / info.path).string();
  Matrix data;
  try {
    data = detail::read_csv_chunk(path, m.cols, info.rows);
  } catch (const std::exception& e) {
    throw std::runtime_error("chunk " + std::to_string(k) + ": " + e.what());
  }
  return data;
}

// map(row) -> T, combined with an associative op in manifest order.
template <class T, class MapFn, class CombineFn>
T stream_map_reduce(const ChunkManifest& m, T init, MapFn&& map, CombineFn&& combine) {
  T acc = std::move(init);
  for (long k = 0; k < m.num_chunks(); ++k) {
    const Matrix chunk = read_chunk(m, k);
    const long long bytes = static_cast<long long>(chunk.size()) * 8;
    MemoryStats::add(bytes);
    for (Index i = 0; i < chunk.rows(); ++i)
      acc = combine(std::move(acc), map(Vector(chunk.row(i))));
    MemoryStats::sub(bytes);
  }
  return acc;
}

// Rows by global index, in request order; lookups grouped by chunk and
// served from the binary sidecar.
inline Matrix fetch_rows(const ChunkManifest& m, const std::vector<long>& indices) {
  Matrix out(static_cast<long>(indices.size()), m.cols);
  // global index -> (chunk, local row)
  std::vector<long> offsets(m.chunks.size() + 1, 0);
  for (std::size_t k = 0; k < m.chunks.size(); ++k)
    offsets[k + 1] = offsets[k] + m.chunks[k].rows;
  std::vector<std::vector<std::pair<long, long>>> by_chunk(m.chunks.size());
  for (std::size_t pos = 0; pos < indices.size(); ++pos) {
    const long g = indices[pos];
    if (g < 0 || g >= m.n) throw std::out_of_range("fetch_rows: index out of range");
    const auto it = std::upper_bound(offsets.begin(), offsets.end(), g);
    const long k = static_cast<long>(it - offsets.begin()) - 1;
    by_chunk[static_cast<std::size_t>(k)].push_back(
        {g - offsets[static_cast<std::size_t>(k)], static_cast<long>(pos)});
  }
  for (std::size_t k = 0; k < m.chunks.size(); ++k) {
    if (by_chunk[k].empty()) continue;
    const std::string csv = (fs::path(m.dir) / m.chunks[k].path).string();
    detail::ensure_bin_cache(csv, m.cols, m.chunks[k].rows);
    std::ifstream bin(detail::bin_path(csv), std::ios::binary);
    if (!bin) throw std::runtime_error("cannot open binary cache for " + csv);
    std::vector<double> row(static_cast<std::size_t>(m.cols));
    for (const auto& [local, pos] : by_chunk[k]) {
      bin.seekg(16 + static_cast<std::streamoff>(local) * m.cols * 8);
      bin.read(reinterpret_cast<char*>(row.data()), 8 * m.cols);
      if (!bin) throw std::runtime_error("short read from binary cache for " + csv);
      for (int j = 0; j < m.cols; ++j) out(pos, j) = row[static_cast<std::size_t>(j)];
    }
  }
  return out;
}

inline LogisticRegressionModel logistic_from_table(const Matrix& table) {
  return LogisticRegressionModel(table.rightCols(table.cols() - 1),
                                 table.col(0));
}

inline PanelLogisticModel panel_from_table(const Matrix& table) {
  // columns: panel_id, t, y, x1..xp; rows grouped by panel_id
  std::vector<Matrix> X;
  std::vector<Vector> y;
  const int p = static_cast<int>(table.cols()) - 3;
  long start = 0;
  while (start < table.rows()) {
    long end = start;
    while (end < table.rows() && table(end, 0) == table(start, 0)) ++end;
    const long T = end - start;
    X.emplace_back(table.block(start, 3, T, p));
    y.emplace_back(table.col(2).segment(start, T));
    start = end;
  }
  return PanelLogisticModel(std::move(X), std::move(y));
}

// Full-table load (desk scale convenience; chunked paths avoid this).
inline Matrix read_all(const ChunkManifest& m) {
  Matrix out(m.n, m.cols);
  long at = 0;
  for (long k = 0; k < m.num_chunks(); ++k) {
    const Matrix chunk = read_chunk(m, k);
    out.middleRows(at, chunk.rows()) = chunk;
    at += chunk.rows();
  }
  return out;
}

}  // namespace vbill::chunkstore
