#pragma once

// Scrambled Sobol' sequences: Joe-Kuo direction numbers, Matousek random
// linear scrambling with a digital shift, and the inverse-normal transform.

#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "vbill/math.hpp"

namespace vbill::rqmc {

inline constexpr int kBits = 52;  // digits carried per coordinate

struct DirectionRow {
  int s = 0;                    // polynomial degree
  std::uint32_t a = 0;          // interior polynomial coefficients
  std::vector<std::uint64_t> m; // initial direction integers
};

// Whitespace-delimited table, one row per dimension: d, s, a, m_1..m_s.
// Dimension 1 (van der Corput) is implicit and not listed.
class DirectionTable {
 public:
  static DirectionTable load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open direction table: " + path);
    DirectionTable t;
    std::string line;
    std::getline(in, line);  // header
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      std::istringstream ss(line);
      long dim;
      DirectionRow row;
      ss >> dim >> row.s >> row.a;
      row.m.resize(row.s);
      for (int i = 0; i < row.s; ++i) ss >> row.m[i];
      if (!ss) throw std::runtime_error("malformed direction table row");
      t.rows_.push_back(std::move(row));
    }
    return t;
  }

  static const DirectionTable& builtin() {
    static DirectionTable t = load(default_path());
    return t;
  }

  static std::string default_path() {
    if (const char* env = std::getenv("VBILL_SOBOL_TABLE")) return env;
#ifdef VBILL_SOBOL_TABLE_DEFAULT
    return VBILL_SOBOL_TABLE_DEFAULT;
#else
    return "data/joe-kuo-64.txt";
#endif
  }

  int max_dim() const { return static_cast<int>(rows_.size()) + 1; }
  const DirectionRow& row(int dim) const { return rows_.at(dim - 2); }

 private:
  std::vector<DirectionRow> rows_;
};

// Direction integers V[k] = m_k << (kBits - k) for one dimension, k = 1..kBits.
inline std::vector<std::uint64_t> direction_integers(const DirectionTable& t,
                                                     int dim) {
  std::vector<std::uint64_t> v(kBits + 1);
  if (dim == 1) {
    for (int k = 1; k <= kBits; ++k) v[k] = 1ull << (kBits - k);
    return v;
  }
  const DirectionRow& r = t.row(dim);
  const int s = r.s;
  for (int k = 1; k <= std::min(s, kBits); ++k) v[k] = r.m[k - 1] << (kBits - k);
  for (int k = s + 1; k <= kBits; ++k) {
    v[k] = v[k - s] ^ (v[k - s] >> s);
    for (int i = 1; i < s; ++i)
      if ((r.a >> (s - 1 - i)) & 1u) v[k] ^= v[k - i];
  }
  return v;
}

struct PointBatch {
  long count = 0;
  int dim = 0;
  Matrix points;  // count x dim, all coordinates in (0,1)
  std::uint64_t seed = 0;
  bool scrambled = false;
};

namespace detail {

// Random nonsingular lower-triangular bit matrix (unit diagonal), one row
// per output digit.
inline std::vector<std::uint64_t> random_scramble_matrix(Rng& rng) {
  std::vector<std::uint64_t> rows(kBits);
  for (int i = 0; i < kBits; ++i) {
    const std::uint64_t diag = 1ull << (kBits - 1 - i);
    const std::uint64_t below = (i == kBits - 1)
                                    ? 0ull
                                    : (rng.bits() & (diag - 1ull));
    rows[i] = diag | below;
  }
  return rows;
}

inline std::uint64_t apply_bit_matrix(const std::vector<std::uint64_t>& rows,
                                      std::uint64_t x) {
  std::uint64_t y = 0;
  for (int i = 0; i < kBits; ++i) {
    const int parity = __builtin_popcountll(rows[i] & x) & 1;
    y |= static_cast<std::uint64_t>(parity) << (kBits - 1 - i);
  }
  return y;
}

}  // namespace detail

// First S points of the Sobol' sequence. Unscrambled generation starts at
// index 1 so the all-zeros point never appears; scrambled generation uses
// indices 0..S-1 with a Matousek linear scramble and digital shift.
inline PointBatch sobol_batch(int dim, long S, std::uint64_t seed,
                              bool scrambled,
                              const DirectionTable& table =
                                  DirectionTable::builtin()) {
  if (S <= 0 || (S & (S - 1)) != 0)
    throw std::invalid_argument("sobol_batch: S must be a power of 2");
  if (dim < 1 || dim > table.max_dim())
    throw std::invalid_argument("sobol_batch: dimension outside table");

  PointBatch batch;
  batch.count = S;
  batch.dim = dim;
  batch.seed = seed;
  batch.scrambled = scrambled;
  batch.points.resize(S, dim);

  Rng rng(hash_combine(seed, 0x5b01u));
  const double scale = 0x1.0p-52;
  for (int j = 0; j < dim; ++j) {
    const auto v = direction_integers(table, j + 1);
    std::vector<std::uint64_t> scramble;
    std::uint64_t shift = 0;
    if (scrambled) {
      scramble = detail::random_scramble_matrix(rng);
      shift = rng.bits() & ((1ull << kBits) - 1ull);
    }
    const long start = scrambled ? 0 : 1;
    for (long s = 0; s < S; ++s) {
      std::uint64_t idx = static_cast<std::uint64_t>(start + s);
      std::uint64_t x = 0;
      for (int k = 1; idx != 0; ++k, idx >>= 1)
        if (idx & 1ull) x ^= v[k];
      if (scrambled) x = detail::apply_bit_matrix(scramble, x) ^ shift;
      double u = static_cast<double>(x) * scale;
      if (u <= 0.0) u = 0.5 * scale;  // only reachable unscrambled at index 0
      batch.points(s, j) = u;
    }
  }
  return batch;
}

// Coordinate-wise inverse standard-normal transform.
inline Matrix to_normal(const PointBatch& batch) {
  Matrix z(batch.count, batch.dim);
  for (long i = 0; i < batch.count; ++i)
    for (int j = 0; j < batch.dim; ++j) {
      const double u = batch.points(i, j);
      if (u <= 0.0 || u >= 1.0)
        throw std::domain_error("to_normal: coordinate outside (0,1)");
      z(i, j) = inv_norm_cdf(u);
    }
  return z;
}

}  // namespace vbill::rqmc
