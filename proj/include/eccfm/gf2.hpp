#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <numeric>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "eccfm/error.hpp"

namespace eccfm {

using BitVec = std::vector<std::uint8_t>;

// Dense binary parity-check matrix with per-row/column supports kept
// alongside the bit grid (the message-passing and soft-syndrome code walk
// supports, everything else reads the grid).
class ParityCheckMatrix {
 public:
  ParityCheckMatrix(int n, int m, BitVec bits)
      : n_(n), m_(m), bits_(std::move(bits)) {
    if (n <= 0 || m <= 0) throw Error("parity-check matrix needs n > 0, m > 0");
    if (m >= n) throw Error("parity-check matrix needs m < n");
    if (bits_.size() != static_cast<std::size_t>(n) * m)
      throw Error("parity-check bit grid has wrong size");
    row_support_.resize(m);
    col_support_.resize(n);
    for (int j = 0; j < m; ++j) {
      for (int i = 0; i < n; ++i) {
        std::uint8_t b = bits_[static_cast<std::size_t>(j) * n + i];
        if (b > 1) throw Error("parity-check entries must be 0 or 1");
        if (b) {
          row_support_[j].push_back(i);
          col_support_[i].push_back(j);
        }
      }
      if (row_support_[j].empty())
        throw Error("parity-check row " + std::to_string(j) + " is all zero");
    }
    for (int i = 0; i < n; ++i)
      if (col_support_[i].empty())
        throw Error("parity-check column " + std::to_string(i) + " is all zero");
    rank_ = compute_rank();
  }

  int n() const { return n_; }
  int m() const { return m_; }
  int rank() const { return rank_; }
  std::uint8_t at(int row, int col) const {
    return bits_[static_cast<std::size_t>(row) * n_ + col];
  }
  const BitVec& bits() const { return bits_; }
  const std::vector<int>& row_support(int row) const { return row_support_[row]; }
  const std::vector<int>& col_support(int col) const { return col_support_[col]; }

 private:
  int compute_rank() const {
    std::vector<BitVec> rows(m_);
    for (int j = 0; j < m_; ++j)
      rows[j].assign(bits_.begin() + static_cast<std::size_t>(j) * n_,
                     bits_.begin() + static_cast<std::size_t>(j + 1) * n_);
    int rank = 0;
    for (int col = 0; col < n_ && rank < m_; ++col) {
      int pivot = -1;
      for (int j = rank; j < m_; ++j)
        if (rows[j][col]) { pivot = j; break; }
      if (pivot < 0) continue;
      std::swap(rows[rank], rows[pivot]);
      for (int j = 0; j < m_; ++j) {
        if (j != rank && rows[j][col])
          for (int i = col; i < n_; ++i) rows[j][i] ^= rows[rank][i];
      }
      ++rank;
    }
    return rank;
  }

  int n_, m_;
  BitVec bits_;
  std::vector<std::vector<int>> row_support_, col_support_;
  int rank_ = 0;
};

// Systematic generator [I_k | P^T] plus the column permutation that maps
// systematic positions back to the original H columns. encode() emits bits
// in the original column order, so its output checks against the H the
// matrix was derived from.
struct GeneratorMatrix {
  int n = 0;
  int k = 0;
  BitVec bits;                          // k x n, systematic column order
  std::vector<int> column_permutation;  // column_permutation[pos] = original column

  std::uint8_t at(int row, int col) const {
    return bits[static_cast<std::size_t>(row) * n + col];
  }
};

inline BitVec hard_syndrome(const BitVec& bits, const ParityCheckMatrix& h) {
  if (bits.size() != static_cast<std::size_t>(h.n()))
    throw Error("hard_syndrome: word length " + std::to_string(bits.size()) +
                " does not match n = " + std::to_string(h.n()));
  BitVec s(h.m(), 0);
  for (int j = 0; j < h.m(); ++j) {
    std::uint8_t acc = 0;
    for (int i : h.row_support(j)) {
      if (bits[i] > 1) throw Error("hard_syndrome: word entries must be 0 or 1");
      acc ^= bits[i];
    }
    s[j] = acc;
  }
  return s;
}

inline GeneratorMatrix derive_generator(const ParityCheckMatrix& h) {
  const int n = h.n(), m = h.m(), k = n - m;
  std::vector<BitVec> work(m);
  for (int j = 0; j < m; ++j) {
    work[j].resize(n);
    for (int i = 0; i < n; ++i) work[j][i] = h.at(j, i);
  }
  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);

  // Reduce to [P | I_m] in permuted column order: for pivot row r the pivot
  // lives at systematic position k + r, swapping in a usable column when the
  // targeted one has no 1 below row r.
  for (int r = 0; r < m; ++r) {
    int target = k + r;
    int pivot_row = -1, pivot_pos = -1;
    for (int pos = target; pos < n && pivot_row < 0; ++pos) {
      for (int j = r; j < m; ++j)
        if (work[j][perm[pos]]) { pivot_row = j; pivot_pos = pos; break; }
    }
    for (int pos = 0; pos < k && pivot_row < 0; ++pos) {
      for (int j = r; j < m; ++j)
        if (work[j][perm[pos]]) { pivot_row = j; pivot_pos = pos; break; }
    }
    if (pivot_row < 0)
      throw Error("derive_generator: H is rank-deficient (rank " +
                  std::to_string(r) + " of " + std::to_string(m) + ")");
    std::swap(perm[target], perm[pivot_pos]);
    std::swap(work[r], work[pivot_row]);
    for (int j = 0; j < m; ++j) {
      if (j != r && work[j][perm[target]]) {
        for (int i = 0; i < n; ++i) work[j][i] ^= work[r][i];
      }
    }
  }

  GeneratorMatrix g;
  g.n = n;
  g.k = k;
  g.column_permutation = perm;
  g.bits.assign(static_cast<std::size_t>(k) * n, 0);
  for (int i = 0; i < k; ++i) {
    g.bits[static_cast<std::size_t>(i) * n + i] = 1;
    // Parity part: systematic position k + j carries P[j][i] = work[j] at
    // the message position i.
    for (int j = 0; j < m; ++j)
      g.bits[static_cast<std::size_t>(i) * n + k + j] = work[j][perm[i]];
  }
  return g;
}

inline BitVec encode(const BitVec& message, const GeneratorMatrix& g) {
  if (message.size() != static_cast<std::size_t>(g.k))
    throw Error("encode: message length " + std::to_string(message.size()) +
                " does not match k = " + std::to_string(g.k));
  BitVec out(g.n, 0);
  for (int pos = 0; pos < g.n; ++pos) {
    std::uint8_t acc = 0;
    for (int i = 0; i < g.k; ++i) {
      if (message[i] > 1) throw Error("encode: message bits must be 0 or 1");
      acc ^= static_cast<std::uint8_t>(message[i] & g.at(i, pos));
    }
    out[g.column_permutation[pos]] = acc;
  }
  return out;
}

namespace detail {

struct Token {
  long value;
  int line;
};

inline std::vector<Token> tokenize_ints(std::string_view text) {
  std::vector<Token> out;
  int line = 1;
  std::size_t i = 0;
  while (i < text.size()) {
    char c = text[i];
    if (c == '\n') { ++line; ++i; continue; }
    if (c == ' ' || c == '\t' || c == '\r') { ++i; continue; }
    bool neg = false;
    if (c == '-') { neg = true; ++i; }
    if (i >= text.size() || text[i] < '0' || text[i] > '9')
      throw ParseError("expected an integer", line);
    long v = 0;
    while (i < text.size() && text[i] >= '0' && text[i] <= '9') {
      v = v * 10 + (text[i] - '0');
      ++i;
    }
    out.push_back({neg ? -v : v, line});
  }
  return out;
}

}  // namespace detail

// MacKay alist layout: "n m", "max_col_w max_row_w", n column weights,
// m row weights, then per-column row indices and per-row column indices,
// 1-based, zero-padded to the max weights. Padding zeros are accepted but
// not required; any other whitespace arrangement parses the same.
inline ParityCheckMatrix parse_alist(std::string_view text) {
  auto toks = detail::tokenize_ints(text);
  std::size_t pos = 0;
  auto need = [&](const char* what) -> detail::Token {
    if (pos >= toks.size()) {
      int line = toks.empty() ? 1 : toks.back().line;
      throw ParseError(std::string("alist truncated, expected ") + what, line);
    }
    return toks[pos++];
  };
  auto need_value = [&](const char* what, long lo, long hi) -> long {
    auto t = need(what);
    if (t.value < lo || t.value > hi)
      throw ParseError(std::string("alist: ") + what + " out of range", t.line);
    return t.value;
  };

  const long n = need_value("n", 1, 1 << 24);
  const long m = need_value("m", 1, 1 << 24);
  const long max_cw = need_value("max column weight", 1, m);
  const long max_rw = need_value("max row weight", 1, n);
  std::vector<long> col_w(n), row_w(m);
  for (long i = 0; i < n; ++i) col_w[i] = need_value("column weight", 1, max_cw);
  for (long j = 0; j < m; ++j) row_w[j] = need_value("row weight", 1, max_rw);

  BitVec bits(static_cast<std::size_t>(n) * m, 0);
  auto read_list = [&](long count, long max_count, long index_limit,
                       const char* what, auto&& sink) {
    for (long e = 0; e < count; ++e) {
      auto t = need(what);
      if (t.value < 1 || t.value > index_limit)
        throw ParseError(std::string("alist: ") + what + " index out of range",
                         t.line);
      sink(t.value - 1);
    }
    // Optional zero padding out to the max weight.
    for (long e = count; e < max_count; ++e) {
      if (pos < toks.size() && toks[pos].value == 0) ++pos;
      else break;
    }
  };

  for (long i = 0; i < n; ++i) {
    read_list(col_w[i], max_cw, m, "column list", [&](long row) {
      auto& cell = bits[static_cast<std::size_t>(row) * n + i];
      if (cell) throw ParseError("alist: duplicate entry in column list",
                                 toks[pos - 1].line);
      cell = 1;
    });
  }
  // The row lists must describe the same matrix the column lists built.
  for (long j = 0; j < m; ++j) {
    BitVec row_seen(n, 0);
    read_list(row_w[j], max_rw, n, "row list", [&](long col) {
      if (row_seen[col]) throw ParseError("alist: duplicate entry in row list",
                                          toks[pos - 1].line);
      row_seen[col] = 1;
    });
    for (long i = 0; i < n; ++i) {
      if (row_seen[i] != bits[static_cast<std::size_t>(j) * n + i])
        throw ParseError("alist: row list disagrees with column lists",
                         toks[pos > 0 ? pos - 1 : 0].line);
    }
  }
  if (pos != toks.size())
    throw ParseError("alist: trailing tokens", toks[pos].line);
  return ParityCheckMatrix(static_cast<int>(n), static_cast<int>(m),
                           std::move(bits));
}

inline std::string serialize_alist(const ParityCheckMatrix& h) {
  const int n = h.n(), m = h.m();
  long max_cw = 0, max_rw = 0;
  for (int i = 0; i < n; ++i)
    max_cw = std::max<long>(max_cw, static_cast<long>(h.col_support(i).size()));
  for (int j = 0; j < m; ++j)
    max_rw = std::max<long>(max_rw, static_cast<long>(h.row_support(j).size()));
  std::ostringstream out;
  out << n << ' ' << m << '\n' << max_cw << ' ' << max_rw << '\n';
  for (int i = 0; i < n; ++i)
    out << h.col_support(i).size() << (i + 1 < n ? ' ' : '\n');
  for (int j = 0; j < m; ++j)
    out << h.row_support(j).size() << (j + 1 < m ? ' ' : '\n');
  for (int i = 0; i < n; ++i) {
    for (long e = 0; e < max_cw; ++e) {
      long v = e < static_cast<long>(h.col_support(i).size())
                   ? h.col_support(i)[e] + 1 : 0;
      out << v << (e + 1 < max_cw ? ' ' : '\n');
    }
  }
  for (int j = 0; j < m; ++j) {
    for (long e = 0; e < max_rw; ++e) {
      long v = e < static_cast<long>(h.row_support(j).size())
                   ? h.row_support(j)[e] + 1 : 0;
      out << v << (e + 1 < max_rw ? ' ' : '\n');
    }
  }
  return out.str();
}

// Plain 0/1 grid, one row per line, optional spaces between entries.
inline ParityCheckMatrix parse_dense(std::string_view text) {
  std::vector<BitVec> rows;
  BitVec current;
  int line = 1;
  for (std::size_t i = 0; i <= text.size(); ++i) {
    char c = i < text.size() ? text[i] : '\n';
    if (c == '0' || c == '1') {
      current.push_back(static_cast<std::uint8_t>(c - '0'));
    } else if (c == '\n') {
      if (!current.empty()) {
        if (!rows.empty() && current.size() != rows.front().size())
          throw ParseError("dense matrix rows have unequal lengths", line);
        rows.push_back(std::move(current));
        current.clear();
      }
      ++line;
    } else if (c != ' ' && c != '\t' && c != '\r') {
      throw ParseError("dense matrix entries must be 0 or 1", line);
    }
  }
  if (rows.empty()) throw ParseError("dense matrix is empty", line);
  const int m = static_cast<int>(rows.size());
  const int n = static_cast<int>(rows.front().size());
  BitVec bits;
  bits.reserve(static_cast<std::size_t>(m) * n);
  for (auto& r : rows) bits.insert(bits.end(), r.begin(), r.end());
  return ParityCheckMatrix(n, m, std::move(bits));
}

// Columns of H are the binary expansions of 1..7; the classic single-error-
// correcting code used for desk runs.
inline ParityCheckMatrix hamming74() {
  BitVec bits = {
      0, 0, 0, 1, 1, 1, 1,
      0, 1, 1, 0, 0, 1, 1,
      1, 0, 1, 0, 1, 0, 1,
  };
  return ParityCheckMatrix(7, 3, std::move(bits));
}

// Length-n repetition code: n-1 checks x_0 + x_i = 0.
inline ParityCheckMatrix repetition(int n) {
  if (n < 2) throw Error("repetition code needs n >= 2");
  BitVec bits(static_cast<std::size_t>(n - 1) * n, 0);
  for (int j = 0; j < n - 1; ++j) {
    bits[static_cast<std::size_t>(j) * n + 0] = 1;
    bits[static_cast<std::size_t>(j) * n + j + 1] = 1;
  }
  return ParityCheckMatrix(n, n - 1, std::move(bits));
}

// FNV-1a over dimensions and the bit grid; identifies a code in result files.
inline std::string code_hash(const ParityCheckMatrix& h) {
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  auto eat = [&](std::uint64_t v) {
    for (int b = 0; b < 8; ++b) {
      hash ^= (v >> (8 * b)) & 0xff;
      hash *= 0x100000001b3ULL;
    }
  };
  eat(static_cast<std::uint64_t>(h.n()));
  eat(static_cast<std::uint64_t>(h.m()));
  for (std::uint8_t b : h.bits()) {
    hash ^= b;
    hash *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(hash));
  return std::string(buf);
}

}  // namespace eccfm
