#pragma once

#include <iosfwd>
#include <string>

#include "xmd/matrix.hpp"

namespace xmd {

/// Text format: a header line "rows cols" followed by one whitespace-separated
/// line per row. Values round-trip exactly (written with max_digits10).
DenseMatrix read_matrix_text(std::istream& in);
DenseMatrix read_matrix_text_file(const std::string& path);
void write_matrix_text(std::ostream& out, const DenseMatrix& m);
void write_matrix_text_file(const std::string& path, const DenseMatrix& m);

/// Binary format: magic "XMD1", then rows and cols as little-endian uint64,
/// then the row-major payload as little-endian IEEE-754 doubles.
DenseMatrix read_matrix_binary(const std::string& path);
void write_matrix_binary(const std::string& path, const DenseMatrix& m);

/// Shortest decimal form that parses back to exactly the same double.
/// (snprintf %.17g with trailing-zero trimming; no locale surprises.)
std::string format_double(double v);

}  // namespace xmd
