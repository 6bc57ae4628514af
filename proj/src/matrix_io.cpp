#include "xmd/matrix_io.hpp"

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace xmd {

namespace {

void append_u64_le(std::string& buf, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t read_u64_le(std::istream& in, const std::string& path) {
    unsigned char b[8];
    if (!in.read(reinterpret_cast<char*>(b), 8)) {
        throw std::runtime_error("matrix binary: truncated header in " + path);
    }
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

}  // namespace

std::string format_double(double v) {
    char buf[40];
    for (int prec = 15; prec <= 17; ++prec) {
        std::snprintf(buf, sizeof(buf), "%.*g", prec, v);
        if (std::strtod(buf, nullptr) == v) break;
    }
    return buf;
}

DenseMatrix read_matrix_text(std::istream& in) {
    std::size_t rows = 0, cols = 0;
    if (!(in >> rows >> cols)) {
        throw std::runtime_error("matrix text: missing 'rows cols' header");
    }
    std::vector<double> values;
    values.reserve(rows * cols);
    for (std::size_t i = 0; i < rows * cols; ++i) {
        double v;
        if (!(in >> v)) {
            throw std::runtime_error("matrix text: expected " + std::to_string(rows * cols) +
                                     " values, got " + std::to_string(i));
        }
        values.push_back(v);
    }
    return DenseMatrix(rows, cols, std::move(values));
}

DenseMatrix read_matrix_text_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    return read_matrix_text(in);
}

void write_matrix_text(std::ostream& out, const DenseMatrix& m) {
    out << m.rows() << ' ' << m.cols() << '\n';
    for (std::size_t i = 0; i < m.rows(); ++i) {
        for (std::size_t j = 0; j < m.cols(); ++j) {
            if (j) out << ' ';
            out << format_double(m(i, j));
        }
        out << '\n';
    }
}

void write_matrix_text_file(const std::string& path, const DenseMatrix& m) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    write_matrix_text(out, m);
    if (!out) throw std::runtime_error("write failed for " + path);
}

DenseMatrix read_matrix_binary(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    char magic[4];
    if (!in.read(magic, 4) || std::memcmp(magic, "XMD1", 4) != 0) {
        throw std::runtime_error("matrix binary: bad magic in " + path);
    }
    const std::uint64_t rows = read_u64_le(in, path);
    const std::uint64_t cols = read_u64_le(in, path);
    std::vector<double> values(rows * cols);
    for (std::size_t i = 0; i < values.size(); ++i) {
        const std::uint64_t bits = read_u64_le(in, path);
        double d;
        std::memcpy(&d, &bits, 8);
        values[i] = d;
    }
    return DenseMatrix(rows, cols, std::move(values));
}

void write_matrix_binary(const std::string& path, const DenseMatrix& m) {
    std::string buf;
    buf.reserve(20 + 8 * m.data().size());
    buf.append("XMD1", 4);
    append_u64_le(buf, m.rows());
    append_u64_le(buf, m.cols());
    for (double d : m.data()) {
        std::uint64_t bits;
        std::memcpy(&bits, &d, 8);
        append_u64_le(buf, bits);
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw std::runtime_error("write failed for " + path);
}

}  // namespace xmd
