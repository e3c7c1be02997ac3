#include "flava/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <vector>

#include "flava/util.hpp"

namespace flava {

namespace {

constexpr char kMagic[8] = {'F', 'L', 'A', 'V', 'A', 'R', 'C', '1'};

enum class EntryKind : std::uint8_t { F64Mat = 0, I64Mat = 1, Str = 2 };

void write_u64(std::ostream& out, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    out.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t read_u64(std::istream& in) {
    unsigned char b[8];
    in.read(reinterpret_cast<char*>(b), 8);
    if (!in) fail("corrupt_archive", "unexpected end of archive");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

void write_name(std::ostream& out, const std::string& name) {
    write_u64(out, name.size());
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
}

std::string read_name(std::istream& in) {
    std::uint64_t len = read_u64(in);
    std::string s(len, '\0');
    in.read(s.data(), static_cast<std::streamsize>(len));
    if (!in) fail("corrupt_archive", "unexpected end of archive");
    return s;
}

template <typename Scalar>
void write_matrix(std::ostream& out, const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& m) {
    write_u64(out, static_cast<std::uint64_t>(m.rows()));
    write_u64(out, static_cast<std::uint64_t>(m.cols()));
    // row-major on disk, independent of Eigen's in-memory layout
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            Scalar v = m(i, j);
            out.write(reinterpret_cast<const char*>(&v), sizeof(Scalar));
        }
}

template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> read_matrix(std::istream& in) {
    std::uint64_t rows = read_u64(in), cols = read_u64(in);
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> m(rows, cols);
    for (std::uint64_t i = 0; i < rows; ++i)
        for (std::uint64_t j = 0; j < cols; ++j) {
            Scalar v;
            in.read(reinterpret_cast<char*>(&v), sizeof(Scalar));
            if (!in) fail("corrupt_archive", "unexpected end of archive");
            m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v;
        }
    return m;
}

}  // namespace

void Archive::put(const std::string& name, const Eigen::MatrixXd& m) { f64_[name] = m; }
void Archive::put(const std::string& name, const MatI64& m) { i64_[name] = m; }
void Archive::put(const std::string& name, const std::string& s) { str_[name] = s; }

void Archive::put_scalar(const std::string& name, double v) {
    Eigen::MatrixXd m(1, 1);
    m(0, 0) = v;
    f64_[name] = m;
}

void Archive::put_scalar_i64(const std::string& name, std::int64_t v) {
    MatI64 m(1, 1);
    m(0, 0) = v;
    i64_[name] = m;
}

const Eigen::MatrixXd& Archive::get_f64(const std::string& name) const {
    auto it = f64_.find(name);
    if (it == f64_.end()) fail("missing_entry", "archive has no f64 entry '" + name + "'");
    return it->second;
}

const MatI64& Archive::get_i64(const std::string& name) const {
    auto it = i64_.find(name);
    if (it == i64_.end()) fail("missing_entry", "archive has no i64 entry '" + name + "'");
    return it->second;
}

const std::string& Archive::get_str(const std::string& name) const {
    auto it = str_.find(name);
    if (it == str_.end()) fail("missing_entry", "archive has no string entry '" + name + "'");
    return it->second;
}

double Archive::get_scalar(const std::string& name) const { return get_f64(name)(0, 0); }
std::int64_t Archive::get_scalar_i64(const std::string& name) const { return get_i64(name)(0, 0); }

void Archive::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail("io_error", "cannot write archive '" + path + "'");
    out.write(kMagic, 8);
    write_u64(out, f64_.size() + i64_.size() + str_.size());
    for (const auto& [name, m] : f64_) {
        std::uint8_t kind = static_cast<std::uint8_t>(EntryKind::F64Mat);
        out.write(reinterpret_cast<const char*>(&kind), 1);
        write_name(out, name);
        write_matrix(out, m);
    }
    for (const auto& [name, m] : i64_) {
        std::uint8_t kind = static_cast<std::uint8_t>(EntryKind::I64Mat);
        out.write(reinterpret_cast<const char*>(&kind), 1);
        write_name(out, name);
        write_matrix(out, m);
    }
    for (const auto& [name, s] : str_) {
        std::uint8_t kind = static_cast<std::uint8_t>(EntryKind::Str);
        out.write(reinterpret_cast<const char*>(&kind), 1);
        write_name(out, name);
        write_u64(out, s.size());
        out.write(s.data(), static_cast<std::streamsize>(s.size()));
    }
    if (!out) fail("io_error", "write failed for archive '" + path + "'");
}

Archive Archive::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail("missing_input", "cannot open archive '" + path + "'");
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kMagic, 8) != 0)
        fail("corrupt_archive", "'" + path + "' is not a version-1 archive");
    Archive a;
    std::uint64_t count = read_u64(in);
    for (std::uint64_t e = 0; e < count; ++e) {
        std::uint8_t kind = 0;
        in.read(reinterpret_cast<char*>(&kind), 1);
        if (!in) fail("corrupt_archive", "unexpected end of archive");
        std::string name = read_name(in);
        switch (static_cast<EntryKind>(kind)) {
            case EntryKind::F64Mat: a.f64_[name] = read_matrix<double>(in); break;
            case EntryKind::I64Mat: a.i64_[name] = read_matrix<std::int64_t>(in); break;
            case EntryKind::Str: {
                std::uint64_t len = read_u64(in);
                std::string s(len, '\0');
                in.read(s.data(), static_cast<std::streamsize>(len));
                if (!in) fail("corrupt_archive", "unexpected end of archive");
                a.str_[name] = std::move(s);
                break;
            }
            default: fail("corrupt_archive", "unknown entry kind in '" + path + "'");
        }
    }
    return a;
}

}  // namespace flava
