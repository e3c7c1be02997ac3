#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <map>
#include <string>

namespace flava {

using MatI64 = Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic>;

// Versioned binary container of named arrays, used for model checkpoints,
// codebooks, train state, and batch/mask fixtures. Entries are written in
// name order and round-trip bit-exactly (doubles stored as raw IEEE-754).
class Archive {
public:
    void put(const std::string& name, const Eigen::MatrixXd& m);
    void put(const std::string& name, const MatI64& m);
    void put(const std::string& name, const std::string& s);
    void put_scalar(const std::string& name, double v);
    void put_scalar_i64(const std::string& name, std::int64_t v);

    bool has_f64(const std::string& name) const { return f64_.count(name) != 0; }
    bool has_i64(const std::string& name) const { return i64_.count(name) != 0; }
    bool has_str(const std::string& name) const { return str_.count(name) != 0; }

    const Eigen::MatrixXd& get_f64(const std::string& name) const;
    const MatI64& get_i64(const std::string& name) const;
    const std::string& get_str(const std::string& name) const;
    double get_scalar(const std::string& name) const;
    std::int64_t get_scalar_i64(const std::string& name) const;

    const std::map<std::string, Eigen::MatrixXd>& f64_entries() const { return f64_; }
    const std::map<std::string, MatI64>& i64_entries() const { return i64_; }
    const std::map<std::string, std::string>& str_entries() const { return str_; }

    void save(const std::string& path) const;
    static Archive load(const std::string& path);

private:
    std::map<std::string, Eigen::MatrixXd> f64_;
    std::map<std::string, MatI64> i64_;
    std::map<std::string, std::string> str_;
};

}  // namespace flava
