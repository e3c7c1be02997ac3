#include "flava/util.hpp"

#include <charconv>
#include <cstdio>

namespace flava {

std::string format_double(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    (void)ec;
    return std::string(buf, ptr);
}

std::string format_kv(std::string_view key, double v) {
    return std::string(key) + "=" + format_double(v);
}

std::string format_kv(std::string_view key, std::int64_t v) {
    return std::string(key) + "=" + std::to_string(v);
}

std::string format_kv(std::string_view key, std::string_view v) {
    return std::string(key) + "=" + std::string(v);
}

}  // namespace flava
