#include "whalesift/record.hpp"

#include <chrono>
#include <cstdio>
#include <ctime>

namespace whalesift {

Timestamp Timestamp::now() {
    const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm utc{};
    gmtime_r(&t, &utc);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &utc);
    return Timestamp{buf};
}

std::string format_local_id(long counter) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "vid_%04ld", counter);
    return buf;
}

}  // namespace whalesift
