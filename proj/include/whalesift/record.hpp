#pragma once

#include <string>

#include <nlohmann/json.hpp>

namespace whalesift {

/// UTC instant as RFC 3339 text ("2024-05-01T12:00:00Z"). Kept textual so
/// manifests round-trip byte-for-byte.
struct Timestamp {
    std::string iso8601;

    static Timestamp now();
    friend bool operator==(const Timestamp&, const Timestamp&) = default;
};

/// A corpus video known only by its local id. Carries no title, channel, or
/// uploader text; the platform id lives in the private map alone.
struct AnonymizedRecord {
    std::string local_id;
    double duration_s = 0.0;
    Timestamp retrieved_at;
    std::string query;

    friend bool operator==(const AnonymizedRecord&, const AnonymizedRecord&) = default;
};

std::string format_local_id(long counter);

}  // namespace whalesift
