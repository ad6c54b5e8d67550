#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "whalesift/seqclassifier.hpp"

namespace whalesift::seq {

inline constexpr int kCheckpointSchemaVersion = 1;

struct CheckpointMeta {
    TrainConfig train;
    std::string backbone;  // feature space the head was trained on
};

struct Checkpoint {
    NetworkParams<double> params;
    CheckpointMeta meta;
};

// Layout: one JSON header line (schema version, shapes, hyperparameters,
// seed, block table) terminated by '\n', then each parameter block as
// little-endian float32, column-major, in for_each_block order.
std::string encode_checkpoint(const NetworkParams<double>& params, const CheckpointMeta& meta);
Checkpoint decode_checkpoint(std::string_view bytes);

void save_checkpoint(const std::filesystem::path& path, const NetworkParams<double>& params, const CheckpointMeta& meta);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace whalesift::seq
