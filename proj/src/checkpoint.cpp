#include "whalesift/checkpoint.hpp"

#include <nlohmann/json.hpp>

#include "whalesift/tensor_io.hpp"

namespace whalesift::seq {

using nlohmann::json;

namespace {

json train_config_json(const TrainConfig& c) {
    return json{{"learning_rate", c.learning_rate}, {"beta1", c.beta1},   {"beta2", c.beta2},
                {"epsilon", c.epsilon},             {"epochs", c.epochs}, {"batch_size", c.batch_size},
                {"seed", c.seed},                   {"dropout", c.dropout}};
}

TrainConfig train_config_from(const json& j) {
    TrainConfig c;
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.epsilon = j.value("epsilon", c.epsilon);
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.seed = j.value("seed", c.seed);
    c.dropout = j.value("dropout", c.dropout);
    return c;
}

}  // namespace

std::string encode_checkpoint(const NetworkParams<double>& params, const CheckpointMeta& meta) {
    params.check();
    const NetworkShape s = params.shape();
    json header;
    header["format"] = "whalesift-gru-head";
    header["schema_version"] = kCheckpointSchemaVersion;
    header["shape"] = {{"input_dim", s.input_dim}, {"gru1", s.gru1}, {"gru2", s.gru2}, {"dense", s.dense}, {"classes", kNumClasses}};
    header["dropout_rate"] = params.dropout_rate;
    header["seed"] = meta.train.seed;
    header["train"] = train_config_json(meta.train);
    header["backbone"] = meta.backbone;
    json blocks = json::array();
    for_each_block([&](std::string_view name, const auto& b) {
        blocks.push_back({{"name", name}, {"rows", b.rows()}, {"cols", b.cols()}});
    }, params);
    header["blocks"] = blocks;

    std::string out = header.dump();
    out += '\n';
    for_each_block([&](std::string_view, const auto& b) {
        const Eigen::VectorXf v = b.template cast<float>().reshaped();
        append_f32_le(out, std::span<const float>(v.data(), static_cast<std::size_t>(v.size())));
    }, params);
    return out;
}

Checkpoint decode_checkpoint(std::string_view bytes) {
    const auto newline = bytes.find('\n');
    if (newline == std::string_view::npos) throw IoError("checkpoint: missing header line");
    json header;
    try {
        header = json::parse(bytes.substr(0, newline));
    } catch (const json::exception& e) {
        throw IoError(std::string("checkpoint header: ") + e.what());
    }
    if (header.value("format", "") != "whalesift-gru-head") throw IoError("checkpoint: unknown format");
    const int version = header.value("schema_version", -1);
    if (version != kCheckpointSchemaVersion)
        throw SchemaVersionError("checkpoint schema_version " + std::to_string(version) + " is not supported");

    const auto& sj = header.at("shape");
    NetworkShape s{sj.at("input_dim").get<Index>(), sj.at("gru1").get<Index>(), sj.at("gru2").get<Index>(),
                   sj.at("dense").get<Index>()};
    Checkpoint ck{NetworkParams<double>::zeros(s), {}};
    ck.params.dropout_rate = header.value("dropout_rate", kDefaultDropoutRate);
    ck.meta.train = train_config_from(header.value("train", json::object()));
    ck.meta.backbone = header.value("backbone", "");

    const std::vector<float> values = decode_f32_le(bytes.substr(newline + 1));
    std::size_t offset = 0;
    std::size_t index = 0;
    const auto& table = header.at("blocks");
    for_each_block([&](std::string_view name, auto& b) {
        if (index >= table.size() || table[index].at("name").get<std::string>() != name ||
            table[index].at("rows").get<Index>() != b.rows() || table[index].at("cols").get<Index>() != b.cols())
            throw IoError("checkpoint: block table does not match shape at '" + std::string(name) + "'");
        ++index;
        const auto n = static_cast<std::size_t>(b.size());
        if (offset + n > values.size()) throw IoError("checkpoint: truncated parameter data");
        for (std::size_t i = 0; i < n; ++i) b.reshaped()(static_cast<Index>(i)) = values[offset + i];
        offset += n;
    }, ck.params);
    if (offset != values.size()) throw IoError("checkpoint: trailing parameter data");
    ck.params.check();
    return ck;
}

void save_checkpoint(const std::filesystem::path& path, const NetworkParams<double>& params, const CheckpointMeta& meta) {
    write_file_atomic(path, encode_checkpoint(params, meta));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_file(path)); }

}  // namespace whalesift::seq
