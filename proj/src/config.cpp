#include "whalesift/config.hpp"

#include "whalesift/corpus.hpp"

namespace whalesift::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

class Reader {
public:
    Reader(const json& doc, std::string prefix) : doc_(doc), prefix_(std::move(prefix)) {}

    std::string key(const std::string& name) const { return prefix_.empty() ? name : prefix_ + "." + name; }

    bool has(const std::string& name) const { return doc_.contains(name) && !doc_[name].is_null(); }

    Reader section(const std::string& name) const {
        if (!has(name)) return Reader(empty(), key(name));
        if (!doc_[name].is_object()) throw ConfigError("config key '" + key(name) + "' must be an object");
        return Reader(doc_[name], key(name));
    }

    template <typename T>
    T get(const std::string& name) const {
        if (!has(name)) throw ConfigError("missing config key '" + key(name) + "'");
        try {
            return doc_[name].get<T>();
        } catch (const json::exception&) {
            throw ConfigError("config key '" + key(name) + "' has the wrong type");
        }
    }

    template <typename T>
    void maybe(const std::string& name, T& out) const {
        if (has(name)) out = get<T>(name);
    }

    template <typename T>
    void maybe(const std::string& name, std::optional<T>& out) const {
        if (has(name)) out = get<T>(name);
    }

private:
    static const json& empty() {
        static const json e = json::object();
        return e;
    }
    const json& doc_;
    std::string prefix_;
};

fs::path resolve(const fs::path& base, const std::string& p) {
    fs::path path(p);
    return path.is_absolute() ? path : (base / path).lexically_normal();
}

}  // namespace

std::string PipelineConfig::feature_space() const {
    if (backbone_name_set) return backbone.name;
    if (backbone.model_path) return backbone.model_path->stem().string();
    return backbone::kTinyName;
}

const fs::path& PipelineConfig::need_path(const std::optional<fs::path>& p, const char* key) const {
    if (!p) throw ConfigError(std::string("missing config key 'paths.") + key + "'");
    return *p;
}

PipelineConfig parse_config(const json& doc, const fs::path& base_dir) {
    if (!doc.is_object()) throw ConfigError("config must be a JSON object");
    const Reader root(doc, "");
    PipelineConfig cfg;
    cfg.base_dir = base_dir;
    root.maybe("seed", cfg.seed);

    const Reader paths = root.section("paths");
    cfg.paths.corpus = resolve(base_dir, paths.get<std::string>("corpus"));
    auto opt_path = [&](const char* name, std::optional<fs::path>& out) {
        if (paths.has(name)) out = resolve(base_dir, paths.get<std::string>(name));
    };
    opt_path("videos", cfg.paths.videos);
    opt_path("frames", cfg.paths.frames);
    opt_path("strips", cfg.paths.strips);
    opt_path("features", cfg.paths.features);
    opt_path("checkpoints", cfg.paths.checkpoints);
    opt_path("reports", cfg.paths.reports);

    const Reader acq = root.section("acquisition");
    root.maybe("query", cfg.acquisition.query);
    acq.maybe("page_size", cfg.acquisition.page_size);
    acq.maybe("limit", cfg.acquisition.limit);
    acq.maybe("rate_per_s", cfg.acquisition.rate_per_s);
    acq.maybe("daily_units", cfg.acquisition.daily_units);
    acq.maybe("api_key_env", cfg.acquisition.api_key_env);
    acq.maybe("api_key", cfg.acquisition.api_key);
    acq.maybe("base_url", cfg.acquisition.base_url);
    acq.maybe("fetch_command", cfg.acquisition.fetch_command);
    acq.maybe("video_extension", cfg.acquisition.video_extension);

    const Reader sample = root.section("sample");
    sample.maybe("frames", cfg.sample.target_count);

    const Reader pre = root.section("preprocess");
    pre.maybe("side_px", cfg.preprocess.side_px);
    if (pre.has("pixel_scale")) {
        try {
            cfg.preprocess.pixel_scale = frames::parse_pixel_scale(pre.get<std::string>("pixel_scale"));
        } catch (const InvalidArgument& e) {
            throw ConfigError(pre.key("pixel_scale") + ": " + e.what());
        }
    }
    root.section("decoder").maybe("command", cfg.decoder_command);
    root.section("strips").maybe("frames", cfg.strip_frames);

    const Reader bb = root.section("backbone");
    if (bb.has("model")) {
        const auto model = bb.get<std::string>("model");
        set_backbone(cfg, model == "builtin" ? model : resolve(base_dir, model).string());
    }
    if (bb.has("name")) {
        cfg.backbone.name = bb.get<std::string>("name");
        cfg.backbone_name_set = true;
    }
    if (bb.has("seed")) cfg.backbone.seed = bb.get<std::uint64_t>("seed");
    bb.maybe("output_dim", cfg.backbone.output_dim);
    cfg.backbone.input_side_px = cfg.preprocess.side_px;
    cfg.backbone.pixel_scale = cfg.preprocess.pixel_scale;

    const Reader tr = root.section("train");
    tr.maybe("learning_rate", cfg.train.learning_rate);
    tr.maybe("beta1", cfg.train.beta1);
    tr.maybe("beta2", cfg.train.beta2);
    tr.maybe("epsilon", cfg.train.epsilon);
    tr.maybe("epochs", cfg.train.epochs);
    tr.maybe("batch_size", cfg.train.batch_size);
    tr.maybe("dropout", cfg.train.dropout);
    const Reader hidden = tr.section("hidden");
    hidden.maybe("gru1", cfg.shape.gru1);
    hidden.maybe("gru2", cfg.shape.gru2);
    hidden.maybe("dense", cfg.shape.dense);

    const Reader ev = root.section("evaluation");
    ev.maybe("folds", cfg.folds);
    ev.maybe("threads", cfg.threads);

    const Reader svc = root.section("service");
    svc.maybe("host", cfg.service.host);
    svc.maybe("port", cfg.service.port);
    if (svc.has("ui_dir")) cfg.service.ui_dir = resolve(base_dir, svc.get<std::string>("ui_dir"));
    return cfg;
}

PipelineConfig load_config(const fs::path& path) {
    json doc;
    try {
        doc = json::parse(read_file(path));
    } catch (const json::exception& e) {
        throw ConfigError(path.string() + ": " + e.what());
    } catch (const IoError& e) {
        throw ConfigError(e.what());
    }
    return parse_config(doc, fs::absolute(path).parent_path());
}

void set_backbone(PipelineConfig& cfg, const std::string& value) {
    if (value == "builtin") {
        cfg.backbone.model_path.reset();
        if (cfg.backbone.output_dim == 0) cfg.backbone.output_dim = backbone::kTinyOutputDim;
    } else {
        cfg.backbone.model_path = fs::path(value);
        cfg.backbone.seed.reset();
        cfg.backbone.output_dim = 0;  // taken from the model
    }
}

void validate(const PipelineConfig& cfg) {
    if (cfg.sample.target_count < 1) throw ConfigError("sample.frames must be >= 1");
    if (cfg.folds < 2) throw ConfigError("evaluation.folds must be >= 2");
    if (cfg.threads < 1) throw ConfigError("evaluation.threads must be >= 1");
    if (cfg.preprocess.side_px < 1) throw ConfigError("preprocess.side_px must be >= 1");
    if (cfg.strip_frames < 1) throw ConfigError("strips.frames must be >= 1");
    if (cfg.shape.gru1 < 1 || cfg.shape.gru2 < 1 || cfg.shape.dense < 1)
        throw ConfigError("train.hidden sizes must be >= 1");
    if (cfg.service.port < 0 || cfg.service.port > 65535) throw ConfigError("service.port must be in [0, 65535]");
    if (cfg.acquisition.page_size < 1 || cfg.acquisition.page_size > 50)
        throw ConfigError("acquisition.page_size must be in [1, 50]");
    if (cfg.acquisition.limit < 0) throw ConfigError("acquisition.limit must be >= 0");
    try {
        cfg.train.check();
    } catch (const InvalidArgument& e) {
        throw ConfigError(std::string("train: ") + e.what());
    }
}

}  // namespace whalesift::cli
