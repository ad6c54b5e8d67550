#include "whalesift/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <iomanip>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <csignal>
#include <pthread.h>
#include <unistd.h>

#include "whalesift/acquisition.hpp"
#include "whalesift/annotation_service.hpp"
#include "whalesift/backbone.hpp"
#include "whalesift/checkpoint.hpp"
#include "whalesift/config.hpp"
#include "whalesift/corpus.hpp"
#include "whalesift/crossval.hpp"
#include "whalesift/evaluation.hpp"
#include "whalesift/framepipe.hpp"
#include "whalesift/rng.hpp"
#include "whalesift/synthetic.hpp"
#include "whalesift/tensor_io.hpp"

namespace whalesift::cli {

namespace fs = std::filesystem;

namespace {

constexpr const char* kFrameTensorName = "frames";
constexpr const char* kCheckpointName = "model.ckpt";
constexpr const char* kSyntheticQuery = "synthetic";
constexpr double kWholeVideoEnd = 1e9;

struct Flags {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> backbone;
    std::optional<int> frames;
    std::optional<int> folds;
    std::optional<std::string> out;
    bool dry_run = false;

    // subcommand options
    std::vector<std::string> ids;
    std::optional<std::string> fixtures;
    std::optional<long> limit;
    bool force = false;
    std::optional<int> threads;
    std::optional<std::string> checkpoint;
    double start_s = 0.0;
    double end_s = kWholeVideoEnd;
    std::optional<std::string> input;
    std::string format = "text";
    std::optional<std::string> host;
    std::optional<int> port;
    int count = 200;
    int dim = 8;
    double separation = 2.0;
};

struct Context {
    PipelineConfig cfg;
    const Flags& flags;
    std::ostream& out;
    std::ostream& err;

    bool dry() const { return flags.dry_run; }

    /// --out if given, otherwise the configured path.
    fs::path output_dir(const std::optional<fs::path>& configured, const char* key) const {
        if (flags.out) return fs::absolute(*flags.out).lexically_normal();
        return cfg.need_path(configured, key);
    }
};

std::string fixed(double v, int digits = 6) {
    std::ostringstream s;
    s << std::fixed << std::setprecision(digits) << v;
    return s.str();
}

/// Manifest entries named by `ids`, or all of them.
std::vector<LabeledVideo*> select(Manifest& m, const std::vector<std::string>& ids) {
    std::vector<LabeledVideo*> out;
    if (ids.empty()) {
        for (auto& v : m.videos) out.push_back(&v);
        return out;
    }
    for (const auto& id : ids) out.push_back(&m.at(id));
    return out;
}

fs::path video_path(const PipelineConfig& cfg, const std::string& local_id) {
    return cfg.need_path(cfg.paths.videos, "videos") / (local_id + "." + cfg.acquisition.video_extension);
}

fs::path frame_tensor_stem(const fs::path& frames_root, const std::string& local_id) {
    return frame_dir(frames_root, local_id) / kFrameTensorName;
}

std::uint64_t interval_seed(std::uint64_t seed, const std::string& local_id) {
    return derive_seed(seed, "irrelevant-interval/" + local_id);
}

void print_plan(Context& ctx, const std::string& subcommand, const std::vector<std::string>& steps) {
    ctx.out << "dry run: " << subcommand << "\n";
    for (const auto& s : steps) ctx.out << "  " << s << "\n";
}

// ---- search ---------------------------------------------------------------

std::string resolve_api_key(const AcquisitionConfig& acq) {
    if (const char* env = std::getenv(acq.api_key_env.c_str()); env && *env) return env;
    if (acq.api_key && !acq.api_key->empty()) return *acq.api_key;
    throw acq::AuthFailureError("no API key: set $" + acq.api_key_env + " or acquisition.api_key");
}

int cmd_search(Context& ctx) {
    const auto& acq_cfg = ctx.cfg.acquisition;
    if (!acq_cfg.query) throw ConfigError("missing config key 'query'");
    const long limit = ctx.flags.limit.value_or(acq_cfg.limit);
    if (limit < 0) throw ConfigError("--limit must be >= 0");
    if (ctx.dry()) {
        print_plan(ctx, "search",
                   {"query: " + *acq_cfg.query, "limit: " + std::to_string(limit),
                    "source: " + (ctx.flags.fixtures ? "recorded responses in " + *ctx.flags.fixtures : acq_cfg.base_url),
                    "manifest: " + ctx.cfg.manifest_path().string(),
                    "private map: " + ctx.cfg.private_map_path().string()});
        return kExitOk;
    }

    std::unique_ptr<acq::HttpTransport> transport;
    std::unique_ptr<acq::Clock> clock;
    std::string key;
    if (ctx.flags.fixtures) {
        transport = std::make_unique<acq::FixtureTransport>(*ctx.flags.fixtures);
        clock = std::make_unique<acq::SimulatedClock>();
        try {
            key = resolve_api_key(acq_cfg);
        } catch (const acq::AuthFailureError&) {
            key = "offline";
        }
    } else {
        key = resolve_api_key(acq_cfg);
        transport = acq::make_http_transport(acq_cfg.base_url);
        clock = std::make_unique<acq::SteadyClock>();
    }

    fs::create_directories(ctx.cfg.paths.corpus);
    FileLock lock(ctx.cfg.manifest_path());
    Manifest manifest = fs::exists(ctx.cfg.manifest_path()) ? load(ctx.cfg.manifest_path()) : Manifest{};
    acq::PrivateMap map = acq::PrivateMap::load(ctx.cfg.private_map_path());

    acq::TokenBucket limiter(acq_cfg.rate_per_s, 1.0, *clock);
    acq::QuotaBudget budget{acq_cfg.daily_units, 0};
    acq::YouTubeClient client(*transport, key, limiter, &budget);
    const auto found = acq::search_all(client, *acq_cfg.query, static_cast<std::size_t>(limit), acq_cfg.page_size);

    std::set<long> used;
    for (const auto& v : manifest.videos)
        if (auto c = acq::parse_local_id(v.id())) used.insert(*c);
    for (const auto& e : map.entries())
        if (auto c = acq::parse_local_id(e.local_id)) used.insert(*c);
    acq::Anonymizer anonymizer(std::move(used));

    std::size_t added = 0, known = 0;
    const Timestamp now = Timestamp::now();
    for (const auto& meta : found) {
        if (map.has_platform_id(meta.platform_video_id)) {
            ++known;
            continue;
        }
        acq::Anonymized a = anonymizer.anonymize(meta, anonymizer.next_counter(), *acq_cfg.query, now);
        add_video(manifest, a.record);
        map.add(a.mapping);
        ++added;
    }
    if (added > 0) {
        map.save(ctx.cfg.private_map_path());  // before the manifest, so every manifest id is resolvable
        save(manifest, ctx.cfg.manifest_path());
    }
    ctx.out << "search: " << found.size() << " results, " << added << " new, " << known << " already in corpus ("
            << budget.used << " quota units)\n";
    return kExitOk;
}

// ---- fetch ----------------------------------------------------------------

int cmd_fetch(Context& ctx) {
    const auto& cfg = ctx.cfg;
    if (!cfg.acquisition.fetch_command) throw ConfigError("missing config key 'acquisition.fetch_command'");
    const fs::path videos = cfg.need_path(cfg.paths.videos, "videos");
    Manifest manifest = load(cfg.manifest_path());
    const acq::PrivateMap map = acq::PrivateMap::load(cfg.private_map_path());
    std::vector<std::string> todo;
    for (const LabeledVideo* v : select(manifest, ctx.flags.ids))
        if (!fs::exists(video_path(cfg, v->id()))) todo.push_back(v->id());
    if (ctx.dry()) {
        std::vector<std::string> steps{"videos: " + videos.string()};
        for (const auto& id : todo) steps.push_back("fetch " + id);
        print_plan(ctx, "fetch", steps);
        return kExitOk;
    }
    FileLock lock(cfg.manifest_path());
    int failed = 0;
    for (const auto& id : todo) {
        const auto platform = map.platform_id(id);
        try {
            if (!platform) throw acq::FetchError("no private-map entry");
            acq::fetch_video(*cfg.acquisition.fetch_command, *platform, video_path(cfg, id));
        } catch (const Error& e) {
            ctx.err << id << ": " << e.what() << "\n";
            ++failed;
        }
    }
    ctx.out << "fetch: " << todo.size() - static_cast<std::size_t>(failed) << " fetched, " << failed << " failed\n";
    return failed ? kExitDomain : kExitOk;
}

// ---- prepare-frames -------------------------------------------------------

bool frames_current(const fs::path& frames_root, const std::string& id, const Interval& interval,
                    const PipelineConfig& cfg) {
    const fs::path stem = frame_tensor_stem(frames_root, id);
    if (!fs::exists(tensor_sidecar_path(stem)) || !fs::exists(frame_dir(frames_root, id) / "index.json")) return false;
    try {
        if (load_frame_index(frames_root, id).interval != interval) return false;
        const auto meta = nlohmann::json::parse(read_file(tensor_sidecar_path(stem)));
        const auto shape = meta.at("shape").get<std::vector<std::int64_t>>();
        return shape.size() == 4 && shape[0] == cfg.sample.target_count && shape[1] == cfg.preprocess.side_px &&
               meta.value("pixel_scale", std::string{}) == frames::to_string(cfg.preprocess.pixel_scale);
    } catch (const std::exception&) {
        return false;
    }
}

void build_strip(const PipelineConfig& cfg, const LabeledVideo& v, const fs::path& strips_root) {
    const fs::path scratch = strips_root / (v.id() + ".decode");
    const Interval whole{0.0, v.record.duration_s > 0 ? v.record.duration_s : kWholeVideoEnd, false};
    const auto decoded = frames::enumerate_frames(video_path(cfg, v.id()), whole, *cfg.decoder_command, scratch);
    if (decoded.frames.empty()) throw frames::DecoderError("decoder produced no frames for " + v.id());
    const auto picks =
        frames::uniform_sample_indices(decoded.frames.size(),
                                       std::min(decoded.frames.size(), static_cast<std::size_t>(cfg.strip_frames)));
    const fs::path dir = frame_dir(strips_root, v.id());
    fs::remove_all(dir);
    fs::create_directories(dir);
    FrameIndex index{v.id(), whole, decoded.native_count, {}};
    index.interval.end_s = decoded.frames.back().timestamp_s;
    for (std::size_t n = 0; n < picks.size(); ++n) {
        const auto& ref = decoded.frames[picks[n]];
        fs::copy_file(ref.path, frame_path(strips_root, v.id(), static_cast<std::int64_t>(n)));
        index.timestamps_s.push_back(ref.timestamp_s);
    }
    save_frame_index(strips_root, index);
    fs::remove_all(scratch);
}

int cmd_prepare_frames(Context& ctx) {
    const auto& cfg = ctx.cfg;
    if (!cfg.decoder_command) throw ConfigError("missing config key 'decoder.command'");
    const fs::path frames_root = ctx.output_dir(cfg.paths.frames, "frames");
    cfg.need_path(cfg.paths.videos, "videos");
    Manifest manifest = load(cfg.manifest_path());

    struct Job {
        LabeledVideo* video;
        Interval interval;
        bool assign;
    };
    std::vector<Job> jobs;
    std::vector<LabeledVideo*> strips, skipped;
    for (LabeledVideo* v : select(manifest, ctx.flags.ids)) {
        if (!v->label) {
            if (cfg.paths.strips && !fs::exists(frame_dir(*cfg.paths.strips, v->id()) / "index.json")) strips.push_back(v);
            continue;
        }
        if (v->interval) {
            jobs.push_back({v, *v->interval, false});
        } else if (*v->label == Label::irrelevant) {
            jobs.push_back({v, assign_irrelevant_interval(v->record.duration_s, interval_seed(cfg.seed, v->id())), true});
        } else {
            skipped.push_back(v);
        }
    }
    std::erase_if(jobs, [&](const Job& j) {
        return !j.assign && !ctx.flags.force && frames_current(frames_root, j.video->id(), j.interval, cfg);
    });

    for (const LabeledVideo* v : skipped) ctx.err << v->id() << ": relevant but no interval marked; skipped\n";
    if (ctx.dry()) {
        std::vector<std::string> steps{"frames: " + frames_root.string(), "T = " + std::to_string(cfg.sample.target_count) +
                                                                              ", side " + std::to_string(cfg.preprocess.side_px) + " px"};
        for (const auto& j : jobs)
            steps.push_back((j.assign ? "assign + decode " : "decode ") + j.video->id() + " [" + fixed(j.interval.start_s, 3) +
                            ", " + fixed(j.interval.end_s, 3) + "]");
        for (const auto* v : strips) steps.push_back("strip " + v->id());
        print_plan(ctx, "prepare-frames", steps);
        return kExitOk;
    }

    FileLock lock(cfg.manifest_path());
    bool dirty = false;
    int failed = 0, done = 0;
    for (auto& j : jobs) {
        const std::string id = j.video->id();
        try {
            if (j.assign) {
                set_interval(manifest, id, j.interval);
                dirty = true;
            }
            const fs::path dir = frame_dir(frames_root, id);
            const auto decoded = frames::enumerate_frames(video_path(cfg, id), j.interval, *cfg.decoder_command, dir);
            const frames::FrameSequence seq = frames::prepare_sequence(id, decoded.frames, cfg.sample, cfg.preprocess);
            frames::write_frame_sequence(frame_tensor_stem(frames_root, id), seq,
                                         {{"pixel_scale", frames::to_string(cfg.preprocess.pixel_scale)}});
            FrameIndex index{id, j.interval, decoded.native_count, {}};
            for (const auto& f : decoded.frames) index.timestamps_s.push_back(f.timestamp_s);
            save_frame_index(frames_root, index);
            if (j.video->frame_count != decoded.native_count) {
                set_frame_count(manifest, id, decoded.native_count);
                dirty = true;
            }
            ++done;
        } catch (const Error& e) {
            ctx.err << id << ": " << e.what() << "\n";
            ++failed;
        }
    }
    int strip_count = 0;
    for (const LabeledVideo* v : strips) {
        try {
            build_strip(cfg, *v, *cfg.paths.strips);
            ++strip_count;
        } catch (const Error& e) {
            ctx.err << v->id() << " (strip): " << e.what() << "\n";
            ++failed;
        }
    }
    if (dirty) save(manifest, cfg.manifest_path());
    ctx.out << "prepare-frames: " << done << " sequences, " << strip_count << " strips, " << skipped.size()
            << " skipped, " << failed << " failed\n";
    return failed ? kExitDomain : kExitOk;
}

// ---- extract-features -----------------------------------------------------

backbone::BackboneSpec backbone_spec(const PipelineConfig& cfg) {
    backbone::BackboneSpec spec = cfg.backbone;
    spec.name = cfg.feature_space();
    return spec;
}

int cmd_extract_features(Context& ctx) {
    const auto& cfg = ctx.cfg;
    const fs::path frames_root = cfg.need_path(cfg.paths.frames, "frames");
    const fs::path features_root = ctx.output_dir(cfg.paths.features, "features");
    const std::string space = cfg.feature_space();
    Manifest manifest = load(cfg.manifest_path());
    std::vector<std::string> todo;
    for (const LabeledVideo* v : select(manifest, ctx.flags.ids)) {
        if (!fs::exists(tensor_sidecar_path(frame_tensor_stem(frames_root, v->id())))) continue;
        if (!ctx.flags.force && backbone::features_cached(features_root, space, v->id())) continue;
        todo.push_back(v->id());
    }
    const auto net = backbone::load_backbone(backbone_spec(cfg));
    if (ctx.dry()) {
        std::vector<std::string> steps{"backbone: " + space + " (" + std::to_string(net->info().output_dim) + " features, " +
                                           std::to_string(net->info().input_side_px) + " px)",
                                       "features: " + (features_root / space).string()};
        for (const auto& id : todo) steps.push_back("extract " + id);
        print_plan(ctx, "extract-features", steps);
        return kExitOk;
    }
    for (const auto& id : todo) {
        const auto seq = frames::read_frame_sequence(frame_tensor_stem(frames_root, id));
        backbone::write_features(features_root, space, backbone::extract(*net, seq));
    }
    ctx.out << "extract-features: " << todo.size() << " videos -> " << (features_root / space).string() << "\n";
    return kExitOk;
}

// ---- train / crossval -----------------------------------------------------

std::vector<eval::Example> load_examples(Context& ctx, const Manifest& manifest) {
    const fs::path features_root = ctx.cfg.need_path(ctx.cfg.paths.features, "features");
    const std::string space = ctx.cfg.feature_space();
    std::vector<eval::Example> out;
    std::size_t missing = 0;
    for (const auto& v : manifest.videos) {
        if (!v.label) continue;
        if (!backbone::features_cached(features_root, space, v.id())) {
            ++missing;
            continue;
        }
        const auto f = backbone::read_features(backbone::feature_stem(features_root, space, v.id()));
        out.push_back({v.id(), *v.label, f.features.cast<double>()});
    }
    if (missing) ctx.err << missing << " labeled videos have no '" << space << "' features; left out\n";
    if (out.empty()) throw Error("no labeled videos with '" + space + "' features under " + features_root.string());
    return out;
}

seq::TrainConfig train_config(const PipelineConfig& cfg) {
    seq::TrainConfig t = cfg.train;
    t.seed = derive_seed(cfg.seed, "train");
    return t;
}

int cmd_train(Context& ctx) {
    const auto& cfg = ctx.cfg;
    const fs::path dir = ctx.output_dir(cfg.paths.checkpoints, "checkpoints");
    const Manifest manifest = load(cfg.manifest_path());
    const auto examples = load_examples(ctx, manifest);
    const seq::TrainConfig tc = train_config(cfg);
    if (ctx.dry()) {
        print_plan(ctx, "train",
                   {std::to_string(examples.size()) + " labeled sequences, feature space " + cfg.feature_space(),
                    std::to_string(tc.epochs) + " epochs, batch " + std::to_string(tc.batch_size) + ", seed " +
                        std::to_string(tc.seed),
                    "checkpoint: " + (dir / kCheckpointName).string()});
        return kExitOk;
    }
    std::vector<seq::LabeledSequence<double>> data;
    for (const auto& e : examples) data.push_back({e.features, e.label});
    const auto result = seq::train<double>(data, tc, cfg.shape);
    save_checkpoint(dir / kCheckpointName, result.params, {tc, cfg.feature_space()});
    ctx.out << "train: " << data.size() << " sequences, final loss "
            << (result.loss_history.empty() ? std::string("n/a") : fixed(result.loss_history.back()))
            << " -> " << (dir / kCheckpointName).string() << "\n";
    return kExitOk;
}

std::string label_name(Label l) { return std::string(to_string(l)); }

int cmd_crossval(Context& ctx) {
    const auto& cfg = ctx.cfg;
    const fs::path dir = ctx.output_dir(cfg.paths.reports, "reports");
    const Manifest manifest = load(cfg.manifest_path());
    const auto examples = load_examples(ctx, manifest);
    eval::CrossValOptions opt;
    opt.k = cfg.folds;
    opt.seed = cfg.seed;
    opt.train = cfg.train;
    opt.shape = cfg.shape;
    opt.threads = ctx.flags.threads.value_or(cfg.threads);
    if (opt.threads < 1) throw ConfigError("--threads must be >= 1");
    if (ctx.dry()) {
        std::map<std::string, Label> labels;
        for (const auto& e : examples) labels[e.local_id] = e.label;
        const auto folds = eval::stratified_folds(labels, opt.k, derive_seed(opt.seed, "folds"));
        std::vector<std::string> steps{std::to_string(examples.size()) + " labeled sequences, k = " + std::to_string(opt.k)};
        for (int f = 0; f < opt.k; ++f)
            steps.push_back("fold " + std::to_string(f + 1) + ": " + std::to_string(folds.members(f).size()) + " held out");
        steps.push_back("reports: " + dir.string());
        print_plan(ctx, "crossval", steps);
        return kExitOk;
    }
    const eval::CrossValResult r = eval::cross_validate(examples, opt);

    std::string folds_tsv = "local_id\tfold\n";
    for (const auto& [id, fold] : r.folds.assignment) folds_tsv += id + "\t" + std::to_string(fold + 1) + "\n";
    std::string preds = "local_id\tfold\ttruth\tpredicted\tconfidence\n";
    for (const auto& p : r.predictions)
        preds += p.local_id + "\t" + std::to_string(p.fold + 1) + "\t" + label_name(p.truth) + "\t" +
                 label_name(p.prediction.label) + "\t" + fixed(p.prediction.confidence) + "\n";
    const std::string text = eval::render_report(r.summary, eval::ReportFormat::text);
    write_file_atomic(dir / "crossval.csv", eval::render_report(r.summary, eval::ReportFormat::csv));
    write_file_atomic(dir / "crossval.txt", text);
    write_file_atomic(dir / "crossval_folds.tsv", folds_tsv);
    write_file_atomic(dir / "crossval_predictions.tsv", preds);
    ctx.out << text;
    return kExitOk;
}

// ---- predict --------------------------------------------------------------

struct ScopedDir {
    fs::path path;
    ~ScopedDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
};

bool looks_like_feature_file(const fs::path& p) {
    if (p.extension() == ".f32" || p.extension() == ".json") return true;
    return fs::exists(tensor_sidecar_path(p));
}

int cmd_predict(Context& ctx) {
    const auto& cfg = ctx.cfg;
    const fs::path ckpt_path = ctx.flags.checkpoint ? fs::path(*ctx.flags.checkpoint)
                                                    : cfg.need_path(cfg.paths.checkpoints, "checkpoints") / kCheckpointName;
    const seq::Checkpoint ck = seq::load_checkpoint(ckpt_path);
    const std::string space = ck.meta.backbone.empty() ? cfg.feature_space() : ck.meta.backbone;

    struct Input {
        std::string name;
        enum { cached, file, video } kind;
        fs::path path;
    };
    std::vector<Input> inputs;
    std::optional<Manifest> manifest;
    auto need_manifest = [&]() -> Manifest& {
        if (!manifest) manifest = load(cfg.manifest_path());
        return *manifest;
    };
    if (ctx.flags.ids.empty()) {
        const fs::path root = cfg.need_path(cfg.paths.features, "features");
        for (const auto& v : need_manifest().videos)
            if (backbone::features_cached(root, space, v.id())) inputs.push_back({v.id(), Input::cached, {}});
    }
    for (const auto& arg : ctx.flags.ids) {
        if (acq::parse_local_id(arg) && !fs::exists(arg)) {
            need_manifest().at(arg);
            inputs.push_back({arg, Input::cached, {}});
        } else if (looks_like_feature_file(arg)) {
            fs::path stem = arg;
            if (stem.extension() == ".f32" || stem.extension() == ".json") stem.replace_extension();
            inputs.push_back({stem.filename().string(), Input::file, stem});
        } else if (fs::is_regular_file(arg)) {
            inputs.push_back({fs::path(arg).filename().string(), Input::video, arg});
        } else {
            throw InvalidArgument("'" + arg + "' is neither a corpus id, a feature file, nor a video file");
        }
    }
    if (ctx.dry()) {
        std::vector<std::string> steps{"checkpoint: " + ckpt_path.string() + " (feature space " + space + ")"};
        for (const auto& in : inputs)
            steps.push_back(std::string(in.kind == Input::video ? "decode + extract + predict " : "predict ") + in.name);
        print_plan(ctx, "predict", steps);
        return kExitOk;
    }

    std::unique_ptr<backbone::Backbone> net;
    auto features_of = [&](const Input& in) -> seq::Matrix<double> {
        if (in.kind == Input::cached)
            return backbone::read_features(backbone::feature_stem(cfg.need_path(cfg.paths.features, "features"), space, in.name))
                .features.cast<double>();
        if (in.kind == Input::file) return backbone::read_features(in.path).features.cast<double>();
        if (!cfg.decoder_command) throw ConfigError("missing config key 'decoder.command'");
        if (cfg.feature_space() != space)
            throw InvalidArgument("checkpoint was trained on '" + space + "' features but the configured backbone is '" +
                                  cfg.feature_space() + "'");
        if (!net) net = backbone::load_backbone(backbone_spec(cfg));
        ScopedDir scratch{fs::temp_directory_path() /
                          ("whalesift-predict-" + std::to_string(::getpid()) + "-" + in.name)};
        const auto decoded = frames::enumerate_frames(in.path, Interval{ctx.flags.start_s, ctx.flags.end_s, false},
                                                      *cfg.decoder_command, scratch.path);
        const auto seq = frames::prepare_sequence(in.name, decoded.frames, cfg.sample, cfg.preprocess);
        return backbone::extract(*net, seq).features.cast<double>();
    };

    std::string lines = "local_id\tlabel\tconfidence\tp_irrelevant\tp_relevant\n";
    for (const auto& in : inputs) {
        const seq::Matrix<double> x = features_of(in);
        if (x.cols() != ck.params.gru1.input_dim())
            throw ShapeError(in.name + ": " + std::to_string(x.cols()) + " features per step, checkpoint expects " +
                             std::to_string(ck.params.gru1.input_dim()));
        const seq::Prediction p = seq::predict(ck.params, x);
        lines += in.name + "\t" + label_name(p.label) + "\t" + fixed(p.confidence) + "\t" + fixed(p.probs[0]) + "\t" +
                 fixed(p.probs[1]) + "\n";
    }
    ctx.out << lines;
    if (ctx.flags.out) write_file_atomic(fs::path(*ctx.flags.out) / "predictions.tsv", lines);
    return kExitOk;
}

// ---- report ---------------------------------------------------------------

int cmd_report(Context& ctx) {
    const auto& cfg = ctx.cfg;
    const auto format = eval::parse_report_format(ctx.flags.format);
    const fs::path input = ctx.flags.input ? fs::path(*ctx.flags.input)
                                           : cfg.need_path(cfg.paths.reports, "reports") / "crossval.csv";
    const auto folds = eval::parse_csv_report(read_file(input));
    const std::string rendered = eval::render_report(eval::average(folds), format);
    const std::optional<fs::path> target =
        ctx.flags.out ? std::optional(fs::path(*ctx.flags.out) /
                                      (format == eval::ReportFormat::csv ? "report.csv" : "report.txt"))
                      : std::nullopt;
    if (ctx.dry()) {
        print_plan(ctx, "report", {"input: " + input.string() + " (" + std::to_string(folds.size()) + " folds)",
                                   "output: " + (target ? target->string() : std::string("stdout"))});
        return kExitOk;
    }
    if (target) write_file_atomic(*target, rendered);
    ctx.out << rendered;
    return kExitOk;
}

// ---- annotate -------------------------------------------------------------

int cmd_annotate(Context& ctx) {
    const auto& cfg = ctx.cfg;
    annot::ServiceConfig sc;
    sc.manifest_path = cfg.manifest_path();
    sc.strips_root = cfg.need_path(cfg.paths.strips, "strips");
    sc.host = ctx.flags.host.value_or(cfg.service.host);
    sc.port = ctx.flags.port.value_or(cfg.service.port);
    sc.ui_dir = cfg.service.ui_dir;
    if (ctx.dry()) {
        print_plan(ctx, "annotate", {"listen: " + sc.host + ":" + std::to_string(sc.port),
                                     "manifest: " + sc.manifest_path.string(), "strips: " + sc.strips_root.string()});
        return kExitOk;
    }
    if (!fs::exists(sc.manifest_path)) throw IoError("no manifest at " + sc.manifest_path.string());

    // Service threads inherit this mask, so SIGINT/SIGTERM reach only sigwait.
    sigset_t stop_signals, previous;
    sigemptyset(&stop_signals);
    sigaddset(&stop_signals, SIGINT);
    sigaddset(&stop_signals, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &stop_signals, &previous);
    struct Restore {
        sigset_t mask;
        ~Restore() { pthread_sigmask(SIG_SETMASK, &mask, nullptr); }
    } restore{previous};

    annot::AnnotationService service(sc);
    const int port = service.bind();
    ctx.out << "annotate: listening on http://" << sc.host << ":" << port << "/" << std::endl;
    std::thread waiter([&]() {
        int sig = 0;
        sigwait(&stop_signals, &sig);
        service.stop();
    });
    try {
        service.run();
    } catch (...) {
        pthread_kill(waiter.native_handle(), SIGTERM);
        waiter.join();
        throw;
    }
    waiter.join();
    ctx.out << "annotate: stopped" << std::endl;
    return kExitOk;
}

// ---- synthesize -----------------------------------------------------------

int cmd_synthesize(Context& ctx) {
    const auto& cfg = ctx.cfg;
    const fs::path features_root = ctx.output_dir(cfg.paths.features, "features");
    const std::string space = cfg.feature_space();
    if (ctx.flags.count < 2 * cfg.folds) throw InvalidArgument("--count must give every class at least k sequences");
    if (ctx.flags.dim < 1) throw InvalidArgument("--dim must be >= 1");
    if (fs::exists(cfg.manifest_path())) {
        for (const auto& v : load(cfg.manifest_path()).videos)
            if (v.record.query != kSyntheticQuery)
                throw Error("refusing to overwrite " + cfg.manifest_path().string() + ": it holds non-synthetic videos");
    }
    if (ctx.dry()) {
        print_plan(ctx, "synthesize",
                   {std::to_string(ctx.flags.count) + " sequences, T = " + std::to_string(cfg.sample.target_count) +
                        ", D = " + std::to_string(ctx.flags.dim) + ", separation " + fixed(ctx.flags.separation, 2) + " sigma",
                    "manifest: " + cfg.manifest_path().string(), "features: " + (features_root / space).string()});
        return kExitOk;
    }
    fs::create_directories(cfg.paths.corpus);
    FileLock lock(cfg.manifest_path());
    const auto items = make_synthetic_corpus(static_cast<std::size_t>(ctx.flags.count), cfg.sample.target_count,
                                             ctx.flags.dim, ctx.flags.separation, derive_seed(cfg.seed, "synthetic"));
    Manifest m;
    for (const auto& item : items) {
        add_video(m, AnonymizedRecord{item.local_id, kIrrelevantSeconds, Timestamp{"1970-01-01T00:00:00Z"}, kSyntheticQuery});
        upsert_label(m, item.local_id, item.label);
        backbone::FeatureSequence f{item.local_id, item.features};
        backbone::write_features(features_root, space, f);
    }
    save(m, cfg.manifest_path());
    ctx.out << "synthesize: " << items.size() << " sequences -> " << (features_root / space).string() << "\n";
    return kExitOk;
}

// ---------------------------------------------------------------------------

using Handler = int (*)(Context&);

struct Subcommand {
    const char* name;
    const char* help;
    Handler run;
    bool takes_out;
};

const std::vector<Subcommand>& subcommands() {
    static const std::vector<Subcommand> list = {
        {"search", "query the video platform and add anonymized entries to the manifest", cmd_search, false},
        {"fetch", "download corpus videos with the configured fetch command", cmd_fetch, false},
        {"prepare-frames", "decode intervals into standardized frame tensors and preview strips", cmd_prepare_frames, true},
        {"extract-features", "run the backbone over prepared frames", cmd_extract_features, true},
        {"train", "train the sequence classifier on all labeled features", cmd_train, true},
        {"crossval", "stratified k-fold cross-validation with per-fold reports", cmd_crossval, true},
        {"predict", "classify corpus ids, feature files, or video files", cmd_predict, true},
        {"report", "render a cross-validation CSV as a table", cmd_report, true},
        {"annotate", "serve the annotation API", cmd_annotate, false},
        {"synthesize", "write a synthetic labeled feature corpus", cmd_synthesize, true},
    };
    return list;
}

void apply_flags(PipelineConfig& cfg, const Flags& f) {
    if (f.seed) cfg.seed = *f.seed;
    if (f.backbone) set_backbone(cfg, f.backbone == "builtin" ? *f.backbone : fs::absolute(*f.backbone).string());
    if (f.frames) cfg.sample.target_count = *f.frames;
    if (f.folds) cfg.folds = *f.folds;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app("Relevance triage for whale-encounter videos.", "whalesift");
    app.require_subcommand(1, 1);
    Flags f;
    app.add_option("--config", f.config, "pipeline config (JSON)")->required();
    app.add_option("--seed", f.seed, "top-level seed");
    app.add_option("--backbone", f.backbone, "ONNX model path, or 'builtin'");
    app.add_option("--frames", f.frames, "frames per sequence (T)");
    app.add_option("--folds", f.folds, "cross-validation folds (k)");
    app.add_option("--out", f.out, "output directory for this subcommand");
    app.add_flag("--dry-run", f.dry_run, "validate and print the plan without writing");

    std::map<CLI::App*, const Subcommand*> by_app;
    for (const auto& s : subcommands()) {
        CLI::App* sub = app.add_subcommand(s.name, s.help);
        sub->fallthrough();
        by_app[sub] = &s;
        const std::string name = s.name;
        if (name == "search") {
            sub->add_option("--fixtures", f.fixtures, "replay recorded API responses from this directory");
            sub->add_option("--limit", f.limit, "maximum number of videos");
        }
        if (name == "fetch" || name == "prepare-frames" || name == "extract-features")
            sub->add_option("ids", f.ids, "corpus ids (default: all)");
        if (name == "prepare-frames" || name == "extract-features")
            sub->add_flag("--force", f.force, "redo cached outputs");
        if (name == "crossval") sub->add_option("--threads", f.threads, "folds trained concurrently");
        if (name == "predict") {
            sub->add_option("inputs", f.ids, "corpus ids, feature files (.f32), or video files");
            sub->add_option("--checkpoint", f.checkpoint, "checkpoint file");
            sub->add_option("--start", f.start_s, "video start (s)");
            sub->add_option("--end", f.end_s, "video end (s)");
        }
        if (name == "report") {
            sub->add_option("--input", f.input, "cross-validation CSV");
            sub->add_option("--format", f.format, "text or csv")->check(CLI::IsMember({"text", "csv"}));
        }
        if (name == "annotate") {
            sub->add_option("--host", f.host, "bind address");
            sub->add_option("--port", f.port, "port (0 picks a free one)");
        }
        if (name == "synthesize") {
            sub->add_option("--count", f.count, "number of sequences");
            sub->add_option("--dim", f.dim, "features per step");
            sub->add_option("--separation", f.separation, "class-mean distance in noise standard deviations");
        }
    }

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n\n" << app.help();
        return kExitUsage;
    }

    const Subcommand* chosen = nullptr;
    for (auto* sub : app.get_subcommands()) chosen = by_app.at(sub);
    try {
        if (f.out && !chosen->takes_out) throw ConfigError(std::string("--out does not apply to ") + chosen->name);
        Context ctx{load_config(f.config), f, out, err};
        apply_flags(ctx.cfg, f);
        validate(ctx.cfg);
        return chosen->run(ctx);
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const acq::QuotaExceededError& e) {
        err << "error: " << e.what();
        if (e.retry_after_s) err << "; retry after " << *e.retry_after_s << " s";
        err << "\n";
        return kExitDomain;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitDomain;
    }
}

}  // namespace whalesift::cli
