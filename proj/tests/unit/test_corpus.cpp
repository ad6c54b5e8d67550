#include <doctest.h>

#include <random>

#include "../support/tempdir.hpp"
#include "whalesift/corpus.hpp"

using namespace whalesift;
using whalesift::testing::TempDir;

namespace {

AnonymizedRecord rec(long counter, double duration) {
    return AnonymizedRecord{format_local_id(counter), duration, Timestamp{"2024-05-01T12:00:00Z"}, "humpback whale"};
}

Manifest sample() {
    Manifest m;
    add_video(m, rec(1, 75.0));
    add_video(m, rec(2, 12.5));
    add_video(m, rec(3, 300.25));
    return m;
}

}  // namespace

TEST_CASE("local ids and labels") {
    CHECK(format_local_id(1) == "vid_0001");
    CHECK(format_local_id(12345) == "vid_12345");
    CHECK(parse_label("relevant") == Label::relevant);
    CHECK(to_string(Label::irrelevant) == "irrelevant");
    CHECK_THROWS_AS(parse_label("whale"), InvalidArgument);
}

TEST_CASE("upsert_label is idempotent in content and versions every write") {
    Manifest m = sample();
    upsert_label(m, "vid_0001", Label::relevant);
    set_interval(m, "vid_0001", Interval{2.0, 14.5, false});
    const auto version = m.at("vid_0001").version;
    upsert_label(m, "vid_0001", Label::relevant);
    upsert_label(m, "vid_0001", Label::relevant);
    CHECK(m.at("vid_0001").label == Label::relevant);
    CHECK(m.at("vid_0001").interval == Interval{2.0, 14.5, false});
    CHECK(m.at("vid_0001").version == version + 2);

    upsert_label(m, "vid_0001", Label::irrelevant);
    CHECK_FALSE(m.at("vid_0001").interval.has_value());
    CHECK_THROWS_AS(upsert_label(m, "vid_9999", Label::relevant), UnknownIdError);
    CHECK_THROWS_AS(add_video(m, rec(2, 1.0)), DuplicateIdError);
}

TEST_CASE("interval rules") {
    Manifest m = sample();
    CHECK_THROWS_AS(set_interval(m, "vid_0001", Interval{0, 12, false}), IntervalError);  // unlabeled
    upsert_label(m, "vid_0001", Label::relevant);
    CHECK_THROWS_WITH_AS(set_interval(m, "vid_0001", Interval{3, 25, false}), "above 20 s", IntervalError);
    CHECK_THROWS_WITH_AS(set_interval(m, "vid_0001", Interval{3, 12.9, false}), "below 10 s", IntervalError);
    CHECK_THROWS_AS(set_interval(m, "vid_0001", Interval{70, 85, false}), IntervalError);  // past the end
    CHECK_NOTHROW(set_interval(m, "vid_0001", Interval{10, 20, false}));
    CHECK_NOTHROW(set_interval(m, "vid_0001", Interval{55, 75, false}));

    CHECK(interval_violation(Label::irrelevant, Interval{1, 16, false}) == std::nullopt);
    CHECK(interval_violation(Label::irrelevant, Interval{1, 15, false}).has_value());
    CHECK(interval_violation(Label::irrelevant, Interval{0, 9, true}) == std::nullopt);
    CHECK(interval_violation(Label::relevant, Interval{5, 5, false}).has_value());
    CHECK(interval_violation(Label::relevant, Interval{-1, 11, false}).has_value());
}

TEST_CASE("irrelevant windows stay inside the video") {
    for (std::uint64_t seed = 0; seed < 2000; ++seed) {
        const double duration = 15.0 + static_cast<double>(seed % 97) * 3.7;
        const Interval iv = assign_irrelevant_interval(duration, seed);
        REQUIRE(iv.start_s >= 0.0);
        REQUIRE(iv.end_s <= duration + 1e-9);
        REQUIRE(iv.length() == doctest::Approx(15.0));
        REQUIRE_FALSE(iv.truncated);
    }
    CHECK(assign_irrelevant_interval(15.0, 3) == Interval{0.0, 15.0, false});
    CHECK(assign_irrelevant_interval(10.0, 3) == Interval{0.0, 10.0, true});
    CHECK(assign_irrelevant_interval(600.0, 11) == assign_irrelevant_interval(600.0, 11));
    CHECK_THROWS_AS(assign_irrelevant_interval(0.0, 1), InvalidArgument);
    CHECK_THROWS_AS(assign_irrelevant_interval(-3.0, 1), InvalidArgument);
}

TEST_CASE("class counts") {
    Manifest m = sample();
    CHECK(class_counts(m) == ClassCounts{0, 0, 3});
    upsert_label(m, "vid_0002", Label::irrelevant);
    upsert_label(m, "vid_0003", Label::relevant);
    CHECK(class_counts(m) == ClassCounts{1, 1, 1});
    CHECK(class_counts(m).total() == 3);
}

TEST_CASE("manifest round trip") {
    TempDir dir("corpus");
    Manifest m = sample();
    upsert_label(m, "vid_0002", Label::irrelevant);
    set_interval(m, "vid_0002", assign_irrelevant_interval(12.5, 5));
    upsert_label(m, "vid_0003", Label::relevant);
    set_interval(m, "vid_0003", Interval{100.125, 118.5, false});
    set_frame_count(m, "vid_0003", 551);

    save(m, dir / "manifest.ndjson");
    const Manifest back = load(dir / "manifest.ndjson");
    CHECK(back == m);
    CHECK(serialize(back) == serialize(m));
    CHECK(read_file(dir / "manifest.ndjson") == serialize(m));

    const std::string text = serialize(m);
    CHECK(text.rfind("{\"schema_version\":1}\n", 0) == 0);

    CHECK_THROWS_AS(parse_manifest("{\"schema_version\":2}\n"), SchemaVersionError);
    CHECK_THROWS_AS(parse_manifest("{\"videos\":[]}\n"), SchemaVersionError);
    CHECK_THROWS_AS(parse_manifest("{\"schema_version\":1}\nnot json\n"), IoError);
    const std::string dup = "{\"schema_version\":1}\n" + text.substr(text.find('\n') + 1, text.find('\n', text.find('\n') + 1) - text.find('\n'));
    CHECK_THROWS_AS(parse_manifest(dup + dup.substr(dup.find('\n') + 1)), DuplicateIdError);
    CHECK_THROWS_AS(load(dir / "absent.ndjson"), IoError);
}

TEST_CASE("file lock is exclusive") {
    TempDir dir("lock");
    const auto target = dir / "manifest.ndjson";
    {
        FileLock first(target);
        CHECK_THROWS_AS(FileLock{target}, LockHeldError);
    }
    CHECK_NOTHROW(FileLock{target});
}

TEST_CASE("frame index round trip") {
    TempDir dir("frames");
    FrameIndex idx{"vid_0007", Interval{4.0, 19.0, false}, 360, {}};
    for (int i = 0; i < 360; ++i) idx.timestamps_s.push_back(4.0 + i / 24.0);
    save_frame_index(dir.path(), idx);
    CHECK(load_frame_index(dir.path(), "vid_0007") == idx);
    CHECK(frame_file_name(0) == "00000.jpg");
    CHECK(frame_file_name(42) == "00042.jpg");
    CHECK(frame_path(dir.path(), "vid_0007", 3) == dir.path() / "vid_0007" / "00003.jpg");
    CHECK_THROWS_AS(load_frame_index(dir.path(), "vid_0008"), IoError);
}
