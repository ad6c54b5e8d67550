// whalesift-decode INPUT START END OUTDIR
//
// Reference frame decoder for the prepare-frames step. Writes every native
// frame whose presentation time lies in [START, END) as OUTDIR/NNNNN.jpg and
// the matching times, one per line, to OUTDIR/timestamps.txt.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/videoio.hpp>

int main(int argc, char** argv) {
    if (argc != 5) {
        std::fprintf(stderr, "usage: whalesift-decode INPUT START END OUTDIR\n");
        return 2;
    }
    const std::string input = argv[1];
    char* end_ptr = nullptr;
    const double start = std::strtod(argv[2], &end_ptr);
    if (*end_ptr) return std::fprintf(stderr, "bad start time '%s'\n", argv[2]), 2;
    const double end = std::strtod(argv[3], &end_ptr);
    if (*end_ptr || end <= start) return std::fprintf(stderr, "bad end time '%s'\n", argv[3]), 2;
    const std::filesystem::path outdir = argv[4];
    std::filesystem::create_directories(outdir);

    cv::VideoCapture cap(input);
    if (!cap.isOpened()) {
        std::fprintf(stderr, "cannot open %s\n", input.c_str());
        return 1;
    }
    const double fps = cap.get(cv::CAP_PROP_FPS);
    if (!(fps > 0)) {
        std::fprintf(stderr, "%s: unknown frame rate\n", input.c_str());
        return 1;
    }

    std::ofstream stamps(outdir / "timestamps.txt");
    cv::Mat frame;
    long written = 0;
    for (long i = 0;; ++i) {
        const double ts = static_cast<double>(i) / fps;
        if (ts >= end) break;
        if (!cap.grab()) break;
        if (ts < start) continue;
        if (!cap.retrieve(frame) || frame.empty()) {
            std::fprintf(stderr, "%s: cannot decode frame %ld\n", input.c_str(), i);
            return 1;
        }
        char name[32];
        std::snprintf(name, sizeof name, "%05ld.jpg", written);
        if (!cv::imwrite((outdir / name).string(), frame)) {
            std::fprintf(stderr, "cannot write %s\n", (outdir / name).c_str());
            return 1;
        }
        char line[64];
        std::snprintf(line, sizeof line, "%.6f\n", ts);
        stamps << line;
        ++written;
    }
    if (!stamps) {
        std::fprintf(stderr, "cannot write timestamps\n");
        return 1;
    }
    return 0;
}
