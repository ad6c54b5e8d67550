#include "whalesift/synthetic.hpp"

#include <random>

#include "whalesift/error.hpp"
#include "whalesift/rng.hpp"

namespace whalesift {

std::vector<SyntheticItem> make_synthetic_corpus(std::size_t count, Eigen::Index steps, Eigen::Index width,
                                                 double separation_sigma, std::uint64_t seed) {
    if (steps < 1 || width < 1) throw InvalidArgument("synthetic corpus needs steps >= 1 and width >= 1");
    Rng rng = make_rng(seed, "synthetic");
    std::normal_distribution<double> noise(0.0, 1.0);
    std::vector<SyntheticItem> out(count);
    for (std::size_t i = 0; i < count; ++i) {
        SyntheticItem& item = out[i];
        item.local_id = format_local_id(static_cast<long>(i + 1));
        item.label = i % 2 == 0 ? Label::irrelevant : Label::relevant;
        const double mean = (item.label == Label::relevant ? 0.5 : -0.5) * separation_sigma;
        item.features.resize(steps, width);
        for (Eigen::Index t = 0; t < steps; ++t)
            for (Eigen::Index d = 0; d < width; ++d) item.features(t, d) = static_cast<float>(mean + noise(rng));
    }
    return out;
}

}  // namespace whalesift
