#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "whalesift/corpus.hpp"

namespace whalesift {

struct SyntheticItem {
    std::string local_id;
    Label label = Label::irrelevant;
    Eigen::MatrixXf features;  // steps x width
};

/// Balanced two-class feature sequences: every entry is its class mean plus
/// unit-variance Gaussian noise, with the class means `separation_sigma`
/// apart (irrelevant at -s/2, relevant at +s/2). Labels alternate starting
/// with irrelevant; ids are vid_0001, vid_0002, ...
std::vector<SyntheticItem> make_synthetic_corpus(std::size_t count, Eigen::Index steps, Eigen::Index width,
                                                 double separation_sigma, std::uint64_t seed);

}  // namespace whalesift
