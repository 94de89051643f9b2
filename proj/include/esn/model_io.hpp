#pragma once

#include <string>

#include "esn/classify.hpp"
#include "esn/reservoir.hpp"

namespace esn::model {

// Reservoir sidecar: seed, parameters and achieved spectral radius as a small
// JSON document. Loading rebuilds the matrices deterministically from the
// seed and verifies the achieved radius.
void save_reservoir(const std::string& path, const reservoir::ReservoirParams& params,
                    const reservoir::ReservoirWeights& weights);

struct LoadedReservoir {
    reservoir::ReservoirParams params;
    reservoir::ReservoirWeights weights;
};

LoadedReservoir load_reservoir(const std::string& path);

// Readout file: one JSON header line (row/column counts, class order and
// per-class hyperparameters), a newline, then the weight matrix as row-major
// little-endian doubles.
void save_readout(const std::string& path, const classify::TrainedReadout& readout);

classify::TrainedReadout load_readout(const std::string& path);

}  // namespace esn::model
