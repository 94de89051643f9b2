#pragma once

#include <Eigen/Dense>
#include <Eigen/SparseCore>

#include "esn/types.hpp"
#include "esn/wfdb.hpp"

namespace esn::reservoir {

using SparseMat = Eigen::SparseMatrix<double, Eigen::RowMajor>;

// Fixed global reservoir parameters. Defaults are the values used for the
// patient-adaptive ECG experiments.
struct ReservoirParams {
    int size = 768;                  // N_x
    double input_scaling = 0.5;      // c: W_in entries uniform on [-c, c]
    int connections_per_node = 10;   // nonzeros per row of W
    double spectral_radius = 0.99;   // rho: |lambda_max(W)| after rescaling
    double leakage_rate = 0.99;      // alpha in [0, 1]
    double bias_value = 1.0;         // DC input fed alongside the signal
    uint64_t seed = 1;
    int washout = 720;               // harvested samples discarded up front

    int num_inputs() const { return 2; }  // bias + lead II
    void validate() const;
};

struct ReservoirWeights {
    SparseMat W;          // N_x x N_x recurrent weights
    Eigen::MatrixXd W_in;  // N_x x N_u input weights
    Eigen::MatrixXd W_fb;  // N_x x N_y output feedback; identically zero here
    double achieved_spectral_radius = 0.0;
    uint64_t seed = 0;  // seed the matrices were generated from
};

// Harvested extended states z(t) = [x(t); u(t)] stacked columnwise.
struct StateTrajectory {
    Eigen::MatrixXd Z;  // (N_x + N_u) x N
    int washout = 0;    // columns discarded before the first stored column
    double dt = 0.0;    // sampling period of the driving signal
};

// Largest |eigenvalue| by power iteration with a seeded start vector. The
// magnitude estimate comes from a two-step (second-order Krylov) fit so that
// complex conjugate dominant pairs converge too.
double estimate_spectral_radius(const SparseMat& W, double tol = 1e-8, int max_iters = 10000,
                                uint64_t probe_seed = 0x5eed);

// Generates W (exactly connections_per_node nonzeros per row, values uniform
// on [-1,1], rescaled to the requested spectral radius) and W_in (uniform on
// [-c, c], one scaling for all columns). Degenerate draws with a vanishing
// spectral radius are regenerated with an incremented seed, at most 8 times.
ReservoirWeights build_reservoir(const ReservoirParams& params);

// One leaky-integrator update:
//   x' = (1 - alpha) x + alpha tanh(W x + W_in u)
// (output feedback is disabled; W_fb stays zero).
Eigen::VectorXd step(const ReservoirWeights& weights, const ReservoirParams& params,
                     const Eigen::VectorXd& x, const Eigen::VectorXd& u);

// Iterates step over u(t) = [bias; input(t)] from state x0 and returns all
// visited states as columns (no washout applied). Test hook for studying
// initial-state sensitivity; harvest() is the production entry point.
Eigen::MatrixXd run_states(const ReservoirWeights& weights, const ReservoirParams& params,
                           const std::vector<double>& input, const Eigen::VectorXd& x0);

// Drives the reservoir from x(0) = 0 over the input signal, discards the
// first `washout` columns and stacks extended states z(t) = [x(t); u(t)].
StateTrajectory harvest(const ReservoirWeights& weights, const ReservoirParams& params,
                        const wfdb::SignalBuffer& input);
StateTrajectory harvest(const ReservoirWeights& weights, const ReservoirParams& params,
                        const std::vector<double>& input, double dt, int washout);

}  // namespace esn::reservoir
