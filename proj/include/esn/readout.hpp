#pragma once

#include <Eigen/Dense>
#include <optional>

#include "esn/types.hpp"

namespace esn::readout {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

// Extended states and their binary targets, column = sample.
struct TrainingDesign {
    Mat Z;  // (N_x + N_u) x N
    Mat Y;  // N_y x N

    void validate() const;
};

struct RobustScaling {
    double a = 1.5;  // residual decay rate, >= 1
    double s = 1.0;  // residual scale, >= 1
    int max_irls_rounds = 1;
};

struct RidgeConfig {
    double gamma = 0.0;  // regularization factor, >= 0
    std::optional<RobustScaling> robust;

    void validate() const;
};

struct ReadoutWeights {
    Mat W;  // N_y x (N_x + N_u)
    double gamma = 0.0;
    std::optional<RobustScaling> robust;
    std::optional<double> residual_norm;  // ||Y - W Z||_F when computed
};

// Precomputed normal-equation blocks: G = Z V Z^T, C = Y V Z^T (V = identity
// for the unweighted pair).
struct GramPair {
    Mat G;  // p x p
    Mat C;  // N_y x p
};

// Deterministic blocked accumulation of Z Z^T and Y Z^T. Blocks of a fixed
// column count are reduced in index order, so the result is bit-identical
// for every `jobs` value.
GramPair accumulate_gram(const Eigen::Ref<const Mat>& Z, const Eigen::Ref<const Mat>& Y,
                         int jobs = 1);

// Same with per-sample weights v (>= 0): G = sum_i v_i z_i z_i^T etc.
GramPair accumulate_weighted_gram(const Eigen::Ref<const Mat>& Z, const Eigen::Ref<const Mat>& Y,
                                  const Vec& v, int jobs = 1);

// Solves W = C (G + gamma^2 I)^{-1} through a Cholesky factorization. Used
// by ridge_solve and by the evaluation harness, which reuses Gram blocks
// across cross-validation folds.
Mat solve_normal_equations(const GramPair& gram, double gamma, Log* log = nullptr);

// Ridge regression W = Y Z^T (Z Z^T + gamma^2 I)^{-1}. A singular system at
// gamma = 0 falls back to the minimum-norm least-squares solution.
ReadoutWeights ridge_solve(const TrainingDesign& design, double gamma, Log* log = nullptr);

// Per-sample robustness weights from multi-output residuals. Residual
// columns are pooled by Euclidean norm r_i and mapped through
// psi(r/s)/(r/s) = exp(-a |r_i| / s), which is 1 at r_i = 0 and decays to 0
// for large residuals.
Vec robust_weights(const Eigen::Ref<const Mat>& residuals, double a, double s);

// The same map applied to precomputed residual norms.
Vec weights_from_residual_norms(const Vec& residual_norms, double a, double s);

// Robust weighted ridge: a plain ridge estimate produces residuals, the
// residuals produce per-sample weights, and the weighted normal equations
//   W = Y V Z^T (Z V Z^T + gamma^2 I)^{-1},  V = diag(v)
// are re-solved (one reweighting pass by default).
ReadoutWeights weighted_ridge_solve(const TrainingDesign& design, const RidgeConfig& config,
                                    Log* log = nullptr);

// Sliding arithmetic mean of each row over a centered window of length tau,
// truncated (and renormalized by the actual sample count) at the matrix
// boundaries. Window half-width is floor(tau / (2 dt)); tau = 0 returns the
// input unchanged.
Mat time_average_states(const Eigen::Ref<const Mat>& Z, double tau_s, double dt_s);

}  // namespace esn::readout
