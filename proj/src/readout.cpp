#include "esn/readout.hpp"

#include <algorithm>
#include <cmath>
#include <thread>
#include <vector>

namespace esn::readout {

namespace {

constexpr Eigen::Index kGramBlockCols = 4096;

void check_finite(const Eigen::Ref<const Mat>& m, const char* name) {
    if (!m.allFinite()) {
        throw NumericError(std::string("non-finite entries in ") + name);
    }
}

// Minimum-norm least-squares readout via a rank-revealing decomposition of
// Z^T. Covers the gamma = 0 singular case.
Mat min_norm_solve(const Mat& Z, const Mat& Y) {
    Eigen::CompleteOrthogonalDecomposition<Mat> cod(Z.transpose());
    return cod.solve(Y.transpose()).transpose();
}

}  // namespace

void TrainingDesign::validate() const {
    if (Z.cols() != Y.cols()) {
        throw ParamError("TrainingDesign: Z and Y must have equal column counts");
    }
    if (Y.rows() > Z.cols()) {
        throw ParamError("TrainingDesign: need at least as many samples as outputs");
    }
}

void RidgeConfig::validate() const {
    if (gamma < 0.0) throw ParamError("RidgeConfig: gamma must be >= 0");
    if (robust) {
        if (robust->a < 1.0 || robust->s < 1.0) {
            throw ParamError("RidgeConfig: robust scalings require a >= 1 and s >= 1");
        }
        if (robust->max_irls_rounds < 1) {
            throw ParamError("RidgeConfig: max_irls_rounds must be >= 1");
        }
    }
}

GramPair accumulate_weighted_gram(const Eigen::Ref<const Mat>& Z, const Eigen::Ref<const Mat>& Y,
                                  const Vec& v, int jobs) {
    if (Y.cols() != Z.cols()) throw ParamError("gram: Z and Y column counts differ");
    const bool weighted = v.size() > 0;
    if (weighted && v.size() != Z.cols()) throw ParamError("gram: weight length mismatch");
    jobs = std::max(1, jobs);

    const Eigen::Index p = Z.rows();
    const Eigen::Index n = Z.cols();
    const Eigen::Index nblocks = (n + kGramBlockCols - 1) / kGramBlockCols;

    GramPair out;
    out.G = Mat::Zero(p, p);
    out.C = Mat::Zero(Y.rows(), p);

    std::vector<Mat> scratch(static_cast<size_t>(std::min<Eigen::Index>(jobs, std::max<Eigen::Index>(nblocks, 1))));
    const int slots = static_cast<int>(scratch.size());

    // Waves of `slots` blocks: partials run concurrently, the reduction into
    // G walks blocks in index order so the summation tree is fixed.
    for (Eigen::Index wave = 0; wave < nblocks; wave += slots) {
        const int in_wave = static_cast<int>(std::min<Eigen::Index>(slots, nblocks - wave));
        auto run_block = [&](int slot) {
            const Eigen::Index b = wave + slot;
            const Eigen::Index c0 = b * kGramBlockCols;
            const Eigen::Index nc = std::min(kGramBlockCols, n - c0);
            Mat block = Z.middleCols(c0, nc);
            if (weighted) {
                for (Eigen::Index j = 0; j < nc; ++j) {
                    block.col(j) *= std::sqrt(std::max(0.0, v[c0 + j]));
                }
            }
            Mat& acc = scratch[static_cast<size_t>(slot)];
            acc = Mat::Zero(p, p);
            acc.selfadjointView<Eigen::Lower>().rankUpdate(block, 1.0);
        };
        if (in_wave == 1) {
            run_block(0);
        } else {
            std::vector<std::thread> pool;
            pool.reserve(static_cast<size_t>(in_wave));
            for (int s = 0; s < in_wave; ++s) pool.emplace_back(run_block, s);
            for (auto& t : pool) t.join();
        }
        for (int s = 0; s < in_wave; ++s) {
            out.G.triangularView<Eigen::Lower>() += scratch[static_cast<size_t>(s)];
        }
    }
    out.G.triangularView<Eigen::StrictlyUpper>() = out.G.transpose();

    if (weighted) {
        Mat yw = Y;
        for (Eigen::Index j = 0; j < n; ++j) yw.col(j) *= std::max(0.0, v[j]);
        out.C.noalias() = yw * Z.transpose();
    } else {
        out.C.noalias() = Y * Z.transpose();
    }
    return out;
}

GramPair accumulate_gram(const Eigen::Ref<const Mat>& Z, const Eigen::Ref<const Mat>& Y,
                         int jobs) {
    return accumulate_weighted_gram(Z, Y, Vec(), jobs);
}

Mat solve_normal_equations(const GramPair& gram, double gamma, Log* log) {
    Mat A = gram.G;
    A.diagonal().array() += gamma * gamma;
    Eigen::LLT<Mat> llt(A);
    if (llt.info() == Eigen::Success) {
        Mat X = llt.solve(gram.C.transpose());
        if (X.allFinite()) {
            if (gamma > 0.0) return X.transpose();  // SPD solve, backward stable
            // gamma = 0 on a semi-definite system can factor spuriously;
            // check the backward error before trusting it.
            const double denom = A.norm() * X.norm() + gram.C.norm() + 1e-300;
            if ((A * X - gram.C.transpose()).norm() / denom < 1e-8) return X.transpose();
        }
        warn_to(log, "normal-equation solve: Cholesky solution rejected, trying LDLT");
    }
    // Gram matrices of long state trajectories sit at the edge of positive
    // definiteness once gamma^2 drops below the rounding floor.
    Eigen::LDLT<Mat> ldlt(A);
    Mat X = ldlt.solve(gram.C.transpose());
    if (ldlt.info() == Eigen::Success && X.allFinite()) {
        return X.transpose();
    }
    warn_to(log, "normal-equation solve: LDLT failed, using the minimum-norm least-squares route");
    X = A.completeOrthogonalDecomposition().solve(gram.C.transpose());
    if (!X.allFinite()) {
        throw NumericError("normal-equation solve failed (singular system?)");
    }
    return X.transpose();
}

ReadoutWeights ridge_solve(const TrainingDesign& design, double gamma, Log* log) {
    design.validate();
    if (gamma < 0.0) throw ParamError("ridge_solve: gamma must be >= 0");
    check_finite(design.Z, "Z");
    check_finite(design.Y, "Y");

    ReadoutWeights out;
    out.gamma = gamma;

    const GramPair gram = accumulate_gram(design.Z, design.Y);
    Mat A = gram.G;
    A.diagonal().array() += gamma * gamma;
    Eigen::LLT<Mat> llt(A);
    bool ok = llt.info() == Eigen::Success;
    if (ok) {
        Mat X = llt.solve(gram.C.transpose());
        ok = X.allFinite();
        if (ok && gamma == 0.0) {
            const double denom = A.norm() * X.norm() + gram.C.norm() + 1e-300;
            ok = (A * X - gram.C.transpose()).norm() / denom < 1e-8;
        }
        if (ok) out.W = X.transpose();
    }
    if (!ok) {
        warn_to(log, "ridge_solve: normal equations singular, using minimum-norm least squares");
        out.W = min_norm_solve(design.Z, design.Y);
    }
    out.residual_norm = (design.Y - out.W * design.Z).norm();
    return out;
}

Vec weights_from_residual_norms(const Vec& residual_norms, double a, double s) {
    Vec v(residual_norms.size());
    for (Eigen::Index i = 0; i < residual_norms.size(); ++i) {
        const double r = std::abs(residual_norms[i]);
        v[i] = (r == 0.0) ? 1.0 : std::exp(-a * r / s);
    }
    return v;
}

Vec robust_weights(const Eigen::Ref<const Mat>& residuals, double a, double s) {
    return weights_from_residual_norms(residuals.colwise().norm(), a, s);
}

ReadoutWeights weighted_ridge_solve(const TrainingDesign& design, const RidgeConfig& config,
                                    Log* log) {
    config.validate();
    if (!config.robust) {
        throw ParamError("weighted_ridge_solve: config.robust must be present");
    }
    ReadoutWeights current = ridge_solve(design, config.gamma, log);
    const auto& rb = *config.robust;
    for (int round = 0; round < rb.max_irls_rounds; ++round) {
        const Mat residuals = design.Y - current.W * design.Z;
        const Vec v = robust_weights(residuals, rb.a, rb.s);
        const GramPair gram = accumulate_weighted_gram(design.Z, design.Y, v);
        current.W = solve_normal_equations(gram, config.gamma, log);
    }
    current.gamma = config.gamma;
    current.robust = rb;
    current.residual_norm = (design.Y - current.W * design.Z).norm();
    return current;
}

Mat time_average_states(const Eigen::Ref<const Mat>& Z, double tau_s, double dt_s) {
    if (tau_s < 0.0) throw ParamError("time_average_states: tau must be >= 0");
    if (dt_s <= 0.0) throw ParamError("time_average_states: dt must be > 0");
    const Eigen::Index half = static_cast<Eigen::Index>(std::floor(tau_s / (2.0 * dt_s)));
    if (half == 0 || Z.cols() == 0) return Z;

    const Eigen::Index n = Z.cols();
    Mat out(Z.rows(), n);
    std::vector<double> prefix(static_cast<size_t>(n) + 1);
    for (Eigen::Index r = 0; r < Z.rows(); ++r) {
        // Compensated running sum keeps the drift of long prefixes at a few
        // ulps, so both orders of "average" and "linear map" agree tightly.
        prefix[0] = 0.0;
        double sum = 0.0, carry = 0.0;
        for (Eigen::Index t = 0; t < n; ++t) {
            const double y = Z(r, t) - carry;
            const double next = sum + y;
            carry = (next - sum) - y;
            sum = next;
            prefix[static_cast<size_t>(t) + 1] = sum;
        }
        for (Eigen::Index t = 0; t < n; ++t) {
            const Eigen::Index lo = std::max<Eigen::Index>(0, t - half);
            const Eigen::Index hi = std::min<Eigen::Index>(n - 1, t + half);
            const double window = prefix[static_cast<size_t>(hi) + 1] - prefix[static_cast<size_t>(lo)];
            out(r, t) = window / static_cast<double>(hi - lo + 1);
        }
    }
    return out;
}

}  // namespace esn::readout
