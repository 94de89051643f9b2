#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Eigenvalues>
#include <cmath>
#include <filesystem>

#include "esn/model_io.hpp"
#include "esn/reservoir.hpp"
#include "esn/rng.hpp"
#include "synthetic.hpp"

using namespace esn;
using reservoir::ReservoirParams;
using reservoir::SparseMat;

namespace {

SparseMat sparse_from(const std::vector<Eigen::Triplet<double>>& t, int n) {
    SparseMat m(n, n);
    m.setFromTriplets(t.begin(), t.end());
    return m;
}

// Independent oracle: dense eigendecomposition.
double dense_spectral_radius(const SparseMat& W) {
    const Eigen::MatrixXd dense(W);
    const Eigen::EigenSolver<Eigen::MatrixXd> es(dense, false);
    return es.eigenvalues().cwiseAbs().maxCoeff();
}

ReservoirParams small_params(int size, uint64_t seed) {
    ReservoirParams p;
    p.size = size;
    p.connections_per_node = std::min(10, size);
    p.seed = seed;
    p.washout = 0;
    return p;
}

}  // namespace

TEST_CASE("spectral radius: closed-form cases") {
    SUBCASE("diagonal matrix") {
        const auto W = sparse_from({{0, 0, 0.5}, {1, 1, -0.9}}, 2);
        CHECK(reservoir::estimate_spectral_radius(W) == doctest::Approx(0.9).epsilon(1e-8));
    }
    SUBCASE("rotation-like matrix has a complex pair on the unit circle") {
        const auto W = sparse_from({{0, 1, 1.0}, {1, 0, -1.0}}, 2);
        CHECK(reservoir::estimate_spectral_radius(W) == doctest::Approx(1.0).epsilon(1e-8));
    }
    SUBCASE("zero matrix") {
        const SparseMat W(4, 4);
        CHECK(reservoir::estimate_spectral_radius(W) == 0.0);
    }
    SUBCASE("non-square input") {
        SparseMat W(2, 3);
        CHECK_THROWS_AS(reservoir::estimate_spectral_radius(W), ParamError);
    }
}

TEST_CASE("spectral radius: matches the dense eigensolver on random reservoirs") {
    for (int size : {8, 64}) {
        const auto weights = reservoir::build_reservoir(small_params(size, 1234 + size));
        const double oracle = dense_spectral_radius(weights.W);
        const double est = reservoir::estimate_spectral_radius(weights.W);
        CHECK(std::abs(est - oracle) / oracle < 1e-6);
        CHECK(std::abs(weights.achieved_spectral_radius - 0.99) / 0.99 < 1e-6);
    }
}

TEST_CASE("build_reservoir: structure and determinism") {
    SUBCASE("tiny reservoir, exact row occupancy, closed-form radius check") {
        ReservoirParams p = small_params(2, 99);
        p.connections_per_node = 1;
        const auto w = reservoir::build_reservoir(p);
        for (int r = 0; r < 2; ++r) {
            CHECK(w.W.outerIndexPtr()[r + 1] - w.W.outerIndexPtr()[r] == 1);
        }
        CHECK(std::abs(dense_spectral_radius(w.W) - p.spectral_radius) / p.spectral_radius < 1e-6);
    }
    SUBCASE("same seed gives bit-identical weights") {
        const auto a = reservoir::build_reservoir(small_params(32, 7));
        const auto b = reservoir::build_reservoir(small_params(32, 7));
        CHECK(Eigen::MatrixXd(a.W) == Eigen::MatrixXd(b.W));
        CHECK(a.W_in == b.W_in);
        CHECK(a.achieved_spectral_radius == b.achieved_spectral_radius);
    }
    SUBCASE("published parameter set: row occupancy and density") {
        const auto w = reservoir::build_reservoir(ReservoirParams{});
        CHECK(w.W.rows() == 768);
        CHECK(w.W.nonZeros() == 7680);
        const double density = 7680.0 / (768.0 * 768.0);
        CHECK(density == doctest::Approx(0.013).epsilon(0.01));  // ~1.3% of entries
        for (int r = 0; r < 768; ++r) {
            CHECK(w.W.outerIndexPtr()[r + 1] - w.W.outerIndexPtr()[r] == 10);
        }
        CHECK(std::abs(w.achieved_spectral_radius - 0.99) / 0.99 < 1e-6);
        CHECK(w.W_in.cwiseAbs().maxCoeff() <= 0.5);
        CHECK(w.W_fb.isZero());
    }
    SUBCASE("rescaling preserves the nonzero pattern") {
        ReservoirParams p = small_params(24, 3);
        const auto a = reservoir::build_reservoir(p);
        p.spectral_radius = 0.5;
        const auto b = reservoir::build_reservoir(p);
        REQUIRE(a.W.nonZeros() == b.W.nonZeros());
        for (int i = 0; i < a.W.nonZeros(); ++i) {
            CHECK(a.W.innerIndexPtr()[i] == b.W.innerIndexPtr()[i]);
        }
        // Values scale by the radius ratio.
        const double ratio = b.W.valuePtr()[0] / a.W.valuePtr()[0];
        CHECK(ratio == doctest::Approx(0.5 / 0.99).epsilon(1e-9));
    }
    SUBCASE("invalid parameters") {
        ReservoirParams p;
        p.leakage_rate = 1.5;
        CHECK_THROWS_AS(reservoir::build_reservoir(p), ParamError);
        p = ReservoirParams{};
        p.connections_per_node = 10000;
        CHECK_THROWS_AS(reservoir::build_reservoir(p), ParamError);
    }
}

TEST_CASE("step: leaky integration") {
    // Hand-built three-neuron reservoir.
    reservoir::ReservoirWeights w;
    w.W = sparse_from({{0, 1, 0.3}, {1, 2, -0.4}, {2, 0, 0.25}}, 3);
    w.W_in.resize(3, 2);
    w.W_in << 0.1, -0.2, 0.05, 0.3, -0.15, 0.2;
    w.W_fb = Eigen::MatrixXd::Zero(3, 1);

    ReservoirParams p = small_params(3, 1);

    SUBCASE("alpha = 0 freezes the state") {
        p.leakage_rate = 0.0;
        Eigen::VectorXd x(3);
        x << 0.4, -0.2, 0.9;
        Eigen::VectorXd u(2);
        u << 1.0, 0.7;
        CHECK(reservoir::step(w, p, x, u) == x);
    }
    SUBCASE("alpha = 1, zero drive lands on tanh(0)") {
        p.leakage_rate = 1.0;
        reservoir::ReservoirWeights wz = w;
        wz.W.setZero();
        wz.W_in.setZero();
        const Eigen::VectorXd x = Eigen::VectorXd::Constant(3, 0.5);
        const Eigen::VectorXd u = Eigen::VectorXd::Zero(2);
        CHECK(reservoir::step(wz, p, x, u).isZero(0.0));
    }
    SUBCASE("one step from rest matches the desk oracle") {
        p.leakage_rate = 0.8;
        const Eigen::VectorXd x = Eigen::VectorXd::Zero(3);
        Eigen::VectorXd u(2);
        u << 1.0, -0.6;
        const auto next = reservoir::step(w, p, x, u);
        for (int i = 0; i < 3; ++i) {
            const double drive = w.W_in(i, 0) * u[0] + w.W_in(i, 1) * u[1];
            CHECK(next[i] == doctest::Approx(0.8 * std::tanh(drive)).epsilon(1e-12));
        }
    }
    SUBCASE("non-finite input is rejected with the component index") {
        Eigen::VectorXd x = Eigen::VectorXd::Zero(3);
        Eigen::VectorXd u(2);
        u << 1.0, std::numeric_limits<double>::quiet_NaN();
        CHECK_THROWS_WITH_AS(reservoir::step(w, p, x, u), doctest::Contains("index 1"),
                             NumericError);
    }
}

TEST_CASE("harvest: washout accounting and determinism") {
    ReservoirParams p = small_params(16, 21);
    const auto w = reservoir::build_reservoir(p);
    std::vector<double> input(50);
    Rng rng(5);
    for (auto& v : input) v = rng.next_symmetric();

    SUBCASE("washout = length - 1 leaves exactly one column") {
        const auto traj = reservoir::harvest(w, p, input, 1.0 / 360.0, 49);
        CHECK(traj.Z.cols() == 1);
        CHECK(traj.Z.rows() == 16 + 2);
    }
    SUBCASE("input not longer than washout, or empty, is an error") {
        CHECK_THROWS_AS(reservoir::harvest(w, p, input, 1.0 / 360.0, 50), ParamError);
        CHECK_THROWS_AS(reservoir::harvest(w, p, std::vector<double>{}, 1.0 / 360.0, 0),
                        ParamError);
    }
    SUBCASE("identical runs are identical") {
        const auto a = reservoir::harvest(w, p, input, 1.0 / 360.0, 4);
        const auto b = reservoir::harvest(w, p, input, 1.0 / 360.0, 4);
        CHECK(a.Z == b.Z);
    }
    SUBCASE("extended state carries the input in its tail") {
        const auto traj = reservoir::harvest(w, p, input, 1.0 / 360.0, 0);
        for (int t = 0; t < 50; ++t) {
            CHECK(traj.Z(16, t) == p.bias_value);
            CHECK(traj.Z(17, t) == input[static_cast<size_t>(t)]);
        }
    }
}

TEST_CASE("harvest: constant input approaches the fixed point") {
    ReservoirParams p = small_params(32, 77);
    const auto w = reservoir::build_reservoir(p);
    const std::vector<double> input(600, 0.0);
    const auto traj = reservoir::harvest(w, p, input, 1.0 / 360.0, 0);

    // Successive state differences shrink after the transient.
    double prev = std::numeric_limits<double>::infinity();
    for (int t = 100; t + 1 < traj.Z.cols(); t += 50) {
        const double diff = (traj.Z.col(t + 1).head(32) - traj.Z.col(t).head(32)).norm();
        CHECK(diff <= prev + 1e-12);
        prev = diff;
    }
    CHECK(prev < 1e-6);
}

TEST_CASE("activations stay inside (-1, 1) for strong inputs") {
    ReservoirParams p = small_params(24, 31);
    const auto w = reservoir::build_reservoir(p);
    std::vector<double> input(400);
    Rng rng(8);
    for (auto& v : input) v = 50.0 * rng.next_symmetric();  // far beyond ECG amplitudes
    const auto traj = reservoir::harvest(w, p, input, 1.0 / 360.0, 0);
    CHECK(traj.Z.topRows(24).cwiseAbs().maxCoeff() < 1.0);
    CHECK(traj.Z.allFinite());
}

TEST_CASE("echo state property on a mid-sized reservoir") {
    ReservoirParams p = small_params(64, 4242);
    p.washout = 0;
    const auto w = reservoir::build_reservoir(p);

    testsupport::SyntheticSpec spec;
    spec.duration_s = 6.0;
    const auto ecg = testsupport::make_synthetic_ecg(spec).lead2_mv;

    Rng rng(91);
    Eigen::VectorXd x0a(64), x0b(64);
    for (int i = 0; i < 64; ++i) {
        x0a[i] = rng.next_symmetric();
        x0b[i] = rng.next_symmetric();
    }
    const auto sa = reservoir::run_states(w, p, ecg, x0a);
    const auto sb = reservoir::run_states(w, p, ecg, x0b);
    const auto last = sa.cols() - 1;
    CHECK((sa.col(last) - sb.col(last)).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("reservoir sidecar: rebuildable byte-for-byte from seed and params") {
    ReservoirParams p = small_params(48, 11);
    const auto w = reservoir::build_reservoir(p);
    const auto path =
        (std::filesystem::temp_directory_path() / "esn_test_reservoir.json").string();
    model::save_reservoir(path, p, w);
    const auto loaded = model::load_reservoir(path);
    CHECK(Eigen::MatrixXd(loaded.weights.W) == Eigen::MatrixXd(w.W));
    CHECK(loaded.weights.W_in == w.W_in);
    CHECK(loaded.weights.achieved_spectral_radius == w.achieved_spectral_radius);
    CHECK(loaded.params.washout == p.washout);
}
