#include <doctest.h>

#include <cmath>

#include "mtgp/mtgp.hpp"
#include "mtgp/parallel.hpp"
#include "support/oracles.hpp"

using namespace mtgp;

// The OpenMP fill kernels must reproduce the serial reference bit for bit:
// every entry is computed by the same scalar code and threads write
// disjoint entries.

TEST_CASE("parallel fills match the serial reference exactly") {
    Rng rng(51);
    for (int trial = 0; trial < 10; ++trial) {
        const int n = 1 + static_cast<int>(rng.below(200));
        const int m = 1 + static_cast<int>(rng.below(150));
        const auto entry = [&](Eigen::Index i, Eigen::Index j) {
            return std::sin(0.1 * static_cast<double>(i * 31 + j * 7)) +
                   std::exp(-0.001 * static_cast<double>(i + j));
        };
        Eigen::MatrixXd serial_sym(n, n), parallel_sym(n, n);
        fill_symmetric(serial_sym, entry, Exec::serial);
        fill_symmetric(parallel_sym, entry, Exec::parallel);
        CHECK(serial_sym == parallel_sym);

        Eigen::MatrixXd serial_rect(n, m), parallel_rect(n, m);
        fill_matrix(serial_rect, entry, Exec::serial);
        fill_matrix(parallel_rect, entry, Exec::parallel);
        CHECK(serial_rect == parallel_rect);
    }
}

TEST_CASE("models built with either policy agree bit for bit") {
    Rng rng(53);
    std::vector<KernelParams> params;
    std::vector<TaskData> data;
    Eigen::VectorXd noises(3);
    const std::vector<KernelFamily> families = {
        KernelFamily::matern3, KernelFamily::matern3, KernelFamily::sqexp};
    for (int t = 0; t < 3; ++t) {
        params.push_back(oracles::random_params(rng, families[t], 3));
        Points x = oracles::random_points(rng, 40, 3);
        Eigen::VectorXd z(40);
        for (int i = 0; i < 40; ++i) z[i] = rng.normal();
        data.push_back(TaskData{x, z, 0.0});
        noises[t] = rng.uniform(0.05, 0.3);
    }
    TaskSimilarity sim(oracles::random_similarity_factor(rng, 3));

    MtgpModel serial(params, sim, noises, data, Exec::serial);
    MtgpModel parallel(params, sim, noises, data, Exec::parallel);
    CHECK(serial.joint_gram(true) == parallel.joint_gram(true));

    const Points test = oracles::random_points(rng, 50, 3);
    for (int t = 0; t < 3; ++t) {
        const Posterior a = serial.posterior(t, test);
        const Posterior b = parallel.posterior(t, test);
        CHECK(a.mean == b.mean);
        CHECK(a.variance == b.variance);
    }
    CHECK(serial.log_marginal_likelihood() == parallel.log_marginal_likelihood());

    GpModel gs(params[0], CovarianceMode::single, 0.0, noises[0], data[0].x,
               data[0].z_centered, 0.0, Exec::serial);
    GpModel gp(params[0], CovarianceMode::single, 0.0, noises[0], data[0].x,
               data[0].z_centered, 0.0, Exec::parallel);
    CHECK(gs.gram(true) == gp.gram(true));
    const Posterior a = gs.posterior(test);
    const Posterior b = gp.posterior(test);
    CHECK(a.mean == b.mean);
    CHECK(a.variance == b.variance);
}
