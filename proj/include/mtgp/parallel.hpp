#pragma once

#include <Eigen/Dense>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace mtgp {

// Execution policy for the covariance-matrix fill kernels. The serial
// path is the reference implementation; the parallel path must produce
// bit-identical matrices (each entry is computed independently by the
// same scalar code, threads write disjoint entries).
enum class Exec { serial, parallel };

inline int hardware_threads() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

inline void set_thread_count(int n) {
#ifdef _OPENMP
    if (n > 0) omp_set_num_threads(n);
#else
    (void)n;
#endif
}

// Fills an n x n symmetric matrix from entry(i, j); only the lower
// triangle is evaluated, the upper is mirrored.
template <class EntryFn>
void fill_symmetric(Eigen::MatrixXd& out, const EntryFn& entry, Exec exec) {
    const Eigen::Index n = out.rows();
    if (exec == Exec::parallel) {
#pragma omp parallel for schedule(dynamic, 8)
        for (Eigen::Index i = 0; i < n; ++i) {
            for (Eigen::Index j = 0; j <= i; ++j) {
                out(i, j) = entry(i, j);
            }
        }
    } else {
        for (Eigen::Index i = 0; i < n; ++i) {
            for (Eigen::Index j = 0; j <= i; ++j) {
                out(i, j) = entry(i, j);
            }
        }
    }
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = i + 1; j < n; ++j) {
            out(i, j) = out(j, i);
        }
    }
}

// Fills a rows x cols matrix from entry(i, j).
template <class EntryFn>
void fill_matrix(Eigen::MatrixXd& out, const EntryFn& entry, Exec exec) {
    const Eigen::Index rows = out.rows();
    const Eigen::Index cols = out.cols();
    if (exec == Exec::parallel) {
#pragma omp parallel for schedule(dynamic, 8)
        for (Eigen::Index i = 0; i < rows; ++i) {
            for (Eigen::Index j = 0; j < cols; ++j) {
                out(i, j) = entry(i, j);
            }
        }
    } else {
        for (Eigen::Index i = 0; i < rows; ++i) {
            for (Eigen::Index j = 0; j < cols; ++j) {
                out(i, j) = entry(i, j);
            }
        }
    }
}

}  // namespace mtgp
