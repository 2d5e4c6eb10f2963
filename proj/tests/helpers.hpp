#pragma once

#include "segqc/metrics.hpp"
#include "segqc/stats.hpp"
#include "segqc/synth.hpp"
#include "segqc/volume.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <filesystem>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

namespace segqc::test {

inline std::shared_ptr<const StructureRegistry> registry(std::vector<Label> ids, Label background = 0)
{
    std::vector<StructureEntry> entries;
    for (Label id : ids)
        entries.push_back({id, id == background ? "background" : "s" + std::to_string(id)});
    return std::make_shared<const StructureRegistry>(std::move(entries), background);
}

inline VoxelGeometry line_geometry(std::int64_t n, double spacing = 1.0)
{
    return VoxelGeometry({n, 1, 1}, {spacing, spacing, spacing});
}

inline McSampleSet label_set(std::shared_ptr<const StructureRegistry> reg, const VoxelGeometry& g,
                             const std::vector<std::vector<Label>>& samples)
{
    std::vector<McSample> out;
    for (const auto& s : samples)
        out.push_back({LabelVolume(g, s), std::nullopt});
    return McSampleSet(std::move(reg), std::move(out));
}

/// Random probability stacks: Dirichlet-like draws per voxel, some exact zeros and ones.
inline McSampleSet random_prob_set(std::shared_ptr<const StructureRegistry> reg, const VoxelGeometry& g,
                                   std::size_t n, std::mt19937_64& rng)
{
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const std::size_t v = g.voxel_count(), m = reg->size();
    std::vector<McSample> out;
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<float> data(v * m);
        for (std::size_t x = 0; x < v; ++x) {
            std::vector<double> w(m);
            const double mode = u(rng);
            double sum = 0.0;
            for (std::size_t k = 0; k < m; ++k) {
                w[k] = mode < 0.1 ? (k == x % m ? 1.0 : 0.0) : (u(rng) < 0.2 ? 0.0 : -std::log(1.0 - u(rng)));
                sum += w[k];
            }
            if (sum == 0.0) {
                w[0] = 1.0;
                sum = 1.0;
            }
            for (std::size_t k = 0; k < m; ++k)
                data[k * v + x] = static_cast<float>(w[k] / sum);
        }
        out.push_back({std::nullopt, ProbMapStack(g, m, std::move(data))});
    }
    return McSampleSet(std::move(reg), std::move(out));
}

/// Independent normal-equations solve by Gauss-Jordan elimination with partial pivoting.
inline Eigen::VectorXd normal_equations_oracle(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                                               const Eigen::VectorXd& w)
{
    const auto p = x.cols();
    std::vector<std::vector<long double>> a(static_cast<std::size_t>(p), std::vector<long double>(p + 1, 0.0L));
    for (Eigen::Index r = 0; r < x.rows(); ++r)
        for (Eigen::Index i = 0; i < p; ++i) {
            for (Eigen::Index j = 0; j < p; ++j)
                a[i][j] += static_cast<long double>(w(r)) * x(r, i) * x(r, j);
            a[i][p] += static_cast<long double>(w(r)) * x(r, i) * y(r);
        }
    for (Eigen::Index c = 0; c < p; ++c) {
        Eigen::Index piv = c;
        for (Eigen::Index r = c + 1; r < p; ++r)
            if (std::fabs(static_cast<double>(a[r][c])) > std::fabs(static_cast<double>(a[piv][c])))
                piv = r;
        std::swap(a[c], a[piv]);
        for (Eigen::Index r = 0; r < p; ++r) {
            if (r == c)
                continue;
            const long double f = a[r][c] / a[c][c];
            for (Eigen::Index k = c; k <= p; ++k)
                a[r][k] -= f * a[c][k];
        }
    }
    Eigen::VectorXd beta(p);
    for (Eigen::Index i = 0; i < p; ++i)
        beta(i) = static_cast<double>(a[i][p] / a[i][i]);
    return beta;
}

/// Fresh directory under the system temp path, removed on destruction.
struct TempDir {
    std::filesystem::path path;
    TempDir()
    {
        static int counter = 0;
        path = std::filesystem::temp_directory_path() /
               ("segqc_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::remove_all(path);
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
};

} // namespace segqc::test
