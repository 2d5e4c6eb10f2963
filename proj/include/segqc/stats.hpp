#pragma once

#include "segqc/metrics.hpp"

#include <Eigen/Dense>

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace segqc {

// ---------------------------------------------------------------------------
// Distributions

/// Regularized incomplete beta I_x(a, b) for a, b > 0 and x in [0, 1].
double incomplete_beta(double a, double b, double x);

/// Student-t CDF with df > 0 degrees of freedom.
double student_t_cdf(double t, double df);

/// Two-sided p-value P(|T| >= |t|).
double student_t_two_sided_p(double t, double df);

// ---------------------------------------------------------------------------
// Correlation

struct PearsonResult {
    double r = 0.0;
    std::size_t n_used = 0;
    std::size_t n_dropped = 0;
};

/// Pearson r over the pairs where both values are present.
/// Throws ValidationError for length mismatch, < 3 usable pairs, or a constant vector.
PearsonResult pearson(std::span<const std::optional<double>> xs, std::span<const std::optional<double>> ys);
PearsonResult pearson(std::span<const double> xs, std::span<const double> ys);

struct UncertaintyCorrelation {
    double r_mean_unc = 0.0;  // r(mean voxel uncertainty, Dice)
    double r_cv = 0.0;        // r(CV, Dice)
    double r_mc_dice = 0.0;   // r(MC Dice agreement, Dice)
    std::size_t n_pairs = 0;
    std::size_t n_dropped = 0;
};

/// Pools every (scan, structure) record that has all four quantities defined.
UncertaintyCorrelation correlate_uncertainty_accuracy(std::span<const StructureReport> reports);

// ---------------------------------------------------------------------------
// Cohort regression

struct CohortRow {
    std::string subject_id;
    double age = 0.0;
    int sex = 0;
    int dx = 0;
    std::optional<std::string> site;
    double volume = 0.0;
    std::optional<double> cv;
    std::optional<double> mc_dice;

    bool operator==(const CohortRow&) const = default;
};

struct CohortTable {
    std::vector<CohortRow> rows;
    bool has_site = false;
    bool has_cv = false;
    bool has_mc_dice = false;

    bool operator==(const CohortTable&) const = default;
};

/// Checks row-level invariants (binary codes, finite values, non-negative weights, site coverage).
void validate_cohort(const CohortTable& table);

enum class WeightMode { none, inv_cv, inv_one_minus_dice, explicit_weights };
enum class FitMethod { ols, wls, huber };

const char* to_string(WeightMode m);
const char* to_string(FitMethod m);
WeightMode parse_weight_mode(const std::string& s);

/// Floor applied to CV and (1 - d^MC) before inversion.
inline constexpr double kWeightFloor = 1e-4;

/// Condition number above which the weighted design is declared singular.
inline constexpr double kMaxCondition = 1e12;

struct FitOptions {
    /// z-score volume and age over the fitted rows (binary columns untouched).
    bool standardize = true;
    /// Weights for WeightMode::explicit_weights, one per table row.
    std::vector<double> explicit_weights;
    /// Site level used as the dummy-coding reference; lexicographically first when empty.
    std::string site_reference;
};

struct RegressionResult {
    std::vector<std::string> columns;
    Eigen::VectorXd beta;
    Eigen::VectorXd se;
    Eigen::VectorXd t;
    Eigen::VectorXd p;
    double df = 0.0;
    double weighted_rss = 0.0;
    FitMethod method = FitMethod::ols;
    std::size_t n_used = 0;
    std::size_t n_dropped = 0;
    std::size_t iterations = 0;
    bool converged = true;
    std::string note;

    std::size_t column(const std::string& name) const;
};

/// Design matrix, response and weights assembled from a cohort table.
struct Design {
    Eigen::MatrixXd x;
    Eigen::VectorXd y;
    Eigen::VectorXd w;
    std::vector<std::string> columns;
    std::vector<std::size_t> rows;  // table row index of each design row
    std::size_t n_dropped = 0;
};

/// Columns: intercept, age, sex, dx, then one dummy per non-reference site level.
Design build_design(const CohortTable& table, WeightMode mode, const FitOptions& opts = {});

/// Weighted least squares on an explicit design via a column-pivoted QR of sqrt(W) X.
RegressionResult weighted_least_squares(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                                        const Eigen::VectorXd& w, std::vector<std::string> columns,
                                        FitMethod method = FitMethod::wls);

RegressionResult wls_fit(const CohortTable& table, WeightMode mode, const FitOptions& opts = {});

struct HuberOptions {
    double tuning = 1.345;
    double tolerance = 1e-8;
    std::size_t max_iterations = 50;
};

/// Huber M-estimate by IRLS started from OLS.
RegressionResult huber_fit(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, std::vector<std::string> columns,
                           const HuberOptions& hopts = {});
RegressionResult huber_fit(const CohortTable& table, const FitOptions& opts = {}, const HuberOptions& hopts = {});

struct GroupMode {
    FitMethod method = FitMethod::ols;
    WeightMode weights = WeightMode::none;

    std::string name() const;
    static GroupMode parse(const std::string& s);
};

struct GroupRow {
    std::string mode;
    double beta_d = 0.0;
    double se_d = 0.0;
    double p_d = 1.0;
    std::size_t n_used = 0;
    std::size_t n_dropped = 0;
};

/// One fit per mode; extracts the diagnosis coefficient from each.
std::vector<GroupRow> group_analysis(const CohortTable& table, const std::string& structure,
                                     std::span<const GroupMode> modes, const FitOptions& opts = {});

} // namespace segqc
