#include "segqc/stats.hpp"

#include "segqc/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>
#include <sstream>

namespace segqc {

const char* to_string(WeightMode m)
{
    switch (m) {
    case WeightMode::none: return "none";
    case WeightMode::inv_cv: return "inv_cv";
    case WeightMode::inv_one_minus_dice: return "inv_one_minus_dice";
    case WeightMode::explicit_weights: return "explicit";
    }
    return "?";
}

const char* to_string(FitMethod m)
{
    switch (m) {
    case FitMethod::ols: return "ols";
    case FitMethod::wls: return "wls";
    case FitMethod::huber: return "huber";
    }
    return "?";
}

WeightMode parse_weight_mode(const std::string& s)
{
    if (s == "none")
        return WeightMode::none;
    if (s == "inv_cv")
        return WeightMode::inv_cv;
    if (s == "inv_one_minus_dice")
        return WeightMode::inv_one_minus_dice;
    if (s == "explicit")
        return WeightMode::explicit_weights;
    throw ValidationError("unknown weight mode '" + s + "' (none, inv_cv, inv_one_minus_dice, explicit)");
}

std::string GroupMode::name() const
{
    if (method == FitMethod::huber)
        return "huber";
    return to_string(weights);
}

GroupMode GroupMode::parse(const std::string& s)
{
    if (s == "huber")
        return {FitMethod::huber, WeightMode::none};
    WeightMode w = parse_weight_mode(s);
    return {w == WeightMode::none ? FitMethod::ols : FitMethod::wls, w};
}

std::size_t RegressionResult::column(const std::string& name) const
{
    auto it = std::find(columns.begin(), columns.end(), name);
    if (it == columns.end())
        throw ValidationError("regression result has no column '" + name + "'");
    return static_cast<std::size_t>(it - columns.begin());
}

void validate_cohort(const CohortTable& table)
{
    if (table.rows.empty())
        throw ValidationError("cohort: table has no rows");
    for (std::size_t i = 0; i < table.rows.size(); ++i) {
        const auto& r = table.rows[i];
        auto where = [&] { return "cohort row " + std::to_string(i + 1) + " (" + r.subject_id + "): "; };
        if (!std::isfinite(r.age))
            throw ValidationError(where() + "age must be finite");
        if (r.sex != 0 && r.sex != 1)
            throw ValidationError(where() + "sex must be coded 0 or 1");
        if (r.dx != 0 && r.dx != 1)
            throw ValidationError(where() + "dx must be coded 0 or 1");
        if (!std::isfinite(r.volume))
            throw ValidationError(where() + "volume must be finite");
        if (r.cv && (!std::isfinite(*r.cv) || *r.cv < 0.0))
            throw ValidationError(where() + "cv must be finite and >= 0");
        if (r.mc_dice && (!std::isfinite(*r.mc_dice) || *r.mc_dice < 0.0 || *r.mc_dice > 1.0))
            throw ValidationError(where() + "mc_dice must lie in [0, 1]");
        if (table.has_site && (!r.site || r.site->empty()))
            throw ValidationError(where() + "site missing");
    }
}

namespace {

void standardize_column(Eigen::Ref<Eigen::VectorXd> v)
{
    const double n = static_cast<double>(v.size());
    const double mean = v.sum() / n;
    v.array() -= mean;
    if (v.size() < 2)
        return;
    const double sd = std::sqrt(v.squaredNorm() / (n - 1.0));
    if (sd > 0.0)
        v /= sd;
}

} // namespace

Design build_design(const CohortTable& table, WeightMode mode, const FitOptions& opts)
{
    validate_cohort(table);
    if (mode == WeightMode::inv_cv && !table.has_cv)
        throw ValidationError("weight mode inv_cv requires a cv column");
    if (mode == WeightMode::inv_one_minus_dice && !table.has_mc_dice)
        throw ValidationError("weight mode inv_one_minus_dice requires an mc_dice column");
    if (mode == WeightMode::explicit_weights && opts.explicit_weights.size() != table.rows.size())
        throw ValidationError("explicit weights: expected " + std::to_string(table.rows.size()) + " weights, got " +
                              std::to_string(opts.explicit_weights.size()));

    Design d;
    std::vector<double> weights;
    for (std::size_t i = 0; i < table.rows.size(); ++i) {
        const auto& r = table.rows[i];
        double w = 1.0;
        switch (mode) {
        case WeightMode::none: break;
        case WeightMode::inv_cv:
            if (!r.cv) {
                ++d.n_dropped;
                continue;
            }
            w = 1.0 / std::max(*r.cv, kWeightFloor);
            break;
        case WeightMode::inv_one_minus_dice:
            if (!r.mc_dice) {
                ++d.n_dropped;
                continue;
            }
            w = 1.0 / std::max(1.0 - *r.mc_dice, kWeightFloor);
            break;
        case WeightMode::explicit_weights:
            w = opts.explicit_weights[i];
            if (!std::isfinite(w) || w < 0.0)
                throw ValidationError("explicit weight for row " + std::to_string(i + 1) + " must be finite and >= 0");
            break;
        }
        d.rows.push_back(i);
        weights.push_back(w);
    }

    std::vector<std::string> levels;
    std::string reference;
    if (table.has_site) {
        std::set<std::string> seen;
        for (auto i : d.rows)
            seen.insert(*table.rows[i].site);
        levels.assign(seen.begin(), seen.end());
        reference = opts.site_reference.empty() ? (levels.empty() ? "" : levels.front()) : opts.site_reference;
        if (!levels.empty() && !seen.count(reference))
            throw ValidationError("site reference level '" + reference + "' does not occur in the cohort");
    }

    d.columns = {"intercept", "age", "sex", "dx"};
    for (const auto& l : levels)
        if (l != reference)
            d.columns.push_back("site[" + l + "]");

    const auto n = static_cast<Eigen::Index>(d.rows.size());
    const auto p = static_cast<Eigen::Index>(d.columns.size());
    d.x.resize(n, p);
    d.y.resize(n);
    d.w.resize(n);
    for (Eigen::Index k = 0; k < n; ++k) {
        const auto& r = table.rows[d.rows[static_cast<std::size_t>(k)]];
        d.x(k, 0) = 1.0;
        d.x(k, 1) = r.age;
        d.x(k, 2) = r.sex;
        d.x(k, 3) = r.dx;
        Eigen::Index c = 4;
        for (const auto& l : levels)
            if (l != reference)
                d.x(k, c++) = (*r.site == l) ? 1.0 : 0.0;
        d.y(k) = r.volume;
        d.w(k) = weights[static_cast<std::size_t>(k)];
    }
    if (opts.standardize && n > 0) {
        standardize_column(d.x.col(1));
        standardize_column(d.y);
    }
    if (n > 0)
        for (Eigen::Index c = 1; c < p; ++c)
            if ((d.x.col(c).array() == d.x(0, c)).all())
                throw ValidationError("column '" + d.columns[static_cast<std::size_t>(c)] +
                                      "' is constant (collinear with intercept)");
    return d;
}

RegressionResult weighted_least_squares(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const Eigen::VectorXd& w,
                                        std::vector<std::string> columns, FitMethod method)
{
    const Eigen::Index n = x.rows();
    const Eigen::Index p = x.cols();
    if (y.size() != n || w.size() != n || static_cast<Eigen::Index>(columns.size()) != p)
        throw ValidationError("regression: design, response, weights and column names differ in size");
    if (p == 0)
        throw ValidationError("regression: empty design");
    if (n - p < 1)
        throw ValidationError("regression: residual degrees of freedom n - p = " + std::to_string(n - p) +
                              " < 1 (n = " + std::to_string(n) + ", p = " + std::to_string(p) + ")");
    for (Eigen::Index i = 0; i < n; ++i)
        if (!std::isfinite(w(i)) || w(i) < 0.0)
            throw ValidationError("regression: weights must be finite and >= 0");

    const Eigen::VectorXd sw = w.array().sqrt();
    const Eigen::MatrixXd a = sw.asDiagonal() * x;
    const Eigen::VectorXd b = sw.cwiseProduct(y);

    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(a);
    const Eigen::MatrixXd r = qr.matrixR().topLeftCorner(p, p).triangularView<Eigen::Upper>();
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(r);
    const auto& sv = svd.singularValues();
    const double smax = sv(0);
    const double smin = sv(p - 1);
    const double cond = smin > 0.0 ? smax / smin : std::numeric_limits<double>::infinity();
    if (!(cond <= kMaxCondition)) {
        const auto& perm = qr.colsPermutation().indices();
        const double r00 = std::abs(r(0, 0));
        std::vector<std::string> bad;
        for (Eigen::Index k = 0; k < p; ++k)
            if (std::abs(r(k, k)) <= r00 / kMaxCondition)
                bad.push_back(columns[static_cast<std::size_t>(perm(k))]);
        if (bad.empty())
            bad.push_back(columns[static_cast<std::size_t>(perm(p - 1))]);
        std::ostringstream os;
        os << "regression: design matrix is singular (condition estimate " << cond << " > " << kMaxCondition
           << "); collinear column(s): ";
        for (std::size_t i = 0; i < bad.size(); ++i)
            os << (i ? ", " : "") << bad[i];
        throw ValidationError(os.str());
    }

    RegressionResult res;
    res.columns = std::move(columns);
    res.method = method;
    res.beta = qr.solve(b);
    const Eigen::VectorXd resid = y - x * res.beta;
    res.weighted_rss = (w.array() * resid.array().square()).sum();
    res.df = static_cast<double>(n - p);
    res.n_used = static_cast<std::size_t>(n);
    const double sigma2 = res.weighted_rss / res.df;

    // (X'WX)^-1 = P R^-1 R^-T P'
    const Eigen::MatrixXd rinv =
        r.triangularView<Eigen::Upper>().solve(Eigen::MatrixXd::Identity(p, p));
    const Eigen::MatrixXd cov_perm = rinv * rinv.transpose();
    const auto& perm = qr.colsPermutation().indices();
    res.se.resize(p);
    res.t.resize(p);
    res.p.resize(p);
    for (Eigen::Index k = 0; k < p; ++k)
        res.se(perm(k)) = std::sqrt(std::max(0.0, sigma2 * cov_perm(k, k)));
    for (Eigen::Index k = 0; k < p; ++k) {
        if (res.se(k) > 0.0) {
            res.t(k) = res.beta(k) / res.se(k);
            res.p(k) = student_t_two_sided_p(res.t(k), res.df);
        } else if (res.beta(k) == 0.0) {
            res.t(k) = 0.0;
            res.p(k) = 1.0;
        } else {
            res.t(k) = std::copysign(std::numeric_limits<double>::infinity(), res.beta(k));
            res.p(k) = 0.0;
        }
    }
    return res;
}

RegressionResult wls_fit(const CohortTable& table, WeightMode mode, const FitOptions& opts)
{
    auto d = build_design(table, mode, opts);
    auto res = weighted_least_squares(d.x, d.y, d.w, d.columns,
                                      mode == WeightMode::none ? FitMethod::ols : FitMethod::wls);
    res.n_dropped = d.n_dropped;
    if (d.n_dropped)
        res.note = std::to_string(d.n_dropped) + " row(s) dropped: missing " + to_string(mode) + " weight";
    return res;
}

namespace {

double median(std::vector<double> v)
{
    const std::size_t n = v.size();
    std::nth_element(v.begin(), v.begin() + n / 2, v.end());
    double hi = v[n / 2];
    if (n % 2)
        return hi;
    double lo = *std::max_element(v.begin(), v.begin() + n / 2);
    return 0.5 * (lo + hi);
}

/// MAD about the median, rescaled to a normal-consistent sigma.
double robust_scale(const Eigen::VectorXd& r)
{
    std::vector<double> v(r.data(), r.data() + r.size());
    const double med = median(v);
    for (auto& x : v)
        x = std::abs(x - med);
    return median(std::move(v)) / 0.6745;
}

double std_scale(const Eigen::VectorXd& r)
{
    const double n = static_cast<double>(r.size());
    const double mean = r.sum() / n;
    return std::sqrt((r.array() - mean).square().sum() / (n - 1.0));
}

} // namespace

RegressionResult huber_fit(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, std::vector<std::string> columns,
                           const HuberOptions& hopts)
{
    const Eigen::Index n = x.rows();
    const Eigen::Index p = x.cols();
    if (n - p < 2)
        throw ValidationError("huber: needs n - p >= 2, got " + std::to_string(n - p));
    const Eigen::VectorXd ones = Eigen::VectorXd::Ones(n);
    RegressionResult fit = weighted_least_squares(x, y, ones, columns, FitMethod::ols);
    Eigen::VectorXd resid = y - x * fit.beta;

    const double exact = 64.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, y.cwiseAbs().maxCoeff());
    if (resid.cwiseAbs().maxCoeff() <= exact) {
        fit.method = FitMethod::huber;
        fit.iterations = 1;
        fit.converged = true;
        fit.note = "exact fit: all residuals zero, OLS result returned";
        return fit;
    }

    std::string note;
    bool converged = false;
    std::size_t it = 0;
    while (it < hopts.max_iterations) {
        ++it;
        double scale = robust_scale(resid);
        if (!(scale > 0.0)) {
            scale = std_scale(resid);
            note = "zero MAD: standard-deviation scale used";
        }
        const double k = hopts.tuning * scale;
        Eigen::VectorXd w(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            const double a = std::abs(resid(i));
            w(i) = a <= k ? 1.0 : k / a;
        }
        RegressionResult next = weighted_least_squares(x, y, w, columns, FitMethod::huber);
        const double delta = (next.beta - fit.beta).cwiseAbs().maxCoeff();
        fit = std::move(next);
        resid = y - x * fit.beta;
        if (delta < hopts.tolerance) {
            converged = true;
            break;
        }
    }
    fit.method = FitMethod::huber;
    fit.iterations = it;
    fit.converged = converged;
    if (!converged)
        note += (note.empty() ? "" : "; ") + std::string("IRLS stopped at the iteration limit");
    fit.note = note;
    return fit;
}

RegressionResult huber_fit(const CohortTable& table, const FitOptions& opts, const HuberOptions& hopts)
{
    auto d = build_design(table, WeightMode::none, opts);
    auto res = huber_fit(d.x, d.y, d.columns, hopts);
    res.n_dropped = d.n_dropped;
    return res;
}

std::vector<GroupRow> group_analysis(const CohortTable& table, const std::string& structure,
                                     std::span<const GroupMode> modes, const FitOptions& opts)
{
    std::vector<GroupRow> out;
    for (const auto& mode : modes) {
        RegressionResult res;
        try {
            res = mode.method == FitMethod::huber ? huber_fit(table, opts) : wls_fit(table, mode.weights, opts);
        } catch (const ValidationError& e) {
            throw ValidationError(structure + " / " + mode.name() + ": " + e.what());
        }
        const auto c = res.column("dx");
        out.push_back({mode.name(), res.beta(static_cast<Eigen::Index>(c)), res.se(static_cast<Eigen::Index>(c)),
                       res.p(static_cast<Eigen::Index>(c)), res.n_used, res.n_dropped});
    }
    return out;
}

} // namespace segqc
