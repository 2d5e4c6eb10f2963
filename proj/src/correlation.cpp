#include "segqc/stats.hpp"

#include "segqc/error.hpp"

#include <algorithm>
#include <cmath>

namespace segqc {

PearsonResult pearson(std::span<const std::optional<double>> xs, std::span<const std::optional<double>> ys)
{
    if (xs.size() != ys.size())
        throw ValidationError("pearson: vectors differ in length (" + std::to_string(xs.size()) + " vs " +
                              std::to_string(ys.size()) + ")");
    std::vector<double> a, b;
    a.reserve(xs.size());
    b.reserve(xs.size());
    PearsonResult res;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        if (xs[i] && ys[i] && std::isfinite(*xs[i]) && std::isfinite(*ys[i])) {
            a.push_back(*xs[i]);
            b.push_back(*ys[i]);
        } else {
            ++res.n_dropped;
        }
    }
    if (a.size() < 3)
        throw ValidationError("pearson: need at least 3 valid pairs, got " + std::to_string(a.size()));
    const double n = static_cast<double>(a.size());
    double ma = 0.0, mb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= n;
    mb /= n;
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double da = a[i] - ma;
        const double db = b[i] - mb;
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    if (saa == 0.0 || sbb == 0.0)
        throw ValidationError("pearson: correlation undefined for a constant vector");
    res.r = std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
    res.n_used = a.size();
    return res;
}

PearsonResult pearson(std::span<const double> xs, std::span<const double> ys)
{
    std::vector<std::optional<double>> a(xs.begin(), xs.end());
    std::vector<std::optional<double>> b(ys.begin(), ys.end());
    return pearson(a, b);
}

UncertaintyCorrelation correlate_uncertainty_accuracy(std::span<const StructureReport> reports)
{
    std::vector<std::optional<double>> unc, cv, dmc, dice;
    std::size_t dropped = 0;
    for (const auto& rep : reports) {
        if (!rep.has_ground_truth)
            throw ValidationError("correlate: report '" + rep.scan_id + "' has no ground-truth Dice");
        for (const auto& s : rep.structures) {
            if (s.mean_unc && s.cv && s.mc_dice && s.gt_dice) {
                unc.push_back(s.mean_unc);
                cv.push_back(s.cv);
                dmc.push_back(s.mc_dice);
                dice.push_back(s.gt_dice);
            } else {
                ++dropped;
            }
        }
    }
    if (dice.size() < 3)
        throw ValidationError("correlate: need at least 3 (scan, structure) pairs with all metrics defined, got " +
                              std::to_string(dice.size()));
    UncertaintyCorrelation out;
    out.r_mean_unc = pearson(unc, dice).r;
    out.r_cv = pearson(cv, dice).r;
    out.r_mc_dice = pearson(dmc, dice).r;
    out.n_pairs = dice.size();
    out.n_dropped = dropped;
    return out;
}

} // namespace segqc
