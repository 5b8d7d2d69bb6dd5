#include "twostage/survey.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <string>
#include <utility>

namespace twostage {

void SurveyDesign::validate() const {
    const std::size_t n_rows = weight.size();
    if (unit_id.size() != n_rows || stratum.size() != n_rows || cluster.size() != n_rows)
        throw DomainError("SurveyDesign: column lengths differ");
    for (Eigen::Index i = 0; i < weight.size(); ++i)
        if (!(weight[i] > 0.0)) throw DomainError("SurveyDesign: weights must be positive");
}

SurveyDesign make_srs_design(int n_units) {
    if (n_units < 2) throw DomainError("make_srs_design: need at least 2 units");
    SurveyDesign d;
    d.unit_id.resize(static_cast<std::size_t>(n_units));
    std::iota(d.unit_id.begin(), d.unit_id.end(), 0);
    d.stratum.assign(static_cast<std::size_t>(n_units), 0);
    d.cluster.resize(static_cast<std::size_t>(n_units));
    std::iota(d.cluster.begin(), d.cluster.end(), 0);
    d.weight = Eigen::VectorXd::Ones(n_units);
    return d;
}

Eigen::MatrixXd total_variance(const SurveyDesign& design, const Eigen::MatrixXd& values) {
    design.validate();
    const int n = design.n();
    if (values.rows() != n) throw DomainError("total_variance: values row count does not match design");
    const Eigen::Index p = values.cols();

    // weighted cluster totals, keyed by (stratum, cluster); std::map keeps
    // the accumulation order independent of label encoding
    std::map<std::pair<std::int32_t, std::int32_t>, Eigen::VectorXd> totals;
    for (int i = 0; i < n; ++i) {
        auto key = std::make_pair(design.stratum[static_cast<std::size_t>(i)],
                                  design.cluster[static_cast<std::size_t>(i)]);
        auto [it, inserted] = totals.try_emplace(key, Eigen::VectorXd::Zero(p));
        it->second += design.weight[i] * values.row(i).transpose();
    }

    Eigen::MatrixXd v = Eigen::MatrixXd::Zero(p, p);
    auto it = totals.begin();
    while (it != totals.end()) {
        const std::int32_t h = it->first.first;
        auto stratum_end = it;
        int n_h = 0;
        Eigen::VectorXd mean = Eigen::VectorXd::Zero(p);
        while (stratum_end != totals.end() && stratum_end->first.first == h) {
            mean += stratum_end->second;
            ++n_h;
            ++stratum_end;
        }
        if (n_h < 2)
            throw LonelyPsuError("total_variance: stratum " + std::to_string(h) +
                                 " has a single PSU; variance is undefined");
        mean /= static_cast<double>(n_h);
        const double factor = static_cast<double>(n_h) / (static_cast<double>(n_h) - 1.0);
        for (; it != stratum_end; ++it) {
            Eigen::VectorXd d = it->second - mean;
            v.selfadjointView<Eigen::Lower>().rankUpdate(d, factor);
        }
    }
    Eigen::MatrixXd sym = v.selfadjointView<Eigen::Lower>();
    return sym;
}

SurveyDesign augment_strata(const SurveyDesign& design, const Eigen::VectorXi& indicator) {
    design.validate();
    if (indicator.size() != design.n()) throw DomainError("augment_strata: indicator length mismatch");
    SurveyDesign out = design;
    std::map<std::pair<std::int32_t, int>, std::int32_t> relabel;
    for (int i = 0; i < design.n(); ++i) {
        const int ind = indicator[i] != 0;
        auto key = std::make_pair(design.stratum[static_cast<std::size_t>(i)], ind);
        auto [it, inserted] = relabel.try_emplace(key, static_cast<std::int32_t>(relabel.size()));
        out.stratum[static_cast<std::size_t>(i)] = it->second;
    }
    return out;
}

SurveyDesign subset_design(const SurveyDesign& design, const Eigen::VectorXi& keep) {
    design.validate();
    if (keep.size() != design.n()) throw DomainError("subset_design: keep length mismatch");
    std::vector<int> rows;
    for (int i = 0; i < design.n(); ++i)
        if (keep[i] != 0) rows.push_back(i);
    if (rows.empty()) throw DomainError("subset_design: empty subset");
    return take_design_rows(design, rows);
}

SurveyDesign take_design_rows(const SurveyDesign& design, const std::vector<int>& rows) {
    SurveyDesign out;
    out.unit_id.reserve(rows.size());
    out.stratum.reserve(rows.size());
    out.cluster.reserve(rows.size());
    out.weight.resize(static_cast<Eigen::Index>(rows.size()));
    Eigen::Index k = 0;
    for (int i : rows) {
        out.unit_id.push_back(design.unit_id[static_cast<std::size_t>(i)]);
        out.stratum.push_back(design.stratum[static_cast<std::size_t>(i)]);
        out.cluster.push_back(design.cluster[static_cast<std::size_t>(i)]);
        out.weight[k++] = design.weight[i];
    }
    return out;
}

}  // namespace twostage
