#include "twostage/dataset.hpp"

#include <cmath>
#include <map>

namespace twostage {

std::vector<int> Dataset::subset_rows() const {
    std::vector<int> rows;
    for (int i = 0; i < n_rows(); ++i)
        if (subset[i] != 0) rows.push_back(i);
    return rows;
}

void Dataset::validate() const {
    const int n = n_rows();
    auto check_len = [&](Eigen::Index len, const char* what) {
        if (len != n) throw DataError(std::string("Dataset: ") + what + " length does not match xstar");
    };
    check_len(xstarstar.size(), "xstarstar");
    check_len(subset.size(), "subset");
    if (z.size() > 0 && z.rows() != n) throw DataError("Dataset: z row count does not match xstar");
    if (outcome_kind == ModelKind::coxph) {
        if (static_cast<int>(survival.size()) != n) throw DataError("Dataset: survival outcome length mismatch");
    } else {
        check_len(y.size(), "y");
    }
    if (!unit_id.empty() && static_cast<int>(unit_id.size()) != n)
        throw DataError("Dataset: unit_id length mismatch");
    if (weight.size() > 0) check_len(weight.size(), "weight");
    if (!stratum_label.empty() && static_cast<int>(stratum_label.size()) != n)
        throw DataError("Dataset: stratum length mismatch");
    if (!cluster_label.empty() && static_cast<int>(cluster_label.size()) != n)
        throw DataError("Dataset: cluster length mismatch");
    for (int i = 0; i < n; ++i) {
        const bool have_biomarker = !std::isnan(xstarstar[i]);
        if (subset[i] != 0 && !have_biomarker)
            throw DataError("Dataset: row " + std::to_string(i) + " is in the subset but xstarstar is missing");
        if (subset[i] == 0 && have_biomarker)
            throw DataError("Dataset: row " + std::to_string(i) + " has xstarstar but subset = 0");
    }
}

SurveyDesign make_design(const Dataset& data) {
    const int n = data.n_rows();
    SurveyDesign d;
    d.unit_id.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i)
        d.unit_id[static_cast<std::size_t>(i)] = data.unit_id.empty() ? i : data.unit_id[static_cast<std::size_t>(i)];
    d.weight = data.weight.size() > 0 ? data.weight : Eigen::VectorXd::Ones(n);

    auto encode = [&](const std::vector<std::string>& labels, bool unit_default) {
        std::vector<std::int32_t> codes(static_cast<std::size_t>(n));
        if (labels.empty()) {
            for (int i = 0; i < n; ++i) codes[static_cast<std::size_t>(i)] = unit_default ? i : 0;
            return codes;
        }
        std::map<std::string, std::int32_t> dict;
        for (int i = 0; i < n; ++i) {
            auto [it, inserted] = dict.try_emplace(labels[static_cast<std::size_t>(i)],
                                                   static_cast<std::int32_t>(dict.size()));
            codes[static_cast<std::size_t>(i)] = it->second;
        }
        return codes;
    };
    d.stratum = encode(data.stratum_label, false);
    d.cluster = encode(data.cluster_label, true);
    d.validate();
    return d;
}

Dataset take_rows(const Dataset& data, const std::vector<int>& rows) {
    Dataset out;
    const auto m = static_cast<Eigen::Index>(rows.size());
    out.outcome_kind = data.outcome_kind;
    out.xstar.resize(m);
    out.xstarstar.resize(m);
    out.subset.resize(m);
    if (data.x_true.size() > 0) out.x_true.resize(m);
    if (data.z.size() > 0) out.z.resize(m, data.z.cols());
    if (data.outcome_kind == ModelKind::coxph)
        out.survival.resize(rows.size());
    else
        out.y.resize(m);
    if (data.weight.size() > 0) out.weight.resize(m);
    out.unit_id.reserve(rows.size());
    if (!data.stratum_label.empty()) out.stratum_label.reserve(rows.size());
    if (!data.cluster_label.empty()) out.cluster_label.reserve(rows.size());

    Eigen::Index k = 0;
    for (int i : rows) {
        out.xstar[k] = data.xstar[i];
        out.xstarstar[k] = data.xstarstar[i];
        out.subset[k] = data.subset[i];
        if (data.x_true.size() > 0) out.x_true[k] = data.x_true[i];
        if (data.z.size() > 0) out.z.row(k) = data.z.row(i);
        if (data.outcome_kind == ModelKind::coxph)
            out.survival[static_cast<std::size_t>(k)] = data.survival[static_cast<std::size_t>(i)];
        else
            out.y[k] = data.y[i];
        if (data.weight.size() > 0) out.weight[k] = data.weight[i];
        out.unit_id.push_back(data.unit_id.empty() ? i : data.unit_id[static_cast<std::size_t>(i)]);
        if (!data.stratum_label.empty()) out.stratum_label.push_back(data.stratum_label[static_cast<std::size_t>(i)]);
        if (!data.cluster_label.empty()) out.cluster_label.push_back(data.cluster_label[static_cast<std::size_t>(i)]);
        ++k;
    }
    return out;
}

}  // namespace twostage
