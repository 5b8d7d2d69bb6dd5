#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <string>
#include <vector>

#include "twostage/model_fit.hpp"
#include "twostage/survey.hpp"

namespace twostage {

// Column-oriented study data. The error-prone exposure xstar is observed on
// everyone; the biomarker xstarstar only where subset == 1 (NaN elsewhere).
// Design columns are carried as strings for exact CSV round-trips and are
// coded into a SurveyDesign via make_design().
struct Dataset {
    std::vector<std::int64_t> unit_id;

    ModelKind outcome_kind = ModelKind::binomial;
    Eigen::VectorXd y;                       // binomial / gaussian outcome
    std::vector<SurvivalOutcome> survival;   // coxph outcome

    Eigen::VectorXd xstar;
    Eigen::VectorXd xstarstar;               // NaN off the calibration subset
    Eigen::MatrixXd z;                       // N x q error-free covariates
    Eigen::VectorXi subset;                  // V_i
    Eigen::VectorXd x_true;                  // simulation only (truth comparator); empty for real data

    std::vector<std::string> stratum_label;  // empty => single stratum
    std::vector<std::string> cluster_label;  // empty => unit-level clusters
    Eigen::VectorXd weight;                  // empty => all 1

    int n_rows() const { return static_cast<int>(xstar.size()); }
    int n_subset() const { return subset.sum(); }
    std::vector<int> subset_rows() const;

    // Checks the xstarstar <=> subset pattern and column lengths.
    void validate() const;
};

// Builds the computational design from the dataset's design columns.
SurveyDesign make_design(const Dataset& data);

// Row-multiset selection (rows may repeat; used by resampling).
Dataset take_rows(const Dataset& data, const std::vector<int>& rows);

}  // namespace twostage
