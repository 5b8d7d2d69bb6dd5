#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <vector>

#include "twostage/errors.hpp"

namespace twostage {

// Sampling design: strata, first-stage clusters (PSUs) and weights 1/pi.
// All design variances use the with-replacement approximation (no
// finite-population correction). Stratum and cluster labels are opaque
// integer codes; a cluster is identified by the (stratum, cluster) pair.
struct SurveyDesign {
    std::vector<std::int64_t> unit_id;
    std::vector<std::int32_t> stratum;
    std::vector<std::int32_t> cluster;
    Eigen::VectorXd weight;

    int n() const { return static_cast<int>(weight.size()); }
    void validate() const;
};

// Degenerate design: every unit its own PSU, one stratum, weight 1.
SurveyDesign make_srs_design(int n_units);

// Design-based covariance of the vector of weighted totals of `values`.
// Per stratum h with n_h clusters: V_h = n_h/(n_h-1) sum_c (z_hc - zbar_h)(...)'
// where z_hc are weighted cluster totals; returns sum_h V_h.
Eigen::MatrixXd total_variance(const SurveyDesign& design, const Eigen::MatrixXd& values);

// Cross-classifies the design strata with a 0/1 indicator (typically the
// calibration-subset membership). Cluster labels are unchanged.
SurveyDesign augment_strata(const SurveyDesign& design, const Eigen::VectorXi& indicator);

// Keeps rows with keep != 0; labels are retained.
SurveyDesign subset_design(const SurveyDesign& design, const Eigen::VectorXi& keep);

// Row-multiset selection (used by resampling; rows may repeat).
SurveyDesign take_design_rows(const SurveyDesign& design, const std::vector<int>& rows);

}  // namespace twostage
