#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "sepmatch/entropy.hpp"
#include "sepmatch/estimators.hpp"
#include "sepmatch/types.hpp"

namespace sepmatch {

// Per-side geometric margin profile n_x proportional to rate^(x-1), each side
// normalized to mass 1.
Margins geometric_margins(const TypeSpace& space, double rate);

// K=8 basis columns on the 1-based type grid:
// 1, x, y, x^2, xy, y^2, 1(x>=y), max(x-y,0).
Eigen::MatrixXd quadratic_gap_bases(const TypeSpace& space);

// One multinomial draw of N households over the arrangement space; returns
// counts/N with N recorded. Deterministic given seed.
MatchingPatterns draw_sample(const MatchingPatterns& mu, double N, std::uint64_t seed);

struct StudyConfig {
    TypeSpace space{20, 20};
    double margin_rate = 0.8;
    std::string bases = "quadratic_gap";
    Eigen::VectorXd true_beta;
    EntropyModel family = EntropyModel::choo_siow();
    Eigen::VectorXd true_alpha;  // empty: derived from the family when possible
    double N = 10000;
    int S_reps = 100;
    std::uint64_t seed = 1;
    bool run_mde = true;
    bool run_poisson = true;
    MDEConfig mde;
};

struct ReplicationRecord {
    int rep = 0;
    bool ok = false;
    std::string error;
    Eigen::VectorXd mde_lambda, mde_se;
    double mde_T = std::numeric_limits<double>::quiet_NaN();
    int mde_df = 0;
    int mde_dropped = 0;
    Eigen::VectorXd poisson_beta, poisson_se;
    int poisson_iterations = 0;
};

struct ParameterSummary {
    std::string name;
    double truth = 0.0;
    double mean = 0.0;
    double bias = 0.0;
    double sd = 0.0;
    double ase_mean = 0.0;
    double coverage95 = 0.0;
};

struct StudySummary {
    int S_reps = 0;
    int failures = 0;
    double N = 0.0;
    double normalization_scale = 1.0;  // pre-normalization household mass
    std::vector<ParameterSummary> mde;      // alpha coords then beta coords
    std::vector<ParameterSummary> poisson;  // beta coords
    double mde_T_mean = std::numeric_limits<double>::quiet_NaN();
    double mde_df_mean = std::numeric_limits<double>::quiet_NaN();
};

struct StudyRun {
    StudySummary summary;
    std::vector<ReplicationRecord> replications;
    Eigen::VectorXd true_lambda;
};

// Solves the data-generating market once, then draws and estimates S_reps
// samples on jobs worker threads (replication r always uses substream r, so
// results do not depend on the thread count). Per-replication estimation
// failures are recorded and excluded from the summary, not fatal.
StudyRun run_study(const StudyConfig& config, int jobs = 1);

// Output files for a finished run: replications.csv, summary.json and one
// hist_<param>.svg per estimated parameter, all under out_dir.
void emit_study_outputs(const StudyRun& run, const StudyConfig& config,
                        const std::string& out_dir);

void write_histogram_svg(const std::vector<double>& values, double truth,
                         const std::string& title, const std::string& path);

}  // namespace sepmatch
