#include "sepmatch/montecarlo.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "sepmatch/errors.hpp"
#include "sepmatch/rng.hpp"
#include "sepmatch/solvers.hpp"

namespace sepmatch {

namespace {

std::string fmt17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

double normal975() { return 1.959963984540054; }

Eigen::VectorXd resolve_true_alpha(const StudyConfig& config) {
    const int d = config.family.d_alpha(config.space);
    if (config.true_alpha.size() == static_cast<Eigen::Index>(d)) return config.true_alpha;
    if (config.true_alpha.size() != 0)
        throw InputError("true_alpha has wrong length for the entropy family");
    if (d == 0) return Eigen::VectorXd();
    if (config.family.family == Family::nested_logit)
        return config.family.nested.alpha_from_params();
    throw InputError("true_alpha required for this entropy family");
}

std::vector<std::string> lambda_names(int d_alpha, int k) {
    std::vector<std::string> names;
    for (int i = 0; i < d_alpha; ++i) names.push_back("alpha" + std::to_string(i + 1));
    for (int i = 0; i < k; ++i) names.push_back("beta" + std::to_string(i + 1));
    return names;
}

std::vector<ParameterSummary> summarize_block(
    const std::vector<const ReplicationRecord*>& ok_recs,
    const std::vector<std::string>& names, const Eigen::VectorXd& truth,
    const Eigen::VectorXd& (*value_of)(const ReplicationRecord&),
    const Eigen::VectorXd& (*se_of)(const ReplicationRecord&)) {
    std::vector<ParameterSummary> out;
    const int dim = static_cast<int>(truth.size());
    const int s = static_cast<int>(ok_recs.size());
    for (int i = 0; i < dim; ++i) {
        ParameterSummary ps;
        ps.name = names[i];
        ps.truth = truth(i);
        double sum = 0.0, sum_se = 0.0;
        for (const auto* r : ok_recs) {
            sum += value_of(*r)(i);
            sum_se += se_of(*r)(i);
        }
        ps.mean = s > 0 ? sum / s : std::numeric_limits<double>::quiet_NaN();
        ps.bias = ps.mean - ps.truth;
        ps.ase_mean = s > 0 ? sum_se / s : std::numeric_limits<double>::quiet_NaN();
        double ss = 0.0;
        int covered = 0;
        for (const auto* r : ok_recs) {
            const double v = value_of(*r)(i);
            ss += (v - ps.mean) * (v - ps.mean);
            if (std::abs(v - ps.truth) <= normal975() * se_of(*r)(i)) ++covered;
        }
        ps.sd = s > 1 ? std::sqrt(ss / (s - 1)) : 0.0;
        ps.coverage95 = s > 0 ? static_cast<double>(covered) / s
                              : std::numeric_limits<double>::quiet_NaN();
        out.push_back(ps);
    }
    return out;
}

const Eigen::VectorXd& mde_value(const ReplicationRecord& r) { return r.mde_lambda; }
const Eigen::VectorXd& mde_se(const ReplicationRecord& r) { return r.mde_se; }
const Eigen::VectorXd& poisson_value(const ReplicationRecord& r) { return r.poisson_beta; }
const Eigen::VectorXd& poisson_se(const ReplicationRecord& r) { return r.poisson_se; }

}  // namespace

Margins geometric_margins(const TypeSpace& space, double rate) {
    if (!(rate > 0.0 && rate <= 1.0)) throw InputError("margin rate must lie in (0,1]");
    Margins q;
    q.n.resize(space.X);
    q.m.resize(space.Y);
    for (int x = 0; x < space.X; ++x) q.n(x) = std::pow(rate, x);
    for (int y = 0; y < space.Y; ++y) q.m(y) = std::pow(rate, y);
    q.n /= q.n.sum();
    q.m /= q.m.sum();
    return q;
}

Eigen::MatrixXd quadratic_gap_bases(const TypeSpace& space) {
    Eigen::MatrixXd phi(space.n_couples(), 8);
    for (int x = 0; x < space.X; ++x)
        for (int y = 0; y < space.Y; ++y) {
            const double xv = x + 1, yv = y + 1;
            const int r = x * space.Y + y;
            phi(r, 0) = 1.0;
            phi(r, 1) = xv;
            phi(r, 2) = yv;
            phi(r, 3) = xv * xv;
            phi(r, 4) = xv * yv;
            phi(r, 5) = yv * yv;
            phi(r, 6) = xv >= yv ? 1.0 : 0.0;
            phi(r, 7) = std::max(xv - yv, 0.0);
        }
    return phi;
}

MatchingPatterns draw_sample(const MatchingPatterns& mu, double N, std::uint64_t seed) {
    if (!(N >= 1.0)) throw InputError("sample size must be at least 1");
    const TypeSpace space = mu.space();
    const Eigen::VectorXd p = mu.flatten();
    SplitMix64 gen(seed);
    const Eigen::VectorXd counts = draw_multinomial(p, static_cast<long>(std::llround(N)), gen);
    return MatchingPatterns::from_flat(space, counts / N, N);
}

StudyRun run_study(const StudyConfig& config, int jobs) {
    if (config.S_reps < 1) throw InputError("S_reps must be at least 1");
    if (!(config.N >= 1.0)) throw InputError("N must be at least 1");
    if (!config.run_mde && !config.run_poisson)
        throw InputError("at least one estimator must be enabled");
    if (config.bases != "quadratic_gap")
        throw InputError("unknown basis builder '" + config.bases + "'");
    if (config.run_poisson && config.family.family != Family::choo_siow_homoskedastic)
        throw InputError("the poisson estimator applies only to the homoskedastic family");

    const TypeSpace space = config.space;
    const Eigen::MatrixXd basis = quadratic_gap_bases(space);
    const int K = static_cast<int>(basis.cols());
    if (config.true_beta.size() != K) throw InputError("true_beta must have length 8");
    const int d_alpha = config.family.d_alpha(space);
    const Eigen::VectorXd alpha_true = resolve_true_alpha(config);

    const Margins q0 = geometric_margins(space, config.margin_rate);
    const Eigen::MatrixXd phi =
        surplus_matrix(SemilinearSurplus{basis, config.true_beta}, space);
    const IpfpSolution sol = solve_matching(phi, q0, config.family, alpha_true);

    MatchingPatterns mu0 = sol.mu;
    const double scale = mu0.total_mass();
    mu0.mu /= scale;
    mu0.mu_x0 /= scale;
    mu0.mu_0y /= scale;

    StudyRun run;
    run.true_lambda.resize(d_alpha + K);
    run.true_lambda << alpha_true, config.true_beta;
    run.summary.S_reps = config.S_reps;
    run.summary.N = config.N;
    run.summary.normalization_scale = scale;

    const PoissonDesign design =
        config.run_poisson ? build_poisson_design(basis, space) : PoissonDesign{};

    run.replications.resize(config.S_reps);
    std::atomic<int> next{0};
    const auto worker = [&]() {
        for (;;) {
            const int r = next.fetch_add(1);
            if (r >= config.S_reps) return;
            ReplicationRecord rec;
            rec.rep = r;
            try {
                const MatchingPatterns sample =
                    draw_sample(mu0, config.N, substream_seed(config.seed, r));
                const Margins qs = margins_from_matching(sample);
                if (config.run_mde) {
                    const MDEResult m = mde_two_step(sample, qs, config.family, basis,
                                                     config.mde);
                    rec.mde_lambda = m.lambda_hat;
                    rec.mde_se = m.V_lambda.diagonal().cwiseMax(0.0).cwiseSqrt();
                    rec.mde_T = m.T_stat;
                    rec.mde_df = m.df;
                    rec.mde_dropped = static_cast<int>(m.dropped_cells.size());
                }
                if (config.run_poisson) {
                    const PoissonResult p = poisson_fit(sample, design);
                    rec.poisson_beta = p.beta_hat;
                    rec.poisson_se =
                        p.V_gamma.diagonal().head(K).cwiseMax(0.0).cwiseSqrt();
                    rec.poisson_iterations = p.iterations;
                }
                rec.ok = true;
            } catch (const ConvergenceError& e) {
                rec.error = e.what();
            } catch (const IdentificationError& e) {
                rec.error = e.what();
            } catch (const InputError& e) {
                rec.error = e.what();
            }
            run.replications[r] = std::move(rec);
        }
    };
    const int nthreads = std::max(1, jobs);
    if (nthreads == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        pool.reserve(nthreads);
        for (int i = 0; i < nthreads; ++i) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }

    std::vector<const ReplicationRecord*> ok;
    for (const auto& rec : run.replications)
        if (rec.ok) ok.push_back(&rec);
    run.summary.failures = config.S_reps - static_cast<int>(ok.size());

    const auto names = lambda_names(d_alpha, K);
    if (config.run_mde) {
        run.summary.mde = summarize_block(ok, names, run.true_lambda, mde_value, mde_se);
        double t_sum = 0.0, df_sum = 0.0;
        for (const auto* r : ok) {
            t_sum += r->mde_T;
            df_sum += r->mde_df;
        }
        if (!ok.empty()) {
            run.summary.mde_T_mean = t_sum / ok.size();
            run.summary.mde_df_mean = df_sum / ok.size();
        }
    }
    if (config.run_poisson) {
        const std::vector<std::string> beta_names(names.end() - K, names.end());
        run.summary.poisson = summarize_block(ok, beta_names, config.true_beta,
                                              poisson_value, poisson_se);
    }
    return run;
}

void write_histogram_svg(const std::vector<double>& values, double truth,
                         const std::string& title, const std::string& path) {
    const int width = 640, height = 400, margin = 45;
    const int bins = 30;
    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
        << height << "\" viewBox=\"0 0 " << width << " " << height << "\">\n";
    svg << "<rect width=\"" << width << "\" height=\"" << height << "\" fill=\"white\"/>\n";
    svg << "<text x=\"" << width / 2 << "\" y=\"20\" text-anchor=\"middle\" "
        << "font-family=\"sans-serif\" font-size=\"14\">" << title << "</text>\n";
    if (!values.empty()) {
        double lo = values[0], hi = values[0];
        for (double v : values) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        lo = std::min(lo, truth);
        hi = std::max(hi, truth);
        if (hi <= lo) hi = lo + 1.0;
        const double pad = 0.05 * (hi - lo);
        lo -= pad;
        hi += pad;
        std::vector<int> count(bins, 0);
        for (double v : values) {
            int b = static_cast<int>((v - lo) / (hi - lo) * bins);
            b = std::min(std::max(b, 0), bins - 1);
            ++count[b];
        }
        int cmax = 1;
        for (int c : count) cmax = std::max(cmax, c);
        const double bw = static_cast<double>(width - 2 * margin) / bins;
        for (int b = 0; b < bins; ++b) {
            const double h =
                static_cast<double>(count[b]) / cmax * (height - 2 * margin);
            svg << "<rect x=\"" << fmt17(margin + b * bw) << "\" y=\""
                << fmt17(height - margin - h) << "\" width=\"" << fmt17(bw * 0.92)
                << "\" height=\"" << fmt17(h) << "\" fill=\"#4477aa\"/>\n";
        }
        const double tx = margin + (truth - lo) / (hi - lo) * (width - 2 * margin);
        svg << "<line x1=\"" << fmt17(tx) << "\" y1=\"" << margin << "\" x2=\"" << fmt17(tx)
            << "\" y2=\"" << height - margin
            << "\" stroke=\"#cc3311\" stroke-width=\"2\" stroke-dasharray=\"6 3\"/>\n";
        svg << "<text x=\"" << margin << "\" y=\"" << height - margin + 16
            << "\" font-family=\"sans-serif\" font-size=\"11\">" << fmt17(lo) << "</text>\n";
        svg << "<text x=\"" << width - margin << "\" y=\"" << height - margin + 16
            << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">"
            << fmt17(hi) << "</text>\n";
    }
    svg << "</svg>\n";
    std::ofstream out(path);
    if (!out) throw InputError("cannot write " + path);
    out << svg.str();
}

void emit_study_outputs(const StudyRun& run, const StudyConfig& config,
                        const std::string& out_dir) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    const int K = static_cast<int>(config.true_beta.size());
    const int d_alpha = config.family.d_alpha(config.space);
    const auto names = lambda_names(d_alpha, K);

    // replications.csv
    {
        std::ofstream csv(fs::path(out_dir) / "replications.csv");
        if (!csv) throw InputError("cannot write replications.csv");
        csv << "rep,ok";
        if (config.run_mde) {
            for (const auto& n : names) csv << ",mde_" << n;
            for (const auto& n : names) csv << ",mde_se_" << n;
            csv << ",mde_T,mde_df,mde_dropped";
        }
        if (config.run_poisson) {
            for (int k = 0; k < K; ++k) csv << ",poisson_beta" << k + 1;
            for (int k = 0; k < K; ++k) csv << ",poisson_se_beta" << k + 1;
            csv << ",poisson_iterations";
        }
        csv << "\n";
        for (const auto& r : run.replications) {
            csv << r.rep << "," << (r.ok ? 1 : 0);
            const auto emit_vec = [&](const Eigen::VectorXd& v, int dim) {
                for (int i = 0; i < dim; ++i)
                    csv << "," << (r.ok ? fmt17(v(i)) : "nan");
            };
            if (config.run_mde) {
                emit_vec(r.mde_lambda, d_alpha + K);
                emit_vec(r.mde_se, d_alpha + K);
                csv << "," << (r.ok ? fmt17(r.mde_T) : "nan");
                csv << "," << (r.ok ? std::to_string(r.mde_df) : "nan");
                csv << "," << (r.ok ? std::to_string(r.mde_dropped) : "nan");
            }
            if (config.run_poisson) {
                emit_vec(r.poisson_beta, K);
                emit_vec(r.poisson_se, K);
                csv << "," << (r.ok ? std::to_string(r.poisson_iterations) : "nan");
            }
            csv << "\n";
        }
    }

    // summary.json
    {
        nlohmann::json j;
        j["S_reps"] = run.summary.S_reps;
        j["N"] = run.summary.N;
        j["seed"] = config.seed;
        j["failures"] = run.summary.failures;
        j["normalization_scale"] = run.summary.normalization_scale;
        const auto block = [](const std::vector<ParameterSummary>& ps) {
            nlohmann::json arr = nlohmann::json::array();
            for (const auto& p : ps)
                arr.push_back({{"name", p.name},
                               {"truth", p.truth},
                               {"mean", p.mean},
                               {"bias", p.bias},
                               {"sd", p.sd},
                               {"ase_mean", p.ase_mean},
                               {"coverage95", p.coverage95}});
            return arr;
        };
        if (config.run_mde) {
            j["mde"]["parameters"] = block(run.summary.mde);
            j["mde"]["T_mean"] = run.summary.mde_T_mean;
            j["mde"]["df_mean"] = run.summary.mde_df_mean;
        }
        if (config.run_poisson) j["poisson"]["parameters"] = block(run.summary.poisson);
        nlohmann::json fails = nlohmann::json::array();
        for (const auto& r : run.replications)
            if (!r.ok) fails.push_back({{"rep", r.rep}, {"error", r.error}});
        j["failed_replications"] = fails;
        std::ofstream out(fs::path(out_dir) / "summary.json");
        if (!out) throw InputError("cannot write summary.json");
        out << j.dump(2) << "\n";
    }

    // histograms
    const auto emit_hists = [&](const std::string& prefix,
                                const std::vector<ParameterSummary>& ps,
                                const Eigen::VectorXd& (*value_of)(const ReplicationRecord&),
                                int offset) {
        for (size_t i = 0; i < ps.size(); ++i) {
            std::vector<double> vals;
            for (const auto& r : run.replications)
                if (r.ok) vals.push_back(value_of(r)(offset + static_cast<int>(i)));
            write_histogram_svg(vals, ps[i].truth, prefix + "_" + ps[i].name,
                                (fs::path(out_dir) / ("hist_" + prefix + "_" + ps[i].name +
                                                      ".svg"))
                                    .string());
        }
    };
    if (config.run_mde) emit_hists("mde", run.summary.mde, mde_value, 0);
    if (config.run_poisson) emit_hists("poisson", run.summary.poisson, poisson_value, 0);
}

}  // namespace sepmatch
