#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <boost/math/distributions/chi_squared.hpp>
#include <json.hpp>

#include "sepmatch/entropy.hpp"
#include "sepmatch/errors.hpp"
#include "sepmatch/estimators.hpp"
#include "sepmatch/io.hpp"
#include "sepmatch/montecarlo.hpp"
#include "sepmatch/solvers.hpp"
#include "sepmatch/types.hpp"

namespace {

using nlohmann::json;
using namespace sepmatch;

json vec_json(const Eigen::VectorXd& v) {
    json out = json::array();
    for (int i = 0; i < v.size(); ++i) out.push_back(v(i));
    return out;
}

Eigen::VectorXd to_vector(const std::vector<double>& v) {
    Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
    for (size_t i = 0; i < v.size(); ++i) out(static_cast<Eigen::Index>(i)) = v[i];
    return out;
}

const char* family_name(Family f) {
    switch (f) {
        case Family::choo_siow_homoskedastic: return "choo_siow";
        case Family::choo_siow_gender_heteroskedastic: return "gender_heteroskedastic";
        case Family::choo_siow_full_heteroskedastic: return "full_heteroskedastic";
        case Family::nested_logit: return "nested_logit";
        case Family::mixed_logit: return "mixed_logit";
    }
    return "unknown";
}

json model_config_json(const std::string& model_path) {
    if (model_path.empty()) return json{{"family", "choo_siow"}};
    std::ifstream in(model_path);
    if (!in) throw InputError("cannot open " + model_path);
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw InputError(model_path + ": " + e.what());
    }
}

int default_jobs() {
    const char* env = std::getenv("SEPMATCH_THREADS");
    if (!env) return 1;
    try {
        const int v = std::stoi(env);
        if (v >= 1) return v;
    } catch (...) {
    }
    throw InputError("SEPMATCH_THREADS: expected a positive integer");
}

void write_json_file(const json& j, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw InputError("cannot write " + path.string());
    out << j.dump(2) << "\n";
}

Eigen::MatrixXd resolve_bases(const std::string& tag, const std::string& csv_path,
                              const TypeSpace& space) {
    if (!csv_path.empty()) return read_basis_csv(csv_path, space);
    if (tag == "quadratic_gap") return quadratic_gap_bases(space);
    throw InputError("bases: unknown tag '" + tag + "'");
}

struct SolveArgs {
    std::string model_path, margins_path, phi_path, bases_tag = "quadratic_gap", out_dir;
    std::vector<double> alpha, beta;
    int x_types = 0, y_types = 0;
    double geometric_rate = 0.0;
    double tol = 1e-12;
    int max_iter = 100000;
};

void run_solve(const SolveArgs& a) {
    const EntropyModel model =
        a.model_path.empty() ? EntropyModel::choo_siow() : load_model_config(a.model_path);
    Margins q;
    if (!a.margins_path.empty()) {
        q = read_margins_csv(a.margins_path);
    } else {
        if (a.x_types < 1 || a.y_types < 1 || !(a.geometric_rate > 0.0))
            throw InputError("either --margins or --x/--y/--geometric-rate is required");
        q = geometric_margins({a.x_types, a.y_types}, a.geometric_rate);
    }
    const TypeSpace space{static_cast<int>(q.n.size()), static_cast<int>(q.m.size())};
    Eigen::MatrixXd phi;
    json surplus_cfg;
    if (!a.phi_path.empty()) {
        phi = read_surplus_csv(a.phi_path);
        if (phi.rows() != space.X || phi.cols() != space.Y)
            throw InputError("surplus grid does not match the margins");
        surplus_cfg = {{"phi_csv", a.phi_path}};
    } else {
        if (a.beta.empty()) throw InputError("either --phi or --bases/--beta is required");
        const Eigen::MatrixXd basis = resolve_bases(a.bases_tag, "", space);
        if (static_cast<Eigen::Index>(a.beta.size()) != basis.cols())
            throw InputError("--beta: expected " + std::to_string(basis.cols()) + " values");
        phi = surplus_matrix({basis, to_vector(a.beta)}, space);
        surplus_cfg = {{"bases", a.bases_tag}, {"beta", a.beta}};
    }
    IpfpOptions opts;
    opts.tol = a.tol;
    opts.max_iter = a.max_iter;
    const IpfpSolution sol = solve_matching(phi, q, model, to_vector(a.alpha), opts);

    std::filesystem::create_directories(a.out_dir);
    write_matching_csv(sol.mu, (std::filesystem::path(a.out_dir) / "matching.csv").string());
    {
        std::ofstream pot(std::filesystem::path(a.out_dir) / "potentials.csv");
        if (!pot) throw InputError("cannot write potentials.csv");
        pot << "side,type,value\n";
        char buf[40];
        for (int x = 0; x < space.X; ++x) {
            std::snprintf(buf, sizeof(buf), "%.17g", sol.u(x));
            pot << "men," << x + 1 << "," << buf << "\n";
        }
        for (int y = 0; y < space.Y; ++y) {
            std::snprintf(buf, sizeof(buf), "%.17g", sol.v(y));
            pot << "women," << y + 1 << "," << buf << "\n";
        }
    }
    json result;
    result["family"] = family_name(model.family);
    result["X"] = space.X;
    result["Y"] = space.Y;
    result["iterations"] = sol.iterations;
    result["residual"] = sol.residual;
    result["total_mass"] = sol.mu.total_mass();
    result["u"] = vec_json(sol.u);
    result["v"] = vec_json(sol.v);
    write_json_file(result, std::filesystem::path(a.out_dir) / "result.json");

    json cfg;
    cfg["model"] = model_config_json(a.model_path);
    cfg["alpha"] = a.alpha;
    cfg["surplus"] = surplus_cfg;
    if (!a.margins_path.empty())
        cfg["margins"] = {{"csv", a.margins_path}};
    else
        cfg["margins"] = {{"X", a.x_types}, {"Y", a.y_types}, {"rate", a.geometric_rate}};
    cfg["tol"] = a.tol;
    cfg["max_iter"] = a.max_iter;
    std::vector<std::string> inputs;
    for (const auto& p : {a.model_path, a.margins_path, a.phi_path})
        if (!p.empty()) inputs.push_back(p);
    write_run_manifest(a.out_dir, "solve", cfg.dump(), inputs, 0);
    std::cout << "solved " << space.X << "x" << space.Y << " market in " << sol.iterations
              << " iterations, residual " << sol.residual << "\n";
}

struct EstimateArgs {
    std::string matching_path, method, model_path, bases_tag = "quadratic_gap", basis_csv;
    std::string zero_cells = "drop", weighting = "efficient";
    double households = 0.0, shift_delta = 0.0;
    std::string out_dir;
};

void run_estimate(const EstimateArgs& a) {
    MatchingPatterns mu_hat = read_matching_csv(a.matching_path);
    const double mass = mu_hat.total_mass();
    if (std::abs(mass - 1.0) > 1e-6) {
        // Counts: rescale to frequencies, total mass is the household count.
        mu_hat.mu /= mass;
        mu_hat.mu_x0 /= mass;
        mu_hat.mu_0y /= mass;
        mu_hat.N = mass;
    }
    if (a.households > 0.0) mu_hat.N = a.households;
    const TypeSpace space = mu_hat.space();
    const Margins q_hat = margins_from_matching(mu_hat);
    const EntropyModel model =
        a.model_path.empty() ? EntropyModel::choo_siow() : load_model_config(a.model_path);
    const Eigen::MatrixXd basis = resolve_bases(a.bases_tag, a.basis_csv, space);

    json est;
    est["method"] = a.method;
    est["family"] = family_name(model.family);
    est["households"] = mu_hat.N;
    est["X"] = space.X;
    est["Y"] = space.Y;
    if (a.method == "mde") {
        MDEConfig cfg;
        if (a.weighting == "efficient")
            cfg.weighting = MDEWeighting::efficient_two_step;
        else if (a.weighting == "identity")
            cfg.weighting = MDEWeighting::identity;
        else
            throw InputError("--weighting: must be 'efficient' or 'identity'");
        if (a.zero_cells == "drop")
            cfg.zero_cell_policy = ZeroCellPolicy::drop;
        else if (a.zero_cells == "shift")
            cfg.zero_cell_policy = ZeroCellPolicy::shift;
        else
            throw InputError("--zero-cells: must be 'drop' or 'shift'");
        cfg.shift_delta = a.shift_delta;
        const MDEResult res = mde_two_step(mu_hat, q_hat, model, basis, cfg);
        est["alpha_hat"] = vec_json(res.alpha_hat);
        est["beta_hat"] = vec_json(res.beta_hat);
        est["se"] = vec_json(res.V_lambda.diagonal().cwiseMax(0.0).cwiseSqrt().eval());
        est["T_stat"] = res.T_stat;
        est["df"] = res.df;
        if (res.df >= 1 && std::isfinite(res.T_stat) && res.T_stat >= 0.0) {
            const boost::math::chi_squared dist(res.df);
            est["p_value"] = boost::math::cdf(boost::math::complement(dist, res.T_stat));
        } else {
            est["p_value"] = nullptr;
        }
        json dropped = json::array();
        for (const auto& [x, y] : res.dropped_cells) dropped.push_back({x, y});
        est["dropped_cells"] = dropped;
        est["warnings"] = res.warnings;
    } else if (a.method == "poisson") {
        if (model.family != Family::choo_siow_homoskedastic)
            throw InputError(
                "poisson estimation supports the homoskedastic logit family only");
        const PoissonDesign design = build_poisson_design(basis, space);
        const PoissonResult res = poisson_fit(mu_hat, design);
        est["beta_hat"] = vec_json(res.beta_hat);
        Eigen::VectorXd se =
            res.V_gamma.diagonal().head(design.K).cwiseMax(0.0).cwiseSqrt();
        est["se"] = vec_json(se);
        est["u_hat"] = vec_json(res.u_hat);
        est["v_hat"] = vec_json(res.v_hat);
        est["loglik"] = res.loglik;
        est["iterations"] = res.iterations;
        est["comoment_residual"] = res.comoment_residual;
    } else {
        throw InputError("--method: must be 'mde' or 'poisson'");
    }
    std::filesystem::create_directories(a.out_dir);
    write_json_file(est, std::filesystem::path(a.out_dir) / "estimate.json");

    json cfg;
    cfg["matching"] = a.matching_path;
    cfg["method"] = a.method;
    cfg["model"] = model_config_json(a.model_path);
    if (!a.basis_csv.empty())
        cfg["bases"] = {{"csv", a.basis_csv}};
    else
        cfg["bases"] = a.bases_tag;
    cfg["households"] = mu_hat.N;
    cfg["zero_cells"] = a.zero_cells;
    cfg["shift_delta"] = a.shift_delta;
    cfg["weighting"] = a.weighting;
    std::vector<std::string> inputs{a.matching_path};
    for (const auto& p : {a.model_path, a.basis_csv})
        if (!p.empty()) inputs.push_back(p);
    write_run_manifest(a.out_dir, "estimate", cfg.dump(), inputs, 0);
    std::cout << "wrote " << (std::filesystem::path(a.out_dir) / "estimate.json").string()
              << "\n";
}

struct SimulateArgs {
    std::string config_path, out_dir;
    int jobs = 0;
    std::uint64_t seed = 0;
    bool seed_set = false;
};

json study_config_json(const StudyConfig& cfg, int jobs) {
    json j;
    j["X"] = cfg.space.X;
    j["Y"] = cfg.space.Y;
    j["margin_rate"] = cfg.margin_rate;
    j["bases"] = cfg.bases;
    j["true_beta"] = vec_json(cfg.true_beta);
    j["model"] = {{"family", family_name(cfg.family.family)}};
    if (cfg.true_alpha.size() > 0) j["true_alpha"] = vec_json(cfg.true_alpha);
    j["N"] = cfg.N;
    j["S_reps"] = cfg.S_reps;
    j["seed"] = cfg.seed;
    json estimators = json::array();
    if (cfg.run_mde) estimators.push_back("mde");
    if (cfg.run_poisson) estimators.push_back("poisson");
    j["estimators"] = estimators;
    j["zero_cells"] = cfg.mde.zero_cell_policy == ZeroCellPolicy::drop ? "drop" : "shift";
    j["shift_delta"] = cfg.mde.shift_delta;
    j["weighting"] =
        cfg.mde.weighting == MDEWeighting::identity ? "identity" : "efficient";
    j["jobs"] = jobs;
    return j;
}

void run_simulate(const SimulateArgs& a) {
    StudyConfig cfg = load_study_config(a.config_path);
    if (a.seed_set) cfg.seed = a.seed;
    const int jobs = a.jobs > 0 ? a.jobs : default_jobs();
    const StudyRun run = run_study(cfg, jobs);
    emit_study_outputs(run, cfg, a.out_dir);
    write_run_manifest(a.out_dir, "simulate", study_config_json(cfg, jobs).dump(),
                       {a.config_path}, cfg.seed);
    const StudySummary& s = run.summary;
    std::cout << "replications: " << s.S_reps << ", failures: " << s.failures << "\n";
    auto print_block = [](const char* tag, const std::vector<ParameterSummary>& block) {
        for (const auto& p : block)
            std::cout << tag << " " << p.name << ": truth " << p.truth << ", mean " << p.mean
                      << ", sd " << p.sd << ", ase " << p.ase_mean << ", coverage "
                      << p.coverage95 << "\n";
    };
    print_block("mde", s.mde);
    print_block("poisson", s.poisson);
    if (!s.mde.empty())
        std::cout << "mde T mean: " << s.mde_T_mean << ", df mean: " << s.mde_df_mean << "\n";
}

struct CheckArgs {
    std::string matching_path, model_path, config_path, margins_path, basis_csv;
};

void run_check(const CheckArgs& a) {
    bool any = false;
    if (!a.matching_path.empty()) {
        any = true;
        const MatchingPatterns mu = read_matching_csv(a.matching_path);
        const TypeSpace space = mu.space();
        int zero_couples = 0;
        for (int x = 0; x < space.X; ++x)
            for (int y = 0; y < space.Y; ++y) zero_couples += mu.mu(x, y) == 0.0;
        const int zero_singles = static_cast<int>((mu.mu_x0.array() == 0.0).count() +
                                                  (mu.mu_0y.array() == 0.0).count());
        std::cout << "ok: " << a.matching_path << " (matching, " << space.X << "x" << space.Y
                  << ", total mass " << mu.total_mass() << ", " << zero_couples
                  << " zero couple cells, " << zero_singles << " zero singles)\n";
    }
    if (!a.margins_path.empty()) {
        any = true;
        const Margins q = read_margins_csv(a.margins_path);
        std::cout << "ok: " << a.margins_path << " (margins, " << q.n.size() << " men types, "
                  << q.m.size() << " women types)\n";
    }
    if (!a.model_path.empty()) {
        any = true;
        const EntropyModel model = load_model_config(a.model_path);
        std::cout << "ok: " << a.model_path << " (model, family "
                  << family_name(model.family) << ")\n";
    }
    if (!a.config_path.empty()) {
        any = true;
        const StudyConfig cfg = load_study_config(a.config_path);
        std::cout << "ok: " << a.config_path << " (study, " << cfg.space.X << "x"
                  << cfg.space.Y << ", N " << cfg.N << ", " << cfg.S_reps
                  << " replications)\n";
    }
    if (!a.basis_csv.empty()) {
        any = true;
        if (a.matching_path.empty())
            throw InputError("--basis-csv check requires --matching for the grid size");
        const TypeSpace space = read_matching_csv(a.matching_path).space();
        const Eigen::MatrixXd basis = read_basis_csv(a.basis_csv, space);
        std::cout << "ok: " << a.basis_csv << " (bases, K=" << basis.cols() << ")\n";
    }
    if (!any)
        throw InputError("check: pass at least one of --matching/--margins/--model/--config");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"separable matching: equilibrium solvers and estimators"};
    app.require_subcommand(1);

    SolveArgs solve_args;
    CLI::App* solve = app.add_subcommand("solve", "solve a market for the stable matching");
    solve->add_option("--model", solve_args.model_path, "model config JSON");
    solve->add_option("--alpha", solve_args.alpha, "family parameter vector");
    solve->add_option("--margins", solve_args.margins_path, "margins CSV (side,type,mass)");
    solve->add_option("--x", solve_args.x_types, "men types for geometric margins");
    solve->add_option("--y", solve_args.y_types, "women types for geometric margins");
    solve->add_option("--geometric-rate", solve_args.geometric_rate,
                      "geometric margin decay rate");
    solve->add_option("--phi", solve_args.phi_path, "surplus CSV (x,y,phi)");
    solve->add_option("--bases", solve_args.bases_tag, "basis tag (quadratic_gap)");
    solve->add_option("--beta", solve_args.beta, "basis coefficients");
    solve->add_option("--tol", solve_args.tol, "relative margin tolerance");
    solve->add_option("--max-iter", solve_args.max_iter, "iteration cap");
    solve->add_option("--out", solve_args.out_dir, "output directory")->required();
    solve->callback([&] { run_solve(solve_args); });

    EstimateArgs est_args;
    CLI::App* estimate = app.add_subcommand("estimate", "fit surplus parameters to data");
    estimate->add_option("--matching", est_args.matching_path, "observed matching CSV")
        ->required();
    estimate->add_option("--method", est_args.method, "mde or poisson")->required();
    estimate->add_option("--model", est_args.model_path, "model config JSON");
    estimate->add_option("--bases", est_args.bases_tag, "basis tag (quadratic_gap)");
    estimate->add_option("--basis-csv", est_args.basis_csv, "basis CSV (x,y,k,phi)");
    estimate->add_option("--households", est_args.households,
                         "sample size when the CSV holds frequencies");
    estimate->add_option("--zero-cells", est_args.zero_cells, "drop or shift");
    estimate->add_option("--shift-delta", est_args.shift_delta, "shift size");
    estimate->add_option("--weighting", est_args.weighting, "efficient or identity");
    estimate->add_option("--out", est_args.out_dir, "output directory")->required();
    estimate->callback([&] { run_estimate(est_args); });

    SimulateArgs sim_args;
    CLI::App* simulate = app.add_subcommand("simulate", "run a sampling study");
    simulate->add_option("--config", sim_args.config_path, "study config JSON")->required();
    simulate->add_option("--jobs", sim_args.jobs, "worker threads (SEPMATCH_THREADS)");
    CLI::Option* seed_opt =
        simulate->add_option("--seed", sim_args.seed, "override the config seed");
    simulate->add_option("--out", sim_args.out_dir, "output directory")->required();
    simulate->callback([&] {
        sim_args.seed_set = seed_opt->count() > 0;
        run_simulate(sim_args);
    });

    CheckArgs check_args;
    CLI::App* check = app.add_subcommand("check", "validate input files");
    check->add_option("--matching", check_args.matching_path, "matching CSV");
    check->add_option("--margins", check_args.margins_path, "margins CSV");
    check->add_option("--model", check_args.model_path, "model config JSON");
    check->add_option("--config", check_args.config_path, "study config JSON");
    check->add_option("--basis-csv", check_args.basis_csv, "basis CSV");
    check->callback([&] { run_check(check_args); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    } catch (const sepmatch::IdentificationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    } catch (const sepmatch::ConvergenceError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const sepmatch::InputError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "unexpected error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
