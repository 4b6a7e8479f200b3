#include "armr/cli.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <ostream>

#include <CLI11.hpp>

#include "armr/error.hpp"
#include "armr/estimator.hpp"
#include "armr/io.hpp"
#include "armr/likelihood.hpp"
#include "armr/mixture.hpp"
#include "armr/parallel.hpp"
#include "armr/rng.hpp"
#include "armr/selection.hpp"

namespace armr {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

int exit_code_for(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::Io: return kExitIo;
        case ErrorKind::FitFailure:
        case ErrorKind::RegimeStarvation:
        case ErrorKind::SingularDesign:
        case ErrorKind::Degenerate:
        case ErrorKind::OracleFailure: return kExitNumeric;
        default: return kExitInvalid;
    }
}

struct EmFlags {
    int restarts = EmConfig{}.restarts;
    double tolerance = EmConfig{}.tolerance;
    int max_iterations = EmConfig{}.max_iterations;
    int min_obs_per_state = EmConfig{}.min_obs_per_state;
    std::uint64_t seed = 0;

    void attach(CLI::App* app) {
        app->add_option("--restarts", restarts, "EM restarts")->capture_default_str();
        app->add_option("--tol", tolerance, "relative log-likelihood tolerance")->capture_default_str();
        app->add_option("--max-iter", max_iterations, "EM iteration cap")->capture_default_str();
        app->add_option("--min-obs-per-state", min_obs_per_state, "require n >= k*m (0 disables)")->capture_default_str();
        app->add_option("--seed", seed, "seed")->capture_default_str();
    }

    [[nodiscard]] EmConfig config() const {
        EmConfig c;
        c.restarts = restarts;
        c.tolerance = tolerance;
        c.max_iterations = max_iterations;
        c.min_obs_per_state = min_obs_per_state;
        c.seed = seed;
        c.threads = thread_count_from_env();
        if (!(c.tolerance > 0.0) || c.restarts < 1 || c.max_iterations < 1 || c.min_obs_per_state < 0) {
            throw Error(ErrorKind::Validation, "need --tol > 0, --restarts >= 1, --max-iter >= 1");
        }
        return c;
    }
};

json fit_report(const FitResult& fit, const EmConfig& config) {
    return {{"loglik", fit.loglik},          {"iterations", fit.iterations}, {"converged", fit.converged},
            {"restarts", config.restarts},   {"best_restart", fit.restart},  {"best_seed", fit.seed},
            {"trace", fit.trace}};
}

int cmd_simulate(const std::string& model_path, int n, double y0, std::uint64_t seed, const std::string& out_path,
                 bool quiet, std::ostream& out, std::ostream& err) {
    RunMetadata meta;
    meta.command = "simulate";
    const ModelFile model = model_from_json(read_json(model_path));
    const ValidationReport report = validate_model(model.spec, model.bounds);
    if (!report.empty()) {
        err << "invalid model:\n" << format_report(report);
        return kExitInvalid;
    }
    if (n < 1) throw Error(ErrorKind::Validation, "--n must be >= 1");
    const Trajectory traj = simulate(model.spec, n, y0, seed, model.bounds);
    write_atomic(out_path, trajectory_to_csv(traj));
    meta.config = {{"model", model_to_json(model.spec, model.bounds)}, {"n", n}, {"y0", y0}, {"out", out_path}};
    meta.seeds = {seed};
    write_metadata(out_path, meta);
    if (!quiet) out << "wrote " << n << " observations to " << out_path << "\n";
    return kExitOk;
}

int cmd_fit(const std::string& data_path, int m, const EmFlags& flags, const std::string& out_path,
            const std::string& report_path, bool quiet, std::ostream& out) {
    RunMetadata meta;
    meta.command = "fit";
    if (m < 1) throw Error(ErrorKind::Validation, "--states must be >= 1");
    const Trajectory traj = trajectory_from_csv(read_text(data_path));
    const EmConfig config = flags.config();
    const FitResult fit = multistart_fit(traj, m, config);
    const json report = fit_report(fit, config);
    write_atomic(out_path, model_to_json(fit.spec, config.bounds).dump(2) + "\n");
    meta.config = {{"data", data_path}, {"states", m}, {"em", em_config_to_json(config)}, {"out", out_path}};
    meta.seeds = {config.seed};
    meta.extra["report"] = report;
    write_metadata(out_path, meta);
    if (!report_path.empty()) write_atomic(report_path, report.dump(2) + "\n");
    if (!quiet) {
        out << "loglik=" << format_double(fit.loglik) << " iterations=" << fit.iterations
            << " converged=" << (fit.converged ? "true" : "false") << " restarts=" << config.restarts
            << " best_restart=" << fit.restart << "\n";
    }
    return kExitOk;
}

struct SelectFlags {
    std::string data;
    std::string m_max = "auto";
    double rho = PenaltyConfig{}.rho;
    std::string phi = "sqrt";
    double tau2 = PenaltyConfig{}.tau2;
    std::string lambda_sigma = "uniform-upper";
    std::string tau2_policy = "constant";
    std::string out;
    std::string model_out;
};

int cmd_select(const SelectFlags& s, const EmFlags& flags, bool quiet, std::ostream& out, std::ostream& err) {
    RunMetadata meta;
    meta.command = "select";
    if (!(s.rho > 2.0)) {
        err << "rho must exceed 2\n";
        return kExitInvalid;
    }
    std::optional<int> m_max;
    if (s.m_max != "auto") {
        try {
            m_max = std::stoi(s.m_max);
        } catch (const std::exception&) {
            throw Error(ErrorKind::Validation, "--m-max must be a positive integer or 'auto'");
        }
        if (*m_max < 1) throw Error(ErrorKind::Validation, "--m-max must be a positive integer or 'auto'");
    }
    const PenaltyConfig pen = penalty_config_from_json(
        {{"rho", s.rho}, {"phi", s.phi}, {"tau2", s.tau2}, {"lambda_sigma", s.lambda_sigma}, {"tau2_policy", s.tau2_policy}});
    const EmConfig em = flags.config();
    const Trajectory traj = trajectory_from_csv(read_text(s.data));
    const SelectionResult result = select_order(traj, m_max, em, pen);

    write_atomic(s.out, selection_to_csv(result));
    meta.config = {{"data", s.data},
                   {"m_max", s.m_max},
                   {"em", em_config_to_json(em)},
                   {"penalty", penalty_config_to_json(pen)},
                   {"out", s.out}};
    meta.seeds = {em.seed};
    meta.extra["m_hat"] = result.m_hat;
    meta.extra["m_max_used"] = result.m_max;
    if (result.auto_stop) meta.extra["m_max_rule"] = "heuristic: stop after two consecutive criterion increases or when n < 4m";
    json skipped = json::array();
    for (const auto& row : result.table) {
        if (!row.fitted) skipped.push_back({{"m", row.m}, {"failure", row.failure}});
    }
    meta.extra["excluded_orders"] = skipped;
    write_metadata(s.out, meta);
    if (!s.model_out.empty()) {
        const auto& fit = result.fits[static_cast<std::size_t>(result.m_hat - 1)];
        write_atomic(s.model_out, model_to_json(fit->spec, em.bounds).dump(2) + "\n");
        write_metadata(s.model_out, meta);
    }
    for (const auto& row : result.table) {
        if (!row.fitted) err << "warning: m = " << row.m << " excluded: " << row.failure << "\n";
    }
    if (!quiet) {
        for (const auto& row : result.table) {
            out << "m=" << row.m << " loglik=" << (row.fitted ? format_double(row.loglik) : "NA")
                << " penalty=" << format_double(row.penalty)
                << " criterion=" << (row.fitted ? format_double(row.criterion) : "NA") << "\n";
        }
    }
    out << "m_hat=" << result.m_hat << "\n";
    return kExitOk;
}

struct BoundFlags {
    int trials = 200;
    int n_min = 4;
    int n_max = 8;
    int m_min = 1;
    int m_max = 2;
    std::uint64_t seed = 0;
    double tau2 = PriorConfig{}.tau2;
    std::string out;
};

int cmd_verify_bound(const BoundFlags& f, bool quiet, std::ostream& out) {
    RunMetadata meta;
    meta.command = "verify-bound";
    if (f.trials < 0) throw Error(ErrorKind::Validation, "--trials must be >= 0");
    if (f.n_min < 4 || f.n_max < f.n_min) throw Error(ErrorKind::Validation, "need 4 <= n-min <= n-max");
    if (f.m_min < 1 || f.m_max < f.m_min) throw Error(ErrorKind::Validation, "need 1 <= m-min <= m-max");
    if (std::pow(static_cast<double>(f.m_max), f.n_max) > kMaxEnumeratedPaths) {
        throw Error(ErrorKind::SizeGuard, "m-max^n-max exceeds the path enumeration guard");
    }
    if (!(f.tau2 > 0.0)) throw Error(ErrorKind::Validation, "--tau2 must be positive");
    PriorConfig prior;
    prior.tau2 = f.tau2;

    std::string csv = "trial,instance_seed,m,n,lhs,leading,c_m,d,e_m,ratio_term,rhs,slack\n";
    double min_slack = std::numeric_limits<double>::infinity();
    for (int t = 0; t < f.trials; ++t) {
        const std::uint64_t instance_seed = mix_seed(f.seed, static_cast<std::uint64_t>(t));
        Rng rng(instance_seed);
        const int m = f.m_min + static_cast<int>(rng() % static_cast<std::uint64_t>(f.m_max - f.m_min + 1));
        const int n = f.n_min + static_cast<int>(rng() % static_cast<std::uint64_t>(f.n_max - f.n_min + 1));
        const ModelSpec spec = random_model(m, rng);
        const Trajectory traj = simulate(spec, n, 0.0, rng());
        const BoundReport r = verify_bound(spec, traj, prior);
        min_slack = std::min(min_slack, r.slack);
        csv += std::to_string(t) + ',' + std::to_string(instance_seed) + ',' + std::to_string(m) + ',' +
               std::to_string(n) + ',' + format_double(r.lhs) + ',' + format_double(r.terms.leading) + ',' +
               format_double(r.terms.c_m) + ',' + format_double(r.terms.d) + ',' + format_double(r.terms.e_m) + ',' +
               format_double(r.terms.ratio_term) + ',' + format_double(r.terms.rhs_total) + ',' +
               format_double(r.slack) + '\n';
    }
    write_atomic(f.out, csv);
    meta.config = {{"trials", f.trials}, {"n_min", f.n_min}, {"n_max", f.n_max}, {"m_min", f.m_min},
                   {"m_max", f.m_max},   {"tau2", f.tau2},   {"out", f.out}};
    meta.seeds = {f.seed};
    meta.extra["min_slack"] = f.trials > 0 ? json(min_slack) : json(nullptr);
    write_metadata(f.out, meta);
    const std::string summary = f.trials > 0 ? format_double(min_slack) : std::string("NA");
    if (!quiet || f.trials > 0) out << "trials=" << f.trials << " min_slack=" << summary << "\n";
    return kExitOk;
}

int cmd_mc_study(const std::string& config_path, const std::string& out_dir, bool quiet, std::ostream& out,
                 std::ostream& err) {
    RunMetadata meta;
    meta.command = "mc-study";
    const json doc = read_json(config_path);
    StudyFile study = study_from_json(doc, fs::path(config_path).parent_path());
    const ValidationReport report = validate_model(study.model.spec, study.model.bounds);
    if (!report.empty()) {
        err << "invalid model:\n" << format_report(report);
        return kExitInvalid;
    }
    study.config.threads = thread_count_from_env();
    study.config.em.threads = 1;
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw Error(ErrorKind::Io, "cannot create " + out_dir);

    const StudyResult result = mc_consistency_study(study.model.spec, study.config);
    const fs::path detail = fs::path(out_dir) / "detail.csv";
    const fs::path summary = fs::path(out_dir) / "summary.csv";
    write_atomic(detail, study_detail_to_csv(result));
    write_atomic(summary, study_summary_to_csv(result));

    meta.config = {{"model", model_to_json(study.model.spec, study.model.bounds)},
                   {"n_grid", study.config.n_grid},
                   {"replications", study.config.replications},
                   {"m_max", study.config.m_max ? json(*study.config.m_max) : json("auto")},
                   {"y0", study.config.y0},
                   {"em", em_config_to_json(study.config.em)},
                   {"penalty", penalty_config_to_json(study.config.pen)}};
    meta.seeds = {study.config.base_seed};
    meta.extra["exact_rate_nondecreasing"] = result.exact_rate_nondecreasing;
    if (!study.config.m_max) meta.extra["m_max_rule"] = "heuristic: stop after two consecutive criterion increases or when n < 4m";
    int failures = 0;
    json failed = json::array();
    for (const auto& row : result.rows) {
        if (!row.m_hat) {
            ++failures;
            failed.push_back({{"n", row.n}, {"replication", row.replication}, {"failure", row.failure}});
        }
    }
    meta.extra["failed_replications"] = failed;
    write_metadata(detail, meta);
    write_metadata(summary, meta);

    for (const auto& f : failed) {
        err << "warning: n=" << f["n"].get<int>() << " replication " << f["replication"].get<int>()
            << " failed: " << f["failure"].get<std::string>() << "\n";
    }
    if (!quiet) {
        for (const auto& s : result.summary) {
            out << "n=" << s.n << " P_under=" << format_double(s.p_under) << " P_exact=" << format_double(s.p_exact)
                << " P_over=" << format_double(s.p_over) << " failures=" << s.failures << "\n";
        }
    }
    return failures == static_cast<int>(result.rows.size()) ? kExitNumeric : kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Markov-switching autoregression: simulation, EM fitting and order selection", "regime-select"};
    app.require_subcommand(1);
    bool quiet = false;
    app.add_flag("--quiet,-q", quiet, "suppress progress output");

    auto* sim = app.add_subcommand("simulate", "simulate a trajectory CSV from a model config");
    std::string model_path;
    int n = 0;
    double y0 = 0.0;
    std::uint64_t sim_seed = 0;
    std::string sim_out;
    sim->add_option("--model", model_path, "model config (JSON)")->required();
    sim->add_option("--n", n, "number of observations")->required();
    sim->add_option("--y0", y0, "initial value")->capture_default_str();
    sim->add_option("--seed", sim_seed, "seed")->capture_default_str();
    sim->add_option("--out", sim_out, "output CSV")->required();
    sim->add_flag("--quiet,-q", quiet);

    auto* fit = app.add_subcommand("fit", "fit an m-state model by multistart EM");
    std::string fit_data;
    int states = 0;
    std::string fit_out;
    std::string fit_report_path;
    EmFlags fit_flags;
    fit->add_option("--data", fit_data, "trajectory CSV")->required();
    fit->add_option("--states,-m", states, "number of states")->required();
    fit->add_option("--out", fit_out, "fitted model config (JSON)")->required();
    fit->add_option("--report", fit_report_path, "fit report (JSON)");
    fit_flags.attach(fit);
    fit->add_flag("--quiet,-q", quiet);

    auto* sel = app.add_subcommand("select", "penalized-likelihood order selection");
    SelectFlags sel_flags;
    EmFlags sel_em;
    sel->add_option("--data", sel_flags.data, "trajectory CSV")->required();
    sel->add_option("--m-max", sel_flags.m_max, "largest order, or 'auto'")->capture_default_str();
    sel->add_option("--rho", sel_flags.rho, "rho (> 2)")->capture_default_str();
    sel->add_option("--phi", sel_flags.phi, "sqrt | log | const:<k>")->capture_default_str();
    sel->add_option("--tau2", sel_flags.tau2, "prior scale")->capture_default_str();
    sel->add_option("--lambda-sigma", sel_flags.lambda_sigma, "uniform-upper | plug-in")->capture_default_str();
    sel->add_option("--tau2-policy", sel_flags.tau2_policy, "constant | proof")->capture_default_str();
    sel->add_option("--out", sel_flags.out, "selection table CSV")->required();
    sel->add_option("--model-out", sel_flags.model_out, "chosen model config (JSON)");
    sel_em.attach(sel);
    sel->add_flag("--quiet,-q", quiet);

    auto* vb = app.add_subcommand("verify-bound", "check the mixture inequality on random small instances");
    BoundFlags bound_flags;
    vb->add_option("--trials", bound_flags.trials)->capture_default_str();
    vb->add_option("--n-min", bound_flags.n_min)->capture_default_str();
    vb->add_option("--n-max", bound_flags.n_max)->capture_default_str();
    vb->add_option("--m-min", bound_flags.m_min)->capture_default_str();
    vb->add_option("--m-max", bound_flags.m_max)->capture_default_str();
    vb->add_option("--seed", bound_flags.seed)->capture_default_str();
    vb->add_option("--tau2", bound_flags.tau2)->capture_default_str();
    vb->add_option("--out", bound_flags.out, "slack CSV")->required();
    vb->add_flag("--quiet,-q", quiet);

    auto* mc = app.add_subcommand("mc-study", "Monte Carlo order-selection study");
    std::string study_path;
    std::string out_dir;
    mc->add_option("--config", study_path, "study config (JSON)")->required();
    mc->add_option("--out", out_dir, "output directory")->required();
    mc->add_flag("--quiet,-q", quiet);

    std::vector<std::string> argv_store;
    argv_store.reserve(args.size() + 1);
    argv_store.emplace_back("regime-select");
    argv_store.insert(argv_store.end(), args.begin(), args.end());
    std::vector<char*> argv;
    for (auto& a : argv_store) argv.push_back(a.data());

    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << e.what() << "\n";
        return kExitInvalid;
    }

    try {
        if (sim->parsed()) return cmd_simulate(model_path, n, y0, sim_seed, sim_out, quiet, out, err);
        if (fit->parsed()) return cmd_fit(fit_data, states, fit_flags, fit_out, fit_report_path, quiet, out);
        if (sel->parsed()) return cmd_select(sel_flags, sel_em, quiet, out, err);
        if (vb->parsed()) return cmd_verify_bound(bound_flags, quiet, out);
        if (mc->parsed()) return cmd_mc_study(study_path, out_dir, quiet, out, err);
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return exit_code_for(e.kind());
    } catch (const nlohmann::json::exception& e) {
        err << "error: bad config: " << e.what() << "\n";
        return kExitInvalid;
    } catch (const std::invalid_argument& e) {
        err << "error: " << e.what() << "\n";
        return kExitInvalid;
    } catch (const std::out_of_range& e) {
        err << "error: " << e.what() << "\n";
        return kExitInvalid;
    }
    return kExitInvalid;
}

}  // namespace armr
