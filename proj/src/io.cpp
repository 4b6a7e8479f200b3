#include "armr/io.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "armr/error.hpp"
#include "armr/rng.hpp"

namespace armr {

namespace fs = std::filesystem;
using nlohmann::json;

std::string format_double(double value) {
    if (std::isnan(value)) return "nan";
    if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, value, std::chars_format::general, 17);
    return std::string(buf, res.ptr);
}

double parse_double(const std::string& text) {
    if (text == "nan") return std::nan("");
    if (text == "inf") return INFINITY;
    if (text == "-inf") return -INFINITY;
    double value = 0.0;
    const char* first = text.data();
    const char* last = text.data() + text.size();
    if (first != last && *first == '+') ++first;
    const auto res = std::from_chars(first, last, value);
    if (res.ec != std::errc() || res.ptr != last) throw Error(ErrorKind::Validation, "not a number: '" + text + "'");
    return value;
}

namespace {

double number_at(const json& doc, const char* key) {
    if (!doc.contains(key) || !doc[key].is_number()) throw Error(ErrorKind::Validation, std::string("missing numeric field '") + key + "'");
    return doc[key].get<double>();
}

int int_value(const json& value, const char* what) {
    if (!value.is_number_integer()) throw Error(ErrorKind::Validation, std::string(what) + " must be an integer");
    return value.get<int>();
}

std::vector<std::string> split(const std::string& line, char sep) {
    std::vector<std::string> out;
    std::string field;
    std::istringstream in(line);
    while (std::getline(in, field, sep)) out.push_back(field);
    if (!line.empty() && line.back() == sep) out.emplace_back();
    return out;
}

}  // namespace

ModelFile model_from_json(const json& doc) {
    if (!doc.is_object()) throw Error(ErrorKind::Validation, "model config must be an object");
    if (!doc.contains("regimes") || !doc["regimes"].is_array()) throw Error(ErrorKind::Validation, "missing 'regimes' list");
    std::vector<RegimeParams> regimes;
    for (const auto& r : doc["regimes"]) regimes.push_back({number_at(r, "b"), number_at(r, "alpha"), number_at(r, "sigma2")});
    const int m = doc.contains("m") ? int_value(doc["m"], "m") : static_cast<int>(regimes.size());
    if (m != static_cast<int>(regimes.size())) {
        throw Error(ErrorKind::Structural, "m = " + std::to_string(m) + " but " + std::to_string(regimes.size()) + " regimes given");
    }
    if (!doc.contains("transition") || !doc["transition"].is_array()) throw Error(ErrorKind::Validation, "missing 'transition'");
    const json& t = doc["transition"];
    std::vector<double> flat;
    for (const auto& row : t) {
        if (row.is_array()) {
            if (static_cast<int>(row.size()) != m) throw Error(ErrorKind::Structural, "transition row length differs from m");
            for (const auto& v : row) flat.push_back(v.get<double>());
        } else if (row.is_number()) {
            flat.push_back(row.get<double>());
        } else {
            throw Error(ErrorKind::Validation, "transition entries must be numbers");
        }
    }
    if (static_cast<int>(flat.size()) != m * m) throw Error(ErrorKind::Structural, "transition needs m*m entries");
    TransitionMatrix a(m, m);
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < m; ++j) a(i, j) = flat[static_cast<std::size_t>(i * m + j)];
    }
    ParameterBounds bounds;
    if (doc.contains("bounds")) {
        const json& b = doc["bounds"];
        bounds.c = b.value("c", bounds.c);
        bounds.d = b.value("d", bounds.d);
        bounds.b_max = b.value("b_max", bounds.b_max);
        bounds.alpha_max = b.value("alpha_max", bounds.alpha_max);
        if (!(bounds.c > 0.0) || !(bounds.d >= bounds.c) || !(bounds.b_max > 0.0) || !(bounds.alpha_max > 0.0)) {
            throw Error(ErrorKind::Validation, "bounds need 0 < c <= d and positive box half-widths");
        }
    }
    return {ModelSpec(std::move(regimes), std::move(a)), bounds};
}

json model_to_json(const ModelSpec& spec, const ParameterBounds& bounds) {
    json doc;
    doc["m"] = spec.m();
    doc["regimes"] = json::array();
    for (const auto& r : spec.regimes()) doc["regimes"].push_back({{"b", r.b}, {"alpha", r.alpha}, {"sigma2", r.sigma2}});
    doc["transition"] = json::array();
    for (int i = 0; i < spec.m(); ++i) {
        json row = json::array();
        for (int j = 0; j < spec.m(); ++j) row.push_back(spec.transition()(i, j));
        doc["transition"].push_back(row);
    }
    doc["bounds"] = {{"c", bounds.c}, {"d", bounds.d}, {"b_max", bounds.b_max}, {"alpha_max", bounds.alpha_max}};
    return doc;
}

std::string trajectory_to_csv(const Trajectory& traj) {
    std::string out = traj.path ? "t,y,x\n" : "t,y\n";
    out += "0," + format_double(traj.y0) + (traj.path ? ",\n" : "\n");
    for (int k = 1; k <= traj.n(); ++k) {
        out += std::to_string(k) + ',' + format_double(traj.y[static_cast<std::size_t>(k - 1)]);
        if (traj.path) out += ',' + std::to_string((*traj.path)[static_cast<std::size_t>(k - 1)] + 1);
        out += '\n';
    }
    return out;
}

Trajectory trajectory_from_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line)) throw Error(ErrorKind::Validation, "empty trajectory file");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    bool with_path = false;
    if (line == "t,y,x") {
        with_path = true;
    } else if (line != "t,y") {
        throw Error(ErrorKind::Validation, "trajectory header must be 't,y' or 't,y,x'");
    }
    Trajectory traj;
    std::vector<int> path;
    bool path_complete = with_path;
    int expected = 0;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto fields = split(line, ',');
        if (fields.size() < 2 || fields.size() > 3) throw Error(ErrorKind::Validation, "bad trajectory row: " + line);
        if (std::stoll(fields[0]) != expected) throw Error(ErrorKind::Validation, "trajectory rows must be t = 0, 1, 2, ...");
        const double y = parse_double(fields[1]);
        if (expected == 0) {
            traj.y0 = y;
        } else {
            traj.y.push_back(y);
            if (with_path) {
                if (fields.size() == 3 && !fields[2].empty()) {
                    const int x = std::stoi(fields[2]);
                    if (x < 1) throw Error(ErrorKind::Validation, "states are numbered from 1");
                    path.push_back(x - 1);
                } else {
                    path_complete = false;
                }
            }
        }
        ++expected;
    }
    if (expected == 0) throw Error(ErrorKind::Validation, "trajectory has no t=0 row");
    if (path_complete) traj.path = std::move(path);
    return traj;
}

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::Io, "cannot read " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    if (in.bad()) throw Error(ErrorKind::Io, "read failed: " + path.string());
    return buf.str();
}

void write_atomic(const fs::path& path, const std::string& content) {
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error(ErrorKind::Io, "cannot write " + tmp.string());
        out << content;
        out.flush();
        if (!out) throw Error(ErrorKind::Io, "write failed: " + tmp.string());
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) {
        fs::remove(tmp, ec);
        throw Error(ErrorKind::Io, "cannot rename onto " + path.string());
    }
}

json read_json(const fs::path& path) {
    const std::string text = read_text(path);
    try {
        return json::parse(text);
    } catch (const json::exception& e) {
        throw Error(ErrorKind::Validation, path.string() + ": " + e.what());
    }
}

EmConfig em_config_from_json(const json& doc, EmConfig base) {
    if (doc.is_null()) return base;
    base.tolerance = doc.value("tolerance", base.tolerance);
    base.max_iterations = doc.value("max_iterations", base.max_iterations);
    base.restarts = doc.value("restarts", base.restarts);
    base.transition_floor = doc.value("transition_floor", base.transition_floor);
    base.min_obs_per_state = doc.value("min_obs_per_state", base.min_obs_per_state);
    if (!(base.tolerance > 0.0) || base.restarts < 1 || base.max_iterations < 1 || !(base.transition_floor > 0.0)) {
        throw Error(ErrorKind::Validation, "em config needs tolerance > 0, restarts >= 1, max_iterations >= 1, floor > 0");
    }
    return base;
}

json em_config_to_json(const EmConfig& config) {
    return {{"tolerance", config.tolerance},
            {"max_iterations", config.max_iterations},
            {"restarts", config.restarts},
            {"transition_floor", config.transition_floor},
            {"min_obs_per_state", config.min_obs_per_state},
            {"seed", config.seed},
            {"bounds", {{"c", config.bounds.c}, {"d", config.bounds.d}, {"b_max", config.bounds.b_max},
                        {"alpha_max", config.bounds.alpha_max}}}};
}

PhiShape parse_phi(const std::string& text, double* kappa) {
    if (text == "sqrt") return PhiShape::Sqrt;
    if (text == "log") return PhiShape::Log;
    if (text.rfind("const:", 0) == 0) {
        const double k = parse_double(text.substr(6));
        if (!(k > 0.0)) throw Error(ErrorKind::Validation, "phi constant must be positive");
        if (kappa) *kappa = k;
        return PhiShape::Constant;
    }
    throw Error(ErrorKind::Validation, "phi must be sqrt, log or const:<k>");
}

PenaltyConfig penalty_config_from_json(const json& doc, PenaltyConfig base) {
    if (doc.is_null()) return base;
    base.rho = doc.value("rho", base.rho);
    if (doc.contains("phi")) base.phi = parse_phi(doc["phi"].get<std::string>(), &base.kappa);
    base.tau2 = doc.value("tau2", base.tau2);
    if (doc.contains("lambda_sigma")) {
        const auto s = doc["lambda_sigma"].get<std::string>();
        if (s == "uniform-upper") base.lambda_sigma = LambdaSigmaPolicy::UniformUpper;
        else if (s == "plug-in") base.lambda_sigma = LambdaSigmaPolicy::PlugIn;
        else throw Error(ErrorKind::Validation, "lambda_sigma must be uniform-upper or plug-in");
    }
    if (doc.contains("tau2_policy")) {
        const auto s = doc["tau2_policy"].get<std::string>();
        if (s == "constant") base.tau2_policy = Tau2Policy::Constant;
        else if (s == "proof") base.tau2_policy = Tau2Policy::Proof;
        else throw Error(ErrorKind::Validation, "tau2_policy must be constant or proof");
    }
    if (!(base.rho > 2.0)) throw Error(ErrorKind::Validation, "rho must exceed 2");
    if (!(base.tau2 > 0.0)) throw Error(ErrorKind::Validation, "tau2 must be positive");
    return base;
}

json penalty_config_to_json(const PenaltyConfig& config) {
    return {{"rho", config.rho},
            {"phi", phi_name(config)},
            {"tau2", config.tau2},
            {"lambda_sigma", config.lambda_sigma == LambdaSigmaPolicy::PlugIn ? "plug-in" : "uniform-upper"},
            {"tau2_policy", config.tau2_policy == Tau2Policy::Proof ? "proof" : "constant"},
            {"d", config.bounds.d}};
}

StudyFile study_from_json(const json& doc, const fs::path& base_dir) {
    if (!doc.is_object()) throw Error(ErrorKind::Validation, "study config must be an object");
    json model_doc;
    if (doc.contains("model")) {
        model_doc = doc["model"];
    } else if (doc.contains("model_path")) {
        model_doc = read_json(base_dir / doc["model_path"].get<std::string>());
    } else {
        throw Error(ErrorKind::Validation, "study config needs 'model' or 'model_path'");
    }
    StudyFile out{model_from_json(model_doc), {}};
    StudyConfig& c = out.config;
    if (!doc.contains("n_grid") || !doc["n_grid"].is_array() || doc["n_grid"].empty()) {
        throw Error(ErrorKind::Validation, "study config needs a non-empty 'n_grid'");
    }
    for (const auto& n : doc["n_grid"]) c.n_grid.push_back(int_value(n, "n_grid entry"));
    for (std::size_t g = 0; g < c.n_grid.size(); ++g) {
        if (c.n_grid[g] < 4) throw Error(ErrorKind::Validation, "n_grid entries must be >= 4");
        if (g > 0 && c.n_grid[g] <= c.n_grid[g - 1]) throw Error(ErrorKind::Validation, "n_grid must be ascending");
    }
    c.replications = doc.contains("replications") ? int_value(doc["replications"], "replications") : 1;
    if (c.replications < 1) throw Error(ErrorKind::Validation, "replications must be >= 1");
    if (doc.contains("m_max") && !(doc["m_max"].is_string() && doc["m_max"] == "auto")) {
        c.m_max = int_value(doc["m_max"], "m_max");
        if (*c.m_max < 1) throw Error(ErrorKind::Validation, "m_max must be >= 1");
    }
    c.y0 = doc.value("y0", 0.0);
    c.base_seed = doc.value("base_seed", std::uint64_t{0});
    c.em.bounds = out.model.bounds;
    c.em = em_config_from_json(doc.value("em", json()), c.em);
    c.pen.bounds = out.model.bounds;
    c.pen = penalty_config_from_json(doc.value("penalty", json()), c.pen);
    return out;
}

std::string selection_to_csv(const SelectionResult& result) {
    std::string out = "m,fitted,loglik,penalty,criterion,iterations,converged\n";
    for (const auto& row : result.table) {
        out += std::to_string(row.m) + ',' + (row.fitted ? "1" : "0") + ',';
        if (row.fitted) out += format_double(row.loglik);
        out += ',' + format_double(row.penalty) + ',';
        if (row.fitted) out += format_double(row.criterion);
        out += ',' + std::to_string(row.iterations) + ',' + (row.converged ? "1" : "0") + '\n';
    }
    return out;
}

std::string study_detail_to_csv(const StudyResult& result) {
    std::size_t width = 0;
    for (const auto& row : result.rows) width = std::max(width, row.table.size());
    std::string out = "n,replication,m_hat";
    for (std::size_t m = 1; m <= width; ++m) out += ",loglik_" + std::to_string(m);
    for (std::size_t m = 1; m <= width; ++m) out += ",pen_" + std::to_string(m);
    out += '\n';
    for (const auto& row : result.rows) {
        out += std::to_string(row.n) + ',' + std::to_string(row.replication) + ',';
        if (row.m_hat) out += std::to_string(*row.m_hat);
        for (std::size_t m = 0; m < width; ++m) {
            out += ',';
            if (m < row.table.size() && row.table[m].fitted) out += format_double(row.table[m].loglik);
        }
        for (std::size_t m = 0; m < width; ++m) {
            out += ',';
            if (m < row.table.size()) out += format_double(row.table[m].penalty);
        }
        out += '\n';
    }
    return out;
}

std::string study_summary_to_csv(const StudyResult& result) {
    std::string out = "n,P_under,P_exact,P_over,P_fail,failures\n";
    for (const auto& s : result.summary) {
        out += std::to_string(s.n) + ',' + format_double(s.p_under) + ',' + format_double(s.p_exact) + ',' +
               format_double(s.p_over) + ',' + format_double(s.p_fail) + ',' + std::to_string(s.failures) + '\n';
    }
    return out;
}

json RunMetadata::to_json() const {
    const auto elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    json doc;
    doc["command"] = command;
    doc["config"] = config;
    doc["seeds"] = seeds;
    doc["seed_mixing"] = "splitmix64(base + (index + 1) * 0x9E3779B97F4A7C15)";
    doc["generator"] = kGeneratorName;
    doc["artifact_version"] = kArtifactVersion;
    doc["wall_clock_seconds"] = elapsed;
    for (const auto& [key, value] : extra.items()) doc[key] = value;
    return doc;
}

void write_metadata(const fs::path& artifact, const RunMetadata& meta) {
    write_atomic(artifact.string() + ".meta.json", meta.to_json().dump(2) + "\n");
}

}  // namespace armr
