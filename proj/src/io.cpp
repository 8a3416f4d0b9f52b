#include "sepmatch/io.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "sepmatch/errors.hpp"

namespace sepmatch {

namespace {

using nlohmann::json;

std::string trim(const std::string& s) {
    size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

std::vector<std::string> split_fields(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(trim(cur));
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(trim(cur));
    return out;
}

int parse_int(const std::string& field, const std::string& where) {
    int v = 0;
    const auto res = std::from_chars(field.data(), field.data() + field.size(), v);
    if (res.ec != std::errc() || res.ptr != field.data() + field.size())
        throw InputError(where + ": '" + field + "' is not an integer");
    return v;
}

double parse_double(const std::string& field, const std::string& where) {
    if (field.empty()) throw InputError(where + ": empty number");
    char* end = nullptr;
    const double v = std::strtod(field.c_str(), &end);
    if (end != field.c_str() + field.size())
        throw InputError(where + ": '" + field + "' is not a number");
    return v;
}

std::string fmt17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::vector<std::string> read_lines(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open " + path);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        lines.push_back(line);
    }
    return lines;
}

// ---- JSON helpers with field-path error reporting ----

const json& require_key(const json& j, const std::string& key, const std::string& path) {
    if (!j.is_object() || !j.contains(key))
        throw InputError(path.empty() ? key + ": missing required field"
                                      : path + "." + key + ": missing required field");
    return j.at(key);
}

std::string join_path(const std::string& path, const std::string& key) {
    return path.empty() ? key : path + "." + key;
}

double as_number(const json& j, const std::string& path) {
    if (!j.is_number()) throw InputError(path + ": expected a number");
    return j.get<double>();
}

Eigen::VectorXd as_vector(const json& j, const std::string& path) {
    if (!j.is_array()) throw InputError(path + ": expected an array of numbers");
    Eigen::VectorXd v(j.size());
    for (size_t i = 0; i < j.size(); ++i)
        v(static_cast<Eigen::Index>(i)) = as_number(j[i], path + "[" + std::to_string(i) + "]");
    return v;
}

Eigen::MatrixXd as_matrix(const json& j, const std::string& path) {
    if (!j.is_array() || j.empty()) throw InputError(path + ": expected an array of rows");
    const size_t cols = j[0].is_array() ? j[0].size() : 0;
    if (cols == 0) throw InputError(path + "[0]: expected a nonempty row");
    Eigen::MatrixXd m(j.size(), cols);
    for (size_t r = 0; r < j.size(); ++r) {
        const std::string rp = path + "[" + std::to_string(r) + "]";
        if (!j[r].is_array() || j[r].size() != cols)
            throw InputError(rp + ": rows must have equal length");
        for (size_t c = 0; c < cols; ++c)
            m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
                as_number(j[r][c], rp + "[" + std::to_string(c) + "]");
    }
    return m;
}

std::vector<std::vector<int>> as_nests(const json& j, const std::string& path) {
    if (!j.is_array() || j.empty()) throw InputError(path + ": expected an array of nests");
    std::vector<std::vector<int>> out;
    for (size_t i = 0; i < j.size(); ++i) {
        const std::string np = path + "[" + std::to_string(i) + "]";
        if (!j[i].is_array() || j[i].empty())
            throw InputError(np + ": expected a nonempty array of type ids");
        std::vector<int> nest;
        for (size_t k = 0; k < j[i].size(); ++k) {
            const std::string mp = np + "[" + std::to_string(k) + "]";
            if (!j[i][k].is_number_integer()) throw InputError(mp + ": expected an integer");
            const int t = j[i][k].get<int>();
            if (t < 1) throw InputError(mp + ": type ids are 1-based");
            nest.push_back(t - 1);
        }
        out.push_back(std::move(nest));
    }
    return out;
}

std::vector<int> as_tie_labels(const json& j, const std::string& path, size_t expected) {
    if (!j.is_array() || j.size() != expected)
        throw InputError(path + ": expected " + std::to_string(expected) + " labels");
    std::vector<int> out;
    for (size_t i = 0; i < j.size(); ++i) {
        const std::string ip = path + "[" + std::to_string(i) + "]";
        if (!j[i].is_number_integer() || j[i].get<int>() < 0)
            throw InputError(ip + ": expected a nonnegative integer");
        out.push_back(j[i].get<int>());
    }
    return out;
}

MixedLogitSpec parse_mixed_side(const json& j, const std::string& path) {
    MixedLogitSpec spec;
    spec.zchar = as_matrix(require_key(j, "zchar", path), join_path(path, "zchar"));
    spec.atoms = as_matrix(require_key(j, "atoms", path), join_path(path, "atoms"));
    spec.weights = as_vector(require_key(j, "weights", path), join_path(path, "weights"));
    if (j.contains("s")) spec.s = as_number(j.at("s"), join_path(path, "s"));
    if (!(spec.s > 0.0)) throw InputError(join_path(path, "s") + ": scale must be positive");
    if (spec.atoms.cols() != spec.zchar.cols())
        throw InputError(join_path(path, "atoms") + ": atom dimension does not match zchar");
    if (spec.weights.size() != spec.atoms.rows())
        throw InputError(join_path(path, "weights") + ": weight count does not match atoms");
    if ((spec.weights.array() < 0.0).any() || std::abs(spec.weights.sum() - 1.0) > 1e-10)
        throw InputError(join_path(path, "weights") +
                         ": weights must be nonnegative and sum to 1");
    return spec;
}

json parse_json_text(const std::string& text, const std::string& what) {
    try {
        return json::parse(text);
    } catch (const json::exception& e) {
        throw InputError(what + ": " + e.what());
    }
}

}  // namespace

MatchingPatterns read_matching_csv(const std::string& path) {
    const auto lines = read_lines(path);
    if (lines.empty()) throw InputError(path + ": empty file");
    if (trim(lines[0]) != "x,y,mu")
        throw InputError(path + ": expected header 'x,y,mu', got '" + lines[0] + "'");
    struct Cell {
        int x, y;
        double mu;
    };
    std::vector<Cell> cells;
    std::set<std::pair<int, int>> seen;
    int max_x = 0, max_y = 0;
    for (size_t i = 1; i < lines.size(); ++i) {
        if (trim(lines[i]).empty()) continue;
        const std::string where = path + ":" + std::to_string(i + 1);
        const auto fields = split_fields(lines[i]);
        if (fields.size() != 3) throw InputError(where + ": expected 3 fields");
        const int x = parse_int(fields[0], where);
        const int y = parse_int(fields[1], where);
        const double mu = parse_double(fields[2], where);
        if (x < 0 || y < 0) throw InputError(where + ": negative type index");
        if (x == 0 && y == 0)
            throw InputError(where + ": a row cannot be single on both sides");
        if (mu < 0.0) throw InputError(where + ": negative mass");
        if (!seen.insert({x, y}).second)
            throw InputError(where + ": duplicate cell (" + std::to_string(x) + "," +
                             std::to_string(y) + ")");
        cells.push_back({x, y, mu});
        max_x = std::max(max_x, x);
        max_y = std::max(max_y, y);
    }
    if (max_x < 1 || max_y < 1)
        throw InputError(path + ": no types on one side of the market");
    MatchingPatterns out;
    out.mu = Eigen::MatrixXd::Zero(max_x, max_y);
    out.mu_x0 = Eigen::VectorXd::Zero(max_x);
    out.mu_0y = Eigen::VectorXd::Zero(max_y);
    out.N = 1.0;
    for (const auto& c : cells) {
        if (c.y == 0)
            out.mu_x0(c.x - 1) = c.mu;
        else if (c.x == 0)
            out.mu_0y(c.y - 1) = c.mu;
        else
            out.mu(c.x - 1, c.y - 1) = c.mu;
    }
    return out;
}

void write_matching_csv(const MatchingPatterns& mu, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw InputError("cannot write " + path);
    out << "x,y,mu\n";
    const int X = mu.mu.rows(), Y = mu.mu.cols();
    for (int x = 0; x < X; ++x)
        for (int y = 0; y < Y; ++y)
            out << x + 1 << "," << y + 1 << "," << fmt17(mu.mu(x, y)) << "\n";
    for (int x = 0; x < X; ++x) out << x + 1 << ",0," << fmt17(mu.mu_x0(x)) << "\n";
    for (int y = 0; y < Y; ++y) out << "0," << y + 1 << "," << fmt17(mu.mu_0y(y)) << "\n";
}

Margins read_margins_csv(const std::string& path) {
    const auto lines = read_lines(path);
    if (lines.empty()) throw InputError(path + ": empty file");
    if (trim(lines[0]) != "side,type,mass")
        throw InputError(path + ": expected header 'side,type,mass'");
    std::map<int, double> men, women;
    for (size_t i = 1; i < lines.size(); ++i) {
        if (trim(lines[i]).empty()) continue;
        const std::string where = path + ":" + std::to_string(i + 1);
        const auto fields = split_fields(lines[i]);
        if (fields.size() != 3) throw InputError(where + ": expected 3 fields");
        const int t = parse_int(fields[1], where);
        const double mass = parse_double(fields[2], where);
        if (t < 1) throw InputError(where + ": types are 1-based");
        if (!(mass > 0.0)) throw InputError(where + ": mass must be positive");
        auto& side = fields[0] == "men"     ? men
                     : fields[0] == "women" ? women
                                            : throw InputError(where +
                                                               ": side must be men or women");
        if (!side.emplace(t, mass).second)
            throw InputError(where + ": duplicate type " + std::to_string(t));
    }
    if (men.empty() || women.empty()) throw InputError(path + ": both sides required");
    Margins q;
    q.n.resize(men.rbegin()->first);
    q.m.resize(women.rbegin()->first);
    for (int x = 1; x <= q.n.size(); ++x) {
        const auto it = men.find(x);
        if (it == men.end())
            throw InputError(path + ": missing men type " + std::to_string(x));
        q.n(x - 1) = it->second;
    }
    for (int y = 1; y <= q.m.size(); ++y) {
        const auto it = women.find(y);
        if (it == women.end())
            throw InputError(path + ": missing women type " + std::to_string(y));
        q.m(y - 1) = it->second;
    }
    return q;
}

void write_margins_csv(const Margins& q, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw InputError("cannot write " + path);
    out << "side,type,mass\n";
    for (int x = 0; x < q.n.size(); ++x) out << "men," << x + 1 << "," << fmt17(q.n(x)) << "\n";
    for (int y = 0; y < q.m.size(); ++y)
        out << "women," << y + 1 << "," << fmt17(q.m(y)) << "\n";
}

Eigen::MatrixXd read_basis_csv(const std::string& path, const TypeSpace& space) {
    const auto lines = read_lines(path);
    if (lines.empty()) throw InputError(path + ": empty file");
    if (trim(lines[0]) != "x,y,k,phi")
        throw InputError(path + ": expected header 'x,y,k,phi'");
    int K = 0;
    struct Entry {
        int r, k;
        double value;
    };
    std::vector<Entry> entries;
    std::set<std::pair<int, int>> seen;
    for (size_t i = 1; i < lines.size(); ++i) {
        if (trim(lines[i]).empty()) continue;
        const std::string where = path + ":" + std::to_string(i + 1);
        const auto fields = split_fields(lines[i]);
        if (fields.size() != 4) throw InputError(where + ": expected 4 fields");
        const int x = parse_int(fields[0], where);
        const int y = parse_int(fields[1], where);
        const int k = parse_int(fields[2], where);
        if (x < 1 || x > space.X || y < 1 || y > space.Y)
            throw InputError(where + ": couple cell out of range");
        if (k < 1) throw InputError(where + ": basis indexes are 1-based");
        const int r = (x - 1) * space.Y + (y - 1);
        if (!seen.insert({r, k}).second)
            throw InputError(where + ": duplicate basis entry");
        entries.push_back({r, k - 1, parse_double(fields[3], where)});
        K = std::max(K, k);
    }
    if (K == 0) throw InputError(path + ": no basis entries");
    Eigen::MatrixXd phi(space.n_couples(), K);
    std::vector<bool> filled(static_cast<size_t>(space.n_couples()) * K, false);
    for (const auto& e : entries) {
        phi(e.r, e.k) = e.value;
        filled[static_cast<size_t>(e.r) * K + e.k] = true;
    }
    for (int r = 0; r < space.n_couples(); ++r)
        for (int k = 0; k < K; ++k)
            if (!filled[static_cast<size_t>(r) * K + k])
                throw InputError(path + ": missing entry (" +
                                 std::to_string(r / space.Y + 1) + "," +
                                 std::to_string(r % space.Y + 1) + ",phi" +
                                 std::to_string(k + 1) + ")");
    return phi;
}

void write_basis_csv(const Eigen::MatrixXd& phi, const TypeSpace& space,
                     const std::string& path) {
    if (phi.rows() != space.n_couples())
        throw InputError("basis matrix rows do not match the couple grid");
    std::ofstream out(path);
    if (!out) throw InputError("cannot write " + path);
    out << "x,y,k,phi\n";
    for (int x = 1; x <= space.X; ++x)
        for (int y = 1; y <= space.Y; ++y)
            for (int k = 0; k < phi.cols(); ++k)
                out << x << "," << y << "," << k + 1 << ","
                    << fmt17(phi((x - 1) * space.Y + (y - 1), k)) << "\n";
}

Eigen::MatrixXd read_surplus_csv(const std::string& path) {
    const auto lines = read_lines(path);
    if (lines.empty()) throw InputError(path + ": empty file");
    if (trim(lines[0]) != "x,y,phi")
        throw InputError(path + ": expected header 'x,y,phi'");
    std::map<std::pair<int, int>, double> cells;
    int max_x = 0, max_y = 0;
    for (size_t i = 1; i < lines.size(); ++i) {
        if (trim(lines[i]).empty()) continue;
        const std::string where = path + ":" + std::to_string(i + 1);
        const auto fields = split_fields(lines[i]);
        if (fields.size() != 3) throw InputError(where + ": expected 3 fields");
        const int x = parse_int(fields[0], where);
        const int y = parse_int(fields[1], where);
        if (x < 1 || y < 1) throw InputError(where + ": couple types are 1-based");
        if (!cells.emplace(std::make_pair(x, y), parse_double(fields[2], where)).second)
            throw InputError(where + ": duplicate couple cell");
        max_x = std::max(max_x, x);
        max_y = std::max(max_y, y);
    }
    if (max_x < 1 || max_y < 1) throw InputError(path + ": no couple cells");
    Eigen::MatrixXd phi(max_x, max_y);
    for (int x = 1; x <= max_x; ++x)
        for (int y = 1; y <= max_y; ++y) {
            const auto it = cells.find({x, y});
            if (it == cells.end())
                throw InputError(path + ": missing couple cell (" + std::to_string(x) + "," +
                                 std::to_string(y) + ")");
            phi(x - 1, y - 1) = it->second;
        }
    return phi;
}

EntropyModel parse_model_config(const std::string& json_text) {
    const json j = parse_json_text(json_text, "model config");
    if (!j.is_object()) throw InputError("model config: expected a JSON object");
    const std::string family = j.value("family", "choo_siow");
    if (family == "choo_siow") return EntropyModel::choo_siow();
    if (family == "gender_heteroskedastic") return EntropyModel::gender_heteroskedastic();
    if (family == "full_heteroskedastic") return EntropyModel::full_heteroskedastic();
    if (family == "nested_logit") {
        const json& nj = require_key(j, "nested", "");
        NestedLogitSpec spec;
        spec.nests_men = as_nests(require_key(nj, "nests_men", "nested"), "nested.nests_men");
        spec.nests_women =
            as_nests(require_key(nj, "nests_women", "nested"), "nested.nests_women");
        spec.rho = as_vector(require_key(nj, "rho", "nested"), "nested.rho");
        spec.delta = as_vector(require_key(nj, "delta", "nested"), "nested.delta");
        for (int i = 0; i < spec.rho.size(); ++i)
            if (!(spec.rho(i) > 0.0 && spec.rho(i) <= 1.0))
                throw InputError("nested.rho[" + std::to_string(i) + "]: out of (0,1]");
        for (int i = 0; i < spec.delta.size(); ++i)
            if (!(spec.delta(i) > 0.0 && spec.delta(i) <= 1.0))
                throw InputError("nested.delta[" + std::to_string(i) + "]: out of (0,1]");
        if (spec.rho.size() != static_cast<Eigen::Index>(spec.nests_men.size()))
            throw InputError("nested.rho: need one value per men-side nest");
        if (spec.delta.size() != static_cast<Eigen::Index>(spec.nests_women.size()))
            throw InputError("nested.delta: need one value per women-side nest");
        const size_t nm = spec.nests_men.size(), nw = spec.nests_women.size();
        if (nj.contains("rho_tie"))
            spec.rho_tie = as_tie_labels(nj.at("rho_tie"), "nested.rho_tie", nm);
        else
            for (size_t i = 0; i < nm; ++i) spec.rho_tie.push_back(static_cast<int>(i));
        if (nj.contains("delta_tie"))
            spec.delta_tie = as_tie_labels(nj.at("delta_tie"), "nested.delta_tie", nw);
        else
            for (size_t i = 0; i < nw; ++i)
                spec.delta_tie.push_back(static_cast<int>(nm + i));
        return EntropyModel::nested_logit(std::move(spec));
    }
    if (family == "mixed_logit") {
        MixedLogitSpec men = parse_mixed_side(require_key(j, "mixed_men", ""), "mixed_men");
        MixedLogitSpec women =
            parse_mixed_side(require_key(j, "mixed_women", ""), "mixed_women");
        return EntropyModel::mixed_logit(std::move(men), std::move(women));
    }
    throw InputError("family: unknown value '" + family + "'");
}

EntropyModel load_model_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_model_config(ss.str());
}

StudyConfig parse_study_config(const std::string& json_text) {
    const json j = parse_json_text(json_text, "study config");
    if (!j.is_object()) throw InputError("study config: expected a JSON object");
    StudyConfig cfg;
    cfg.space.X = j.contains("X") ? static_cast<int>(as_number(j.at("X"), "X")) : 20;
    cfg.space.Y = j.contains("Y") ? static_cast<int>(as_number(j.at("Y"), "Y")) : 20;
    if (cfg.space.X < 1 || cfg.space.Y < 1)
        throw InputError("X/Y: type counts must be at least 1");
    if (j.contains("margin_rate"))
        cfg.margin_rate = as_number(j.at("margin_rate"), "margin_rate");
    if (j.contains("bases")) {
        if (!j.at("bases").is_string()) throw InputError("bases: expected a string tag");
        cfg.bases = j.at("bases").get<std::string>();
    }
    cfg.true_beta = as_vector(require_key(j, "true_beta", ""), "true_beta");
    if (j.contains("model")) cfg.family = parse_model_config(j.at("model").dump());
    if (j.contains("true_alpha")) cfg.true_alpha = as_vector(j.at("true_alpha"), "true_alpha");
    cfg.N = as_number(require_key(j, "N", ""), "N");
    cfg.S_reps = static_cast<int>(as_number(require_key(j, "S_reps", ""), "S_reps"));
    if (j.contains("seed")) {
        if (!j.at("seed").is_number_unsigned() && !j.at("seed").is_number_integer())
            throw InputError("seed: expected an integer");
        cfg.seed = j.at("seed").get<std::uint64_t>();
    }
    if (j.contains("estimators")) {
        if (!j.at("estimators").is_array()) throw InputError("estimators: expected an array");
        cfg.run_mde = false;
        cfg.run_poisson = false;
        for (size_t i = 0; i < j.at("estimators").size(); ++i) {
            const json& e = j.at("estimators")[i];
            const std::string path = "estimators[" + std::to_string(i) + "]";
            if (!e.is_string()) throw InputError(path + ": expected a string");
            const std::string name = e.get<std::string>();
            if (name == "mde")
                cfg.run_mde = true;
            else if (name == "poisson")
                cfg.run_poisson = true;
            else
                throw InputError(path + ": unknown estimator '" + name + "'");
        }
    }
    if (j.contains("zero_cells")) {
        const std::string z = j.at("zero_cells").is_string()
                                  ? j.at("zero_cells").get<std::string>()
                                  : throw InputError("zero_cells: expected a string");
        if (z == "drop")
            cfg.mde.zero_cell_policy = ZeroCellPolicy::drop;
        else if (z == "shift")
            cfg.mde.zero_cell_policy = ZeroCellPolicy::shift;
        else
            throw InputError("zero_cells: must be 'drop' or 'shift'");
    }
    if (j.contains("shift_delta"))
        cfg.mde.shift_delta = as_number(j.at("shift_delta"), "shift_delta");
    if (j.contains("weighting")) {
        const std::string w = j.at("weighting").is_string()
                                  ? j.at("weighting").get<std::string>()
                                  : throw InputError("weighting: expected a string");
        if (w == "efficient")
            cfg.mde.weighting = MDEWeighting::efficient_two_step;
        else if (w == "identity")
            cfg.mde.weighting = MDEWeighting::identity;
        else
            throw InputError("weighting: must be 'efficient' or 'identity'");
    }
    return cfg;
}

StudyConfig load_study_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_study_config(ss.str());
}

std::string digest_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open " + path);
    std::uint64_t hash = 14695981039346656037ull;
    char buf[4096];
    while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
        for (std::streamsize i = 0; i < in.gcount(); ++i) {
            hash ^= static_cast<unsigned char>(buf[i]);
            hash *= 1099511628211ull;
        }
        if (!in) break;
    }
    char out[17];
    std::snprintf(out, sizeof(out), "%016llx", static_cast<unsigned long long>(hash));
    return out;
}

void write_run_manifest(const std::string& out_dir, const std::string& subcommand,
                        const std::string& resolved_config_json,
                        const std::vector<std::string>& input_paths, std::uint64_t seed) {
    json manifest;
    manifest["subcommand"] = subcommand;
    manifest["tool_version"] = tool_version();
    manifest["seed"] = seed;
    manifest["config"] = parse_json_text(resolved_config_json, "resolved config");
    json inputs = json::array();
    for (const auto& p : input_paths)
        inputs.push_back({{"path", p}, {"fnv1a64", digest_file(p)}});
    manifest["inputs"] = inputs;
    const std::time_t now = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&now, &tm);
    char stamp[32];
    std::strftime(stamp, sizeof(stamp), "%Y-%m-%dT%H:%M:%SZ", &tm);
    manifest["created_utc"] = stamp;
    std::filesystem::create_directories(out_dir);
    std::ofstream out(std::filesystem::path(out_dir) / "manifest.json");
    if (!out) throw InputError("cannot write manifest.json");
    out << manifest.dump(2) << "\n";
}

std::string tool_version() { return "0.1.0"; }

}  // namespace sepmatch
