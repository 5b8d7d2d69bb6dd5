#include "twostage/io.hpp"

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <sstream>

namespace twostage {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

double parse_double(const std::string& s, const std::string& what) {
    errno = 0;
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (end == s.c_str() || *end != '\0' || errno == ERANGE)
        throw ConfigError(what + ": cannot parse '" + s + "' as a number");
    return v;
}

}  // namespace

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

void ConfigSection::insert(const std::string& key, const std::string& value, int line) {
    if (!values_.emplace(key, std::make_pair(value, line)).second)
        throw ConfigError("duplicate key '" + key + "' in [" + name_ + "] (line " + std::to_string(line) + ")");
}

const std::string* ConfigSection::find(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) return nullptr;
    used_.insert(key);
    return &it->second.first;
}

std::string ConfigSection::get_string(const std::string& key, const std::string& fallback) const {
    const std::string* v = find(key);
    return v ? *v : fallback;
}

std::string ConfigSection::require_string(const std::string& key) const {
    const std::string* v = find(key);
    if (!v) throw ConfigError("missing required key '" + key + "' in [" + name_ + "]");
    return *v;
}

double ConfigSection::get_double(const std::string& key, double fallback) const {
    const std::string* v = find(key);
    return v ? parse_double(*v, "[" + name_ + "] " + key) : fallback;
}

int ConfigSection::get_int(const std::string& key, int fallback) const {
    const double v = get_double(key, static_cast<double>(fallback));
    if (v != std::floor(v) || std::abs(v) > 2e9)
        throw ConfigError("[" + name_ + "] " + key + ": expected an integer");
    return static_cast<int>(v);
}

std::uint64_t ConfigSection::get_uint64(const std::string& key, std::uint64_t fallback) const {
    const std::string* v = find(key);
    if (!v) return fallback;
    errno = 0;
    char* end = nullptr;
    const unsigned long long parsed = std::strtoull(v->c_str(), &end, 10);
    if (end == v->c_str() || *end != '\0' || errno == ERANGE)
        throw ConfigError("[" + name_ + "] " + key + ": cannot parse '" + *v + "' as an unsigned integer");
    return parsed;
}

bool ConfigSection::get_bool(const std::string& key, bool fallback) const {
    const std::string* v = find(key);
    if (!v) return fallback;
    if (*v == "true" || *v == "1" || *v == "yes") return true;
    if (*v == "false" || *v == "0" || *v == "no") return false;
    throw ConfigError("[" + name_ + "] " + key + ": expected true/false, got '" + *v + "'");
}

void ConfigSection::check_all_used() const {
    for (const auto& [key, value] : values_) {
        if (used_.count(key) == 0)
            throw ConfigError("unknown field '" + key + "' in [" + name_ + "] (line " +
                              std::to_string(value.second) + ")");
    }
}

ConfigFile ConfigFile::parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return parse_string(buffer.str(), path);
}

ConfigFile ConfigFile::parse_string(const std::string& text, const std::string& origin) {
    ConfigFile out;
    std::istringstream in(text);
    std::string line;
    std::string current;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#' || t[0] == ';') continue;
        if (t.front() == '[') {
            if (t.back() != ']')
                throw ConfigError(origin + ":" + std::to_string(line_no) + ": malformed section header");
            current = trim(t.substr(1, t.size() - 2));
            out.sections_.try_emplace(current, ConfigSection(current));
            continue;
        }
        const auto eq = t.find('=');
        if (eq == std::string::npos)
            throw ConfigError(origin + ":" + std::to_string(line_no) + ": expected 'key = value', got '" + t + "'");
        if (current.empty())
            throw ConfigError(origin + ":" + std::to_string(line_no) + ": key outside of any [section]");
        out.sections_.at(current).insert(trim(t.substr(0, eq)), trim(t.substr(eq + 1)), line_no);
    }
    return out;
}

const ConfigSection& ConfigFile::section(const std::string& name) const {
    auto it = sections_.find(name);
    return it == sections_.end() ? empty_ : it->second;
}

void ConfigFile::check_known_sections(const std::set<std::string>& known) const {
    for (const auto& [name, section] : sections_)
        if (known.count(name) == 0) throw ConfigError("unknown section [" + name + "]");
}

void ConfigFile::check_all_used() const {
    for (const auto& [name, section] : sections_) section.check_all_used();
}

ScenarioConfig scenario_from_config(const ConfigFile& config) {
    const ConfigSection& s = config.section("scenario");
    ScenarioConfig cfg;
    cfg.name = s.get_string("name", "scenario");
    const std::string sampling = s.get_string("sampling", "srs");
    if (sampling == "srs")
        cfg.sampling = Sampling::srs;
    else if (sampling == "survey")
        cfg.sampling = Sampling::survey;
    else
        throw ConfigError("[scenario] sampling: expected srs or survey, got '" + sampling + "'");
    cfg.n_target = s.get_int("n", cfg.n_target);
    cfg.n_subset = s.get_int("n_subset", cfg.n_subset);
    cfg.correlation = s.get_double("correlation", cfg.correlation);
    cfg.sigma2 = s.get_double("sigma2", cfg.sigma2);
    const std::string outcome = s.get_string("outcome", "logistic");
    if (outcome == "logistic")
        cfg.outcome = ModelKind::binomial;
    else if (outcome == "cox")
        cfg.outcome = ModelKind::coxph;
    else
        throw ConfigError("[scenario] outcome: expected logistic or cox, got '" + outcome + "'");
    cfg.reps = s.get_int("reps", cfg.reps);
    cfg.seed = s.get_uint64("seed", cfg.seed);
    cfg.level = s.get_double("level", cfg.level);
    cfg.beta0 = s.get_double("beta0", cfg.beta0);
    cfg.beta_x = s.get_double("beta_x", cfg.beta_x);
    cfg.beta_z = s.get_double("beta_z", cfg.beta_z);
    cfg.delta0 = s.get_double("delta0", cfg.delta0);
    cfg.delta1 = s.get_double("delta1", cfg.delta1);
    cfg.delta2 = s.get_double("delta2", cfg.delta2);
    cfg.biomarker_var = s.get_double("biomarker_var", cfg.biomarker_var);
    cfg.cox_lambda0 = s.get_double("cox_lambda0", cfg.cox_lambda0);
    cfg.cox_censor_time = s.get_double("cox_censor_time", cfg.cox_censor_time);

    const ConfigSection& methods = config.section("methods");
    std::string variance = methods.get_string("variance", "naive,sandwich");
    std::istringstream vs(variance);
    std::string item;
    while (std::getline(vs, item, ',')) {
        item = trim(item);
        if (item == "naive" || item == "sandwich" || item.empty()) continue;  // always computed
        if (item == "bootstrap")
            cfg.run_bootstrap = true;
        else if (item == "mi")
            cfg.run_mi = true;
        else
            throw ConfigError("[methods] variance: unknown method '" + item + "'");
    }
    std::string intervals = methods.get_string("intervals", "wald,percentile");
    std::istringstream is(intervals);
    while (std::getline(is, item, ',')) {
        item = trim(item);
        if (item == "wald" || item == "percentile" || item.empty()) continue;  // always computed with bootstrap
        if (item == "bca")
            cfg.run_bca = true;
        else
            throw ConfigError("[methods] intervals: unknown interval type '" + item + "'");
    }

    const ConfigSection& boot = config.section("bootstrap");
    cfg.boot_b = boot.get_int("b", cfg.boot_b);
    const ConfigSection& mi = config.section("mi");
    cfg.mi_m = mi.get_int("m", cfg.mi_m);
    cfg.mi_rubin_inflation = mi.get_bool("rubin_factor", cfg.mi_rubin_inflation);

    config.check_known_sections({"scenario", "methods", "bootstrap", "mi"});
    config.check_all_used();
    cfg.validate();
    return cfg;
}

ColumnMapping mapping_from_config(const ConfigSection& columns) {
    ColumnMapping m;
    m.id = columns.get_string("id", m.id);
    m.y = columns.get_string("y", m.y);
    m.time = columns.get_string("time", "");
    m.status = columns.get_string("status", "");
    m.xstar = columns.get_string("xstar", m.xstar);
    m.xstarstar = columns.get_string("xstarstar", m.xstarstar);
    const std::string z = columns.get_string("z", "");
    std::istringstream zs(z);
    std::string item;
    while (std::getline(zs, item, ',')) {
        item = trim(item);
        if (!item.empty()) m.z.push_back(item);
    }
    m.subset = columns.get_string("subset", m.subset);
    m.stratum = columns.get_string("stratum", "");
    m.cluster = columns.get_string("cluster", "");
    m.weight = columns.get_string("weight", "");
    return m;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            fields.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur.push_back(ch);
        }
    }
    fields.push_back(cur);
    return fields;
}

}  // namespace

Dataset read_dataset_csv(const std::string& path, const ColumnMapping& mapping, ModelKind outcome_kind) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open data file '" + path + "'");
    std::string line;
    if (!std::getline(in, line)) throw DataError(path + ": empty file (header row required)");
    const std::vector<std::string> header = split_csv_line(line);
    std::map<std::string, int> col_index;
    for (int c = 0; c < static_cast<int>(header.size()); ++c) col_index[trim(header[static_cast<std::size_t>(c)])] = c;

    auto require_col = [&](const std::string& name) {
        auto it = col_index.find(name);
        if (it == col_index.end()) throw DataError(path + ": missing required column '" + name + "'");
        return it->second;
    };
    auto optional_col = [&](const std::string& name) -> int {
        if (name.empty()) return -1;
        return require_col(name);
    };

    const int c_id = optional_col(mapping.id);
    int c_y = -1, c_time = -1, c_status = -1;
    if (outcome_kind == ModelKind::coxph) {
        if (mapping.time.empty() || mapping.status.empty())
            throw ConfigError("cox outcome requires 'time' and 'status' column mappings");
        c_time = require_col(mapping.time);
        c_status = require_col(mapping.status);
    } else {
        if (mapping.y.empty()) throw ConfigError("outcome requires a 'y' column mapping");
        c_y = require_col(mapping.y);
    }
    const int c_xstar = require_col(mapping.xstar);
    const int c_xss = optional_col(mapping.xstarstar);
    const int c_subset = require_col(mapping.subset);
    std::vector<int> c_z;
    for (const auto& name : mapping.z) c_z.push_back(require_col(name));
    const int c_stratum = optional_col(mapping.stratum);
    const int c_cluster = optional_col(mapping.cluster);
    const int c_weight = optional_col(mapping.weight);

    std::vector<std::vector<std::string>> rows;
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        auto fields = split_csv_line(line);
        if (fields.size() != header.size())
            throw DataError(path + ":" + std::to_string(line_no) + ": expected " +
                            std::to_string(header.size()) + " fields, got " + std::to_string(fields.size()));
        rows.push_back(std::move(fields));
    }
    const int n = static_cast<int>(rows.size());
    if (n == 0) throw DataError(path + ": no data rows");

    auto cell = [&](int r, int c) -> const std::string& { return rows[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)]; };
    auto num = [&](int r, int c, const std::string& what) {
        const std::string& v = cell(r, c);
        if (v.empty()) throw DataError(path + ":" + std::to_string(r + 2) + ": empty value in column " + what);
        errno = 0;
        char* end = nullptr;
        const double d = std::strtod(v.c_str(), &end);
        if (end == v.c_str() || *end != '\0' || errno == ERANGE)
            throw DataError(path + ":" + std::to_string(r + 2) + ": cannot parse '" + v + "' in column " + what);
        return d;
    };

    Dataset data;
    data.outcome_kind = outcome_kind;
    data.xstar.resize(n);
    data.xstarstar.resize(n);
    data.subset.resize(n);
    if (!c_z.empty()) data.z.resize(n, static_cast<Eigen::Index>(c_z.size()));
    if (outcome_kind == ModelKind::coxph)
        data.survival.resize(static_cast<std::size_t>(n));
    else
        data.y.resize(n);
    if (c_weight >= 0) data.weight.resize(n);

    for (int r = 0; r < n; ++r) {
        data.unit_id.push_back(c_id >= 0 ? static_cast<std::int64_t>(num(r, c_id, mapping.id)) : r);
        if (outcome_kind == ModelKind::coxph) {
            auto& s = data.survival[static_cast<std::size_t>(r)];
            s.time = num(r, c_time, mapping.time);
            s.status = static_cast<int>(num(r, c_status, mapping.status));
            if (s.status != 0 && s.status != 1)
                throw DataError(path + ":" + std::to_string(r + 2) + ": status must be 0 or 1");
        } else {
            data.y[r] = num(r, c_y, mapping.y);
        }
        data.xstar[r] = num(r, c_xstar, mapping.xstar);
        const int v = static_cast<int>(num(r, c_subset, mapping.subset));
        if (v != 0 && v != 1) throw DataError(path + ":" + std::to_string(r + 2) + ": subset must be 0 or 1");
        data.subset[r] = v;
        if (c_xss >= 0 && !cell(r, c_xss).empty())
            data.xstarstar[r] = num(r, c_xss, mapping.xstarstar);
        else
            data.xstarstar[r] = std::numeric_limits<double>::quiet_NaN();
        for (std::size_t q = 0; q < c_z.size(); ++q)
            data.z(r, static_cast<Eigen::Index>(q)) = num(r, c_z[q], mapping.z[q]);
        if (c_stratum >= 0) data.stratum_label.push_back(cell(r, c_stratum));
        if (c_cluster >= 0) data.cluster_label.push_back(cell(r, c_cluster));
        if (c_weight >= 0) {
            data.weight[r] = num(r, c_weight, mapping.weight);
            if (!(data.weight[r] > 0.0))
                throw DataError(path + ":" + std::to_string(r + 2) + ": weights must be positive");
        }
    }
    try {
        data.validate();
    } catch (const DataError& e) {
        throw DataError(path + ": " + e.what());
    }
    return data;
}

void write_dataset_csv(const std::string& path, const Dataset& data, const ColumnMapping& mapping) {
    std::ofstream out(path, std::ios::binary);  // LF line endings everywhere
    if (!out) throw DataError("cannot open '" + path + "' for writing");
    const bool cox = data.outcome_kind == ModelKind::coxph;
    out << mapping.id;
    if (cox)
        out << ',' << mapping.time << ',' << mapping.status;
    else
        out << ',' << mapping.y;
    out << ',' << mapping.xstar << ',' << mapping.xstarstar;
    for (const auto& name : mapping.z) out << ',' << name;
    out << ',' << mapping.subset;
    if (!mapping.stratum.empty()) out << ',' << mapping.stratum;
    if (!mapping.cluster.empty()) out << ',' << mapping.cluster;
    if (!mapping.weight.empty()) out << ',' << mapping.weight;
    out << '\n';
    for (int r = 0; r < data.n_rows(); ++r) {
        out << (data.unit_id.empty() ? r : data.unit_id[static_cast<std::size_t>(r)]);
        if (cox)
            out << ',' << format_double(data.survival[static_cast<std::size_t>(r)].time) << ','
                << data.survival[static_cast<std::size_t>(r)].status;
        else
            out << ',' << format_double(data.y[r]);
        out << ',' << format_double(data.xstar[r]) << ',';
        if (!std::isnan(data.xstarstar[r])) out << format_double(data.xstarstar[r]);
        for (Eigen::Index q = 0; q < static_cast<Eigen::Index>(mapping.z.size()); ++q)
            out << ',' << format_double(data.z(r, q));
        out << ',' << data.subset[r];
        if (!mapping.stratum.empty()) out << ',' << data.stratum_label[static_cast<std::size_t>(r)];
        if (!mapping.cluster.empty()) out << ',' << data.cluster_label[static_cast<std::size_t>(r)];
        if (!mapping.weight.empty()) out << ',' << format_double(data.weight[r]);
        out << '\n';
    }
}

}  // namespace twostage
