#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "twostage/dataset.hpp"
#include "twostage/simulation.hpp"

namespace twostage {

// Flat-section key-value configuration file:
//
//   # comment
//   [section]
//   key = value
//
// Consumers fetch typed values; keys never fetched are reported as unknown
// fields so typos fail loudly.
class ConfigSection {
public:
    ConfigSection() = default;
    ConfigSection(std::string name) : name_(std::move(name)) {}

    void insert(const std::string& key, const std::string& value, int line);
    bool has(const std::string& key) const { return values_.count(key) > 0; }

    std::string get_string(const std::string& key, const std::string& fallback) const;
    std::string require_string(const std::string& key) const;
    double get_double(const std::string& key, double fallback) const;
    int get_int(const std::string& key, int fallback) const;
    std::uint64_t get_uint64(const std::string& key, std::uint64_t fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;

    // Throws naming the first key that was never consumed.
    void check_all_used() const;
    const std::string& name() const { return name_; }

private:
    const std::string* find(const std::string& key) const;
    std::string name_;
    std::map<std::string, std::pair<std::string, int>> values_;
    mutable std::set<std::string> used_;
};

class ConfigFile {
public:
    static ConfigFile parse_file(const std::string& path);
    static ConfigFile parse_string(const std::string& text, const std::string& origin = "<string>");

    bool has_section(const std::string& name) const { return sections_.count(name) > 0; }
    const ConfigSection& section(const std::string& name) const;  // empty if absent
    void check_known_sections(const std::set<std::string>& known) const;
    void check_all_used() const;

private:
    std::map<std::string, ConfigSection> sections_;
    ConfigSection empty_;
};

// CSV column mapping for analyze-style datasets. Binary/continuous outcomes
// use `y`; survival outcomes use `time` + `status`.
struct ColumnMapping {
    std::string id = "id";
    std::string y = "y";
    std::string time;
    std::string status;
    std::string xstar = "xstar";
    std::string xstarstar = "xstarstar";
    std::vector<std::string> z;
    std::string subset = "subset";
    std::string stratum;  // optional
    std::string cluster;  // optional
    std::string weight;   // optional
};

Dataset read_dataset_csv(const std::string& path, const ColumnMapping& mapping, ModelKind outcome_kind);
void write_dataset_csv(const std::string& path, const Dataset& data, const ColumnMapping& mapping);

// %.17g formatting: doubles survive a write/read round trip exactly.
std::string format_double(double v);

// Scenario parsing shared by the CLI and tests.
ScenarioConfig scenario_from_config(const ConfigFile& config);

ColumnMapping mapping_from_config(const ConfigSection& columns);

}  // namespace twostage
