#pragma once

// Long-format panel ingestion and treatment-pattern grouping.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "dte/errors.hpp"

namespace dte {

// Binary treatment pattern over a window of 3 (analysis) or 6 (testing)
// consecutive periods, oldest bit first.
class Pattern {
 public:
  Pattern() = default;

  explicit Pattern(std::vector<int> bits) : bits_(std::move(bits)) {
    if (bits_.size() != 3 && bits_.size() != 6)
      throw ConfigError("pattern length must be 3 or 6");
    for (int b : bits_)
      if (b != 0 && b != 1) throw ConfigError("pattern bits must be 0 or 1");
  }

  // Parses "101" or "1,0,1".
  static Pattern parse(const std::string& s) {
    std::vector<int> bits;
    for (char c : s) {
      if (c == '0' || c == '1') bits.push_back(c - '0');
      else if (c != ',' && c != ' ' && c != '(' && c != ')')
        throw ConfigError("cannot parse pattern '" + s + "'");
    }
    return Pattern(std::move(bits));
  }

  std::size_t size() const { return bits_.size(); }
  int bit(std::size_t i) const { return bits_.at(i); }
  const std::vector<int>& bits() const { return bits_; }

  std::string str() const {
    std::string s;
    for (int b : bits_) s += static_cast<char>('0' + b);
    return s;
  }

  bool operator==(const Pattern& o) const { return bits_ == o.bits_; }
  bool operator!=(const Pattern& o) const { return !(*this == o); }
  bool operator<(const Pattern& o) const { return bits_ < o.bits_; }

 private:
  std::vector<int> bits_;
};

struct PanelRecord {
  std::string unit_id;
  long period = 0;
  int treatment = 0;  // 0 or 1
  double outcome = 0.0;
  std::map<std::string, std::string> covariates;
};

// Maps input column names onto the panel roles. Any column not named here is
// ingested as a covariate.
struct PanelSchema {
  std::string unit_column = "id";
  std::string period_column = "period";
  std::string treatment_column = "treatment";
  std::string outcome_column = "outcome";
  char delimiter = ',';
};

class PanelDataset {
 public:
  PanelDataset() = default;

  explicit PanelDataset(std::vector<PanelRecord> records)
      : records_(std::move(records)) {
    std::set<std::pair<std::string, long>> seen;
    std::set<long> periods;
    for (const auto& r : records_) {
      if (!std::isfinite(r.outcome))
        throw DataError("non-finite outcome for unit " + r.unit_id);
      if (r.treatment != 0 && r.treatment != 1)
        throw DataError("non-binary treatment for unit " + r.unit_id);
      if (!seen.emplace(r.unit_id, r.period).second)
        throw DataError("duplicate (unit, period) pair: (" + r.unit_id + ", " +
                        std::to_string(r.period) + ")");
      periods.insert(r.period);
    }
    periods_.assign(periods.begin(), periods.end());
    for (std::size_t i = 0; i < records_.size(); ++i)
      index_[{records_[i].unit_id, records_[i].period}] = i;
  }

  const std::vector<PanelRecord>& records() const { return records_; }
  const std::vector<long>& periods() const { return periods_; }
  std::size_t dropped_rows() const { return dropped_rows_; }

  const PanelRecord* find(const std::string& unit, long period) const {
    auto it = index_.find({unit, period});
    return it == index_.end() ? nullptr : &records_[it->second];
  }

  // Units that have a record in every period of the window, in first-seen
  // order. Order of the input rows does not matter downstream: group
  // extraction sorts where order could leak into estimates.
  std::vector<std::string> balanced_units(const std::vector<long>& window,
                                          std::size_t* n_dropped = nullptr) const {
    std::vector<std::string> units;
    std::set<std::string> seen;
    std::size_t dropped = 0;
    for (const auto& r : records_) {
      if (!seen.insert(r.unit_id).second) continue;
      bool complete = true;
      for (long p : window)
        if (find(r.unit_id, p) == nullptr) { complete = false; break; }
      if (complete) units.push_back(r.unit_id);
      else ++dropped;
    }
    std::sort(units.begin(), units.end());
    if (n_dropped) *n_dropped = dropped;
    return units;
  }

  void set_dropped_rows(std::size_t n) { dropped_rows_ = n; }

 private:
  struct KeyHash {
    std::size_t operator()(const std::pair<std::string, long>& k) const {
      return std::hash<std::string>()(k.first) ^
             (std::hash<long>()(k.second) * 0x9e3779b97f4a7c15ULL);
    }
  };
  std::vector<PanelRecord> records_;
  std::vector<long> periods_;
  std::unordered_map<std::pair<std::string, long>, std::size_t, KeyHash> index_;
  std::size_t dropped_rows_ = 0;
};

namespace detail {

inline std::vector<std::string> split_line(const std::string& line, char delim) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, delim)) out.push_back(field);
  if (!line.empty() && line.back() == delim) out.emplace_back();
  return out;
}

inline std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace detail

// Reads delimited text with a header row. Rows with empty treatment or
// outcome fields are dropped and counted; anything else malformed is an
// error naming the line.
inline PanelDataset load_panel(std::istream& in, const PanelSchema& schema = {}) {
  std::string line;
  if (!std::getline(in, line)) throw DataError("empty input");
  auto header = detail::split_line(line, schema.delimiter);
  for (auto& h : header) h = detail::trim(h);

  auto col = [&](const std::string& name) -> int {
    auto it = std::find(header.begin(), header.end(), name);
    return it == header.end() ? -1 : static_cast<int>(it - header.begin());
  };
  const int c_unit = col(schema.unit_column);
  const int c_period = col(schema.period_column);
  const int c_treat = col(schema.treatment_column);
  const int c_out = col(schema.outcome_column);
  if (c_unit < 0 || c_period < 0 || c_treat < 0 || c_out < 0)
    throw DataError("missing required column(s) in header; need '" +
                    schema.unit_column + "', '" + schema.period_column +
                    "', '" + schema.treatment_column + "', '" +
                    schema.outcome_column + "'");

  std::vector<PanelRecord> records;
  std::size_t dropped = 0;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    auto fields = detail::split_line(line, schema.delimiter);
    if (fields.size() != header.size())
      throw DataError("line " + std::to_string(lineno) + ": expected " +
                      std::to_string(header.size()) + " fields, got " +
                      std::to_string(fields.size()));
    for (auto& f : fields) f = detail::trim(f);

    const std::string& treat_s = fields[c_treat];
    const std::string& out_s = fields[c_out];
    if (treat_s.empty() || out_s.empty()) { ++dropped; continue; }

    PanelRecord r;
    r.unit_id = fields[c_unit];
    try {
      std::size_t pos = 0;
      r.period = std::stol(fields[c_period], &pos);
      if (pos != fields[c_period].size()) throw std::invalid_argument("");
    } catch (const std::exception&) {
      throw DataError("line " + std::to_string(lineno) +
                      ": cannot parse period '" + fields[c_period] + "'");
    }
    if (treat_s == "0") r.treatment = 0;
    else if (treat_s == "1") r.treatment = 1;
    else
      throw DataError("line " + std::to_string(lineno) +
                      ": non-binary treatment '" + treat_s + "'");
    try {
      std::size_t pos = 0;
      r.outcome = std::stod(out_s, &pos);
      if (pos != out_s.size()) throw std::invalid_argument("");
    } catch (const std::exception&) {
      throw DataError("line " + std::to_string(lineno) +
                      ": cannot parse outcome '" + out_s + "'");
    }
    if (!std::isfinite(r.outcome))
      throw DataError("line " + std::to_string(lineno) + ": non-finite outcome");
    for (std::size_t j = 0; j < header.size(); ++j) {
      const int ji = static_cast<int>(j);
      if (ji == c_unit || ji == c_period || ji == c_treat || ji == c_out) continue;
      r.covariates[header[j]] = fields[j];
    }
    records.push_back(std::move(r));
  }
  PanelDataset data(std::move(records));
  data.set_dropped_rows(dropped);
  return data;
}

inline PanelDataset load_panel_file(const std::string& path,
                                    const PanelSchema& schema = {}) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "'");
  return load_panel(in, schema);
}

// Assignment of balanced units to their treatment pattern over a window.
class GroupIndex {
 public:
  GroupIndex(const PanelDataset& data, std::vector<long> window)
      : window_(std::move(window)) {
    if (window_.size() != 3 && window_.size() != 6)
      throw ConfigError("classification window must have 3 or 6 periods");
    for (long p : window_)
      if (std::find(data.periods().begin(), data.periods().end(), p) ==
          data.periods().end())
        throw ConfigError("window period " + std::to_string(p) +
                          " not present in data");
    auto units = data.balanced_units(window_, &dropped_units_);
    for (const auto& u : units) {
      std::vector<int> bits;
      bits.reserve(window_.size());
      for (long p : window_) bits.push_back(data.find(u, p)->treatment);
      groups_[Pattern(std::move(bits))].push_back(u);
    }
    n_units_ = units.size();
  }

  const std::vector<long>& window() const { return window_; }
  std::size_t n_units() const { return n_units_; }
  std::size_t dropped_units() const { return dropped_units_; }

  const std::vector<std::string>* units(const Pattern& p) const {
    auto it = groups_.find(p);
    return it == groups_.end() ? nullptr : &it->second;
  }

  std::size_t group_size(const Pattern& p) const {
    auto g = units(p);
    return g ? g->size() : 0;
  }

  double proportion(const Pattern& p) const {
    return n_units_ == 0 ? 0.0
                         : static_cast<double>(group_size(p)) /
                               static_cast<double>(n_units_);
  }

  const std::map<Pattern, std::vector<std::string>>& groups() const {
    return groups_;
  }

 private:
  std::vector<long> window_;
  std::map<Pattern, std::vector<std::string>> groups_;
  std::size_t n_units_ = 0;
  std::size_t dropped_units_ = 0;
};

// Exact-cell covariate filter plus an optional closed-interval trim on the
// outcome in every window period.
struct GroupFilter {
  std::map<std::string, std::string> covariate_cells;
  std::optional<double> outcome_min;
  std::optional<double> outcome_max;

  bool empty() const {
    return covariate_cells.empty() && !outcome_min && !outcome_max;
  }
};

// Outcomes of one pattern group as units x window-periods (oldest first).
inline std::vector<std::vector<double>> group_matrix(
    const PanelDataset& data, const GroupIndex& index, const Pattern& pattern,
    const GroupFilter& filter = {}, std::size_t min_group_size = 20) {
  auto units = index.units(pattern);
  if (!units)
    throw InsufficientDataError("no units with pattern " + pattern.str());
  std::vector<std::vector<double>> rows;
  for (const auto& u : *units) {
    bool keep = true;
    std::vector<double> row;
    row.reserve(index.window().size());
    for (long p : index.window()) {
      const PanelRecord* r = data.find(u, p);
      for (const auto& [k, v] : filter.covariate_cells) {
        auto it = r->covariates.find(k);
        if (it == r->covariates.end() || it->second != v) { keep = false; break; }
      }
      if (!keep) break;
      if ((filter.outcome_min && r->outcome < *filter.outcome_min) ||
          (filter.outcome_max && r->outcome > *filter.outcome_max)) {
        keep = false;
        break;
      }
      row.push_back(r->outcome);
    }
    if (keep) rows.push_back(std::move(row));
  }
  if (rows.size() < min_group_size)
    throw InsufficientDataError("group " + pattern.str() + " has " +
                                std::to_string(rows.size()) +
                                " units after filtering (minimum " +
                                std::to_string(min_group_size) + ")");
  return rows;
}

// Convenience: the outcome column of a group matrix at one window position.
inline std::vector<double> column(const std::vector<std::vector<double>>& m,
                                  std::size_t j) {
  std::vector<double> out;
  out.reserve(m.size());
  for (const auto& row : m) out.push_back(row.at(j));
  return out;
}

}  // namespace dte
