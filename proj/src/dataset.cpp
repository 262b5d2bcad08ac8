#include "remex/dataset.hpp"

#include "remex/errors.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace remex {

// ---------------------------------------------------------------------------
// MetricDef

MetricDef MetricDef::average(std::string column) {
  return MetricDef{MetricKind::SimpleAverage, {std::move(column)}};
}

MetricDef MetricDef::ratio(std::string numerator, std::string denominator) {
  return MetricDef{MetricKind::RatioOfSums, {std::move(numerator), std::move(denominator)}};
}

MetricDef MetricDef::parse(std::string_view text) {
  auto colon = text.find(':');
  if (colon == std::string_view::npos) {
    throw UsageError("metric must be average:<col> or ratio:<num>/<den>, got '" +
                     std::string(text) + "'");
  }
  const auto kind = text.substr(0, colon);
  const auto rest = text.substr(colon + 1);
  if (kind == "average" && !rest.empty() && rest.find('/') == std::string_view::npos) {
    return average(std::string(rest));
  }
  if (kind == "ratio") {
    auto slash = rest.find('/');
    if (slash != std::string_view::npos && slash > 0 && slash + 1 < rest.size()) {
      return ratio(std::string(rest.substr(0, slash)), std::string(rest.substr(slash + 1)));
    }
  }
  throw UsageError("metric must be average:<col> or ratio:<num>/<den>, got '" +
                   std::string(text) + "'");
}

std::string MetricDef::to_string() const {
  if (kind == MetricKind::SimpleAverage) {
    return "average:" + (component_names.empty() ? std::string() : component_names[0]);
  }
  return "ratio:" + (component_names.size() > 0 ? component_names[0] : std::string()) + "/" +
         (component_names.size() > 1 ? component_names[1] : std::string());
}

void MetricDef::check() const {
  const std::size_t want = kind == MetricKind::SimpleAverage ? 1 : 2;
  if (component_names.size() != want) {
    throw DataError(std::string(kind == MetricKind::SimpleAverage ? "simple average" : "ratio") +
                    " metric needs exactly " + std::to_string(want) + " component(s), got " +
                    std::to_string(component_names.size()));
  }
}

// ---------------------------------------------------------------------------
// ExperimentDataset

ExperimentDataset::ExperimentDataset(MetricDef metric, int group_count, int first_period,
                                     int period_count)
    : metric_(std::move(metric)),
      group_count_(group_count),
      first_period_(first_period),
      period_count_(period_count) {
  metric_.check();
  if (group_count_ < 1) throw DataError("dataset needs at least one group");
  if (period_count_ < 1) throw DataError("dataset needs at least one period");
  if (first_period_ != 0 && first_period_ != 1) {
    throw DataError("period labels must start at 0 (pre-experiment) or 1, got " +
                    std::to_string(first_period_));
  }
}

std::uint32_t ExperimentDataset::add_user(std::string id, int group) {
  if (group < 0 || group >= group_count_) {
    throw DataError("group " + std::to_string(group) + " outside 0.." +
                    std::to_string(group_count_ - 1));
  }
  const auto index = static_cast<std::uint32_t>(ids_.size());
  ids_.push_back(std::move(id));
  groups_.push_back(group);
  present_.resize(present_.size() + static_cast<std::size_t>(period_count_), 0);
  values_.resize(values_.size() + static_cast<std::size_t>(period_count_) * metric_.component_count(),
                 0.0);
  return index;
}

std::size_t ExperimentDataset::slot(std::uint32_t user, int period) const {
  if (user >= ids_.size()) throw std::out_of_range("user index out of range");
  if (period < first_period_ || period > last_period()) {
    throw DataError("period " + std::to_string(period) + " outside " +
                    std::to_string(first_period_) + ".." + std::to_string(last_period()));
  }
  return static_cast<std::size_t>(user) * static_cast<std::size_t>(period_count_) +
         static_cast<std::size_t>(period - first_period_);
}

void ExperimentDataset::set_observation(std::uint32_t user, int period,
                                        std::span<const double> components) {
  if (components.size() != metric_.component_count()) {
    throw DataError("expected " + std::to_string(metric_.component_count()) +
                    " component(s), got " + std::to_string(components.size()));
  }
  const std::size_t s = slot(user, period);
  present_[s] = 1;
  std::copy(components.begin(), components.end(),
            values_.begin() + static_cast<std::ptrdiff_t>(s * metric_.component_count()));
}

bool ExperimentDataset::present(std::uint32_t user, int period) const {
  return present_[slot(user, period)] != 0;
}

std::span<const double> ExperimentDataset::components(std::uint32_t user, int period) const {
  const std::size_t c = metric_.component_count();
  return {values_.data() + slot(user, period) * c, c};
}

PeriodObservation ExperimentDataset::row(std::size_t i) const {
  const auto p = static_cast<std::size_t>(period_count_);
  const auto user = static_cast<std::uint32_t>(i / p);
  const int period = first_period_ + static_cast<int>(i % p);
  return PeriodObservation{ids_.at(user), user, groups_[user], period, present(user, period),
                           components(user, period)};
}

std::vector<PeriodObservation> ExperimentDataset::user_rows(std::uint32_t user) const {
  std::vector<PeriodObservation> rows;
  rows.reserve(static_cast<std::size_t>(period_count_));
  for (int t = first_period_; t <= last_period(); ++t) {
    rows.push_back({ids_.at(user), user, groups_[user], t, present(user, t), components(user, t)});
  }
  return rows;
}

// ---------------------------------------------------------------------------
// CSV parsing

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::vector<std::string> split_fields(std::string_view line, char delim, std::size_t line_no) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  bool was_quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur += c;
      }
    } else if (c == '"' && trim(cur).empty()) {
      quoted = true;
      was_quoted = true;
      cur.clear();
    } else if (c == delim) {
      out.emplace_back(was_quoted ? cur : std::string(trim(cur)));
      cur.clear();
      was_quoted = false;
    } else {
      cur += c;
    }
  }
  if (quoted) throw DataError("unterminated quoted field", line_no);
  out.emplace_back(was_quoted ? cur : std::string(trim(cur)));
  return out;
}

int parse_int(const std::string& field, const char* what, std::size_t line_no) {
  int v = 0;
  const char* first = field.data();
  const char* last = field.data() + field.size();
  if (first != last && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last || field.empty()) {
    throw DataError(std::string("malformed ") + what + " '" + field + "'", line_no);
  }
  return v;
}

double parse_double(const std::string& field, const std::string& column, std::size_t line_no) {
  double v = 0.0;
  const char* first = field.data();
  const char* last = field.data() + field.size();
  if (first != last && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last || field.empty() || !std::isfinite(v)) {
    throw DataError("malformed numeric value '" + field + "' in column '" + column + "'", line_no);
  }
  return v;
}

std::size_t find_column(const std::vector<std::string>& header, const std::string& name) {
  auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end()) throw DataError("missing column '" + name + "'", 1);
  return static_cast<std::size_t>(it - header.begin());
}

struct RawRow {
  std::uint32_t user;
  int period;
  bool present;
  std::size_t line;
  std::size_t value_offset;
};

}  // namespace

ExperimentDataset parse_dataset(std::istream& source, const CsvSchema& schema) {
  schema.metric.check();
  std::string line;
  std::size_t line_no = 0;

  // Header, skipping leading blank lines.
  std::vector<std::string> header;
  while (std::getline(source, line)) {
    ++line_no;
    if (!trim(line).empty()) {
      if (line_no == 1 && line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) {
        line.erase(0, 3);
      }
      header = split_fields(line, schema.delimiter, line_no);
      break;
    }
  }
  if (header.empty()) throw DataError("empty input: no header row");

  const std::size_t c_user = find_column(header, schema.user_column);
  const std::size_t c_group = find_column(header, schema.group_column);
  const std::size_t c_period = find_column(header, schema.period_column);
  std::optional<std::size_t> c_present;
  if (schema.present_column) c_present = find_column(header, *schema.present_column);
  std::vector<std::size_t> c_values;
  for (const auto& name : schema.metric.component_names) c_values.push_back(find_column(header, name));
  const std::size_t ncomp = c_values.size();

  std::unordered_map<std::string, std::uint32_t> user_index;
  std::vector<std::string> ids;
  std::vector<int> user_group;
  std::vector<RawRow> rows;
  std::vector<double> values;
  std::unordered_set<std::uint64_t> seen;
  int min_period = std::numeric_limits<int>::max();
  int max_period = std::numeric_limits<int>::min();
  int max_group = -1;

  while (std::getline(source, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto fields = split_fields(line, schema.delimiter, line_no);
    if (fields.size() != header.size()) {
      throw DataError("expected " + std::to_string(header.size()) + " fields, got " +
                      std::to_string(fields.size()),
                      line_no);
    }
    const std::string& id = fields[c_user];
    if (id.empty()) throw DataError("empty user id", line_no);
    const int group = parse_int(fields[c_group], "group", line_no);
    const int period = parse_int(fields[c_period], "period", line_no);
    if (group < 0) throw DataError("negative group " + std::to_string(group), line_no);
    if (period < 0) throw DataError("negative period " + std::to_string(period), line_no);
    bool present = true;
    if (c_present) {
      const int flag = parse_int(fields[*c_present], "presence flag", line_no);
      if (flag != 0 && flag != 1) throw DataError("presence flag must be 0 or 1", line_no);
      present = flag == 1;
    }

    auto [it, inserted] = user_index.try_emplace(id, static_cast<std::uint32_t>(ids.size()));
    if (inserted) {
      ids.push_back(id);
      user_group.push_back(group);
    } else if (user_group[it->second] != group) {
      throw DataError("user '" + id + "' observed in groups " +
                      std::to_string(user_group[it->second]) + " and " + std::to_string(group),
                      line_no);
    }
    const std::uint32_t u = it->second;
    const std::uint64_t key = (static_cast<std::uint64_t>(u) << 32) | static_cast<std::uint32_t>(period);
    if (!seen.insert(key).second) {
      throw DataError("duplicate row for user '" + id + "' in period " + std::to_string(period),
                      line_no);
    }

    const std::size_t offset = values.size();
    for (std::size_t k = 0; k < ncomp; ++k) {
      const double v = parse_double(fields[c_values[k]], schema.metric.component_names[k], line_no);
      if (!present && v != 0.0) {
        throw DataError("absent row must carry zero components", line_no);
      }
      values.push_back(v);
    }
    rows.push_back({u, period, present, line_no, offset});
    min_period = std::min(min_period, period);
    max_period = std::max(max_period, period);
    max_group = std::max(max_group, group);
  }
  if (rows.empty()) throw DataError("no data rows");

  const int group_count = schema.group_count.value_or(max_group + 1);
  const int first_period = schema.first_period.value_or(min_period == 0 ? 0 : 1);
  const int period_count = schema.period_count.value_or(max_period - first_period + 1);
  if (max_group >= group_count) {
    throw DataError("group " + std::to_string(max_group) + " exceeds declared group count " +
                    std::to_string(group_count));
  }

  ExperimentDataset ds(schema.metric, group_count, first_period, period_count);
  ds.set_design(schema.design);
  for (std::size_t u = 0; u < ids.size(); ++u) ds.add_user(std::move(ids[u]), user_group[u]);
  for (const auto& r : rows) {
    if (r.period < ds.first_period() || r.period > ds.last_period()) {
      throw DataError("period " + std::to_string(r.period) + " outside declared range " +
                      std::to_string(ds.first_period()) + ".." + std::to_string(ds.last_period()),
                      r.line);
    }
    if (r.present) {
      ds.set_observation(r.user, r.period, std::span<const double>(values.data() + r.value_offset, ncomp));
    }
  }
  return ds;
}

ExperimentDataset parse_dataset_file(const std::filesystem::path& path, const CsvSchema& schema) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  try {
    return parse_dataset(in, schema);
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

void write_csv(std::ostream& out, const ExperimentDataset& ds) {
  const auto& names = ds.metric().component_names;
  out << "user_id,group,period";
  for (const auto& n : names) out << ',' << n;
  out << '\n';
  char buf[32];
  for (std::uint32_t u = 0; u < ds.user_count(); ++u) {
    for (int t = ds.first_period(); t <= ds.last_period(); ++t) {
      if (!ds.present(u, t)) continue;
      out << ds.user_id(u) << ',' << ds.user_group(u) << ',' << t;
      for (double v : ds.components(u, t)) {
        auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
        out << ',' << std::string_view(buf, static_cast<std::size_t>(end - buf));
      }
      out << '\n';
    }
  }
}

// ---------------------------------------------------------------------------
// Validation

ValidationReport validate(const ExperimentDataset& ds, std::optional<DesignKind> design,
                          bool expect_pre_period) {
  ValidationReport rep;
  rep.design = design ? design : ds.design();
  rep.group_sizes.assign(static_cast<std::size_t>(ds.group_count()), 0);
  const auto P = static_cast<std::size_t>(ds.period_count());
  std::vector<std::size_t> present_total(P, 0);
  std::vector<std::vector<std::size_t>> present_group(rep.group_sizes.size(),
                                                      std::vector<std::size_t>(P, 0));
  for (std::uint32_t u = 0; u < ds.user_count(); ++u) {
    const auto g = static_cast<std::size_t>(ds.user_group(u));
    ++rep.group_sizes[g];
    for (std::size_t k = 0; k < P; ++k) {
      if (ds.present(u, ds.first_period() + static_cast<int>(k))) {
        ++present_total[k];
        ++present_group[g][k];
      }
    }
  }
  const double n = static_cast<double>(ds.user_count());
  for (std::size_t k = 0; k < P; ++k) {
    rep.period_labels.push_back(ds.first_period() + static_cast<int>(k));
    rep.presence_rates.push_back(n > 0 ? static_cast<double>(present_total[k]) / n : 0.0);
  }
  for (std::size_t g = 0; g < rep.group_sizes.size(); ++g) {
    std::vector<double> rates;
    for (std::size_t k = 0; k < P; ++k) {
      rates.push_back(rep.group_sizes[g] ? static_cast<double>(present_group[g][k]) /
                                               static_cast<double>(rep.group_sizes[g])
                                         : 0.0);
    }
    rep.presence_by_group.push_back(std::move(rates));
  }

  if (n > 0) {
    const double fair = 1.0 / static_cast<double>(ds.group_count());
    for (std::size_t g = 0; g < rep.group_sizes.size(); ++g) {
      const double share = static_cast<double>(rep.group_sizes[g]) / n;
      if (std::fabs(share - fair) > 0.05) {
        std::ostringstream os;
        os.precision(3);
        os << "group " << g << " holds " << 100.0 * share << "% of users (equal split "
           << 100.0 * fair << "%); imbalance is allowed but worth checking";
        rep.warnings.push_back(os.str());
      }
    }
  }
  for (std::size_t k = 0; k < P; ++k) {
    for (std::size_t g = 0; g < rep.group_sizes.size(); ++g) {
      if (present_group[g][k] == 0) {
        rep.warnings.push_back("group " + std::to_string(g) + " has no present users in period " +
                               std::to_string(rep.period_labels[k]));
      }
    }
  }

  if (rep.design) {
    const DesignShape shape = design_shape(*rep.design);
    const int experiment_periods = ds.last_period() - std::max(ds.first_period(), 1) + 1;
    if (ds.group_count() != shape.groups) {
      rep.nonconformities.push_back(std::string(family_name(*rep.design)) + " expects " +
                                    std::to_string(shape.groups) + " groups, data has " +
                                    std::to_string(ds.group_count()));
    }
    if (shape.uses_total ? experiment_periods < 1 : experiment_periods != shape.experiment_periods) {
      rep.nonconformities.push_back(
          std::string(family_name(*rep.design)) + " expects " +
          (shape.uses_total ? std::string("at least 1") : std::to_string(shape.experiment_periods)) +
          " experiment period(s) labelled from 1, data has " + std::to_string(experiment_periods) +
          " (labels " + std::to_string(ds.first_period()) + ".." + std::to_string(ds.last_period()) +
          ")");
    }
    if ((shape.requires_pre_period || expect_pre_period) && !ds.has_pre_period()) {
      rep.nonconformities.push_back("design needs pre-experiment data in period 0");
    }
    if (shape.additive_only && !ds.metric().additive()) {
      rep.nonconformities.push_back("cumulative design needs an additive (simple average) metric");
    }
    rep.conforms = rep.nonconformities.empty();
  }
  return rep;
}

}  // namespace remex
