#include "ddtr/report.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace ddtr {

using nlohmann::json;

namespace {

std::string format_value(const MetricValue& v) { return v ? format_number(*v) : "NA"; }

std::string join_levels(const std::vector<int>& levels) {
  std::string s;
  for (std::size_t i = 0; i < levels.size(); ++i) {
    if (i) s += ';';
    s += std::to_string(levels[i]);
  }
  return s;
}

json metrics_json(const MetricValues& m) {
  json j = json::object();
  const auto names = MetricValues::names();
  const auto values = m.as_list();
  for (std::size_t i = 0; i < names.size(); ++i) j[names[i]] = values[i] ? json(*values[i]) : json(nullptr);
  return j;
}

MetricValues metrics_from_json(const json& j) {
  const auto& names = MetricValues::names();
  std::vector<MetricValue> v;
  for (const auto& n : names) {
    if (!j.contains(n)) throw ConfigError("report: metric entry lacks \"" + n + "\"");
    const json& e = j.at(n);
    v.push_back(e.is_null() ? MetricValue{} : MetricValue{e.get<double>()});
  }
  return MetricValues{v[0], v[1], v[2], v[3], v[4]};
}

void write_text(const std::filesystem::path& file, const std::string& text) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + file.string());
  out << text;
  if (!out) throw std::runtime_error("failed writing " + file.string());
}

}  // namespace

std::string format_number(double v) {
  if (std::isnan(v)) return "NA";
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::vector<std::string> csv_header() {
  std::vector<std::string> h{"axis",        "label",       "x",    "digest", "resolution_scale", "encoder_layers",
                             "feature_levels", "num_queries", "query_init", "ibbr", "seeds"};
  for (const auto& n : MetricValues::names()) {
    h.push_back(n + "_mean");
    h.push_back(n + "_sd");
  }
  for (const char* c : {"params", "madds", "seconds"}) h.emplace_back(c);
  return h;
}

std::string rows_to_csv(const std::vector<ResultRow>& rows) {
  std::ostringstream os;
  const auto header = csv_header();
  for (std::size_t i = 0; i < header.size(); ++i) os << (i ? "," : "") << header[i];
  os << '\n';
  for (const auto& r : rows) {
    const ModelConfig& m = r.config.model;
    os << r.axis << ',' << r.label << ',' << format_number(r.x) << ',' << r.digest << ','
       << format_number(m.resolution_scale) << ',' << m.encoder_layers << ',' << join_levels(m.feature_levels) << ','
       << m.num_queries << ',' << to_string(m.query_init) << ',' << (m.ibbr ? "true" : "false") << ','
       << r.per_seed.size();
    const auto mean = r.report.mean.as_list();
    const auto sd = r.report.sd.as_list();
    for (std::size_t i = 0; i < mean.size(); ++i) os << ',' << format_value(mean[i]) << ',' << format_value(sd[i]);
    os << ',' << r.params << ',' << r.madds << ',' << format_number(r.seconds) << '\n';
  }
  return os.str();
}

std::string rows_to_json(const std::vector<ResultRow>& rows) {
  json arr = json::array();
  for (const auto& r : rows) {
    json per_seed = json::array();
    for (const auto& s : r.per_seed) per_seed.push_back(metrics_json(s));
    arr.push_back({{"axis", r.axis},
                   {"label", r.label},
                   {"x", r.x},
                   {"digest", r.digest},
                   {"config", json::parse(config_to_json(r.config))},
                   {"per_seed", per_seed},
                   {"mean", metrics_json(r.report.mean)},
                   {"sd", metrics_json(r.report.sd)},
                   {"params", r.params},
                   {"madds", r.madds},
                   {"seconds", r.seconds}});
  }
  return arr.dump(2) + "\n";
}

std::vector<ResultRow> rows_from_json(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("report: rows are not valid JSON: ") + e.what());
  }
  if (!doc.is_array()) throw ConfigError("report: expected a JSON array of rows");
  std::vector<ResultRow> rows;
  for (const auto& j : doc) {
    try {
      ResultRow r;
      r.axis = j.at("axis").get<std::string>();
      r.label = j.at("label").get<std::string>();
      r.x = j.at("x").get<double>();
      r.digest = j.at("digest").get<std::string>();
      r.config = parse_config(j.at("config").dump());
      for (const auto& s : j.at("per_seed")) r.per_seed.push_back(metrics_from_json(s));
      r.report.per_seed = r.per_seed;
      r.report.mean = metrics_from_json(j.at("mean"));
      r.report.sd = metrics_from_json(j.at("sd"));
      r.params = j.at("params").get<std::size_t>();
      r.madds = j.at("madds").get<std::size_t>();
      r.seconds = j.at("seconds").get<double>();
      rows.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw ConfigError(std::string("report: malformed row: ") + e.what());
    }
  }
  return rows;
}

std::map<std::string, std::string> plot_files(const std::vector<ResultRow>& rows) {
  std::map<std::string, std::string> files;
  const auto& names = MetricValues::names();
  for (const auto& r : rows) {
    const auto mean = r.report.mean.as_list();
    const auto sd = r.report.sd.as_list();
    for (std::size_t i = 0; i < names.size(); ++i) {
      std::string& f = files[r.axis + "_" + names[i] + ".dat"];
      if (f.empty()) f = "# x mean sd (" + r.axis + ", " + names[i] + ")\n";
      f += format_number(r.x) + ' ' + format_value(mean[i]) + ' ' + format_value(sd[i]) + '\n';
    }
  }
  return files;
}

void write_report(const std::vector<ResultRow>& rows, const std::filesystem::path& directory) {
  if (rows.empty()) throw ConfigError("report: no rows");
  std::filesystem::create_directories(directory / "plots");
  write_text(directory / "results.csv", rows_to_csv(rows));
  write_text(directory / "results.json", rows_to_json(rows));
  for (const auto& [name, text] : plot_files(rows)) write_text(directory / "plots" / name, text);
}

}  // namespace ddtr
