#include <cstdio>
#include <fstream>
#include <stdexcept>

#include "diffinfo/estimators.hpp"

namespace diffinfo {

namespace {

// %.17g round-trips doubles exactly, keeping rerun diffs empty.
std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

void write_report_csv(const EntropyReport& report, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_report_csv: cannot open " + path);
  out << "s,rate,cumulative,stderr\n";
  for (size_t j = 0; j < report.times.size(); ++j) {
    out << format_double(report.times[j]) << ',' << format_double(report.rate[j]) << ','
        << format_double(report.cumulative[j]) << ',' << format_double(report.mc_stderr[j])
        << '\n';
  }
}

void write_report_meta(const EntropyReport& report, const std::string& path) {
  nlohmann::json j;
  j["estimator"] = report.meta.estimator;
  j["n_mc"] = report.meta.n_mc;
  j["seed"] = report.meta.seed;
  j["fields"] = report.meta.fields;
  j["total"] = report.total;
  j["total_stderr"] = report.mc_stderr.empty() ? 0.0 : report.mc_stderr.back();
  j["extra"] = report.meta.extra;
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_report_meta: cannot open " + path);
  out << j.dump(2) << '\n';
}

}  // namespace diffinfo
