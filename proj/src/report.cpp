#include "certsmooth/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

namespace certsmooth {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

std::string fixed(double value, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, value);
  return buf;
}

std::string shortest(double value) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", value);
  for (int digits = 1; digits <= 17; ++digits) {
    char candidate[64];
    std::snprintf(candidate, sizeof candidate, "%.*g", digits, value);
    if (std::strtod(candidate, nullptr) == value) return candidate;
  }
  return buf;
}

ordered_json curve_json(const Curve& curve) {
  ordered_json out = ordered_json::array();
  for (const auto& p : curve) {
    out.push_back({{"radius", p.radius},
                   {"certified_acc", p.certified_accuracy},
                   {"clean_acc", p.clean_accuracy},
                   {"sigma_used", p.sigma_used}});
  }
  return out;
}

Curve curve_from_json(const json& doc) {
  Curve curve;
  for (const auto& p : doc) {
    curve.push_back({p.at("radius").get<double>(), p.at("certified_acc").get<double>(),
                     p.at("clean_acc").get<double>(), p.at("sigma_used").get<double>()});
  }
  return curve;
}

std::optional<double> optional_number(const json& doc, const char* key) {
  if (!doc.contains(key) || doc.at(key).is_null()) return std::nullopt;
  return doc.at(key).get<double>();
}

std::optional<double> mean_of(const std::vector<double>& values) {
  if (values.empty()) return std::nullopt;
  double sum = 0.0;
  for (double v : values) sum += v;
  return sum / static_cast<double>(values.size());
}

}  // namespace

ordered_json to_json(const CertRecord& r) {
  ordered_json doc;
  doc["method"] = to_string(r.method);
  doc["sample_index"] = r.sample_index;
  doc["sigma_index"] = r.sigma_index;
  doc["sigma"] = r.sigma;
  doc["true_label"] = r.true_label;
  if (r.outcome.abstained()) {
    doc["label"] = nullptr;
    doc["radius"] = nullptr;
  } else {
    doc["label"] = r.outcome.label;
    doc["radius"] = r.outcome.radius;
  }
  doc["pa_lower"] = r.outcome.pa_lower;
  doc["counts"] = r.outcome.counts;
  doc["clean_prediction"] = r.clean_prediction;
  doc["entropy_before"] = r.entropy_before ? ordered_json(*r.entropy_before) : ordered_json(nullptr);
  doc["entropy_after"] = r.entropy_after ? ordered_json(*r.entropy_after) : ordered_json(nullptr);
  doc["wall_time_ms"] = r.wall_time_ms;
  doc["error"] = r.error.empty() ? ordered_json(nullptr) : ordered_json(r.error);
  return doc;
}

CertRecord record_from_json(const json& doc) {
  CertRecord r;
  r.method = parse_method(doc.at("method").get<std::string>());
  r.sample_index = doc.at("sample_index").get<int>();
  r.sigma_index = doc.at("sigma_index").get<int>();
  r.sigma = doc.at("sigma").get<double>();
  r.true_label = doc.at("true_label").get<int>();
  if (doc.at("label").is_null()) {
    r.outcome.label = kAbstain;
    r.outcome.radius = 0.0;
  } else {
    r.outcome.label = doc.at("label").get<int>();
    r.outcome.radius = doc.at("radius").get<double>();
  }
  r.outcome.pa_lower = doc.at("pa_lower").get<double>();
  r.outcome.counts = doc.at("counts").get<Counts>();
  r.clean_prediction = doc.at("clean_prediction").get<int>();
  r.entropy_before = optional_number(doc, "entropy_before");
  r.entropy_after = optional_number(doc, "entropy_after");
  r.wall_time_ms = doc.at("wall_time_ms").get<double>();
  if (!doc.at("error").is_null()) r.error = doc.at("error").get<std::string>();
  return r;
}

bool record_order(const CertRecord& a, const CertRecord& b) {
  return std::tuple(static_cast<int>(a.method), a.sample_index, a.sigma_index) <
         std::tuple(static_cast<int>(b.method), b.sample_index, b.sigma_index);
}

Curve certified_accuracy_curve(std::span<const CertRecord> records, std::span<const double> radius_grid) {
  if (records.empty()) throw std::invalid_argument("certified_accuracy_curve: no records");
  if (radius_grid.empty()) throw std::invalid_argument("certified_accuracy_curve: empty radius grid");
  const double sigma = records.front().sigma;
  std::int64_t clean = 0;
  for (const auto& r : records) {
    if (r.sigma != sigma) throw std::invalid_argument("certified_accuracy_curve: records mix several sigmas");
    if (r.error.empty() && r.clean_prediction == r.true_label) ++clean;
  }
  const double total = static_cast<double>(records.size());
  Curve curve;
  for (double radius : radius_grid) {
    std::int64_t certified = 0;
    for (const auto& r : records) certified += r.certified_at(radius) ? 1 : 0;
    curve.push_back({radius, static_cast<double>(certified) / total, static_cast<double>(clean) / total, sigma});
  }
  return curve;
}

Curve multi_sigma_envelope(std::span<const Curve> curves) {
  if (curves.empty()) throw std::invalid_argument("multi_sigma_envelope: no curves");
  const Curve& first = curves.front();
  for (const auto& c : curves) {
    if (c.size() != first.size()) throw std::invalid_argument("multi_sigma_envelope: radius grids differ");
    for (std::size_t i = 0; i < c.size(); ++i) {
      if (c[i].radius != first[i].radius) throw std::invalid_argument("multi_sigma_envelope: radius grids differ");
    }
  }
  Curve envelope;
  for (std::size_t i = 0; i < first.size(); ++i) {
    const CurvePoint* best = &curves.front()[i];
    for (const auto& c : curves) {
      const auto& p = c[i];
      if (p.certified_accuracy > best->certified_accuracy ||
          (p.certified_accuracy == best->certified_accuracy && p.sigma_used < best->sigma_used)) {
        best = &p;
      }
    }
    envelope.push_back(*best);
  }
  return envelope;
}

std::vector<MethodCurves> build_curves(std::span<const CertRecord> records, std::span<const Method> methods,
                                       std::span<const double> sigmas, std::span<const double> radius_grid) {
  std::vector<MethodCurves> out;
  for (Method method : methods) {
    MethodCurves mc;
    mc.method = method;
    std::vector<double> before, after;
    for (std::size_t s = 0; s < sigmas.size(); ++s) {
      std::vector<CertRecord> subset;
      for (const auto& r : records) {
        if (r.method == method && r.sigma_index == static_cast<int>(s)) subset.push_back(r);
      }
      if (subset.empty()) {
        throw std::invalid_argument("build_curves: no records for method " + to_string(method) + " at sigma " +
                                    shortest(sigmas[s]));
      }
      mc.per_sigma.push_back(certified_accuracy_curve(subset, radius_grid));
      if (s == 0) {
        for (const auto& r : subset) {
          if (r.entropy_before) before.push_back(*r.entropy_before);
          if (r.entropy_after) after.push_back(*r.entropy_after);
        }
      }
    }
    mc.envelope = multi_sigma_envelope(mc.per_sigma);
    mc.mean_entropy_before = mean_of(before);
    mc.mean_entropy_after = mean_of(after);
    out.push_back(std::move(mc));
  }
  return out;
}

ReportFormat parse_report_format(const std::string& name) {
  if (name == "csv") return ReportFormat::kCsv;
  if (name == "json") return ReportFormat::kJson;
  if (name == "text") return ReportFormat::kText;
  throw ConfigError("unknown report format \"" + name + "\"");
}

std::string extension(ReportFormat format) {
  switch (format) {
    case ReportFormat::kCsv: return ".csv";
    case ReportFormat::kJson: return ".json";
    case ReportFormat::kText: return ".txt";
  }
  return "";
}

std::string table_cell(double clean_accuracy, double certified_accuracy) {
  return "(" + fixed(100.0 * clean_accuracy, 1) + ")" + fixed(100.0 * certified_accuracy, 1);
}

namespace {

std::string render_csv(std::span<const MethodCurves> curves, bool per_sigma) {
  std::ostringstream out;
  out << "method,sigma_used,radius,certified_acc,clean_acc\n";
  auto rows = [&](const MethodCurves& mc, const Curve& curve) {
    for (const auto& p : curve) {
      out << to_string(mc.method) << ',' << shortest(p.sigma_used) << ',' << shortest(p.radius) << ','
          << fixed(p.certified_accuracy, 6) << ',' << fixed(p.clean_accuracy, 6) << '\n';
    }
  };
  for (const auto& mc : curves) {
    if (per_sigma) {
      for (const auto& c : mc.per_sigma) rows(mc, c);
    } else {
      rows(mc, mc.envelope);
    }
  }
  return out.str();
}

std::string render_json(std::span<const MethodCurves> curves) {
  ordered_json doc;
  doc["caption"] = kTableCaption;
  ordered_json methods = ordered_json::array();
  for (const auto& mc : curves) {
    ordered_json m;
    m["method"] = to_string(mc.method);
    m["display_name"] = display_name(mc.method);
    m["envelope"] = curve_json(mc.envelope);
    ordered_json per = ordered_json::array();
    for (const auto& c : mc.per_sigma) per.push_back(curve_json(c));
    m["per_sigma"] = per;
    m["mean_entropy_before"] = mc.mean_entropy_before ? ordered_json(*mc.mean_entropy_before) : ordered_json(nullptr);
    m["mean_entropy_after"] = mc.mean_entropy_after ? ordered_json(*mc.mean_entropy_after) : ordered_json(nullptr);
    methods.push_back(m);
  }
  doc["methods"] = methods;
  return doc.dump(2) + "\n";
}

// Display width in code points, enough for the ASCII-plus-caption content here.
std::size_t width(const std::string& s) {
  std::size_t n = 0;
  for (unsigned char c : s) n += (c & 0xC0) != 0x80;
  return n;
}

std::string pad(const std::string& s, std::size_t w) { return s + std::string(w - std::min(w, width(s)), ' '); }

std::string render_text(std::span<const MethodCurves> curves) {
  if (curves.empty()) throw std::invalid_argument("render_report: no curves");
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> header{"Method"};
  for (const auto& p : curves.front().envelope) header.push_back("R=" + fixed(p.radius, 2));
  rows.push_back(header);
  for (const auto& mc : curves) {
    std::vector<std::string> row{display_name(mc.method)};
    for (const auto& p : mc.envelope) row.push_back(table_cell(p.clean_accuracy, p.certified_accuracy));
    rows.push_back(row);
  }
  std::vector<std::size_t> widths(header.size(), 0);
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < row.size(); ++i) widths[i] = std::max(widths[i], width(row[i]));
  }
  std::ostringstream out;
  out << kTableCaption << "\n";
  auto line = [&](const std::vector<std::string>& row) {
    std::string text;
    for (std::size_t i = 0; i < row.size(); ++i) text += (i ? " | " : "") + pad(row[i], widths[i]);
    while (!text.empty() && text.back() == ' ') text.pop_back();
    out << text << "\n";
  };
  line(rows.front());
  std::string rule;
  for (std::size_t i = 0; i < widths.size(); ++i) rule += (i ? "-|-" : "") + std::string(widths[i], '-');
  out << rule << "\n";
  for (std::size_t r = 1; r < rows.size(); ++r) line(rows[r]);
  out << "Cells: (clean accuracy)certified accuracy, best sigma per radius.\n";
  return out.str();
}

}  // namespace

std::string render_report(std::span<const MethodCurves> curves, ReportFormat format) {
  if (curves.empty()) throw std::invalid_argument("render_report: no curves");
  switch (format) {
    case ReportFormat::kCsv: return render_csv(curves, false);
    case ReportFormat::kJson: return render_json(curves);
    case ReportFormat::kText: return render_text(curves);
  }
  return {};
}

std::string render_per_sigma_csv(std::span<const MethodCurves> curves) { return render_csv(curves, true); }

std::vector<MethodCurves> parse_report_json(const std::string& text) {
  const json doc = json::parse(text);
  std::vector<MethodCurves> out;
  for (const auto& m : doc.at("methods")) {
    MethodCurves mc;
    mc.method = parse_method(m.at("method").get<std::string>());
    mc.envelope = curve_from_json(m.at("envelope"));
    for (const auto& c : m.at("per_sigma")) mc.per_sigma.push_back(curve_from_json(c));
    mc.mean_entropy_before = optional_number(m, "mean_entropy_before");
    mc.mean_entropy_after = optional_number(m, "mean_entropy_after");
    out.push_back(std::move(mc));
  }
  return out;
}

void write_file(const std::filesystem::path& path, const std::string& contents) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << contents;
  out.close();
  if (!out) throw std::runtime_error("error while writing " + path.string());
}

void emit_report(std::span<const MethodCurves> curves, ReportFormat format, const std::filesystem::path& path) {
  write_file(path, render_report(curves, format));
}

}  // namespace certsmooth
