#pragma once

// Certification records, certified-accuracy curves, the best-of-sigma
// envelope and report emission (CSV, JSON, text table).

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "certsmooth/config.hpp"
#include "certsmooth/smoothing.hpp"

namespace certsmooth {

struct CertRecord {
  Method method = Method::kNoPromptLearning;
  int sample_index = 0;
  int sigma_index = 0;
  double sigma = 0.0;
  int true_label = 0;
  CertifyOutcome outcome;
  int clean_prediction = kAbstain;
  std::optional<double> entropy_before;  // methods with test-time adaptation
  std::optional<double> entropy_after;
  double wall_time_ms = 0.0;
  std::string error;  // non-empty when the sample failed; outcome is then an abstention

  bool certified_at(double radius) const {
    return error.empty() && !outcome.abstained() && outcome.label == true_label &&
           outcome.radius >= radius;
  }
};

/// One JSON object; abstentions carry null label and radius.
nlohmann::ordered_json to_json(const CertRecord& record);
CertRecord record_from_json(const nlohmann::json& doc);

/// Records are ordered by (method, sample_index, sigma_index).
bool record_order(const CertRecord& a, const CertRecord& b);

struct CurvePoint {
  double radius = 0.0;
  double certified_accuracy = 0.0;
  double clean_accuracy = 0.0;
  double sigma_used = 0.0;

  bool operator==(const CurvePoint&) const = default;
};

using Curve = std::vector<CurvePoint>;

/// cert_acc(R) = #{non-abstain, correct, radius >= R} / N. All records must
/// share one sigma.
Curve certified_accuracy_curve(std::span<const CertRecord> records, std::span<const double> radius_grid);

/// Pointwise best certified accuracy over the curves; ties go to the smaller
/// sigma. Curves must share the radius grid.
Curve multi_sigma_envelope(std::span<const Curve> curves);

struct MethodCurves {
  Method method = Method::kNoPromptLearning;
  std::vector<Curve> per_sigma;  // in config sigma order
  Curve envelope;
  std::optional<double> mean_entropy_before;
  std::optional<double> mean_entropy_after;

  bool operator==(const MethodCurves&) const = default;
};

/// Groups records by method (in `methods` order) and sigma.
std::vector<MethodCurves> build_curves(std::span<const CertRecord> records, std::span<const Method> methods,
                                       std::span<const double> sigmas, std::span<const double> radius_grid);

enum class ReportFormat { kCsv, kJson, kText };

ReportFormat parse_report_format(const std::string& name);
std::string extension(ReportFormat format);

inline constexpr const char* kTableCaption = "Certified Accuracy at ℓ2 radius (%)";

/// "(clean)certified" with both values in percent to one decimal.
std::string table_cell(double clean_accuracy, double certified_accuracy);

/// CSV and text use the envelopes; JSON carries envelopes and per-sigma curves.
std::string render_report(std::span<const MethodCurves> curves, ReportFormat format);
/// Per-sigma curves as CSV (sigma_used is the curve's own sigma).
std::string render_per_sigma_csv(std::span<const MethodCurves> curves);
std::vector<MethodCurves> parse_report_json(const std::string& text);

void write_file(const std::filesystem::path& path, const std::string& contents);
void emit_report(std::span<const MethodCurves> curves, ReportFormat format, const std::filesystem::path& path);

}  // namespace certsmooth
