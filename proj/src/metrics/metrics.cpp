#include "etmapg/metrics/metrics.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>

#include "etmapg/errors.hpp"

namespace etmapg {

double lyapunov(std::span<const double> state) {
  double v = 0.0;
  for (double x : state) v += x * x;
  return v;
}

std::vector<double> moving_average(std::span<const double> series, std::size_t window) {
  if (window == 0) throw ConfigError("moving average window must be >= 1");
  std::vector<double> out(series.size());
  double running = 0.0;
  for (std::size_t k = 0; k < series.size(); ++k) {
    running += series[k];
    if (k >= window) running -= series[k - window];
    const std::size_t n = std::min(k + 1, window);
    out[k] = running / static_cast<double>(n);
  }
  return out;
}

std::vector<double> moving_avg_trigger(std::span<const int> bits, std::size_t window) {
  if (window == 0) throw ConfigError("moving average window must be >= 1");
  // Integer counts keep the result exact and inside [0, 1].
  std::vector<double> out(bits.size());
  long ones = 0;
  for (std::size_t k = 0; k < bits.size(); ++k) {
    ones += bits[k];
    if (k >= window) ones -= bits[k - window];
    const std::size_t n = std::min(k + 1, window);
    out[k] = static_cast<double>(ones) / static_cast<double>(n);
  }
  return out;
}

double trigger_reduction(std::span<const int> bits, long tt_steps) {
  if (tt_steps <= 0) throw ContractViolation("trigger_reduction: tt_steps must be positive");
  long ones = 0;
  for (int b : bits) ones += b;
  return 1.0 - static_cast<double>(ones) / static_cast<double>(tt_steps);
}

InterEventStats inter_event_stats(std::span<const long> gaps) {
  InterEventStats s;
  if (gaps.empty()) return s;
  s.count = gaps.size();
  s.min = *std::min_element(gaps.begin(), gaps.end());
  s.max = *std::max_element(gaps.begin(), gaps.end());
  double total = 0.0;
  for (long g : gaps) total += static_cast<double>(g);
  s.mean = total / static_cast<double>(gaps.size());
  return s;
}

double increase_fraction(std::span<const double> series, double tolerance) {
  if (series.size() < 2) return 0.0;
  std::size_t up = 0;
  for (std::size_t k = 0; k + 1 < series.size(); ++k) {
    if (series[k + 1] > series[k] + tolerance) ++up;
  }
  return static_cast<double>(up) / static_cast<double>(series.size() - 1);
}

MeanStd mean_std(std::span<const double> values) {
  MeanStd r;
  if (values.empty()) return r;
  for (double v : values) r.mean += v;
  r.mean /= static_cast<double>(values.size());
  double sq = 0.0;
  for (double v : values) sq += (v - r.mean) * (v - r.mean);
  r.std = std::sqrt(sq / static_cast<double>(values.size()));
  return r;
}

CsvWriter::CsvWriter(const std::filesystem::path& path, const std::vector<std::string>& header)
    : out_(path), columns_(header.size()) {
  if (!out_) throw IoError("cannot write " + path.string());
  for (std::size_t i = 0; i < header.size(); ++i) out_ << (i ? "," : "") << header[i];
  out_ << '\n';
}

void CsvWriter::separator() {
  if (in_row_ > 0) out_ << ',';
  ++in_row_;
}

CsvWriter& CsvWriter::field(double v) {
  separator();
  out_ << fmt::format("{}", v);
  return *this;
}

CsvWriter& CsvWriter::field(long v) {
  separator();
  out_ << v;
  return *this;
}

CsvWriter& CsvWriter::field(const std::string& v) {
  separator();
  out_ << v;
  return *this;
}

CsvWriter& CsvWriter::blank() {
  separator();
  return *this;
}

void CsvWriter::end_row() {
  if (in_row_ != columns_) {
    throw ContractViolation("csv row has " + std::to_string(in_row_) + " fields, header has " +
                            std::to_string(columns_));
  }
  out_ << '\n';
  in_row_ = 0;
}

}  // namespace etmapg
