#pragma once

#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

namespace etmapg {

// Quadratic Lyapunov function V(x) = sum x_i^2.
double lyapunov(std::span<const double> state);

// Element k is the mean of bits[max(0, k - window + 1) .. k].
std::vector<double> moving_avg_trigger(std::span<const int> bits, std::size_t window);
// Same trailing window over a real-valued series.
std::vector<double> moving_average(std::span<const double> series, std::size_t window);

// 1 - (#ones) / tt_steps: the fraction of time-triggered decisions saved.
double trigger_reduction(std::span<const int> bits, long tt_steps);

struct InterEventStats {
  std::size_t count = 0;
  long min = 0;
  double mean = 0.0;
  long max = 0;
};
InterEventStats inter_event_stats(std::span<const long> gaps);

// Fraction of consecutive pairs (s[k], s[k+1]) with s[k+1] > s[k] + tolerance.
double increase_fraction(std::span<const double> series, double tolerance = 0.0);

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
};
// Population standard deviation.
MeanStd mean_std(std::span<const double> values);

// Comma-separated writer with a fixed header. Reals are written in shortest
// round-trip form, so output bytes depend only on the values.
class CsvWriter {
 public:
  CsvWriter(const std::filesystem::path& path, const std::vector<std::string>& header);

  CsvWriter& field(double v);
  CsvWriter& field(long v);
  CsvWriter& field(int v) { return field(static_cast<long>(v)); }
  CsvWriter& field(std::size_t v) { return field(static_cast<long>(v)); }
  CsvWriter& field(const std::string& v);
  CsvWriter& blank();
  void end_row();

 private:
  void separator();

  std::ofstream out_;
  std::size_t columns_;
  std::size_t in_row_ = 0;
};

}  // namespace etmapg
