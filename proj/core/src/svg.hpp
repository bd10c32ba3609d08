#pragma once

#include <string>
#include <vector>

// Static SVG 1.1 chart rendering for the evaluation report. Deterministic
// output: fixed canvas geometry, shortest-round-trip number formatting.
namespace neurodecode::svg {

struct Series {
  std::vector<double> x, y;
};

// Bar chart of per-session mean CER, bars in input order.
std::string session_bars(const std::vector<std::string>& labels,
                         const std::vector<double>& values);

// Histogram of per-utterance CER values.
std::string cer_histogram(const std::vector<double>& values, int bins);

// Scatter of (length, CER) with the fit line and a +/- one-std band around
// per-bin means.
struct LengthChartInput {
  std::vector<double> lengths, cers;
  std::vector<double> bin_centers, bin_means, bin_stds;
  bool has_fit = false;
  double slope = 0.0, intercept = 0.0;
};
std::string length_vs_cer(const LengthChartInput& input);

}  // namespace neurodecode::svg
