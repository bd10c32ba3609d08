#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "neurodecode/augment.hpp"
#include "neurodecode/dataio.hpp"
#include "neurodecode/editdist.hpp"
#include "neurodecode/model.hpp"

namespace neurodecode {

struct UtteranceResult {
  std::string trial_id;
  int session_id = 0;
  std::string reference;
  std::string hypothesis;
  int64_t distance = 0;
  double cer = 0.0;
  int64_t ref_length = 0;
  bool empty_reference = false;
};

struct ConfusionEntry {
  enum class Category { kDeletionOfBoundary, kInsertionIntoWord, kOther };
  EditOp::Kind kind = EditOp::Kind::kSubstitute;  // substitute/insert/delete
  char ref_char = '\0';
  char hyp_char = '\0';
  int64_t count = 0;
  Category category = Category::kOther;
};

const char* category_name(ConfusionEntry::Category c);
// Space renders as [SP]; insertion/deletion sides render as "-".
std::string render_symbol(char c, bool present);

struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
};

struct LengthBin {
  int64_t lo = 0, hi = 0;  // [lo, hi)
  int64_t count = 0;
  double mean_cer = 0.0;
  double std_cer = 0.0;
};

struct SessionSummary {
  int session_id = 0;
  std::string name;
  int64_t date_ordinal = 0;
  int64_t count = 0;
  double mean_cer = 0.0;
};

struct EvalReport {
  std::vector<UtteranceResult> utterances;
  std::vector<SessionSummary> sessions;  // ordered by date ordinal
  std::vector<LengthBin> length_bins;
  std::optional<LinearFit> fit;          // absent when lengths are degenerate
  std::vector<ConfusionEntry> confusions;
  double micro_cer = 0.0;   // total edits / total reference characters
  double macro_cer = 0.0;   // mean of per-utterance CER
  double median_cer = 0.0;
  double iqr_cer = 0.0;
  int64_t total_edits = 0;
  int64_t total_ref_chars = 0;
  std::vector<std::string> warnings;
};

struct ReportOptions {
  int64_t bin_width = 5;
  int64_t top_k_confusions = 10;
};

// Aggregates decoded pairs into the full report (CER statistics, per-session
// means, length regression, ranked confusions). Pure and deterministic.
EvalReport build_report(const std::vector<UtteranceResult>& raw,
                        const std::vector<SessionInfo>& sessions,
                        const ReportOptions& opts = {});

// Scores one utterance (edit distance, CER, empty-reference flag).
UtteranceResult score_utterance(std::string trial_id, int session_id,
                                std::string reference, std::string hypothesis);

// Decodes every trial of a split with the model (greedy, smoothing-only
// pipeline) and builds the report.
EvalReport evaluate_split(DecoderModel& model, const Dataset& ds, Split split,
                          const AugmentConfig& acfg, int64_t batch_size,
                          const ReportOptions& opts = {});

// Stub-friendly variant: `decode` maps a trial to its hypothesis text.
EvalReport evaluate_split_with(
    const std::function<std::string(const TrialRecord&)>& decode, const Dataset& ds,
    Split split, const ReportOptions& opts = {});

// Least-squares fit of y on x with the standard R^2; nullopt when x is
// degenerate (fewer than 2 distinct values).
std::optional<LinearFit> least_squares_fit(const std::vector<double>& x,
                                           const std::vector<double>& y);

// Writes utterances.csv, sessions.csv, length_bins.csv, confusions.csv,
// summary.json and the three SVG charts into out_dir.
void emit_report(const EvalReport& report, const std::string& out_dir);

}  // namespace neurodecode
