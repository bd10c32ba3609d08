#include "neurodecode/evalreport.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>

#include <json.hpp>

#include "neurodecode/csv.hpp"
#include "neurodecode/ctc.hpp"
#include "neurodecode/error.hpp"
#include "svg.hpp"

namespace neurodecode {

namespace fs = std::filesystem;
using nlohmann::json;

const char* category_name(ConfusionEntry::Category c) {
  switch (c) {
    case ConfusionEntry::Category::kDeletionOfBoundary: return "deletion-of-boundary";
    case ConfusionEntry::Category::kInsertionIntoWord: return "insertion-into-word";
    case ConfusionEntry::Category::kOther: return "other";
  }
  return "other";
}

std::string render_symbol(char c, bool present) {
  if (!present) return "-";
  if (c == ' ') return "[SP]";
  return std::string(1, c);
}

UtteranceResult score_utterance(std::string trial_id, int session_id,
                                std::string reference, std::string hypothesis) {
  UtteranceResult r;
  r.trial_id = std::move(trial_id);
  r.session_id = session_id;
  r.reference = std::move(reference);
  r.hypothesis = std::move(hypothesis);
  const CerResult c = cer(r.reference, r.hypothesis);
  r.distance = c.distance;
  r.cer = c.cer;
  r.ref_length = static_cast<int64_t>(r.reference.size());
  r.empty_reference = c.empty_reference;
  return r;
}

std::optional<LinearFit> least_squares_fit(const std::vector<double>& x,
                                           const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) return std::nullopt;
  const double n = static_cast<double>(x.size());
  double sx = 0, sy = 0;
  for (size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
  }
  const double mx = sx / n, my = sy / n;
  double sxx = 0, sxy = 0, syy = 0;
  for (size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0) return std::nullopt;  // degenerate: one distinct length
  LinearFit fit;
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  double ss_res = 0;
  for (size_t i = 0; i < x.size(); ++i) {
    const double pred = fit.intercept + fit.slope * x[i];
    ss_res += (y[i] - pred) * (y[i] - pred);
  }
  fit.r2 = syy > 0.0 ? 1.0 - ss_res / syy : 0.0;
  return fit;
}

namespace {

double percentile(std::vector<double> sorted, double q) {
  if (sorted.empty()) return 0.0;
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const size_t lo = static_cast<size_t>(pos);
  const size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

ConfusionEntry::Category categorize(EditOp::Kind kind, char ref_c, char hyp_c) {
  const bool ref_space = ref_c == ' ';
  const bool hyp_space = hyp_c == ' ';
  switch (kind) {
    case EditOp::Kind::kSubstitute:
      if (ref_space && !hyp_space) return ConfusionEntry::Category::kDeletionOfBoundary;
      if (!ref_space && hyp_space) return ConfusionEntry::Category::kInsertionIntoWord;
      return ConfusionEntry::Category::kOther;
    case EditOp::Kind::kDelete:
      return ref_space ? ConfusionEntry::Category::kDeletionOfBoundary
                       : ConfusionEntry::Category::kOther;
    case EditOp::Kind::kInsert:
      return hyp_space ? ConfusionEntry::Category::kInsertionIntoWord
                       : ConfusionEntry::Category::kOther;
    case EditOp::Kind::kMatch:
      break;
  }
  return ConfusionEntry::Category::kOther;
}

}  // namespace

EvalReport build_report(const std::vector<UtteranceResult>& raw,
                        const std::vector<SessionInfo>& sessions,
                        const ReportOptions& opts) {
  EvalReport report;
  report.utterances = raw;

  // Headline CER statistics.
  std::vector<double> cers;
  double macro_sum = 0.0;
  for (const auto& u : report.utterances) {
    report.total_edits += u.distance;
    report.total_ref_chars += u.ref_length;
    macro_sum += u.cer;
    cers.push_back(u.cer);
  }
  report.micro_cer = report.total_ref_chars > 0
                         ? static_cast<double>(report.total_edits) /
                               static_cast<double>(report.total_ref_chars)
                         : 0.0;
  report.macro_cer = raw.empty() ? 0.0 : macro_sum / static_cast<double>(raw.size());
  std::sort(cers.begin(), cers.end());
  report.median_cer = percentile(cers, 0.5);
  report.iqr_cer = percentile(cers, 0.75) - percentile(cers, 0.25);

  // Per-session means, ordered by date ordinal.
  std::vector<int> order(sessions.size());
  for (size_t i = 0; i < sessions.size(); ++i) order[i] = static_cast<int>(i);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    return sessions[static_cast<size_t>(a)].date_ordinal <
           sessions[static_cast<size_t>(b)].date_ordinal;
  });
  for (int sid : order) {
    SessionSummary s;
    s.session_id = sid;
    s.name = sessions[static_cast<size_t>(sid)].name;
    s.date_ordinal = sessions[static_cast<size_t>(sid)].date_ordinal;
    double sum = 0.0;
    for (const auto& u : report.utterances) {
      if (u.session_id == sid) {
        ++s.count;
        sum += u.cer;
      }
    }
    if (s.count == 0) {
      report.warnings.push_back("session '" + s.name + "' has no utterances; omitted");
      continue;
    }
    s.mean_cer = sum / static_cast<double>(s.count);
    report.sessions.push_back(std::move(s));
  }

  // Length bins and regression; empty references are excluded from both.
  std::vector<double> lengths, len_cers;
  std::map<int64_t, std::vector<double>> bins;
  for (const auto& u : report.utterances) {
    if (u.empty_reference) continue;
    lengths.push_back(static_cast<double>(u.ref_length));
    len_cers.push_back(u.cer);
    bins[u.ref_length / opts.bin_width].push_back(u.cer);
  }
  for (const auto& [bin, values] : bins) {
    LengthBin lb;
    lb.lo = bin * opts.bin_width;
    lb.hi = lb.lo + opts.bin_width;
    lb.count = static_cast<int64_t>(values.size());
    double sum = 0;
    for (double v : values) sum += v;
    lb.mean_cer = sum / static_cast<double>(values.size());
    double var = 0;
    for (double v : values) var += (v - lb.mean_cer) * (v - lb.mean_cer);
    lb.std_cer = std::sqrt(var / static_cast<double>(values.size()));
    report.length_bins.push_back(lb);
  }
  report.fit = least_squares_fit(lengths, len_cers);

  // Confusion tallies from the deterministic edit scripts.
  struct Key {
    EditOp::Kind kind;
    char ref_c, hyp_c;
    bool operator<(const Key& o) const {
      if (ref_c != o.ref_c) return ref_c < o.ref_c;
      if (hyp_c != o.hyp_c) return hyp_c < o.hyp_c;
      return kind < o.kind;
    }
  };
  std::map<Key, int64_t> tally;
  for (const auto& u : report.utterances) {
    const auto script = levenshtein(u.reference, u.hypothesis).script;
    for (const auto& op : script) {
      if (op.kind == EditOp::Kind::kMatch) continue;
      tally[{op.kind, op.ref_char, op.hyp_char}]++;
    }
  }
  std::vector<ConfusionEntry> entries;
  for (const auto& [key, count] : tally) {
    ConfusionEntry e;
    e.kind = key.kind;
    e.ref_char = key.ref_c;
    e.hyp_char = key.hyp_c;
    e.count = count;
    e.category = categorize(key.kind, key.ref_c, key.hyp_c);
    entries.push_back(e);
  }
  std::sort(entries.begin(), entries.end(), [](const ConfusionEntry& a, const ConfusionEntry& b) {
    if (a.count != b.count) return a.count > b.count;
    const auto ra = render_symbol(a.ref_char, a.kind != EditOp::Kind::kInsert);
    const auto rb = render_symbol(b.ref_char, b.kind != EditOp::Kind::kInsert);
    if (ra != rb) return ra < rb;
    const auto ha = render_symbol(a.hyp_char, a.kind != EditOp::Kind::kDelete);
    const auto hb = render_symbol(b.hyp_char, b.kind != EditOp::Kind::kDelete);
    if (ha != hb) return ha < hb;
    return a.kind < b.kind;
  });
  if (opts.top_k_confusions > 0 &&
      static_cast<int64_t>(entries.size()) > opts.top_k_confusions) {
    entries.resize(static_cast<size_t>(opts.top_k_confusions));
  }
  report.confusions = std::move(entries);
  return report;
}

EvalReport evaluate_split_with(
    const std::function<std::string(const TrialRecord&)>& decode, const Dataset& ds,
    Split split, const ReportOptions& opts) {
  std::vector<UtteranceResult> results;
  for (size_t idx : ds.indices_of(split)) {
    const TrialRecord rec = ds.load_trial(idx);
    results.push_back(
        score_utterance(rec.trial_id, rec.session_id, rec.transcript, decode(rec)));
  }
  return build_report(results, ds.manifest().sessions, opts);
}

EvalReport evaluate_split(DecoderModel& model, const Dataset& ds, Split split,
                          const AugmentConfig& acfg, int64_t batch_size,
                          const ReportOptions& opts) {
  NoGradGuard no_grad;
  const int64_t min_frames = model.config().patch_size;
  const BatchPlan plan = make_batches(ds, split, batch_size, nullptr, min_frames);
  RngStream aug_rng(0);

  std::vector<UtteranceResult> results;
  for (const auto& indices : plan.batches) {
    Batch batch = load_batch(ds, indices, model.dtype());
    AugmentedBatch aug = apply_pipeline(batch.features, batch.valid_lengths, acfg,
                                        Mode::kEval, aug_rng, min_frames);
    ForwardResult fwd = model.forward(aug.features, batch.session_ids, aug.valid_lengths,
                                      Mode::kEval);
    const int64_t n = fwd.log_probs.dim(1), v = fwd.log_probs.dim(2);
    for (size_t i = 0; i < indices.size(); ++i) {
      Tensor lp = Tensor::zeros({n, v}, fwd.log_probs.dtype());
      dispatch_dtype(lp.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto src = fwd.log_probs.data<T>();
        auto dst = lp.data<T>();
        std::copy(src.begin() + static_cast<int64_t>(i) * n * v,
                  src.begin() + static_cast<int64_t>(i + 1) * n * v, dst.begin());
      });
      const std::string hyp = greedy_decode(lp, fwd.token_lengths[i]);
      results.push_back(score_utterance(batch.trial_ids[i], batch.session_ids[i],
                                        batch.references[i], hyp));
    }
  }
  EvalReport report = build_report(results, ds.manifest().sessions, opts);
  for (const auto& s : plan.skipped) report.warnings.push_back(s);
  return report;
}

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  if (!out) throw IoError("emit_report: cannot open '" + path.string() + "'");
  out << text;
  if (!out) throw IoError("emit_report: short write to '" + path.string() + "'");
}

}  // namespace

void emit_report(const EvalReport& report, const std::string& out_dir) {
  fs::create_directories(out_dir);

  {
    std::string doc = csv_join({"trial_id", "session_id", "reference", "hypothesis",
                                "ref_length", "edit_distance", "cer", "empty_reference"});
    for (const auto& u : report.utterances) {
      doc += csv_join({u.trial_id, std::to_string(u.session_id), u.reference, u.hypothesis,
                       std::to_string(u.ref_length), std::to_string(u.distance),
                       format_double(u.cer), u.empty_reference ? "1" : "0"});
    }
    write_text(fs::path(out_dir) / "utterances.csv", doc);
  }
  {
    std::string doc =
        csv_join({"session_id", "name", "date_ordinal", "n_utterances", "mean_cer"});
    for (const auto& s : report.sessions) {
      doc += csv_join({std::to_string(s.session_id), s.name, std::to_string(s.date_ordinal),
                       std::to_string(s.count), format_double(s.mean_cer)});
    }
    write_text(fs::path(out_dir) / "sessions.csv", doc);
  }
  {
    std::string doc = csv_join({"bin_lo", "bin_hi", "count", "mean_cer", "std_cer"});
    for (const auto& b : report.length_bins) {
      doc += csv_join({std::to_string(b.lo), std::to_string(b.hi), std::to_string(b.count),
                       format_double(b.mean_cer), format_double(b.std_cer)});
    }
    write_text(fs::path(out_dir) / "length_bins.csv", doc);
  }
  {
    std::string doc = csv_join({"rank", "kind", "ref", "hyp", "category", "count"});
    int64_t rank = 1;
    for (const auto& e : report.confusions) {
      const char* kind = e.kind == EditOp::Kind::kSubstitute ? "substitution"
                         : e.kind == EditOp::Kind::kInsert   ? "insertion"
                                                             : "deletion";
      doc += csv_join({std::to_string(rank++), kind,
                       render_symbol(e.ref_char, e.kind != EditOp::Kind::kInsert),
                       render_symbol(e.hyp_char, e.kind != EditOp::Kind::kDelete),
                       category_name(e.category), std::to_string(e.count)});
    }
    write_text(fs::path(out_dir) / "confusions.csv", doc);
  }

  {
    json summary;
    summary["n_utterances"] = report.utterances.size();
    summary["micro_cer"] = report.micro_cer;
    summary["macro_cer"] = report.macro_cer;
    summary["median_cer"] = report.median_cer;
    summary["iqr_cer"] = report.iqr_cer;
    summary["total_edits"] = report.total_edits;
    summary["total_ref_chars"] = report.total_ref_chars;
    summary["averaging"] =
        "micro_cer = total_edits / total_ref_chars (headline); macro_cer = mean "
        "per-utterance CER; both reported because either convention is defensible";
    if (report.fit) {
      summary["length_fit"] = {{"slope", report.fit->slope},
                               {"intercept", report.fit->intercept},
                               {"r2", report.fit->r2}};
    } else {
      summary["length_fit"] = nullptr;
    }
    json jw = json::array();
    for (const auto& w : report.warnings) jw.push_back(w);
    summary["warnings"] = jw;
    write_text(fs::path(out_dir) / "summary.json", summary.dump(2) + "\n");
  }

  {  // charts
    std::vector<std::string> labels;
    std::vector<double> values;
    for (const auto& s : report.sessions) {
      labels.push_back(s.name);
      values.push_back(s.mean_cer);
    }
    write_text(fs::path(out_dir) / "session_cer.svg", svg::session_bars(labels, values));

    std::vector<double> cers;
    for (const auto& u : report.utterances) cers.push_back(u.cer);
    write_text(fs::path(out_dir) / "cer_hist.svg", svg::cer_histogram(cers, 20));

    svg::LengthChartInput chart;
    for (const auto& u : report.utterances) {
      if (u.empty_reference) continue;
      chart.lengths.push_back(static_cast<double>(u.ref_length));
      chart.cers.push_back(u.cer);
    }
    for (const auto& b : report.length_bins) {
      chart.bin_centers.push_back(static_cast<double>(b.lo + b.hi) / 2.0);
      chart.bin_means.push_back(b.mean_cer);
      chart.bin_stds.push_back(b.std_cer);
    }
    if (report.fit) {
      chart.has_fit = true;
      chart.slope = report.fit->slope;
      chart.intercept = report.fit->intercept;
    }
    write_text(fs::path(out_dir) / "cer_by_length.svg", svg::length_vs_cer(chart));
  }
}

}  // namespace neurodecode
