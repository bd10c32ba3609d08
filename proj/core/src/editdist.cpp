#include "neurodecode/editdist.hpp"

#include <algorithm>

namespace neurodecode {

LevenshteinResult levenshtein(const std::string& ref, const std::string& hyp) {
  const size_t n = ref.size(), m = hyp.size();
  std::vector<int64_t> dp((n + 1) * (m + 1));
  auto at = [&](size_t i, size_t j) -> int64_t& { return dp[i * (m + 1) + j]; };
  for (size_t i = 0; i <= n; ++i) at(i, 0) = static_cast<int64_t>(i);
  for (size_t j = 0; j <= m; ++j) at(0, j) = static_cast<int64_t>(j);
  for (size_t i = 1; i <= n; ++i) {
    for (size_t j = 1; j <= m; ++j) {
      const int64_t sub = at(i - 1, j - 1) + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
      const int64_t del = at(i - 1, j) + 1;
      const int64_t ins = at(i, j - 1) + 1;
      at(i, j) = std::min({sub, del, ins});
    }
  }

  LevenshteinResult result;
  result.distance = at(n, m);

  // Backtrace; on cost ties prefer substitution, then deletion, then insertion.
  EditScript reversed;
  size_t i = n, j = m;
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0 &&
        at(i, j) == at(i - 1, j - 1) + (ref[i - 1] == hyp[j - 1] ? 0 : 1)) {
      reversed.push_back({ref[i - 1] == hyp[j - 1] ? EditOp::Kind::kMatch
                                                   : EditOp::Kind::kSubstitute,
                          ref[i - 1], hyp[j - 1]});
      --i;
      --j;
    } else if (i > 0 && at(i, j) == at(i - 1, j) + 1) {
      reversed.push_back({EditOp::Kind::kDelete, ref[i - 1], '\0'});
      --i;
    } else {
      reversed.push_back({EditOp::Kind::kInsert, '\0', hyp[j - 1]});
      --j;
    }
  }
  result.script.assign(reversed.rbegin(), reversed.rend());
  return result;
}

std::string apply_edit_script(const std::string& ref, const EditScript& script) {
  std::string out;
  size_t i = 0;
  for (const EditOp& op : script) {
    switch (op.kind) {
      case EditOp::Kind::kMatch:
        out.push_back(ref[i++]);
        break;
      case EditOp::Kind::kSubstitute:
        out.push_back(op.hyp_char);
        ++i;
        break;
      case EditOp::Kind::kInsert:
        out.push_back(op.hyp_char);
        break;
      case EditOp::Kind::kDelete:
        ++i;
        break;
    }
  }
  return out;
}

CerResult cer(const std::string& ref, const std::string& hyp) {
  CerResult r;
  r.distance = levenshtein(ref, hyp).distance;
  if (ref.empty()) {
    r.empty_reference = true;
    r.cer = static_cast<double>(r.distance);
  } else {
    r.cer = static_cast<double>(r.distance) / static_cast<double>(ref.size());
  }
  return r;
}

}  // namespace neurodecode
