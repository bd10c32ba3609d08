#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace neurodecode {

// One step of an alignment between a reference and a hypothesis string.
struct EditOp {
  enum class Kind { kMatch, kSubstitute, kInsert, kDelete };
  Kind kind;
  char ref_char = '\0';  // set for match/substitute/delete
  char hyp_char = '\0';  // set for match/substitute/insert
};

using EditScript = std::vector<EditOp>;

struct LevenshteinResult {
  int64_t distance = 0;
  EditScript script;
};

// Unit-cost edit distance with a witnessing script. Ties in the backtrace
// prefer substitution over deletion over insertion, so the scripts (and the
// confusion tallies built from them) are deterministic.
LevenshteinResult levenshtein(const std::string& ref, const std::string& hyp);

// Applies a script to `ref`; used to validate scripts in tests.
std::string apply_edit_script(const std::string& ref, const EditScript& script);

struct CerResult {
  double cer = 0.0;
  int64_t distance = 0;
  bool empty_reference = false;  // CER normalized by 1 and flagged
};

// distance / len(ref); an empty reference yields distance / 1, flagged.
CerResult cer(const std::string& ref, const std::string& hyp);

}  // namespace neurodecode
