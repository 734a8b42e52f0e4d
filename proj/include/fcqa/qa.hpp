#pragma once

#include "fcqa/chase.hpp"
#include "fcqa/closure.hpp"
#include "fcqa/core.hpp"

namespace fcqa {

struct QueryAnalysis {
  std::vector<CQ> components;        // connected components
  std::vector<bool> acyclic;         // Berge-acyclicity per component
  bool all_acyclic = true;
  CQ constant_free;                  // constants replaced by x_c + P_c(x_c)
  std::vector<Fact> added_facts;     // P_c(c) to add to the instance
  std::vector<RelName> added_rels;   // the fresh P_c relations
};

QueryAnalysis analyze_query(const Schema& s, const CQ& q);

bool is_berge_acyclic(const CQ& q);

using Match = std::map<std::string, Elem>;

// Backtracking homomorphism search; identity on constants; exhaustive.
std::optional<Match> find_match(const CQ& q, const Instance& I);

// Match against the lazy chase, truncated at `maxdepth` rounds. Sound and
// complete for the depth-truncated chase: candidate top facts are the base
// facts, round-1 facts, and one representative cone per realized position
// (subtrees are position-determined, so this covers all anchors).
std::optional<Match> find_match_chase(const CQ& q, LazyChase& C, int maxdepth);

struct QaOptions {
  std::optional<int> depth_override;
  bool stability_check = false;
};

struct QaResult {
  bool answer = false;
  bool vacuous = false;   // instance violates the FDs
  int depth_used = 0;
  std::optional<Match> witness;
};

// Unrestricted open-world query answering; q Boolean. Throws InternalError
// when the stability check detects depth sensitivity.
QaResult decide_uqa(const Schema& s, const Instance& I0,
                    const DependencySet& deps, const CQ& q,
                    const QaOptions& opts = {});

// Finite QA = UQA over the finite closure.
QaResult decide_fqa(const Schema& s, const Instance& I0,
                    const DependencySet& deps, const CQ& q,
                    const QaOptions& opts = {});

// Certain answers for a non-Boolean query: assignments of the free variables
// over dom(I0) whose substitution is entailed.
std::set<std::vector<Elem>> certain_answers(const Schema& s,
                                            const Instance& I0,
                                            const DependencySet& deps,
                                            const CQ& q, bool finite,
                                            const QaOptions& opts = {});

// Do all FDs hold on I?
bool satisfies_fds(const Instance& I, const std::set<Fd>& fds);
// First violated dependency, if any.
std::optional<std::string> find_violation(const Instance& I,
                                          const DependencySet& deps);

}  // namespace fcqa
