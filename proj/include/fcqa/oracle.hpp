#pragma once

#include <random>

#include "fcqa/qa.hpp"
#include "fcqa/textio.hpp"

namespace fcqa {

struct AuditFailure {
  std::string property;
  std::string counterexample;
};

struct AuditReport {
  std::map<std::string, int> checked;
  std::vector<AuditFailure> failures;
  bool ok() const { return failures.empty(); }
};

// Exhaustive FD pair-check and UID projection-check.
AuditReport verify_model(const Instance& I, const DependencySet& deps);

enum class CqClass { All, Acyclic };

// All connected Boolean constant-free CQs with <= k atoms, one representative
// per isomorphism class (canonical variable relabeling).
std::vector<CQ> enumerate_cqs(const Schema& s, int k, CqClass cls);

// Every enumerated CQ with a match in I must be entailed by (I0, deps).
AuditReport verify_k_sound(const Schema& s, const Instance& I,
                           const Instance& I0, const DependencySet& deps,
                           int k);

// Exhaustive search for a finite superinstance of I0 that satisfies deps and
// violates q, over domains of size <= max_domain. Returns one if found;
// absence is evidence only up to the bound. Throws ResourceError past the
// node budget.
std::optional<Instance> bounded_model_search(const Schema& s,
                                             const Instance& I0,
                                             const DependencySet& deps,
                                             const CQ& q, int max_domain,
                                             long node_budget = 2000000);

// ---------------------------------------------------------------------------
// Random problem generator (CLI `gen`, property suites).

struct GenParams {
  int relations = 2;
  int max_arity = 3;
  int uid_count = 3;
  int fd_count = 2;
  int fact_count = 3;
  int query_count = 1;
  int query_atoms = 2;
  bool finitely_close = true;   // emit the finite closure as the dep set
  bool require_fd_sat = true;   // keep I0 a model of the closure's FDs
  // Resample until the estimated chase breadth stays under this cap.
  long chase_budget = 4000;
};

Problem generate_problem(const GenParams& p, std::uint64_t seed);

}  // namespace fcqa
