#pragma once

#include "fcqa/chase.hpp"
#include "fcqa/core.hpp"

namespace fcqa {

// (I,a) <=_n (I',b) per the standard fixpoint refinement.
bool bounded_sim_leq(const Instance& I, const Elem& a, const Instance& Iprime,
                     const Elem& b, int n);

// Blocks of ~=_k (mutual k-bounded simulation); block ids are dense and
// assigned in element order.
std::map<Elem, int> simeq_classes(const Instance& I, int k);

// Quotient by a partition (element -> block id); classes are named after
// their lexicographically smallest member, so singletons keep their name.
std::pair<Instance, std::map<Elem, Elem>> quotient(
    const Instance& I, const std::map<Elem, int>& partition);

struct SimCertificate {
  int k = 0;
  std::map<Elem, Elem> cov;  // source element -> target element
};

bool validate_certificate(const Instance& source, const Instance& target,
                          const SimCertificate& cert);

struct FactClassInfo {
  Position exported;
  std::vector<int> classes;  // ~=_k class ids, indexed by position
  int achiever = -1;         // earliest achieving fact (index into prefix)
};

// Achieved fact classes of a chase prefix: classes of non-base facts whose
// exported position has non-empty NDng, deduplicated, earliest achiever.
// Facts closer than k rounds to the frontier are excluded (their
// neighborhoods are truncated).
std::vector<FactClassInfo> achieved_fact_classes(const ChasePrefix& P, int k,
                                                 const std::set<Fd>& ufds);

}  // namespace fcqa
