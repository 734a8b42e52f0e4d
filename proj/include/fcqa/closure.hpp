#pragma once

#include "fcqa/core.hpp"

namespace fcqa {

struct DerivationStep {
  std::string rule;  // uid-trans | fd-trans | fd-augment | cycle
  std::vector<std::string> premises;
  std::string conclusion;
};

struct DerivationTrace {
  std::vector<DerivationStep> steps;
};

// Largest S with R^L -> R^S implied by fds (standard saturation).
std::set<int> fd_attribute_closure(const std::set<Fd>& fds, const RelName& rel,
                                   const std::set<int>& lhs);

// Smallest transitive superset, trivial UIDs dropped.
std::set<Uid> uid_transitive_closure(const std::set<Uid>& uids,
                                     DerivationTrace* trace = nullptr);

// Finite closure: UID transitivity + implied unary FDs + the cycle rule,
// iterated to fixpoint. Higher-arity FDs are kept as declared; implied
// higher-arity consequences are answered on demand via fd_attribute_closure.
DependencySet finite_closure(const Schema& schema, const DependencySet& deps,
                             DerivationTrace* trace = nullptr);

bool finitely_implies(const Schema& schema, const DependencySet& deps,
                      const Uid& tau);
bool finitely_implies(const Schema& schema, const DependencySet& deps,
                      const Fd& phi);

}  // namespace fcqa
