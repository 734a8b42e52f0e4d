#pragma once

#include <random>

#include "fcqa/chase.hpp"
#include "fcqa/closure.hpp"
#include "fcqa/qa.hpp"

namespace fcqa {

// ---------------------------------------------------------------------------
// Constraint graph and manageable partitions

struct ConstraintGraph {
  std::vector<Position> vertices;
  std::set<std::pair<int, int>> edges;
  std::map<std::pair<int, int>, std::vector<std::string>> provenance;
  int index_of(const Position& p) const;
};

// Vertices Pos(sigma); UID from->to; UFD R^a -> R^b gives edge (R^b, R^a).
ConstraintGraph constraint_graph(const Schema& s, const std::set<Uid>& uids,
                                 const std::set<Fd>& ufds);

struct PartitionClass {
  bool reversible = false;  // otherwise a trivial singleton
  std::set<Uid> uids;
};

// SCC decomposition + topological order; main class per SCC, satellite
// singletons across SCCs. Requires finitely closed input.
std::vector<PartitionClass> manageable_partition(const Schema& s,
                                                 const DependencySet& closed);

// ---------------------------------------------------------------------------
// Balancing and piecewise realizations

struct PssInstance {
  Instance base;
  std::vector<Elem> helpers;
  std::map<Elem, std::set<Position>> lambda;  // helper -> its ~ID-class
  std::set<Uid> rev_uids;

  std::set<Elem> app(const Position& p) const;
};

// Balanced pssinstance: helpers per ~ID-class, sized against the largest
// o(R^p) in each (~ID u <->FUN)-connected group that touches rev_uids.
PssInstance balance(const Schema& s, const Instance& I,
                    const std::set<Uid>& rev_uids, const std::set<Fd>& ufds);

struct PiecewiseRealization {
  std::vector<std::vector<Position>> classes;  // <->FUN classes, sorted
  std::vector<bool> inner;
  std::vector<std::vector<std::vector<Elem>>> tuples;  // per class: K_i
  std::map<Position, int> class_of;
  // Unique new tuple holding `e` at position p, if any.
  std::optional<std::vector<Elem>> tuple_with(const Position& p,
                                              const Elem& e) const;

 private:
  friend PiecewiseRealization piecewise_realization(const Schema&,
                                                    const PssInstance&,
                                                    const std::set<Fd>&,
                                                    std::uint64_t);
  std::map<std::pair<Position, Elem>, int> m_lookup;  // -> tuple index
};

PiecewiseRealization piecewise_realization(const Schema& s,
                                           const PssInstance& P,
                                           const std::set<Fd>& ufds,
                                           std::uint64_t seed);

// ---------------------------------------------------------------------------
// Aligned superinstances

struct AlignedSuperinstance {
  Schema schema;  // possibly extended with individualizing relations
  Instance inst;
  Instance base;
  std::shared_ptr<LazyChase> chase;
  std::map<Elem, LazyChase::VElem> cov;
  int k = 0;
};

// Checks: base containment, FD satisfaction, cov defined everywhere,
// identity on base, directionality, and cov being a k-bounded simulation.
// Returns the first problem found, if any.
std::optional<std::string> validate_aligned(AlignedSuperinstance& J,
                                            const std::set<Fd>& fds);

// ---------------------------------------------------------------------------
// Envelopes

struct ClassKey {
  Position exported;
  std::vector<std::uint64_t> typekeys;  // one per position of the relation
  auto operator<=>(const ClassKey&) const = default;
};

std::string to_string(const ClassKey& k);

struct Envelope {
  Position exported;
  std::vector<Position> index_positions;  // O = NDng(exported), sorted
  bool safe = false;
  std::vector<std::vector<Elem>> tuples;  // seeded order
  std::set<std::vector<Elem>> used;       // realized in the instance
  long remaining() const {
    return safe ? 1
                : static_cast<long>(tuples.size()) -
                      static_cast<long>(used.size());
  }
};

struct GlobalEnvelope {
  std::map<ClassKey, Envelope> classes;
};

// ---------------------------------------------------------------------------
// Dense interpretations

// FD-satisfying instance over `rel` with |dom| <= N and |facts| >= K*N, tame
// overlaps and the disjointness condition. `fds` must give no unary key.
// n_override pins the internal parameter n (facts = n^D).
std::pair<Instance, long> dense_interpretation(
    const Schema& s, const RelName& rel, const std::set<Fd>& fds, long K,
    std::optional<long> n_override = std::nullopt);

bool check_tame_overlaps(const Schema& s, const Instance& I,
                         const std::set<Fd>& ufds);
bool check_disjointness(const Schema& s, const Instance& I);
// Smallest key cardinality under unary FDs.
int min_key_size(const Schema& s, const RelName& rel,
                 const std::set<Fd>& ufds);

// ---------------------------------------------------------------------------
// Thrifty chase steps

enum class StepVariant { Fresh, FactReuse, EnvelopeReuse, Materialize };

struct StepRecord {
  Uid uid;
  Elem exported;
  StepVariant variant;
  Fact new_fact;
  std::string envelope_class;  // empty unless EnvelopeReuse
};

struct BuildLog {
  std::vector<StepRecord> steps;
  std::map<std::string, long> stats;
};

// One thrifty chase step with an explicit variant; throws UsageError naming
// the violated clause. Callers supply the reuse fact (FactReuse) or a
// global envelope (EnvelopeReuse).
Fact apply_thrifty_step(AlignedSuperinstance& J, const std::set<Fd>& ufds,
                        const Uid& tau, const Elem& a, StepVariant variant,
                        const std::optional<Fact>& reuse_fact = std::nullopt,
                        GlobalEnvelope* env = nullptr,
                        BuildLog* log = nullptr);

// n+1 fresh fact-thrifty rounds by rev_uids (envelope-backed reuse).
void ensure_essentiality(AlignedSuperinstance& J, const std::set<Fd>& ufds,
                         const std::set<Uid>& rev_uids, int n,
                         GlobalEnvelope& env, BuildLog* log = nullptr);

// ---------------------------------------------------------------------------
// Saturation (public, materialized flavors) and the full completion

// Chase rounds until every live relation has a fact; identity cov.
AlignedSuperinstance saturate_relation(const Schema& s, const Instance& I0,
                                       const std::set<Uid>& uids);
// Chase rounds until the achieved fact classes stabilize; identity cov.
AlignedSuperinstance saturate_fact(const Schema& s, const Instance& I0,
                                   const std::set<Uid>& uids,
                                   const std::set<Fd>& ufds, int k);

struct BuildOptions {
  std::uint64_t seed = 0;
  bool validate = false;            // run validators after every class
  long envelope_budget = 64;        // initial K; doubled on exhaustion
  int budget_retries = 6;
  long size_cap = 2000000;          // hard cap on instance facts
  bool per_copy_individualization = false;
};

struct BuildResult {
  AlignedSuperinstance J;
  GlobalEnvelope envelopes;
  BuildLog log;
};

// The ACQ-universal completion: envelope saturation over disjoint copies,
// shallow prechase, then class-by-class fresh rounds + realization-guided
// envelope-thrifty completion. Output satisfies the closed dependencies and
// carries a k-bounded simulation to the chase.
BuildResult complete_acq_universal(const Schema& s, const Instance& I0,
                                   const DependencySet& closed, int k,
                                   const BuildOptions& opts = {});

// Weakly-sound completion (relation saturation + relation-thrifty steps);
// exposed for --stage weak.
Instance weak_completion(const Schema& s, const Instance& I0,
                         const std::set<Uid>& rev_uids,
                         const std::set<Fd>& ufds, std::uint64_t seed);

// Relations occurring in the chase of I0 (non-useless ones).
std::set<RelName> live_relations(const Schema& s, const Instance& I0,
                                 const std::set<Uid>& uids);

}  // namespace fcqa
