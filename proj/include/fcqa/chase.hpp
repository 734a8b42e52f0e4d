#pragma once

#include <cstdint>
#include <memory>

#include "fcqa/core.hpp"

namespace fcqa {

enum class ChaseMode { CoreFirst, Plain };

struct ChaseFactInfo {
  Fact fact;
  int parent = -1;          // index into facts(); -1 for base facts
  std::optional<Uid> via;   // UID that created the fact
  int round = 0;            // 0 for base facts
};

// Materialized chase prefix: base facts first, then creation order.
class ChasePrefix {
 public:
  ChasePrefix(Schema schema, Instance base, std::set<Uid> uids,
              bool uids_closed_flag = true);

  const Schema& schema() const { return m_schema; }
  const Instance& base() const { return m_base; }
  const std::set<Uid>& uids() const { return m_uids; }
  const std::vector<ChaseFactInfo>& facts() const { return m_facts; }
  int rounds_done() const { return m_round; }
  Instance instance() const;
  // Round a non-base element was introduced in; 0 for base elements.
  int element_depth(const Elem& e) const;
  bool is_base_elem(const Elem& e) const { return m_intro.count(e) == 0; }
  // (fact index, 1-based position) where a non-base element was introduced.
  std::pair<int, int> intro_of(const Elem& e) const { return m_intro.at(e); }

  friend void chase_round(ChasePrefix& P, ChaseMode mode);

 private:
  void add_fact(Fact f, int parent, const Uid& via, int round);

  Schema m_schema;
  Instance m_base;
  std::set<Uid> m_uids;
  std::vector<ChaseFactInfo> m_facts;
  std::map<Elem, std::pair<int, int>> m_intro;
  NullSource m_nulls;
  int m_round = 0;
};

// One chase round; CoreFirst is only legal as the first round.
void chase_round(ChasePrefix& P, ChaseMode mode);

// Core-first round, then rounds-1 plain rounds.
ChasePrefix truncated_chase(const Schema& schema, const Instance& I0,
                            const std::set<Uid>& uids, int rounds);

bool verify_unique_witness(const ChasePrefix& P);

std::string to_dot(const ChasePrefix& P);

// ---------------------------------------------------------------------------
// Lazy chase: the (generally infinite) UID chase materialized on demand with
// hash-consed nodes. Round 1 follows core-chase semantics, so the Unique
// Witness Property holds and subtrees below round 1 are position-determined.
class LazyChase {
 public:
  LazyChase(Schema schema, Instance base, std::set<Uid> uids);

  struct VElem {
    int node = -1;    // intro fact node for non-base elements
    int pos = 0;      // 1-based position within the intro fact
    Elem base_elem;   // set iff node < 0
    bool is_base() const { return node < 0; }
    auto operator<=>(const VElem&) const = default;
  };

  struct VFact {
    int node = -1;
    RelName rel;
    std::vector<VElem> args;
  };

  const Schema& schema() const { return m_schema; }
  const Instance& base() const { return m_base; }
  const std::set<Uid>& uids() const { return m_uids; }
  int base_fact_count() const { return static_cast<int>(m_base_facts.size()); }

  // Sorted target positions {t : ui(p <= t) in uids}.
  const std::vector<Position>& targets(const Position& p) const;

  // Positions a base element wants (appelem over the base instance).
  const std::set<Position>& base_wants(const Elem& a) const;

  bool is_base_node(int node) const { return node < base_fact_count(); }
  int depth(int node) const;
  // The to-position of the UID that created the node (virtual nodes only).
  Position exported_position(int node) const;
  Uid via_of(int node) const;
  // Exported element of a virtual node (the parent-side element).
  VElem exported_elem(int node) const;

  int child_of_base(const Elem& a, const Position& t);  // -1 if not wanted
  int child_of(const VElem& e, const Position& t);      // -1 if no such UID

  VFact fact_of(int node);
  // Intro position of a non-base element.
  Position position_of(const VElem& e) const;
  // All chase facts containing e: intro fact plus children (for base
  // elements: base facts plus round-1 children).
  std::vector<VFact> facts_containing(const VElem& e);
  // Chase facts containing e at position t. Unique for non-base e (UWP).
  std::vector<VFact> facts_with_at(const VElem& e, const Position& t);

  Elem name_of(const VElem& e) const;

  // Interned canonical n-neighborhood type; equal keys imply a ≃_n b in the
  // chase (a sound refinement of ≃_n).
  std::uint64_t typekey(const VElem& e, int n);

  // Last n UIDs of a non-base element exist and are all reversible in uids().
  bool essential(const VElem& e, int n) const;

  // (I,a) ≤_n (chase, e); memoized per (a,e,n).
  bool leq_from_instance(const Instance& I, const Elem& a, const VElem& e,
                         int n);

 private:
  struct Node {
    int parent = -1;       // parent fact node; -1 when parent is a base elem
    Elem parent_elem;      // set iff parent < 0
    int parent_pos = 0;    // exported element's position in the parent fact
    Position target;       // to-position of the creating UID
    Position from;         // from-position of the creating UID
    int depth = 0;
  };

  std::string context_key(const VElem& e, int n) const;

  Schema m_schema;
  Instance m_base;
  std::set<Uid> m_uids;
  std::vector<Fact> m_base_facts;
  std::map<Elem, std::set<Position>> m_base_wants;
  std::map<Position, std::vector<Position>> m_targets;
  std::vector<Node> m_nodes;  // ids offset by base_fact_count()
  std::map<std::tuple<int, Elem, int, Position>, int> m_consed;
  std::map<std::string, std::uint64_t> m_typekey_memo;
  std::map<std::string, std::uint64_t> m_type_intern;
  std::map<std::tuple<Elem, int, int, Elem, int>, bool> m_leq_memo;
  std::vector<Position> m_no_targets;
  std::set<Position> m_no_wants;
};

}  // namespace fcqa
