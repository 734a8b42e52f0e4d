#pragma once

#include <compare>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace fcqa {

// Error categories; the CLI maps these onto exit codes.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ResourceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct InternalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

using RelName = std::string;
using Elem = std::string;

// Reserved prefix for generated elements; user constants must not start with it.
inline constexpr char kGeneratedPrefix = '~';

struct Position {
  RelName rel;
  int index = 0;  // 1-based
  auto operator<=>(const Position&) const = default;
};

std::string to_string(const Position& p);

class Schema {
 public:
  void add_relation(const RelName& name, int arity);
  bool has(const RelName& name) const { return m_arity.count(name) != 0; }
  int arity(const RelName& name) const;
  const std::map<RelName, int>& relations() const { return m_arity; }
  // All positions R^1..R^arity of all relations, in name order.
  std::vector<Position> positions() const;
  int max_arity() const;
  void check_position(const Position& p) const;

 private:
  std::map<RelName, int> m_arity;
};

struct Fact {
  RelName rel;
  std::vector<Elem> args;
  auto operator<=>(const Fact&) const = default;
};

std::string to_string(const Fact& f);

struct Uid {
  Position from;
  Position to;
  auto operator<=>(const Uid&) const = default;
};

// ui(R^p <= S^q); throws UsageError when trivial (from == to).
Uid make_uid(Position from, Position to);
Uid reverse(const Uid& u);
std::string to_string(const Uid& u);

struct Fd {
  RelName rel;
  std::set<int> lhs;
  int rhs = 0;
  bool unary() const { return lhs.size() == 1; }
  auto operator<=>(const Fd&) const = default;
};

// R^L -> R^r; throws UsageError when L is empty or r in L.
Fd make_fd(RelName rel, std::set<int> lhs, int rhs);
// Reverse of a *unary* FD.
Fd reverse(const Fd& f);
std::string to_string(const Fd& f);

struct DependencySet {
  std::set<Uid> uids;
  std::set<Fd> fds;
  bool uid_transitively_closed = false;
  bool fd_closed = false;
  bool finitely_closed = false;

  std::set<Fd> unary_fds() const;
  std::set<Fd> fds_of(const RelName& rel) const;
};

// Immutable-by-convention set of facts; set semantics, deterministic order.
class Instance {
 public:
  Instance() = default;
  explicit Instance(std::set<Fact> facts) : m_facts(std::move(facts)) {}

  bool add(Fact f) { return m_facts.insert(std::move(f)).second; }
  bool contains(const Fact& f) const { return m_facts.count(f) != 0; }
  const std::set<Fact>& facts() const { return m_facts; }
  std::size_t size() const { return m_facts.size(); }
  bool empty() const { return m_facts.empty(); }

  std::set<Elem> domain() const;
  bool has_relation(const RelName& r) const;
  // Elements occurring at one position.
  std::set<Elem> projection(const Position& p) const;
  auto operator<=>(const Instance&) const = default;

 private:
  std::set<Fact> m_facts;
};

// pi_{positions}(I), tuples indexed by the given positions (all of one relation).
std::set<std::vector<Elem>> project(const Instance& I,
                                    const std::vector<Position>& positions);

// appelem(I, tau) = pi_from(I) \ pi_to(I).
std::set<Elem> active_elements(const Instance& I, const Uid& tau);

// Union of active_elements over all UIDs of `uids` with to == target.
std::set<Elem> want_at(const Instance& I, const std::set<Uid>& uids,
                       const Position& target);

struct Term {
  std::string text;
  bool is_var = false;
  auto operator<=>(const Term&) const = default;
};

struct CQAtom {
  RelName rel;
  std::vector<Term> args;
  auto operator<=>(const CQAtom&) const = default;
};

struct CQ {
  std::vector<CQAtom> atoms;
  std::vector<std::string> free_vars;  // empty => Boolean
  bool boolean() const { return free_vars.empty(); }
  std::set<std::string> variables() const;
  auto operator<=>(const CQ&) const = default;
};

std::string to_string(const CQ& q);

// Fresh-null generator: "~n<k>", monotone counter.
struct NullSource {
  std::uint64_t next = 0;
  Elem fresh() { return "~n" + std::to_string(next++); }
};

// Dng(q) = positions r != q of the same relation with (r -> q) a unary FD;
// NDng(q) = the remaining positions of the relation.
std::set<Position> dangerous(const Schema& s, const std::set<Fd>& ufds,
                             const Position& q);
std::set<Position> nondangerous(const Schema& s, const std::set<Fd>& ufds,
                                const Position& q);

// Validation against a schema: arity and position ranges; throws UsageError.
void validate(const Schema& s, const Fact& f);
void validate(const Schema& s, const Uid& u);
void validate(const Schema& s, const Fd& f);
void validate(const Schema& s, const CQ& q);
void validate(const Schema& s, const Instance& I);
void validate(const Schema& s, const DependencySet& d);

}  // namespace fcqa
