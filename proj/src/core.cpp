#include "fcqa/core.hpp"

#include <algorithm>
#include <sstream>

namespace fcqa {

std::string to_string(const Position& p) {
  return p.rel + "[" + std::to_string(p.index) + "]";
}

void Schema::add_relation(const RelName& name, int arity) {
  if (arity < 1) throw UsageError("relation " + name + ": arity must be >= 1");
  if (name.empty()) throw UsageError("empty relation name");
  auto [it, fresh] = m_arity.emplace(name, arity);
  if (!fresh && it->second != arity)
    throw UsageError("relation " + name + " redeclared with different arity");
}

int Schema::arity(const RelName& name) const {
  auto it = m_arity.find(name);
  if (it == m_arity.end()) throw UsageError("unknown relation " + name);
  return it->second;
}

std::vector<Position> Schema::positions() const {
  std::vector<Position> out;
  for (const auto& [r, n] : m_arity)
    for (int i = 1; i <= n; ++i) out.push_back({r, i});
  return out;
}

int Schema::max_arity() const {
  int m = 0;
  for (const auto& [r, n] : m_arity) m = std::max(m, n);
  return m;
}

void Schema::check_position(const Position& p) const {
  int n = arity(p.rel);
  if (p.index < 1 || p.index > n)
    throw UsageError("position " + to_string(p) + " out of range (arity " +
                     std::to_string(n) + ")");
}

std::string to_string(const Fact& f) {
  std::string s = f.rel + "(";
  for (std::size_t i = 0; i < f.args.size(); ++i) {
    if (i) s += ", ";
    s += f.args[i];
  }
  return s + ")";
}

Uid make_uid(Position from, Position to) {
  if (from == to)
    throw UsageError("trivial UID " + to_string(from) + " <= " + to_string(to));
  return Uid{std::move(from), std::move(to)};
}

Uid reverse(const Uid& u) { return Uid{u.to, u.from}; }

std::string to_string(const Uid& u) {
  return to_string(u.from) + " <= " + to_string(u.to);
}

Fd make_fd(RelName rel, std::set<int> lhs, int rhs) {
  if (lhs.empty()) throw UsageError("degenerate FD on " + rel + ": empty lhs");
  if (lhs.count(rhs))
    throw UsageError("trivial FD on " + rel + ": rhs in lhs");
  return Fd{std::move(rel), std::move(lhs), rhs};
}

Fd reverse(const Fd& f) {
  if (!f.unary()) throw UsageError("reverse of non-unary FD");
  return Fd{f.rel, {f.rhs}, *f.lhs.begin()};
}

std::string to_string(const Fd& f) {
  std::string s = f.rel + "[";
  bool first = true;
  for (int i : f.lhs) {
    if (!first) s += ",";
    first = false;
    s += std::to_string(i);
  }
  return s + "] -> " + f.rel + "[" + std::to_string(f.rhs) + "]";
}

std::set<Fd> DependencySet::unary_fds() const {
  std::set<Fd> out;
  for (const auto& f : fds)
    if (f.unary()) out.insert(f);
  return out;
}

std::set<Fd> DependencySet::fds_of(const RelName& rel) const {
  std::set<Fd> out;
  for (const auto& f : fds)
    if (f.rel == rel) out.insert(f);
  return out;
}

std::set<Elem> Instance::domain() const {
  std::set<Elem> out;
  for (const auto& f : m_facts) out.insert(f.args.begin(), f.args.end());
  return out;
}

bool Instance::has_relation(const RelName& r) const {
  for (const auto& f : m_facts)
    if (f.rel == r) return true;
  return false;
}

std::set<Elem> Instance::projection(const Position& p) const {
  std::set<Elem> out;
  for (const auto& f : m_facts)
    if (f.rel == p.rel && p.index >= 1 &&
        p.index <= static_cast<int>(f.args.size()))
      out.insert(f.args[p.index - 1]);
  return out;
}

std::set<std::vector<Elem>> project(const Instance& I,
                                    const std::vector<Position>& positions) {
  if (positions.empty()) throw UsageError("project: empty position set");
  const RelName& rel = positions.front().rel;
  for (const auto& p : positions)
    if (p.rel != rel)
      throw UsageError("project: positions span several relations (" + rel +
                       ", " + p.rel + ")");
  std::set<std::vector<Elem>> out;
  for (const auto& f : I.facts()) {
    if (f.rel != rel) continue;
    std::vector<Elem> t;
    t.reserve(positions.size());
    for (const auto& p : positions) t.push_back(f.args.at(p.index - 1));
    out.insert(std::move(t));
  }
  return out;
}

std::set<Elem> active_elements(const Instance& I, const Uid& tau) {
  std::set<Elem> from = I.projection(tau.from);
  std::set<Elem> to = I.projection(tau.to);
  std::set<Elem> out;
  std::set_difference(from.begin(), from.end(), to.begin(), to.end(),
                      std::inserter(out, out.end()));
  return out;
}

std::set<Elem> want_at(const Instance& I, const std::set<Uid>& uids,
                       const Position& target) {
  std::set<Elem> out;
  for (const auto& u : uids) {
    if (u.to != target) continue;
    auto a = active_elements(I, u);
    out.insert(a.begin(), a.end());
  }
  return out;
}

std::set<std::string> CQ::variables() const {
  std::set<std::string> out;
  for (const auto& a : atoms)
    for (const auto& t : a.args)
      if (t.is_var) out.insert(t.text);
  return out;
}

std::string to_string(const CQ& q) {
  std::string s;
  for (std::size_t i = 0; i < q.atoms.size(); ++i) {
    if (i) s += ", ";
    s += q.atoms[i].rel + "(";
    for (std::size_t j = 0; j < q.atoms[i].args.size(); ++j) {
      if (j) s += ",";
      const Term& t = q.atoms[i].args[j];
      s += t.is_var ? t.text : "\"" + t.text + "\"";
    }
    s += ")";
  }
  return s;
}

std::set<Position> dangerous(const Schema& s, const std::set<Fd>& ufds,
                             const Position& q) {
  s.check_position(q);
  std::set<Position> out;
  for (const auto& f : ufds) {
    if (f.rel != q.rel || !f.unary() || f.rhs != q.index) continue;
    int r = *f.lhs.begin();
    if (r != q.index) out.insert(Position{q.rel, r});
  }
  return out;
}

std::set<Position> nondangerous(const Schema& s, const std::set<Fd>& ufds,
                                const Position& q) {
  std::set<Position> dng = dangerous(s, ufds, q);
  std::set<Position> out;
  for (int i = 1; i <= s.arity(q.rel); ++i) {
    Position p{q.rel, i};
    if (p != q && !dng.count(p)) out.insert(p);
  }
  return out;
}

void validate(const Schema& s, const Fact& f) {
  if (static_cast<int>(f.args.size()) != s.arity(f.rel))
    throw UsageError("fact " + to_string(f) + ": arity mismatch (expected " +
                     std::to_string(s.arity(f.rel)) + ")");
}

void validate(const Schema& s, const Uid& u) {
  s.check_position(u.from);
  s.check_position(u.to);
  if (u.from == u.to) throw UsageError("trivial UID " + to_string(u));
}

void validate(const Schema& s, const Fd& f) {
  int n = s.arity(f.rel);
  if (f.lhs.empty()) throw UsageError("degenerate FD on " + f.rel);
  if (f.lhs.count(f.rhs)) throw UsageError("trivial FD " + to_string(f));
  for (int i : f.lhs)
    if (i < 1 || i > n) throw UsageError("FD " + to_string(f) + ": bad index");
  if (f.rhs < 1 || f.rhs > n)
    throw UsageError("FD " + to_string(f) + ": bad index");
}

void validate(const Schema& s, const CQ& q) {
  std::set<std::string> used;
  for (const auto& a : q.atoms) {
    if (static_cast<int>(a.args.size()) != s.arity(a.rel))
      throw UsageError("query atom over " + a.rel + ": arity mismatch");
    for (const auto& t : a.args)
      if (t.is_var) used.insert(t.text);
  }
  for (const auto& v : q.free_vars)
    if (!used.count(v))
      throw UsageError("free variable " + v + " occurs in no atom");
}

void validate(const Schema& s, const Instance& I) {
  for (const auto& f : I.facts()) validate(s, f);
}

void validate(const Schema& s, const DependencySet& d) {
  for (const auto& u : d.uids) validate(s, u);
  for (const auto& f : d.fds) validate(s, f);
}

}  // namespace fcqa
