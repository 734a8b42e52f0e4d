#include "fcqa/closure.hpp"

#include <algorithm>
#include <functional>
#include <map>

namespace fcqa {

std::set<int> fd_attribute_closure(const std::set<Fd>& fds, const RelName& rel,
                                   const std::set<int>& lhs) {
  std::set<int> out = lhs;
  bool grew = true;
  while (grew) {
    grew = false;
    for (const auto& f : fds) {
      if (f.rel != rel || out.count(f.rhs)) continue;
      if (std::includes(out.begin(), out.end(), f.lhs.begin(), f.lhs.end())) {
        out.insert(f.rhs);
        grew = true;
      }
    }
  }
  return out;
}

std::set<Uid> uid_transitive_closure(const std::set<Uid>& uids,
                                     DerivationTrace* trace) {
  std::set<Uid> out = uids;
  bool grew = true;
  while (grew) {
    grew = false;
    std::vector<Uid> fresh;
    for (const auto& u : out)
      for (const auto& v : out) {
        if (u.to != v.from || u.from == v.to) continue;  // trivial dropped
        Uid w{u.from, v.to};
        if (!out.count(w)) {
          fresh.push_back(w);
          if (trace)
            trace->steps.push_back(
                {"uid-trans", {to_string(u), to_string(v)}, to_string(w)});
        }
      }
    for (auto& w : fresh) grew |= out.insert(w).second;
  }
  return out;
}

namespace {

// Tarjan SCC over an adjacency map keyed by position indices.
struct Scc {
  const std::vector<std::vector<int>>& adj;
  std::vector<int> comp, low, num, stk;
  std::vector<bool> on;
  int counter = 0, ncomp = 0;

  explicit Scc(const std::vector<std::vector<int>>& adj)
      : adj(adj),
        comp(adj.size(), -1),
        low(adj.size(), 0),
        num(adj.size(), -1),
        on(adj.size(), false) {
    for (std::size_t i = 0; i < adj.size(); ++i)
      if (num[i] < 0) dfs(static_cast<int>(i));
  }

  void dfs(int v) {
    num[v] = low[v] = counter++;
    stk.push_back(v);
    on[v] = true;
    for (int w : adj[v]) {
      if (num[w] < 0) {
        dfs(w);
        low[v] = std::min(low[v], low[w]);
      } else if (on[w]) {
        low[v] = std::min(low[v], num[w]);
      }
    }
    if (low[v] == num[v]) {
      while (true) {
        int w = stk.back();
        stk.pop_back();
        on[w] = false;
        comp[w] = ncomp;
        if (w == v) break;
      }
      ++ncomp;
    }
  }
};

// All unary FDs implied by `fds` (Armstrong), per relation, trivial excluded.
std::set<Fd> implied_ufds(const Schema& schema, const std::set<Fd>& fds) {
  std::set<Fd> out;
  for (const auto& [rel, arity] : schema.relations()) {
    for (int p = 1; p <= arity; ++p) {
      auto cl = fd_attribute_closure(fds, rel, {p});
      for (int r : cl)
        if (r != p) out.insert(Fd{rel, {p}, r});
    }
  }
  return out;
}

}  // namespace

DependencySet finite_closure(const Schema& schema, const DependencySet& deps,
                             DerivationTrace* trace) {
  validate(schema, deps);
  std::set<Uid> uids = uid_transitive_closure(deps.uids, trace);
  std::set<Fd> declared = deps.fds;
  std::set<Fd> ufds = implied_ufds(schema, declared);

  auto positions = schema.positions();
  std::map<Position, int> pidx;
  for (std::size_t i = 0; i < positions.size(); ++i)
    pidx[positions[i]] = static_cast<int>(i);

  while (true) {
    // Constraint graph: UID from->to; UFD R^a -> R^b gives edge (R^b, R^a).
    std::vector<std::vector<int>> adj(positions.size());
    auto add_edge = [&](const Position& x, const Position& y) {
      adj[pidx.at(x)].push_back(pidx.at(y));
    };
    for (const auto& u : uids) add_edge(u.from, u.to);
    for (const auto& f : ufds)
      add_edge({f.rel, f.rhs}, {f.rel, *f.lhs.begin()});

    Scc scc(adj);
    auto same_scc = [&](const Position& x, const Position& y) {
      return scc.comp[pidx.at(x)] == scc.comp[pidx.at(y)];
    };

    // Cycle rule: any dependency whose edge lies in a cycle gets reversed.
    std::set<Uid> new_uids;
    std::set<Fd> new_ufds;
    for (const auto& u : uids)
      if (same_scc(u.from, u.to) && !uids.count(reverse(u)))
        new_uids.insert(reverse(u));
    for (const auto& f : ufds) {
      Position a{f.rel, *f.lhs.begin()}, b{f.rel, f.rhs};
      if (same_scc(a, b) && !ufds.count(reverse(f))) new_ufds.insert(reverse(f));
    }

    if (trace) {
      for (const auto& u : new_uids)
        trace->steps.push_back({"cycle", {}, to_string(u)});
      for (const auto& f : new_ufds)
        trace->steps.push_back({"cycle", {}, to_string(f)});
    }

    if (new_uids.empty() && new_ufds.empty()) break;
    uids.insert(new_uids.begin(), new_uids.end());
    ufds.insert(new_ufds.begin(), new_ufds.end());

    uids = uid_transitive_closure(uids, trace);
    std::set<Fd> all = declared;
    all.insert(ufds.begin(), ufds.end());
    ufds = implied_ufds(schema, all);
  }

  DependencySet out;
  out.uids = std::move(uids);
  out.fds = declared;
  out.fds.insert(ufds.begin(), ufds.end());
  if (trace) {
    for (const auto& f : out.fds)
      if (f.unary() && !deps.fds.count(f))
        trace->steps.push_back({"fd-trans", {}, to_string(f)});
  }
  out.uid_transitively_closed = true;
  out.fd_closed = true;
  out.finitely_closed = true;
  return out;
}

bool finitely_implies(const Schema& schema, const DependencySet& deps,
                      const Uid& tau) {
  if (deps.uids.count(tau)) return true;
  DependencySet cl =
      deps.finitely_closed ? deps : finite_closure(schema, deps);
  return cl.uids.count(tau) != 0;
}

bool finitely_implies(const Schema& schema, const DependencySet& deps,
                      const Fd& phi) {
  if (deps.fds.count(phi)) return true;
  DependencySet cl =
      deps.finitely_closed ? deps : finite_closure(schema, deps);
  auto attrs = fd_attribute_closure(cl.fds, phi.rel, phi.lhs);
  return attrs.count(phi.rhs) != 0;
}

}  // namespace fcqa
