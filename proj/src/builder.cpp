#include "fcqa/builder.hpp"

#include <algorithm>
#include <functional>
#include <sstream>

namespace fcqa {

namespace {

// Tarjan SCC over adjacency lists.
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

struct UnionFind {
  std::vector<int> uf;
  explicit UnionFind(std::size_t n) : uf(n) {
    for (std::size_t i = 0; i < n; ++i) uf[i] = static_cast<int>(i);
  }
  int find(int x) {
    while (uf[x] != x) x = uf[x] = uf[uf[x]];
    return x;
  }
  void unite(int a, int b) { uf[find(a)] = find(b); }
};

std::set<Position> positions_in(const std::set<Uid>& uids) {
  std::set<Position> out;
  for (const auto& u : uids) {
    out.insert(u.from);
    out.insert(u.to);
  }
  return out;
}

bool mutually_fun(const std::set<Fd>& ufds, const Position& p,
                  const Position& q) {
  if (p.rel != q.rel) return false;
  if (p == q) return true;
  return ufds.count(Fd{p.rel, {p.index}, q.index}) &&
         ufds.count(Fd{p.rel, {q.index}, p.index});
}

}  // namespace

// ---------------------------------------------------------------------------
// Constraint graph and manageable partition

int ConstraintGraph::index_of(const Position& p) const {
  auto it = std::lower_bound(vertices.begin(), vertices.end(), p);
  if (it == vertices.end() || *it != p)
    throw UsageError("position " + to_string(p) + " not in graph");
  return static_cast<int>(it - vertices.begin());
}

ConstraintGraph constraint_graph(const Schema& s, const std::set<Uid>& uids,
                                 const std::set<Fd>& ufds) {
  ConstraintGraph g;
  g.vertices = s.positions();
  std::sort(g.vertices.begin(), g.vertices.end());
  auto add = [&](const Position& a, const Position& b, const std::string& why) {
    auto e = std::make_pair(g.index_of(a), g.index_of(b));
    g.edges.insert(e);
    g.provenance[e].push_back(why);
  };
  for (const auto& u : uids) add(u.from, u.to, to_string(u));
  for (const auto& f : ufds) {
    if (!f.unary()) continue;
    add(Position{f.rel, f.rhs}, Position{f.rel, *f.lhs.begin()}, to_string(f));
  }
  return g;
}

std::vector<PartitionClass> manageable_partition(const Schema& s,
                                                 const DependencySet& closed) {
  if (!closed.finitely_closed)
    throw UsageError("manageable_partition requires a finitely closed set");
  ConstraintGraph g = constraint_graph(s, closed.uids, closed.unary_fds());
  std::vector<std::vector<int>> adj(g.vertices.size());
  for (const auto& [a, b] : g.edges) adj[a].push_back(b);
  Scc scc(adj);
  // Tarjan numbers SCCs in reverse topological order.
  auto order_of = [&](const Position& p) {
    return scc.ncomp - 1 - scc.comp[g.index_of(p)];
  };

  std::map<int, PartitionClass> main_classes;
  std::map<int, std::vector<Uid>> satellites;
  for (const auto& u : closed.uids) {
    int a = order_of(u.from), b = order_of(u.to);
    if (a == b) {
      main_classes[a].reversible = true;
      main_classes[a].uids.insert(u);
    } else {
      satellites[a].push_back(u);
    }
  }
  std::vector<PartitionClass> out;
  for (int c = 0; c < scc.ncomp; ++c) {
    auto mit = main_classes.find(c);
    if (mit != main_classes.end()) out.push_back(std::move(mit->second));
    auto sit = satellites.find(c);
    if (sit != satellites.end()) {
      std::sort(sit->second.begin(), sit->second.end());
      for (const auto& u : sit->second)
        out.push_back(PartitionClass{false, {u}});
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Balancing

std::set<Elem> PssInstance::app(const Position& p) const {
  std::set<Elem> out = want_at(base, rev_uids, p);
  for (const auto& h : helpers)
    if (lambda.at(h).count(p)) out.insert(h);
  return out;
}

PssInstance balance(const Schema& s, const Instance& I,
                    const std::set<Uid>& rev_uids, const std::set<Fd>& ufds,
                    const std::string& helper_prefix) {
  for (const auto& u : rev_uids)
    if (!rev_uids.count(reverse(u)))
      throw UsageError("balance: UID set is not reversible at " + to_string(u));
  if (!satisfies_fds(I, ufds))
    throw UsageError("balance: instance violates the unary FDs");

  PssInstance P;
  P.base = I;
  P.rev_uids = rev_uids;

  auto positions = s.positions();
  std::sort(positions.begin(), positions.end());
  std::map<Position, int> pid;
  for (std::size_t i = 0; i < positions.size(); ++i)
    pid[positions[i]] = static_cast<int>(i);

  UnionFind id_cls(positions.size());   // ~ID classes
  UnionFind groups(positions.size());   // ~ID u <->FUN connectivity
  for (const auto& u : rev_uids) {
    id_cls.unite(pid.at(u.from), pid.at(u.to));
    groups.unite(pid.at(u.from), pid.at(u.to));
  }
  for (const auto& f : ufds) {
    if (!f.unary()) continue;
    Position a{f.rel, *f.lhs.begin()}, b{f.rel, f.rhs};
    if (mutually_fun(ufds, a, b)) groups.unite(pid.at(a), pid.at(b));
  }

  std::map<Position, std::set<Elem>> o;
  for (const auto& p : positions) {
    o[p] = I.projection(p);
    auto w = want_at(I, rev_uids, p);
    o[p].insert(w.begin(), w.end());
  }

  std::set<Position> occupied = positions_in(rev_uids);
  std::map<int, long> group_max;
  std::map<int, bool> group_occupied;
  for (const auto& p : positions) {
    int gr = groups.find(pid.at(p));
    group_max[gr] = std::max(group_max[gr], static_cast<long>(o[p].size()));
    if (occupied.count(p)) group_occupied[gr] = true;
  }

  // One helper batch per ~ID-class of a group that touches rev_uids.
  std::map<int, std::vector<Position>> id_blocks;
  for (const auto& p : positions) id_blocks[id_cls.find(pid.at(p))].push_back(p);
  long counter = 0;
  for (const auto& [root, block] : id_blocks) {
    int gr = groups.find(root);
    if (!group_occupied[gr]) continue;
    long need = group_max[gr] - static_cast<long>(o[block.front()].size());
    for (const auto& p : block)
      if (static_cast<long>(o[p].size()) !=
          static_cast<long>(o[block.front()].size()))
        throw InternalError("balance: o() not constant on a ~ID-class");
    std::set<Position> cls(block.begin(), block.end());
    for (long i = 0; i < need; ++i) {
      Elem h = helper_prefix + std::to_string(counter++);
      P.helpers.push_back(h);
      P.lambda[h] = cls;
    }
  }
  return P;
}

PssInstance balance(const Schema& s, const Instance& I,
                    const std::set<Uid>& rev_uids, const std::set<Fd>& ufds) {
  return balance(s, I, rev_uids, ufds, "~h");
}

// ---------------------------------------------------------------------------
// Piecewise realizations

std::optional<std::vector<Elem>> PiecewiseRealization::tuple_with(
    const Position& p, const Elem& e) const {
  auto it = m_lookup.find({p, e});
  if (it == m_lookup.end()) return std::nullopt;
  return tuples[class_of.at(p)][it->second];
}

PiecewiseRealization piecewise_realization(const Schema& s,
                                           const PssInstance& P,
                                           const std::set<Fd>& ufds,
                                           std::uint64_t seed) {
  PiecewiseRealization R;
  auto positions = s.positions();
  std::sort(positions.begin(), positions.end());
  std::map<Position, int> pid;
  for (std::size_t i = 0; i < positions.size(); ++i)
    pid[positions[i]] = static_cast<int>(i);
  UnionFind fun(positions.size());
  for (const auto& p : positions)
    for (const auto& q : positions)
      if (p < q && mutually_fun(ufds, p, q)) fun.unite(pid.at(p), pid.at(q));

  std::map<int, int> root_to_class;
  for (const auto& p : positions) {
    int r = fun.find(pid.at(p));
    auto [it, fresh] =
        root_to_class.emplace(r, static_cast<int>(R.classes.size()));
    if (fresh) R.classes.push_back({});
    R.classes[it->second].push_back(p);
    R.class_of[p] = it->second;
  }

  std::set<Position> occupied = positions_in(P.rev_uids);
  std::mt19937_64 rng(seed);
  for (std::size_t ci = 0; ci < R.classes.size(); ++ci) {
    const auto& cls = R.classes[ci];
    bool inner = false;
    for (const auto& p : cls) inner |= occupied.count(p) != 0;
    R.inner.push_back(inner);
    R.tuples.push_back({});
    // Base projections are always part of K_i.
    std::set<std::vector<Elem>> base_proj = project(P.base, cls);
    for (const auto& t : base_proj) R.tuples[ci].push_back(t);
    if (!inner) continue;
    // Aligned new tuples over the app() sets (seeded shuffle per slot).
    std::vector<std::vector<Elem>> orders;
    std::size_t s_i = 0;
    for (std::size_t j = 0; j < cls.size(); ++j) {
      auto app = P.app(cls[j]);
      std::vector<Elem> v(app.begin(), app.end());
      std::shuffle(v.begin(), v.end(), rng);
      if (j == 0) s_i = v.size();
      if (v.size() != s_i)
        throw InternalError("piecewise_realization: pssinstance not balanced");
      orders.push_back(std::move(v));
    }
    for (std::size_t l = 0; l < s_i; ++l) {
      std::vector<Elem> t;
      for (std::size_t j = 0; j < cls.size(); ++j) t.push_back(orders[j][l]);
      int idx = static_cast<int>(R.tuples[ci].size());
      for (std::size_t j = 0; j < cls.size(); ++j)
        R.m_lookup[{cls[j], t[j]}] = idx;
      R.tuples[ci].push_back(std::move(t));
    }
    // UFD compliance inside the class: no two tuples agree anywhere.
    std::map<std::pair<std::size_t, Elem>, int> seen;
    for (std::size_t ti = 0; ti < R.tuples[ci].size(); ++ti)
      for (std::size_t j = 0; j < cls.size(); ++j) {
        auto key = std::make_pair(j, R.tuples[ci][ti][j]);
        auto [it, fresh] = seen.emplace(key, static_cast<int>(ti));
        if (!fresh && R.tuples[ci][it->second] != R.tuples[ci][ti])
          throw InternalError("piecewise_realization: UFD compliance failed");
      }
  }
  return R;
}

// ---------------------------------------------------------------------------
// Aligned superinstance validation

std::optional<std::string> validate_aligned(AlignedSuperinstance& J,
                                            const std::set<Fd>& fds) {
  for (const auto& f : J.base.facts())
    if (!J.inst.contains(f)) return "base fact missing: " + to_string(f);
  if (!satisfies_fds(J.inst, fds)) return "FD violation in instance";
  auto base_dom = J.base.domain();
  for (const auto& a : J.inst.domain()) {
    auto it = J.cov.find(a);
    if (it == J.cov.end()) return "cov missing for " + a;
    const auto& e = it->second;
    if (base_dom.count(a)) {
      if (!(e.is_base() && e.base_elem == a)) return "cov not identity on " + a;
    } else {
      if (e.is_base()) return "cov maps new element " + a + " into the base";
      Position at = J.chase->position_of(e);
      if (!J.inst.projection(at).count(a))
        return "directionality fails for " + a + " at " + to_string(at);
    }
  }
  for (const auto& a : J.inst.domain())
    if (!J.chase->leq_from_instance(J.inst, a, J.cov.at(a), J.k))
      return "cov is not a " + std::to_string(J.k) +
             "-bounded simulation at " + a;
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Dense interpretations

int min_key_size(const Schema& s, const RelName& rel,
                 const std::set<Fd>& fds) {
  int n = s.arity(rel);
  // Determination via full FD closure from singletons is not enough for key
  // search; use attribute closure of candidate subsets directly.
  for (int size = 1; size <= n; ++size) {
    std::vector<int> pick(size);
    std::function<bool(int, int)> rec = [&](int start, int depth) {
      if (depth == size) {
        std::set<int> lhs(pick.begin(), pick.end());
        auto cl = fd_attribute_closure(fds, rel, lhs);
        return static_cast<int>(cl.size()) == n;
      }
      for (int i = start; i <= n; ++i) {
        pick[depth] = i;
        if (rec(i + 1, depth + 1)) return true;
      }
      return false;
    };
    if (rec(1, 0)) return size;
  }
  return n;
}

bool check_disjointness(const Schema& s, const Instance& I) {
  std::map<Elem, Position> at;
  for (const auto& f : I.facts())
    for (std::size_t i = 0; i < f.args.size(); ++i) {
      Position p{f.rel, static_cast<int>(i) + 1};
      auto [it, fresh] = at.emplace(f.args[i], p);
      if (!fresh && it->second != p) return false;
    }
  (void)s;
  return true;
}

namespace {

bool determines(const std::set<Fd>& ufds, const Position& q,
                const Position& r) {
  if (q == r) return true;
  if (q.rel != r.rel) return false;
  return ufds.count(Fd{q.rel, {q.index}, r.index}) != 0;
}

bool tame(const Schema& s, const std::set<Fd>& ufds, const RelName& rel,
          const std::set<int>& ovl) {
  if (ovl.empty()) return true;
  int n = s.arity(rel);
  if (static_cast<int>(ovl.size()) == n) return true;  // same fact
  for (int p = 1; p <= n; ++p) {
    if (ovl.count(p)) continue;
    bool found = false;
    for (int q = 1; q <= n && !found; ++q) {
      bool all = true;
      for (int o : ovl)
        if (!determines(ufds, {rel, q}, {rel, o})) {
          all = false;
          break;
        }
      if (all && !determines(ufds, {rel, q}, {rel, p}) && q != p) found = true;
      if (all && q == p) found = true;  // p determines all of ovl
    }
    if (!found) return false;
  }
  return true;
}

}  // namespace

bool check_tame_overlaps(const Schema& s, const Instance& I,
                         const std::set<Fd>& ufds) {
  std::vector<const Fact*> facts;
  for (const auto& f : I.facts()) facts.push_back(&f);
  for (std::size_t i = 0; i < facts.size(); ++i)
    for (std::size_t j = i + 1; j < facts.size(); ++j) {
      if (facts[i]->rel != facts[j]->rel) continue;
      std::set<int> ovl;
      for (std::size_t p = 0; p < facts[i]->args.size(); ++p)
        if (facts[i]->args[p] == facts[j]->args[p])
          ovl.insert(static_cast<int>(p) + 1);
      if (!tame(s, ufds, facts[i]->rel, ovl)) return false;
    }
  return true;
}

std::pair<Instance, long> dense_interpretation(const Schema& s,
                                               const RelName& rel,
                                               const std::set<Fd>& fds, long K,
                                               std::optional<long> n_override) {
  int arity = s.arity(rel);
  // All implied unary FDs on rel.
  std::set<Fd> ufds;
  for (int p = 1; p <= arity; ++p) {
    auto cl = fd_attribute_closure(fds, rel, {p});
    for (int r : cl)
      if (r != p) ufds.insert(Fd{rel, {p}, r});
  }
  int D = min_key_size(s, rel, ufds);
  if (D < 2)
    throw UsageError("dense_interpretation: relation has a unary key");

  auto dom_count = [&](long n) {
    long total = 0, binom = 1;
    for (int i = 0; i < D; ++i) {
      // C(D,i) * n^i
      long pw = 1;
      for (int j = 0; j < i; ++j) pw *= n;
      total += binom * pw;
      binom = binom * (D - i) / (i + 1);
    }
    return total;
  };
  long n = 2;
  if (n_override) {
    n = *n_override;
  } else {
    long pw;
    do {
      pw = 1;
      for (int j = 0; j < D; ++j) pw *= n;
      if (pw >= K * dom_count(n)) break;
      ++n;
    } while (n < 100000);
  }

  // Find a minimal key K0 of size D.
  std::vector<int> key;
  {
    std::vector<int> pick(static_cast<std::size_t>(D));
    std::function<bool(int, int)> rec = [&](int start, int depth) {
      if (depth == D) {
        std::set<int> lhs(pick.begin(), pick.end());
        auto cl = fd_attribute_closure(ufds, rel, lhs);
        if (static_cast<int>(cl.size()) == arity) {
          key = pick;
          return true;
        }
        return false;
      }
      for (int i = start; i <= arity; ++i) {
        pick[static_cast<std::size_t>(depth)] = i;
        if (rec(i + 1, depth + 1)) return true;
      }
      return false;
    };
    if (!rec(1, 0)) throw InternalError("dense_interpretation: no key found");
  }

  // mu(R^p) = {lambda(k) : k in key, k == p or k -> p}, as a bitmask over
  // T = {1..D}; element of the full construction at position p is f
  // restricted to T \ mu(R^p).
  auto mu = [&](int p) {
    unsigned mask = 0;
    for (int j = 0; j < D; ++j) {
      int kpos = key[static_cast<std::size_t>(j)];
      if (kpos == p || determines(ufds, {rel, kpos}, {rel, p}))
        mask |= 1u << j;
    }
    return mask;
  };

  // Facts F_f for every total f : T -> {1..n}.
  Instance out;
  std::vector<int> f(static_cast<std::size_t>(D), 1);
  auto elem_for = [&](unsigned keep_mask) {
    // f restricted to T \ mu: positions NOT in mask are kept.
    std::string s2 = "~d";
    for (int j = 0; j < D; ++j)
      s2 += (keep_mask & (1u << j)) ? std::string("_") + "*"
                                    : "_" + std::to_string(f[j]);
    return s2;
  };
  while (true) {
    Fact fact{rel, {}};
    for (int p = 1; p <= arity; ++p) fact.args.push_back(elem_for(mu(p)));
    out.add(std::move(fact));
    int j = 0;
    while (j < D && ++f[j] > n) f[j++] = 1;
    if (j >= D) break;
  }

  // Disjointness: tag elements by their unique position when needed.
  if (!check_disjointness(s, out)) {
    Instance tagged;
    for (const auto& fa : out.facts()) {
      Fact g{fa.rel, fa.args};
      for (std::size_t i = 0; i < g.args.size(); ++i)
        g.args[i] += "@" + std::to_string(i + 1);
      tagged.add(std::move(g));
    }
    out = std::move(tagged);
  }

  long N = static_cast<long>(out.domain().size());
  if (static_cast<long>(out.size()) < std::max<long>(1, K) * N && !n_override)
    throw InternalError("dense_interpretation: size contract violated");
  return {out, N};
}

// ---------------------------------------------------------------------------
// Engine: thrifty steps, saturation, completion

namespace {

struct EnvelopeExhausted {
  ClassKey cls;
};

struct Engine {
  const Schema& schema;
  const std::set<Uid>& uids;
  const std::set<Fd>& fds;
  std::set<Fd> ufds;
  AlignedSuperinstance& J;
  GlobalEnvelope& env;
  BuildLog* log;
  long fresh_counter = 0;
  bool strict = true;  // runtime asserts on step preconditions

  Engine(const Schema& schema, const std::set<Uid>& uids,
         const std::set<Fd>& fds, AlignedSuperinstance& J, GlobalEnvelope& env,
         BuildLog* log)
      : schema(schema), uids(uids), fds(fds), J(J), env(env), log(log) {
    for (const auto& f : fds)
      if (f.unary()) ufds.insert(f);
  }

  LazyChase& C() { return *J.chase; }

  std::set<Elem> active(const Uid& u) const {
    return active_elements(J.inst, u);
  }

  std::vector<std::pair<Elem, Uid>> violations(const std::set<Uid>& of) const {
    std::vector<std::pair<Elem, Uid>> out;
    for (const auto& u : of)
      for (const auto& a : active(u)) out.push_back({a, u});
    std::sort(out.begin(), out.end());
    return out;
  }

  LazyChase::VFact witness_for(const Elem& a, const Position& to) {
    auto it = J.cov.find(a);
    if (it == J.cov.end()) throw InternalError("cov missing for " + a);
    auto cands = C().facts_with_at(it->second, to);
    if (cands.empty())
      throw InternalError("no chase witness for " + a + " at " + to_string(to));
    for (const auto& f : cands)
      if (!C().is_base_node(f.node)) return f;
    throw InternalError("witness for " + a + " at " + to_string(to) +
                        " is a base fact");
  }

  ClassKey class_of_vfact(const LazyChase::VFact& f) {
    ClassKey k;
    k.exported = C().exported_position(f.node);
    for (const auto& e : f.args) k.typekeys.push_back(C().typekey(e, J.k));
    return k;
  }

  Elem fresh() { return "~f" + std::to_string(fresh_counter++); }

  void add_fact(Fact f, const Uid& via, const Elem& exported,
                StepVariant variant, const std::string& cls) {
    J.inst.add(f);
    if (log) log->steps.push_back({via, exported, variant, f, cls});
  }

  // Whole-chase-fact materialization (identity region only).
  void materialize_vfact(const LazyChase::VFact& wf) {
    Fact f{wf.rel, {}};
    for (const auto& e : wf.args) f.args.push_back(C().name_of(e));
    for (std::size_t i = 0; i < f.args.size(); ++i) {
      if (!J.cov.count(f.args[i])) J.cov[f.args[i]] = wf.args[i];
    }
    add_fact(f, C().via_of(wf.node), C().name_of(C().exported_elem(wf.node)),
             StepVariant::Materialize, "");
  }

  // Envelope tuple for the witness class; consumes one for unsafe classes.
  const Envelope* take_tuple(const ClassKey& key, std::vector<Elem>& tuple) {
    auto it = env.classes.find(key);
    if (it == env.classes.end())
      throw InternalError("missing envelope for class " + to_string(key));
    Envelope& E = it->second;
    if (E.safe) {
      tuple = E.tuples.front();
      return &E;
    }
    for (const auto& t : E.tuples) {
      if (E.used.count(t)) continue;
      tuple = t;
      E.used.insert(t);
      return &E;
    }
    throw EnvelopeExhausted{key};
  }

  // The thrifty chase step on aligned superinstances (Def. of thrifty steps
  // plus the cov extension from the chase witness).
  Fact do_step(const Uid& tau, const Elem& a, bool fresh_mode,
               const PiecewiseRealization* PI) {
    const Position& Sq = tau.to;
    if (strict && !active(tau).count(a))
      throw UsageError("thrifty step: element " + a + " is not active for " +
                       to_string(tau));
    auto wf = witness_for(a, Sq);

    int arity = schema.arity(Sq.rel);
    std::set<Position> O = nondangerous(schema, ufds, Sq);
    std::set<Position> dng = dangerous(schema, ufds, Sq);

    std::vector<Elem> env_tuple;
    const Envelope* E = nullptr;
    ClassKey key;
    if (!O.empty()) {
      key = class_of_vfact(wf);
      E = take_tuple(key, env_tuple);
    }

    std::optional<std::vector<Elem>> partner;
    std::vector<Position> fun_cls;
    if (!fresh_mode && PI) {
      auto t = PI->tuple_with(Sq, a);
      if (!t)
        throw InternalError("realization tuple missing for " + a + " at " +
                            to_string(Sq));
      partner = t;
      fun_cls = PI->classes[PI->class_of.at(Sq)];
    }

    Fact f{Sq.rel, std::vector<Elem>(static_cast<std::size_t>(arity))};
    for (int i = 1; i <= arity; ++i) {
      Position pi{Sq.rel, i};
      if (i == Sq.index) {
        f.args[i - 1] = a;
      } else if (O.count(pi)) {
        int slot = static_cast<int>(
            std::distance(E->index_positions.begin(),
                          std::find(E->index_positions.begin(),
                                    E->index_positions.end(), pi)));
        f.args[i - 1] = env_tuple[static_cast<std::size_t>(slot)];
      } else if (partner) {
        auto it = std::find(fun_cls.begin(), fun_cls.end(), pi);
        if (it != fun_cls.end()) {
          f.args[i - 1] =
              (*partner)[static_cast<std::size_t>(it - fun_cls.begin())];
        } else {
          f.args[i - 1] = fresh();
        }
      } else {
        f.args[i - 1] = fresh();
      }
    }
    (void)dng;

    // cov extension: new elements inherit the witness elements.
    for (int i = 1; i <= arity; ++i)
      if (!J.cov.count(f.args[i - 1]))
        J.cov[f.args[i - 1]] = wf.args[static_cast<std::size_t>(i - 1)];

    add_fact(f, tau, a,
             fresh_mode ? StepVariant::Fresh : StepVariant::EnvelopeReuse,
             O.empty() ? "" : to_string(key));
    return f;
  }
};

}  // namespace

std::string to_string(const ClassKey& k) {
  std::string s = to_string(k.exported) + "/[";
  for (std::size_t i = 0; i < k.typekeys.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(k.typekeys[i]);
  }
  return s + "]";
}

// ---------------------------------------------------------------------------
// Public granular step (spec op apply_thrifty_step)

Fact apply_thrifty_step(AlignedSuperinstance& J, const std::set<Fd>& ufds_in,
                        const Uid& tau, const Elem& a, StepVariant variant,
                        const std::optional<Fact>& reuse_fact,
                        GlobalEnvelope* env, BuildLog* log) {
  std::set<Fd> ufds;
  for (const auto& f : ufds_in)
    if (f.unary()) ufds.insert(f);
  const Position& Sq = tau.to;
  if (!active_elements(J.inst, tau).count(a))
    throw UsageError("apply_thrifty_step: " + a + " not in appelem for " +
                     to_string(tau));
  GlobalEnvelope dummy;
  Engine eng(J.schema, J.chase->uids(), ufds_in, J, env ? *env : dummy, log);
  eng.ufds = ufds;
  auto wf = eng.witness_for(a, Sq);
  std::set<Position> O = nondangerous(J.schema, ufds, Sq);
  int arity = J.schema.arity(Sq.rel);

  std::vector<Elem> ndng_source(static_cast<std::size_t>(arity));
  std::string clsname;
  if (!O.empty()) {
    if (variant == StepVariant::FactReuse) {
      if (!reuse_fact)
        throw UsageError("fact variant requires a reuse fact");
      if (reuse_fact->rel != Sq.rel || !J.inst.contains(*reuse_fact))
        throw UsageError("reuse fact must be an existing fact of the relation");
      // The reuse fact must achieve the chase witness's fact class.
      ClassKey want = eng.class_of_vfact(wf);
      for (int i = 1; i <= arity; ++i) {
        auto it = J.cov.find(reuse_fact->args[i - 1]);
        if (it == J.cov.end())
          throw UsageError("reuse fact element has no cov image");
        if (J.chase->typekey(it->second, J.k) !=
            want.typekeys[static_cast<std::size_t>(i - 1)])
          throw UsageError(
              "reuse fact does not achieve the chase witness's fact class");
      }
      for (const auto& p : O)
        ndng_source[static_cast<std::size_t>(p.index - 1)] =
            reuse_fact->args[p.index - 1];
      clsname = to_string(want);
    } else if (variant == StepVariant::EnvelopeReuse) {
      if (!env) throw UsageError("envelope variant requires a global envelope");
      ClassKey key = eng.class_of_vfact(wf);
      std::vector<Elem> tuple;
      const Envelope* E = nullptr;
      try {
        E = eng.take_tuple(key, tuple);
      } catch (const EnvelopeExhausted&) {
        throw UsageError("no remaining envelope tuple for class " +
                         to_string(key));
      }
      for (std::size_t s = 0; s < E->index_positions.size(); ++s)
        ndng_source[static_cast<std::size_t>(E->index_positions[s].index - 1)] =
            tuple[s];
      clsname = to_string(key);
    } else {
      throw UsageError(
          "fresh variant requires empty NDng or an envelope/reuse source");
    }
  }

  Fact f{Sq.rel, std::vector<Elem>(static_cast<std::size_t>(arity))};
  long fresh_ctr = 0;
  auto fresh = [&] {
    return "~t" + std::to_string(J.inst.size()) + "_" +
           std::to_string(fresh_ctr++);
  };
  for (int i = 1; i <= arity; ++i) {
    Position pi{Sq.rel, i};
    if (i == Sq.index)
      f.args[i - 1] = a;
    else if (O.count(pi))
      f.args[i - 1] = ndng_source[static_cast<std::size_t>(i - 1)];
    else
      f.args[i - 1] = fresh();
  }
  for (int i = 1; i <= arity; ++i)
    if (!J.cov.count(f.args[i - 1]))
      J.cov[f.args[i - 1]] = wf.args[static_cast<std::size_t>(i - 1)];
  J.inst.add(f);
  if (log) log->steps.push_back({tau, a, variant, f, clsname});
  return f;
}

void ensure_essentiality(AlignedSuperinstance& J, const std::set<Fd>& fds,
                         const std::set<Uid>& rev_uids, int n,
                         GlobalEnvelope& env, BuildLog* log) {
  Engine eng(J.schema, J.chase->uids(), fds, J, env, log);
  for (int round = 0; round <= n; ++round) {
    auto pend = eng.violations(rev_uids);
    if (pend.empty()) break;
    for (const auto& [a, u] : pend)
      if (eng.active(u).count(a)) eng.do_step(u, a, true, nullptr);
  }
}

// ---------------------------------------------------------------------------
// Live relations, saturation (materialized flavors)

std::set<RelName> live_relations(const Schema& s, const Instance& I0,
                                 const std::set<Uid>& uids) {
  std::set<RelName> live;
  std::set<Position> live_pos;
  for (const auto& f : I0.facts()) {
    live.insert(f.rel);
    for (int i = 1; i <= static_cast<int>(f.args.size()); ++i)
      live_pos.insert({f.rel, i});
  }
  bool grew = true;
  while (grew) {
    grew = false;
    for (const auto& u : uids) {
      if (!live_pos.count(u.from)) continue;
      if (!live.count(u.to.rel)) {
        live.insert(u.to.rel);
        for (int i = 1; i <= s.arity(u.to.rel); ++i) {
          grew |= live_pos.insert({u.to.rel, i}).second;
        }
        grew = true;
      } else {
        grew |= live_pos.insert(u.to).second;
      }
    }
  }
  return live;
}

namespace {

// Identity-cov aligned superinstance from a materialized chase prefix.
AlignedSuperinstance aligned_from_prefix(const Schema& s, const Instance& I0,
                                         const std::set<Uid>& uids,
                                         const ChasePrefix& P, int k) {
  AlignedSuperinstance J;
  J.schema = s;
  J.base = I0;
  J.inst = P.instance();
  J.k = k;
  J.chase = std::make_shared<LazyChase>(s, I0, uids);
  LazyChase& C = *J.chase;
  // Map prefix facts onto lazy nodes, walking the forest top-down.
  std::vector<int> node_of(P.facts().size(), -1);
  std::map<Elem, LazyChase::VElem> cov;
  for (const auto& a : I0.domain()) cov[a] = LazyChase::VElem{-1, 0, a};
  for (std::size_t fi = 0; fi < P.facts().size(); ++fi) {
    const auto& cf = P.facts()[fi];
    if (cf.round == 0) continue;
    const Uid& via = *cf.via;
    const Elem& exported = cf.fact.args[via.to.index - 1];
    LazyChase::VElem pe = cov.at(exported);
    int node = C.child_of(pe, via.to);
    if (node < 0)
      throw InternalError("prefix fact has no lazy counterpart: " +
                          to_string(cf.fact));
    node_of[fi] = node;
    auto vf = C.fact_of(node);
    for (std::size_t i = 0; i < cf.fact.args.size(); ++i)
      cov.emplace(cf.fact.args[i], vf.args[i]);
  }
  J.cov = std::move(cov);
  return J;
}

}  // namespace

AlignedSuperinstance saturate_relation(const Schema& s, const Instance& I0,
                                       const std::set<Uid>& uids) {
  auto live = live_relations(s, I0, uids);
  ChasePrefix P(s, I0, uids);
  auto covered = [&] {
    Instance I = P.instance();
    for (const auto& r : live)
      if (!I.has_relation(r)) return false;
    return true;
  };
  int guard = static_cast<int>(s.positions().size()) + 2;
  for (int r = 0; !covered() && r < guard; ++r)
    chase_round(P, r == 0 ? ChaseMode::CoreFirst : ChaseMode::Plain);
  if (!covered()) throw InternalError("relation saturation did not converge");
  return aligned_from_prefix(s, I0, uids, P, 1);
}

AlignedSuperinstance saturate_fact(const Schema& s, const Instance& I0,
                                   const std::set<Uid>& uids,
                                   const std::set<Fd>& ufds, int k) {
  ChasePrefix P(s, I0, uids);
  // Chase until one extra round adds no new achieved class.
  std::set<std::pair<Position, std::vector<int>>> prev;
  int stable_at = -1;
  for (int r = 0; r < 3 * (k + 2) + 12; ++r) {
    chase_round(P, r == 0 ? ChaseMode::CoreFirst : ChaseMode::Plain);
    auto cls = achieved_fact_classes(P, k, ufds);
    std::set<std::pair<Position, std::vector<int>>> cur;
    for (const auto& c : cls) cur.insert({c.exported, c.classes});
    if (cur == prev && !cur.empty()) {
      stable_at = r;
      break;
    }
    if (P.rounds_done() > k + 2 && cur == prev) {
      stable_at = r;
      break;
    }
    prev = std::move(cur);
  }
  if (stable_at < 0)
    throw ResourceError("fact saturation did not stabilize in budget");
  return aligned_from_prefix(s, I0, uids, P, k);
}

// ---------------------------------------------------------------------------
// Weakly-sound completion (stage `weak`)

Instance weak_completion(const Schema& s, const Instance& I0,
                         const std::set<Uid>& rev_uids,
                         const std::set<Fd>& ufds, std::uint64_t seed) {
  for (const auto& u : rev_uids)
    if (!rev_uids.count(reverse(u)))
      throw UsageError("weak_completion requires reversible UIDs");
  if (!satisfies_fds(I0, ufds))
    throw UsageError("weak_completion: instance violates the unary FDs");

  // Relation saturation by chase rounds.
  auto live = live_relations(s, I0, rev_uids);
  ChasePrefix P(s, I0, rev_uids);
  auto covered = [&] {
    Instance I = P.instance();
    for (const auto& r : live)
      if (!I.has_relation(r)) return false;
    return true;
  };
  int guard = static_cast<int>(s.positions().size()) + 2;
  for (int r = 0; !covered() && r < guard; ++r)
    chase_round(P, r == 0 ? ChaseMode::CoreFirst : ChaseMode::Plain);
  Instance I = P.instance();

  PssInstance pss = balance(s, I, rev_uids, ufds);
  PiecewiseRealization PI = piecewise_realization(s, pss, ufds, seed);

  long fresh_ctr = 0;
  long steps = 0;
  while (true) {
    std::optional<std::pair<Elem, Uid>> pick;
    for (const auto& u : rev_uids) {
      auto act = active_elements(I, u);
      if (!act.empty()) {
        auto cand = std::make_pair(*act.begin(), u);
        if (!pick || cand < *pick) pick = cand;
      }
    }
    if (!pick) break;
    if (++steps > 100000)
      throw InternalError("weak_completion did not terminate");
    const auto& [a, tau] = *pick;
    const Position& Sq = tau.to;
    auto t = PI.tuple_with(Sq, a);
    if (!t)
      throw InternalError("weak_completion: no realization tuple for " + a);
    const auto& cls = PI.classes[PI.class_of.at(Sq)];
    std::set<Position> O = nondangerous(s, ufds, Sq);
    // Reuse fact: any existing fact of the relation.
    const Fact* reuse = nullptr;
    for (const auto& f : I.facts())
      if (f.rel == Sq.rel) {
        reuse = &f;
        break;
      }
    if (!O.empty() && !reuse)
      throw InternalError("weak_completion: relation saturation failed");
    Fact f{Sq.rel, std::vector<Elem>(
                       static_cast<std::size_t>(s.arity(Sq.rel)))};
    for (int i = 1; i <= s.arity(Sq.rel); ++i) {
      Position pi{Sq.rel, i};
      auto it = std::find(cls.begin(), cls.end(), pi);
      if (it != cls.end())
        f.args[i - 1] = (*t)[static_cast<std::size_t>(it - cls.begin())];
      else if (O.count(pi))
        f.args[i - 1] = reuse->args[i - 1];
      else
        f.args[i - 1] = "~w" + std::to_string(fresh_ctr++);
    }
    I.add(std::move(f));
  }
  return I;
}

// ---------------------------------------------------------------------------
// Full completion

namespace {

struct PoolEntry {
  ClassKey key;
  bool safe = false;
  int achiever_node = -1;       // min-depth achiever in the analysis chase
  int deep_achiever_node = -1;  // first anchor-free achiever (depth >= k+2)
};

// Spine of a node: anchor element plus the (intro position, target) walk,
// reconstructible in any chase over a renamed copy of the base.
struct Spine {
  Elem anchor;
  std::vector<std::pair<int, Position>> hops;  // (parent pos, target); hops[0]
                                               // parent pos unused
};

Spine spine_of(LazyChase& C, int node) {
  Spine s;
  std::vector<std::pair<int, Position>> rev;
  int cur = node;
  while (true) {
    Uid via = C.via_of(cur);
    auto pe = C.exported_elem(cur);
    if (pe.is_base()) {
      rev.push_back({0, C.exported_position(cur)});
      s.anchor = pe.base_elem;
      break;
    }
    rev.push_back({pe.pos, C.exported_position(cur)});
    cur = pe.node;
    (void)via;
  }
  std::reverse(rev.begin(), rev.end());
  s.hops = std::move(rev);
  return s;
}

int follow_spine(LazyChase& C, const Spine& s, const Elem& anchor) {
  int node = C.child_of_base(anchor, s.hops[0].second);
  if (node < 0)
    throw InternalError("spine does not replay from anchor " + anchor);
  for (std::size_t i = 1; i < s.hops.size(); ++i) {
    node = C.child_of(LazyChase::VElem{node, s.hops[i].first, {}},
                      s.hops[i].second);
    if (node < 0) throw InternalError("spine replay failed");
  }
  return node;
}

struct Completion {
  const Schema& schema_in;
  const DependencySet& closed;
  const Instance& I0;
  int k;
  BuildOptions opts;

  Schema schema;
  std::set<Fd> ufds;
  BuildResult R;
  std::unique_ptr<Engine> eng;
  long copy_counter = 0;

  Completion(const Schema& s, const Instance& I0, const DependencySet& closed,
             int k, const BuildOptions& opts)
      : schema_in(s), closed(closed), I0(I0), k(k), opts(opts) {
    for (const auto& f : closed.fds)
      if (f.unary()) ufds.insert(f);
  }

  // --- analysis on the single-copy chase: reachable fact classes ---
  std::map<ClassKey, PoolEntry> analyze_pool(LazyChase& C1) {
    std::map<ClassKey, PoolEntry> pool;
    std::set<std::string> seen_ctx;
    std::vector<int> frontier;
    for (const auto& a : C1.base().domain())
      for (const auto& t : C1.base_wants(a))
        frontier.push_back(C1.child_of_base(a, t));
    std::size_t qi = 0;
    long guard = 0;
    while (qi < frontier.size()) {
      if (++guard > opts.size_cap)
        throw ResourceError("class analysis exceeded the size cap");
      int node = frontier[qi++];
      auto vf = C1.fact_of(node);
      Position exported = C1.exported_position(node);
      if (!nondangerous(schema, ufds, exported).empty()) {
        ClassKey key;
        key.exported = exported;
        for (const auto& e : vf.args) key.typekeys.push_back(C1.typekey(e, k));
        auto [it, fresh] = pool.emplace(key, PoolEntry{key, false, node, -1});
        if (fresh) {
          auto cl = fd_attribute_closure(
              closed.fds, exported.rel,
              [&] {
                std::set<int> o;
                for (const auto& p :
                     nondangerous(schema, ufds, exported))
                  o.insert(p.index);
                return o;
              }());
          std::set<int> O;
          for (const auto& p : nondangerous(schema, ufds, exported))
            O.insert(p.index);
          bool unsafe = false;
          for (int r : cl)
            if (!O.count(r)) unsafe = true;
          it->second.safe = !unsafe;
        }
        if (it->second.deep_achiever_node < 0 && C1.depth(node) >= k + 2)
          it->second.deep_achiever_node = node;
      }
      // Expand children of introduced elements, keyed by (k+2)-context.
      for (int i = 1; i <= static_cast<int>(vf.args.size()); ++i) {
        if (i == C1.exported_position(node).index) continue;
        LazyChase::VElem e{node, i, {}};
        for (const auto& t : C1.targets(C1.position_of(e))) {
          int c = C1.child_of(e, t);
          if (c < 0) continue;
          // Context of the child fact: exported element's (k+1)-spine.
          std::ostringstream ctx;
          ctx << to_string(t) << intro_context(C1, c);
          if (seen_ctx.insert(ctx.str()).second) frontier.push_back(c);
        }
      }
    }
    return pool;
  }

  std::string intro_context(LazyChase& C, int node) const {
    // Serialize up to k+2 hops above the node; anchored contexts include the
    // anchor element.
    std::ostringstream os;
    int cur = node;
    for (int i = 0; i <= k + 2; ++i) {
      os << "|" << to_string(C.exported_position(cur));
      auto pe = C.exported_elem(cur);
      if (pe.is_base()) {
        os << "|b:" << pe.base_elem;
        return os.str();
      }
      os << "@" << pe.pos;
      cur = pe.node;
    }
    return os.str();
  }

  Elem copy_name(long copy, const Elem& e) const {
    return copy == 0 ? e : "c" + std::to_string(copy) + ":" + e;
  }

  // Make base copy `idx` (fresh individualizing relations when requested).
  void add_base_copy(Instance& base, Schema& sch, long idx) {
    for (const auto& f : I0.facts()) {
      Fact g = f;
      if (idx > 0 && opts.per_copy_individualization &&
          f.rel.rfind("~P", 0) == 0) {
        g.rel = f.rel + "#c" + std::to_string(idx);
        if (!sch.has(g.rel)) sch.add_relation(g.rel, 1);
      }
      for (auto& a : g.args) a = copy_name(idx, a);
      base.add(std::move(g));
    }
  }

  void attempt(long K) {
    schema = schema_in;
    R = BuildResult{};
    R.J.k = k;

    // Phase A: single-copy analysis.
    LazyChase C1(schema_in, I0, closed.uids);
    auto pool = analyze_pool(C1);
    R.log.stats["pool_classes"] = static_cast<long>(pool.size());

    // Phase B: sizing and base construction.
    struct ClusterPlan {
      ClassKey key;
      Spine spine;
      Instance dense;
      std::vector<Position> O;
      std::vector<Fact> cover;  // one fact per copy
      long first_copy = 0;
    };
    std::vector<ClusterPlan> clusters;
    std::vector<PoolEntry> safe_entries;
    for (auto& [key, entry] : pool) {
      if (entry.safe || entry.deep_achiever_node < 0) {
        safe_entries.push_back(entry);
        continue;
      }
      ClusterPlan plan;
      plan.key = key;
      plan.spine = spine_of(C1, entry.deep_achiever_node);
      auto Ops = nondangerous(schema, ufds, key.exported);
      plan.O.assign(Ops.begin(), Ops.end());
      // Projected FDs on R|O (semantic projection, keys included).
      RelName po_rel = "~O_" + key.exported.rel + "_" +
                       std::to_string(key.exported.index);
      Schema po_schema;
      po_schema.add_relation(po_rel, static_cast<int>(plan.O.size()));
      std::set<Fd> po_fds;
      {
        std::vector<int> ovec;
        for (const auto& p : plan.O) ovec.push_back(p.index);
        std::map<int, int> slot_of;
        for (std::size_t i = 0; i < ovec.size(); ++i)
          slot_of[ovec[i]] = static_cast<int>(i) + 1;
        int m = static_cast<int>(ovec.size());
        for (unsigned mask = 1; mask < (1u << m); ++mask) {
          std::set<int> L;
          for (int i = 0; i < m; ++i)
            if (mask & (1u << i)) L.insert(ovec[static_cast<std::size_t>(i)]);
          auto cl = fd_attribute_closure(closed.fds, key.exported.rel, L);
          bool escapes = false;
          std::set<int> inside;
          for (int r : cl) {
            if (slot_of.count(r))
              inside.insert(r);
            else if (r != key.exported.index ||
                     true)  // any position outside O
              escapes = true;
          }
          std::set<int> Lslots;
          for (int l : L) Lslots.insert(slot_of.at(l));
          if (escapes) {
            for (int o : ovec)
              if (!L.count(o)) po_fds.insert(Fd{po_rel, Lslots, slot_of.at(o)});
          } else {
            for (int r : inside)
              if (!L.count(r)) po_fds.insert(Fd{po_rel, Lslots, slot_of.at(r)});
          }
        }
      }
      // Dense instance sized so that remaining tuples >= K.
      int D = min_key_size(po_schema, po_rel, [&] {
        std::set<Fd> u;
        for (const auto& f : po_fds)
          if (f.unary()) u.insert(f);
        return u;
      }());
      if (D < 2)
        throw InternalError("unsafe class projects to a unary key: " +
                            to_string(key));
      long n = 2;
      while (true) {
        long facts = 1;
        for (int j = 0; j < D; ++j) facts *= n;
        // Rough dom bound: D * n^(D-1) + 1.
        long dom = 1;
        for (int j = 0; j < D - 1; ++j) dom *= n;
        dom = dom * D + 1;
        if (facts - dom >= K) break;
        ++n;
        if (n > 4000)
          throw ResourceError("dense sizing exploded for " + to_string(key));
      }
      auto [dense, N] = dense_interpretation(po_schema, po_rel, po_fds, 1, n);
      (void)N;
      plan.dense = dense;
      // Cover: for each domain element pick one fact, dedupe.
      std::set<Fact> cover_set;
      std::set<Elem> covered;
      for (const auto& f : plan.dense.facts()) {
        bool useful = false;
        for (const auto& a : f.args)
          if (!covered.count(a)) useful = true;
        if (useful) {
          cover_set.insert(f);
          covered.insert(f.args.begin(), f.args.end());
        }
      }
      for (const auto& f : cover_set) plan.cover.push_back(f);
      clusters.push_back(std::move(plan));
    }

    // Base: copy 0 plus cluster copies.
    Instance base = I0;
    long next_copy = 1;
    for (auto& plan : clusters) {
      plan.first_copy = next_copy;
      for (std::size_t c = 0; c < plan.cover.size(); ++c)
        add_base_copy(base, schema, next_copy++);
    }
    R.log.stats["base_copies"] = next_copy;

    R.J.schema = schema;
    R.J.base = base;
    R.J.inst = base;
    R.J.chase = std::make_shared<LazyChase>(schema, base, closed.uids);
    for (const auto& a : base.domain())
      R.J.cov[a] = LazyChase::VElem{-1, 0, a};

    eng = std::make_unique<Engine>(schema, closed.uids, closed.fds, R.J,
                                   R.envelopes, &R.log);
    LazyChase& C = *R.J.chase;

    // Materialize cluster paths and identified achiever facts; build
    // envelopes for unsafe classes.
    std::mt19937_64 rng(opts.seed);
    for (auto& plan : clusters) {
      Envelope E;
      E.exported = plan.key.exported;
      E.index_positions = plan.O;
      E.safe = false;
      std::vector<std::vector<Elem>> all_tuples;
      for (const auto& f : plan.dense.facts()) all_tuples.push_back(f.args);
      std::shuffle(all_tuples.begin(), all_tuples.end(), rng);
      E.tuples = std::move(all_tuples);

      for (std::size_t c = 0; c < plan.cover.size(); ++c) {
        Elem anchor = copy_name(plan.first_copy + static_cast<long>(c),
                                plan.spine.anchor);
        int achiever = follow_spine(C, plan.spine, anchor);
        // Materialize the path above the achiever.
        std::vector<int> path;
        int cur = achiever;
        while (true) {
          path.push_back(cur);
          auto pe = C.exported_elem(cur);
          if (pe.is_base()) break;
          cur = pe.node;
        }
        std::reverse(path.begin(), path.end());
        for (std::size_t i = 0; i + 1 < path.size(); ++i)
          eng->materialize_vfact(C.fact_of(path[i]));
        // Identified achiever fact: O positions renamed to the cover tuple.
        auto vf = C.fact_of(achiever);
        Fact f{vf.rel, {}};
        for (std::size_t i = 0; i < vf.args.size(); ++i) {
          Position pi{vf.rel, static_cast<int>(i) + 1};
          auto oit = std::find(plan.O.begin(), plan.O.end(), pi);
          if (oit != plan.O.end()) {
            const Elem& d =
                plan.cover[c].args[static_cast<std::size_t>(
                    oit - plan.O.begin())];
            f.args.push_back(d);
            if (!R.J.cov.count(d)) R.J.cov[d] = vf.args[i];
          } else {
            f.args.push_back(C.name_of(vf.args[i]));
            if (!R.J.cov.count(f.args.back()))
              R.J.cov[f.args.back()] = vf.args[i];
          }
        }
        eng->add_fact(f, C.via_of(achiever), C.name_of(C.exported_elem(achiever)),
                      StepVariant::Materialize, to_string(plan.key));
        E.used.insert(plan.cover[c].args);
      }
      R.envelopes.classes.emplace(plan.key, std::move(E));
    }

    // Safe classes: materialize the min-depth achiever path into copy 0 and
    // use its NDng projection as the singleton envelope.
    for (const auto& entry : safe_entries) {
      if (!entry.safe) continue;  // unsafe without deep achiever: unreachable
      Spine sp = spine_of(C1, entry.achiever_node);
      int achiever = follow_spine(C, sp, sp.anchor);
      std::vector<int> path;
      int cur = achiever;
      while (true) {
        path.push_back(cur);
        auto pe = C.exported_elem(cur);
        if (pe.is_base()) break;
        cur = pe.node;
      }
      std::reverse(path.begin(), path.end());
      for (int node : path) eng->materialize_vfact(C.fact_of(node));
      Envelope E;
      E.exported = entry.key.exported;
      auto Ops = nondangerous(schema, ufds, entry.key.exported);
      E.index_positions.assign(Ops.begin(), Ops.end());
      E.safe = true;
      auto vf = C.fact_of(achiever);
      std::vector<Elem> tuple;
      for (const auto& p : E.index_positions)
        tuple.push_back(C.name_of(vf.args[static_cast<std::size_t>(p.index - 1)]));
      E.tuples.push_back(std::move(tuple));
      R.envelopes.classes.emplace(entry.key, std::move(E));
    }

    // Shallow prechase: violations whose witness sits at depth <= k+1 are
    // satisfied by materializing the actual chase fact.
    while (true) {
      bool changed = false;
      for (const auto& [a, u] : eng->violations(closed.uids)) {
        if (!eng->active(u).count(a)) continue;
        auto wf = eng->witness_for(a, u.to);
        if (C.depth(wf.node) > k + 1) continue;
        if (C.name_of(R.J.cov.at(a)) != a)
          throw InternalError("shallow witness on a renamed element " + a);
        eng->materialize_vfact(wf);
        changed = true;
      }
      if (!changed) break;
      if (static_cast<long>(R.J.inst.size()) > opts.size_cap)
        throw ResourceError("prechase exceeded the size cap");
    }
    R.log.stats["after_prechase"] = static_cast<long>(R.J.inst.size());

    // Class-by-class completion.
    auto partition = manageable_partition(schema, closed);
    int class_idx = 0;
    for (const auto& P : partition) {
      ++class_idx;
      if (P.reversible) {
        ensure_essentiality(R.J, closed.fds, P.uids, k, R.envelopes, &R.log);
        PssInstance pss = balance(schema, R.J.inst, P.uids, ufds,
                                  "~h" + std::to_string(class_idx) + "_");
        PiecewiseRealization PI = piecewise_realization(
            schema, pss, ufds, opts.seed * 7919 + class_idx);
        long steps = 0;
        while (true) {
          auto pend = eng->violations(P.uids);
          if (pend.empty()) break;
          for (const auto& [a, u] : pend)
            if (eng->active(u).count(a)) eng->do_step(u, a, false, &PI);
          if (++steps > opts.size_cap)
            throw InternalError("realization loop did not terminate");
        }
      } else {
        auto pend = eng->violations(P.uids);
        for (const auto& [a, u] : pend)
          if (eng->active(u).count(a)) eng->do_step(u, a, true, nullptr);
      }
      if (static_cast<long>(R.J.inst.size()) > opts.size_cap)
        throw ResourceError("completion exceeded the size cap");
      if (opts.validate) {
        // Classes processed so far must stay satisfied.
        for (int i = 0; i < class_idx; ++i)
          for (const auto& u : partition[static_cast<std::size_t>(i)].uids)
            if (!active_elements(R.J.inst, u).empty())
              throw InternalError("earlier class re-violated: " + to_string(u));
      }
    }

    // Final checks.
    if (auto v = find_violation(R.J.inst, closed))
      throw InternalError("completion output violates dependencies: " + *v);
    if (opts.validate) {
      if (auto e = validate_aligned(R.J, closed.fds))
        throw InternalError("aligned validation failed: " + *e);
    }
  }
};

}  // namespace

BuildResult complete_acq_universal(const Schema& s, const Instance& I0,
                                   const DependencySet& closed, int k,
                                   const BuildOptions& opts) {
  if (!closed.finitely_closed)
    throw UsageError("complete_acq_universal requires a finitely closed set");
  if (k < 1) throw UsageError("complete_acq_universal requires k >= 1");
  if (!satisfies_fds(I0, closed.fds))
    throw UsageError("complete_acq_universal: instance violates the FDs");
  validate(s, I0);

  long K = opts.envelope_budget;
  for (int attempt = 0; attempt <= opts.budget_retries; ++attempt) {
    Completion c(s, I0, closed, k, opts);
    try {
      c.attempt(K);
      c.R.log.stats["envelope_budget"] = K;
      return std::move(c.R);
    } catch (const EnvelopeExhausted&) {
      K *= 2;
    }
  }
  throw ResourceError("complete_acq_universal: envelope budget exhausted");
}

}  // namespace fcqa
