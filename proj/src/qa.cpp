#include "fcqa/qa.hpp"

#include <algorithm>
#include <functional>

namespace fcqa {

// ---------------------------------------------------------------------------
// Query analysis

bool is_berge_acyclic(const CQ& q) {
  // Incidence multigraph: atoms + variables, one edge per occurrence.
  // A multigraph is a forest iff #edges = #vertices - #components.
  std::map<std::string, int> varid;
  int nv = 0;
  for (const auto& a : q.atoms)
    for (const auto& t : a.args)
      if (t.is_var && !varid.count(t.text)) varid[t.text] = nv++;
  int atoms = static_cast<int>(q.atoms.size());
  int vertices = atoms + nv;
  int edges = 0;
  std::vector<int> uf(vertices);
  for (int i = 0; i < vertices; ++i) uf[i] = i;
  std::function<int(int)> find = [&](int x) {
    while (uf[x] != x) x = uf[x] = uf[uf[x]];
    return x;
  };
  int components = vertices;
  for (int ai = 0; ai < atoms; ++ai)
    for (const auto& t : q.atoms[ai].args) {
      if (!t.is_var) continue;
      ++edges;
      int x = find(ai), y = find(atoms + varid.at(t.text));
      if (x != y) {
        uf[x] = y;
        --components;
      }
    }
  return edges == vertices - components;
}

QueryAnalysis analyze_query(const Schema& s, const CQ& q) {
  validate(s, q);
  QueryAnalysis out;

  // Connected components over shared variables.
  int n = static_cast<int>(q.atoms.size());
  std::vector<int> uf(n);
  for (int i = 0; i < n; ++i) uf[i] = i;
  std::function<int(int)> find = [&](int x) {
    while (uf[x] != x) x = uf[x] = uf[uf[x]];
    return x;
  };
  std::map<std::string, int> first_atom;
  for (int i = 0; i < n; ++i)
    for (const auto& t : q.atoms[i].args) {
      if (!t.is_var) continue;
      auto [it, fresh] = first_atom.emplace(t.text, i);
      if (!fresh) uf[find(i)] = find(it->second);
    }
  std::map<int, int> comp_index;
  for (int i = 0; i < n; ++i) {
    int r = find(i);
    auto [it, fresh] = comp_index.emplace(r, static_cast<int>(out.components.size()));
    if (fresh) out.components.push_back(CQ{});
    out.components[it->second].atoms.push_back(q.atoms[i]);
  }
  for (const auto& c : out.components) {
    bool ac = is_berge_acyclic(c);
    out.acyclic.push_back(ac);
    out.all_acyclic = out.all_acyclic && ac;
  }

  // Constant elimination: c becomes x_c plus atom P_c(x_c) and fact P_c(c).
  out.constant_free = q;
  std::set<Elem> consts;
  for (auto& a : out.constant_free.atoms)
    for (auto& t : a.args)
      if (!t.is_var) consts.insert(t.text);
  for (const auto& c : consts) {
    RelName pc = "~Pc_" + c;
    std::string var = "~xc_" + c;
    out.constant_free.atoms.push_back(
        CQAtom{pc, {Term{var, true}}});
    out.added_facts.push_back(Fact{pc, {c}});
    out.added_rels.push_back(pc);
  }
  for (auto& a : out.constant_free.atoms)
    for (auto& t : a.args)
      if (!t.is_var) t = Term{"~xc_" + t.text, true};
  return out;
}

// ---------------------------------------------------------------------------
// Matching on finite instances

namespace {

bool consistent(const CQAtom& atom, const Fact& f, const Match& h) {
  if (atom.rel != f.rel || atom.args.size() != f.args.size()) return false;
  std::map<std::string, Elem> local;
  for (std::size_t i = 0; i < atom.args.size(); ++i) {
    const Term& t = atom.args[i];
    if (!t.is_var) {
      if (f.args[i] != t.text) return false;
    } else {
      auto it = h.find(t.text);
      const Elem* bound = it != h.end() ? &it->second : nullptr;
      auto lt = local.find(t.text);
      if (lt != local.end()) {
        if (lt->second != f.args[i]) return false;
      } else if (bound) {
        if (*bound != f.args[i]) return false;
      } else {
        local[t.text] = f.args[i];
      }
    }
  }
  return true;
}

void bind(const CQAtom& atom, const Fact& f, Match& h) {
  for (std::size_t i = 0; i < atom.args.size(); ++i)
    if (atom.args[i].is_var) h[atom.args[i].text] = f.args[i];
}

bool search(const CQ& q, const Instance& I, std::vector<bool>& done, Match& h) {
  // Next atom: prefer one with a bound variable, fewest candidates.
  int best = -1;
  std::size_t best_cands = 0;
  for (std::size_t i = 0; i < q.atoms.size(); ++i) {
    if (done[i]) continue;
    bool bound = false;
    for (const auto& t : q.atoms[i].args)
      if (!t.is_var || h.count(t.text)) bound = true;
    std::size_t cands = 0;
    for (const auto& f : I.facts())
      if (consistent(q.atoms[i], f, h)) ++cands;
    if (best < 0 || (bound && best_cands > cands) ||
        (!bound && best_cands > cands && cands == 0)) {
      best = static_cast<int>(i);
      best_cands = cands;
      if (bound) break;  // greedy: connected order suffices
    }
  }
  if (best < 0) return true;
  done[best] = true;
  for (const auto& f : I.facts()) {
    if (!consistent(q.atoms[best], f, h)) continue;
    Match saved = h;
    bind(q.atoms[best], f, h);
    if (search(q, I, done, h)) return true;
    h = std::move(saved);
  }
  done[best] = false;
  return false;
}

}  // namespace

std::optional<Match> find_match(const CQ& q, const Instance& I) {
  Match h;
  std::vector<bool> done(q.atoms.size(), false);
  if (search(q, I, done, h)) return h;
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Matching on the lazy chase

namespace {

using VElem = LazyChase::VElem;
using VFact = LazyChase::VFact;
using VMatch = std::map<std::string, VElem>;

bool vconsistent(const CQAtom& atom, const VFact& f, const VMatch& h) {
  if (atom.rel != f.rel || atom.args.size() != f.args.size()) return false;
  std::map<std::string, VElem> local;
  for (std::size_t i = 0; i < atom.args.size(); ++i) {
    const Term& t = atom.args[i];
    if (!t.is_var) {
      if (!(f.args[i].is_base() && f.args[i].base_elem == t.text)) return false;
    } else {
      auto lt = local.find(t.text);
      auto it = h.find(t.text);
      if (lt != local.end()) {
        if (!(lt->second == f.args[i])) return false;
      } else if (it != h.end()) {
        if (!(it->second == f.args[i])) return false;
      } else {
        local[t.text] = f.args[i];
      }
    }
  }
  return true;
}

struct ChaseSearch {
  const CQ& q;
  LazyChase& C;
  int maxdepth;

  bool deep_enough(const VFact& f) const { return C.depth(f.node) <= maxdepth; }

  // Candidate facts for an atom given current bindings: if some variable is
  // bound, enumerate that element's facts at the variable's position.
  bool extend(std::vector<bool>& done, VMatch& h) {
    int pick = -1;
    int pick_pos = -1;
    std::string pick_var;
    for (std::size_t i = 0; i < q.atoms.size() && pick < 0; ++i) {
      if (done[i]) continue;
      const auto& atom = q.atoms[i];
      for (std::size_t j = 0; j < atom.args.size(); ++j) {
        const Term& t = atom.args[j];
        if (t.is_var && h.count(t.text)) {
          pick = static_cast<int>(i);
          pick_pos = static_cast<int>(j) + 1;
          pick_var = t.text;
          break;
        }
        if (!t.is_var) {
          pick = static_cast<int>(i);
          pick_pos = static_cast<int>(j) + 1;
          pick_var = "";
          break;
        }
      }
    }
    if (pick < 0) {
      for (std::size_t i = 0; i < q.atoms.size(); ++i)
        if (!done[i]) return false;  // disconnected atom: caller's bug
      return true;
    }
    const auto& atom = q.atoms[pick];
    VElem at = pick_var.empty()
                   ? VElem{-1, 0, atom.args[pick_pos - 1].text}
                   : h.at(pick_var);
    Position where{atom.rel, pick_pos};
    done[pick] = true;
    for (auto& f : C.facts_with_at(at, where)) {
      if (!deep_enough(f) || !vconsistent(atom, f, h)) continue;
      VMatch saved = h;
      for (std::size_t i = 0; i < atom.args.size(); ++i)
        if (atom.args[i].is_var) h[atom.args[i].text] = f.args[i];
      if (extend(done, h)) return true;
      h = std::move(saved);
    }
    done[pick] = false;
    return false;
  }

  bool run(const VFact& anchor, int anchor_atom, VMatch& h) {
    std::vector<bool> done(q.atoms.size(), false);
    if (!vconsistent(q.atoms[anchor_atom], anchor, h)) return false;
    done[anchor_atom] = true;
    for (std::size_t i = 0; i < q.atoms[anchor_atom].args.size(); ++i)
      if (q.atoms[anchor_atom].args[i].is_var)
        h[q.atoms[anchor_atom].args[i].text] = anchor.args[i];
    return extend(done, h);
  }
};

}  // namespace

std::optional<Match> find_match_chase(const CQ& q, LazyChase& C,
                                      int maxdepth) {
  if (q.atoms.empty()) return Match{};

  // Anchor facts: base facts, round-1 facts, and children of one
  // representative element per realized position.
  std::vector<VFact> anchors;
  for (int i = 0; i < C.base_fact_count(); ++i) anchors.push_back(C.fact_of(i));
  std::map<Position, VElem> reps;
  std::vector<VElem> frontier;
  for (const auto& [a, wants] : [&] {
        std::map<Elem, std::set<Position>> all;
        for (const auto& e : C.base().domain()) all[e] = C.base_wants(e);
        return all;
      }()) {
    for (const auto& t : wants) {
      int node = C.child_of_base(a, t);
      if (node < 0 || C.depth(node) > maxdepth) continue;
      auto f = C.fact_of(node);
      anchors.push_back(f);
      for (const auto& e : f.args)
        if (!e.is_base() && reps.emplace(C.position_of(e), e).second)
          frontier.push_back(e);
    }
  }
  // BFS over positions via representative elements.
  for (std::size_t i = 0; i < frontier.size(); ++i) {
    VElem e = frontier[i];
    for (const auto& t : C.targets(C.position_of(e))) {
      int node = C.child_of(e, t);
      if (node < 0 || C.depth(node) > maxdepth) continue;
      auto f = C.fact_of(node);
      anchors.push_back(f);
      for (const auto& x : f.args)
        if (!x.is_base() && reps.emplace(C.position_of(x), x).second)
          frontier.push_back(x);
    }
  }

  ChaseSearch S{q, C, maxdepth};
  for (std::size_t ai = 0; ai < q.atoms.size(); ++ai)
    for (auto& f : anchors) {
      if (f.rel != q.atoms[ai].rel) continue;
      VMatch h;
      if (S.run(f, static_cast<int>(ai), h)) {
        Match out;
        for (const auto& [v, e] : h) out[v] = C.name_of(e);
        return out;
      }
    }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Dependency satisfaction

bool satisfies_fds(const Instance& I, const std::set<Fd>& fds) {
  for (const auto& fd : fds) {
    std::map<std::vector<Elem>, Elem> seen;
    for (const auto& f : I.facts()) {
      if (f.rel != fd.rel) continue;
      std::vector<Elem> key;
      for (int i : fd.lhs) key.push_back(f.args[i - 1]);
      auto [it, fresh] = seen.emplace(std::move(key), f.args[fd.rhs - 1]);
      if (!fresh && it->second != f.args[fd.rhs - 1]) return false;
    }
  }
  return true;
}

std::optional<std::string> find_violation(const Instance& I,
                                          const DependencySet& deps) {
  for (const auto& fd : deps.fds) {
    std::map<std::vector<Elem>, const Fact*> seen;
    for (const auto& f : I.facts()) {
      if (f.rel != fd.rel) continue;
      std::vector<Elem> key;
      for (int i : fd.lhs) key.push_back(f.args[i - 1]);
      auto [it, fresh] = seen.emplace(std::move(key), &f);
      if (!fresh && it->second->args[fd.rhs - 1] != f.args[fd.rhs - 1])
        return "FD " + to_string(fd) + " violated by " +
               to_string(*it->second) + " and " + to_string(f);
    }
  }
  for (const auto& u : deps.uids) {
    auto act = active_elements(I, u);
    if (!act.empty())
      return "UID " + to_string(u) + " violated on element " + *act.begin();
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// UQA / FQA

namespace {

int default_depth(const Schema& s, const CQ& q) {
  int pos = static_cast<int>(s.positions().size());
  return std::max<int>(1, static_cast<int>(q.atoms.size())) * (pos + 1);
}

// One evaluation at a fixed depth.
std::pair<bool, std::optional<Match>> eval_at_depth(
    const Schema& s, const Instance& I0, const std::set<Uid>& uids,
    const QueryAnalysis& an, int depth) {
  LazyChase chase(s, I0, uids);
  Match combined;
  for (const auto& comp : an.components) {
    auto m = find_match_chase(comp, chase, depth);
    if (!m) return {false, std::nullopt};
    combined.insert(m->begin(), m->end());
  }
  return {true, combined};
}

}  // namespace

QaResult decide_uqa(const Schema& s, const Instance& I0,
                    const DependencySet& deps, const CQ& q,
                    const QaOptions& opts) {
  validate(s, q);
  if (!q.boolean()) throw UsageError("decide_uqa requires a Boolean query");
  validate(s, I0);
  QaResult res;
  if (!satisfies_fds(I0, deps.fds)) {
    res.answer = true;  // vacuous entailment
    res.vacuous = true;
    return res;
  }
  std::set<Uid> uids = deps.uid_transitively_closed
                           ? deps.uids
                           : uid_transitive_closure(deps.uids);

  // Constant elimination: extend schema and instance.
  QueryAnalysis an = analyze_query(s, q);
  Schema s2 = s;
  Instance I = I0;
  for (const auto& r : an.added_rels) s2.add_relation(r, 1);
  for (const auto& f : an.added_facts) I.add(f);
  QueryAnalysis an2 = analyze_query(s2, an.constant_free);

  int depth = opts.depth_override.value_or(default_depth(s, q));
  auto [ans, witness] = eval_at_depth(s2, I, uids, an2, depth);
  res.answer = ans;
  res.depth_used = depth;
  res.witness = witness;
  if (opts.stability_check) {
    auto [ans2, w2] = eval_at_depth(s2, I, uids, an2, 2 * depth);
    (void)w2;
    if (ans2 != ans)
      throw InternalError(
          "uqa depth instability: answers differ between depth " +
          std::to_string(depth) + " and " + std::to_string(2 * depth));
  }
  return res;
}

QaResult decide_fqa(const Schema& s, const Instance& I0,
                    const DependencySet& deps, const CQ& q,
                    const QaOptions& opts) {
  DependencySet closed =
      deps.finitely_closed ? deps : finite_closure(s, deps);
  return decide_uqa(s, I0, closed, q, opts);
}

std::set<std::vector<Elem>> certain_answers(const Schema& s,
                                            const Instance& I0,
                                            const DependencySet& deps,
                                            const CQ& q, bool finite,
                                            const QaOptions& opts) {
  if (q.boolean()) throw UsageError("certain_answers requires free variables");
  std::set<std::vector<Elem>> out;
  std::vector<Elem> dom(I0.domain().begin(), I0.domain().end());
  std::vector<std::size_t> idx(q.free_vars.size(), 0);
  if (dom.empty()) return out;
  while (true) {
    CQ ground = q;
    ground.free_vars.clear();
    std::vector<Elem> tuple;
    for (std::size_t i = 0; i < q.free_vars.size(); ++i)
      tuple.push_back(dom[idx[i]]);
    for (auto& a : ground.atoms)
      for (auto& t : a.args)
        if (t.is_var)
          for (std::size_t i = 0; i < q.free_vars.size(); ++i)
            if (t.text == q.free_vars[i]) t = Term{tuple[i], false};
    QaResult r = finite ? decide_fqa(s, I0, deps, ground, opts)
                        : decide_uqa(s, I0, deps, ground, opts);
    if (r.answer) out.insert(tuple);
    std::size_t j = 0;
    while (j < idx.size() && ++idx[j] == dom.size()) idx[j++] = 0;
    if (j == idx.size()) break;
  }
  return out;
}

}  // namespace fcqa
