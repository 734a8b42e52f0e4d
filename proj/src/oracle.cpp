#include "fcqa/oracle.hpp"

#include <algorithm>
#include <sstream>

namespace fcqa {

// ---------------------------------------------------------------------------
// verify_model

AuditReport verify_model(const Instance& I, const DependencySet& deps) {
  AuditReport rep;
  for (const auto& fd : deps.fds) {
    ++rep.checked["fd"];
    std::map<std::vector<Elem>, const Fact*> seen;
    for (const auto& f : I.facts()) {
      if (f.rel != fd.rel) continue;
      std::vector<Elem> key;
      for (int i : fd.lhs) key.push_back(f.args[i - 1]);
      auto [it, fresh] = seen.emplace(std::move(key), &f);
      if (!fresh && it->second->args[fd.rhs - 1] != f.args[fd.rhs - 1])
        rep.failures.push_back({to_string(fd), to_string(*it->second) +
                                                   " vs " + to_string(f)});
    }
  }
  for (const auto& u : deps.uids) {
    ++rep.checked["uid"];
    for (const auto& a : active_elements(I, u))
      rep.failures.push_back({to_string(u), "element " + a});
  }
  return rep;
}

// ---------------------------------------------------------------------------
// CQ enumeration

namespace {

std::string atom_key(const CQAtom& a) {
  std::string s = a.rel + "(";
  for (std::size_t i = 0; i < a.args.size(); ++i) {
    if (i) s += ",";
    s += a.args[i].text;
  }
  return s + ")";
}

std::string cq_body_key(const CQ& q) {
  std::vector<std::string> keys;
  for (const auto& a : q.atoms) keys.push_back(atom_key(a));
  std::sort(keys.begin(), keys.end());
  keys.erase(std::unique(keys.begin(), keys.end()), keys.end());
  std::string out;
  for (const auto& k : keys) out += k + ";";
  return out;
}

// Rename variables by a map, drop duplicate atoms, sort.
CQ apply_renaming(const CQ& q, const std::map<std::string, std::string>& ren) {
  CQ out;
  std::set<std::string> seen;
  std::vector<CQAtom> atoms;
  for (const auto& a : q.atoms) {
    CQAtom b = a;
    for (auto& t : b.args)
      if (t.is_var) t.text = ren.at(t.text);
    atoms.push_back(std::move(b));
  }
  std::sort(atoms.begin(), atoms.end());
  atoms.erase(std::unique(atoms.begin(), atoms.end()), atoms.end());
  out.atoms = std::move(atoms);
  return out;
}

// Invariant-signature refinement; returns variables grouped into ordered
// blocks (same block = same signature).
std::vector<std::vector<std::string>> refine_blocks(const CQ& q) {
  std::vector<std::string> vars(q.variables().begin(), q.variables().end());
  std::map<std::string, int> color;
  for (const auto& v : vars) color[v] = 0;
  for (int round = 0; round < 4; ++round) {
    std::map<std::string, std::string> sig;
    for (const auto& v : vars) {
      std::vector<std::string> occ;
      for (const auto& a : q.atoms)
        for (std::size_t j = 0; j < a.args.size(); ++j) {
          if (!a.args[j].is_var || a.args[j].text != v) continue;
          std::string o = a.rel + "#" + std::to_string(j) + "[";
          for (const auto& t : a.args)
            o += t.is_var ? std::to_string(color.at(t.text)) + "," : "c,";
          occ.push_back(o + "]");
        }
      std::sort(occ.begin(), occ.end());
      std::string s = std::to_string(color.at(v)) + "|";
      for (const auto& o : occ) s += o;
      sig[v] = s;
    }
    std::map<std::string, int> remap;
    for (const auto& [v, s] : sig) remap.emplace(s, 0);
    int c = 0;
    for (auto& [s, id] : remap) id = c++;
    bool changed = false;
    for (const auto& v : vars) {
      int nc = remap.at(sig.at(v));
      changed |= nc != color[v];
      color[v] = nc;
    }
    if (!changed) break;
  }
  std::map<int, std::vector<std::string>> blocks;
  for (const auto& v : vars) blocks[color.at(v)].push_back(v);
  std::vector<std::vector<std::string>> out;
  for (auto& [c, vs] : blocks) out.push_back(vs);
  return out;
}

// Canonical form: minimal serialized body over block-respecting renamings.
CQ canonicalize(const CQ& q) {
  auto blocks = refine_blocks(q);
  CQ best;
  std::string best_key;
  std::vector<std::vector<std::string>> perms_done;
  // Iterate over per-block permutations (cartesian product).
  std::vector<std::vector<std::string>> perm(blocks.size());
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    perm[i] = blocks[i];
    std::sort(perm[i].begin(), perm[i].end());
  }
  std::function<void(std::size_t, std::map<std::string, std::string>&, int)>
      rec = [&](std::size_t bi, std::map<std::string, std::string>& ren,
                int next) {
        if (bi == blocks.size()) {
          CQ cand = apply_renaming(q, ren);
          std::string key = cq_body_key(cand);
          if (best_key.empty() || key < best_key) {
            best_key = key;
            best = cand;
          }
          return;
        }
        std::vector<std::string>& p = perm[bi];
        std::sort(p.begin(), p.end());
        do {
          for (std::size_t i = 0; i < p.size(); ++i)
            ren[p[i]] = "v" + std::to_string(next + static_cast<int>(i));
          rec(bi + 1, ren, next + static_cast<int>(p.size()));
        } while (std::next_permutation(p.begin(), p.end()));
      };
  std::map<std::string, std::string> ren;
  rec(0, ren, 0);
  return best;
}

bool connected_cq(const CQ& q) {
  if (q.atoms.size() <= 1) return true;
  int n = static_cast<int>(q.atoms.size());
  std::vector<int> uf(n);
  for (int i = 0; i < n; ++i) uf[i] = i;
  std::function<int(int)> find = [&](int x) {
    while (uf[x] != x) x = uf[x] = uf[uf[x]];
    return x;
  };
  std::map<std::string, int> first;
  for (int i = 0; i < n; ++i)
    for (const auto& t : q.atoms[i].args) {
      if (!t.is_var) continue;
      auto [it, fresh] = first.emplace(t.text, i);
      if (!fresh) uf[find(i)] = find(it->second);
    }
  for (int i = 1; i < n; ++i)
    if (find(i) != find(0)) return false;
  return true;
}

}  // namespace

std::vector<CQ> enumerate_cqs(const Schema& s, int k, CqClass cls) {
  if (k < 1) throw UsageError("enumerate_cqs requires k >= 1");
  std::map<std::string, CQ> out;  // canonical key -> query

  // Level 1: single atoms with canonical variable patterns.
  std::vector<CQ> level;
  for (const auto& [rel, arity] : s.relations()) {
    // Patterns: assignments of slots to variable indices 0..slot (growth-
    // restricted to avoid relabelings).
    std::vector<std::vector<int>> pats{{0}};
    for (int slot = 1; slot < arity; ++slot) {
      std::vector<std::vector<int>> next;
      for (const auto& p : pats) {
        int m = *std::max_element(p.begin(), p.end());
        for (int v = 0; v <= m + 1; ++v) {
          auto p2 = p;
          p2.push_back(v);
          next.push_back(std::move(p2));
        }
      }
      pats = std::move(next);
    }
    for (const auto& p : pats) {
      CQ q;
      CQAtom a{rel, {}};
      for (int v : p) a.args.push_back(Term{"v" + std::to_string(v), true});
      q.atoms.push_back(a);
      CQ c = canonicalize(q);
      out.emplace(cq_body_key(c), c);
      level.push_back(c);
    }
  }

  for (int size = 2; size <= k; ++size) {
    std::vector<CQ> next_level;
    std::map<std::string, bool> seen_this;
    for (const auto& q : level) {
      std::vector<std::string> used(q.variables().begin(),
                                    q.variables().end());
      for (const auto& [rel, arity] : s.relations()) {
        // All slot assignments over used vars plus growth-ordered fresh ones.
        std::vector<std::vector<std::string>> asg{{}};
        for (int slot = 0; slot < arity; ++slot) {
          std::vector<std::vector<std::string>> nxt;
          for (const auto& a : asg) {
            int fresh_used = 0;
            for (const auto& v : a)
              if (v.size() > 1 && v[0] == 'f') {
                int idx = std::stoi(v.substr(1));
                fresh_used = std::max(fresh_used, idx + 1);
              }
            for (const auto& v : used) {
              auto a2 = a;
              a2.push_back(v);
              nxt.push_back(std::move(a2));
            }
            auto a2 = a;
            a2.push_back("f" + std::to_string(fresh_used));
            nxt.push_back(std::move(a2));
          }
          asg = std::move(nxt);
        }
        for (const auto& a : asg) {
          bool shares = false;
          for (const auto& v : a)
            if (v[0] != 'f') shares = true;
          if (!shares) continue;
          CQ q2 = q;
          CQAtom atom{rel, {}};
          for (const auto& v : a) atom.args.push_back(Term{v, true});
          q2.atoms.push_back(atom);
          if (static_cast<int>(q2.atoms.size()) != size) continue;
          CQ c = canonicalize(q2);
          if (static_cast<int>(c.atoms.size()) != size) continue;  // dup atom
          std::string key = cq_body_key(c);
          if (out.emplace(key, c).second) next_level.push_back(c);
        }
      }
    }
    level = std::move(next_level);
  }

  std::vector<CQ> result;
  for (auto& [key, q] : out) {
    if (!connected_cq(q)) continue;
    if (cls == CqClass::Acyclic && !is_berge_acyclic(q)) continue;
    result.push_back(q);
  }
  return result;
}

// ---------------------------------------------------------------------------
// k-soundness audit

AuditReport verify_k_sound(const Schema& s, const Instance& I,
                           const Instance& I0, const DependencySet& deps,
                           int k) {
  AuditReport rep;
  for (const auto& q : enumerate_cqs(s, k, CqClass::All)) {
    ++rep.checked["cq"];
    auto m = find_match(q, I);
    if (!m) continue;
    QaResult r = decide_uqa(s, I0, deps, q);
    if (!r.answer) {
      std::string wit;
      for (const auto& [v, e] : *m) wit += v + "->" + e + " ";
      rep.failures.push_back({to_string(q), wit});
    }
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Bounded finite-model search

namespace {

struct SearchCtx {
  const Schema& s;
  const DependencySet& deps;
  const CQ& q;
  int max_domain;
  long budget;
  std::set<std::string> visited;

  std::optional<Instance> dfs(const Instance& I) {
    if (--budget < 0)
      throw ResourceError("bounded_model_search: node budget exceeded");
    std::string key;
    for (const auto& f : I.facts()) key += to_string(f) + ";";
    if (!visited.insert(key).second) return std::nullopt;
    if (find_match(q, I)) return std::nullopt;
    if (!satisfies_fds(I, deps.fds)) return std::nullopt;

    const Uid* violated = nullptr;
    Elem elem;
    for (const auto& u : deps.uids) {
      auto act = active_elements(I, u);
      if (!act.empty()) {
        violated = &u;
        elem = *act.begin();
        break;
      }
    }
    if (!violated) return I;  // model found

    auto dom = I.domain();
    std::vector<Elem> pool(dom.begin(), dom.end());
    if (static_cast<int>(dom.size()) < max_domain)
      pool.push_back("~m" + std::to_string(dom.size()));
    int n = s.arity(violated->to.rel);
    std::vector<int> idx(static_cast<std::size_t>(n), 0);
    while (true) {
      Fact f{violated->to.rel, {}};
      bool ok = true;
      for (int i = 1; i <= n; ++i) {
        if (i == violated->to.index)
          f.args.push_back(elem);
        else
          f.args.push_back(pool[idx[i - 1]]);
      }
      // Domain bound: count distinct elements.
      std::set<Elem> d2 = dom;
      d2.insert(f.args.begin(), f.args.end());
      if (static_cast<int>(d2.size()) > max_domain) ok = false;
      if (ok && !I.contains(f)) {
        Instance I2 = I;
        I2.add(f);
        auto r = dfs(I2);
        if (r) return r;
      }
      // Advance mixed-radix counter (skipping the exported slot).
      int j = 0;
      for (; j < n; ++j) {
        if (j + 1 == violated->to.index) continue;
        if (++idx[j] < pool.size()) break;
        idx[j] = 0;
      }
      if (j >= n) break;
    }
    return std::nullopt;
  }
};

}  // namespace

std::optional<Instance> bounded_model_search(const Schema& s,
                                             const Instance& I0,
                                             const DependencySet& deps,
                                             const CQ& q, int max_domain,
                                             long node_budget) {
  validate(s, I0);
  validate(s, q);
  if (static_cast<int>(I0.domain().size()) > max_domain)
    throw UsageError("max_domain smaller than dom(I0)");
  SearchCtx ctx{s, deps, q, max_domain, node_budget, {}};
  return ctx.dfs(I0);
}

// ---------------------------------------------------------------------------
// Random problem generation

namespace {

long estimate_chase_breadth(const Schema& s, const std::set<Uid>& uids,
                            const Instance& I0, int rounds, long cap) {
  std::map<Position, long> width;  // elements introduced at p this round
  long total = static_cast<long>(I0.size());
  // Round 1 (core-first): one fact per (element, wanted target).
  for (const auto& t : s.positions()) {
    long w = static_cast<long>(want_at(I0, uids, t).size());
    if (w == 0) continue;
    total += w;
    int ar = s.arity(t.rel);
    for (int i = 1; i <= ar; ++i)
      if (i != t.index) width[Position{t.rel, i}] += w;
  }
  for (int r = 2; r <= rounds && total <= cap; ++r) {
    std::map<Position, long> next;
    for (const auto& [p, w] : width)
      for (const auto& u : uids) {
        if (u.from != p) continue;
        total += w;
        int ar = s.arity(u.to.rel);
        for (int i = 1; i <= ar; ++i)
          if (i != u.to.index) next[Position{u.to.rel, i}] += w;
      }
    width = std::move(next);
  }
  return total;
}

}  // namespace

Problem generate_problem(const GenParams& p, std::uint64_t seed) {
  for (int attempt = 0; attempt < 400; ++attempt) {
    std::mt19937_64 rng(seed * 1000003 + static_cast<std::uint64_t>(attempt));
    auto pick = [&](int n) {
      return static_cast<int>(rng() % static_cast<std::uint64_t>(n));
    };
    Problem prob;
    static const char* names[] = {"R", "S", "T", "U", "V"};
    int nrel = std::min(p.relations, 5);
    for (int i = 0; i < nrel; ++i)
      prob.schema.add_relation(names[i], 1 + pick(p.max_arity));
    auto positions = prob.schema.positions();
    if (positions.size() < 2) continue;

    bool bad = false;
    for (int i = 0; i < p.uid_count; ++i) {
      Position a = positions[pick(static_cast<int>(positions.size()))];
      Position b = positions[pick(static_cast<int>(positions.size()))];
      if (a == b) continue;
      prob.deps.uids.insert(Uid{a, b});
    }
    for (int i = 0; i < p.fd_count; ++i) {
      const auto& rels = prob.schema.relations();
      auto it = rels.begin();
      std::advance(it, pick(static_cast<int>(rels.size())));
      if (it->second < 2) continue;
      int rhs = 1 + pick(it->second);
      std::set<int> lhs;
      int lsz = 1 + pick(it->second - 1);
      for (int j = 0; j < lsz; ++j) {
        int x = 1 + pick(it->second);
        if (x != rhs) lhs.insert(x);
      }
      if (lhs.empty()) continue;
      prob.deps.fds.insert(Fd{it->first, lhs, rhs});
    }

    static const char* elems[] = {"a", "b", "c", "d"};
    for (int i = 0; i < p.fact_count; ++i) {
      const auto& rels = prob.schema.relations();
      auto it = rels.begin();
      std::advance(it, pick(static_cast<int>(rels.size())));
      Fact f{it->first, {}};
      for (int j = 0; j < it->second; ++j) f.args.push_back(elems[pick(4)]);
      prob.instance.add(f);
    }

    DependencySet closed = finite_closure(prob.schema, prob.deps);
    if (p.require_fd_sat && !satisfies_fds(prob.instance, closed.fds)) {
      // Drop facts until the closure's FDs hold.
      Instance keep;
      for (const auto& f : prob.instance.facts()) {
        Instance trial = keep;
        trial.add(f);
        if (satisfies_fds(trial, closed.fds)) keep = trial;
      }
      prob.instance = keep;
      if (prob.instance.empty()) continue;
    }
    if (p.finitely_close) prob.deps = closed;

    long est = estimate_chase_breadth(prob.schema, closed.uids, prob.instance,
                                      14, p.chase_budget);
    if (est > p.chase_budget) continue;

    for (int i = 0; i < p.query_count; ++i) {
      CQ q;
      std::vector<std::string> vars{"x", "y", "z", "w", "u", "v"};
      int vused = 1;
      for (int j = 0; j < std::max(1, p.query_atoms); ++j) {
        const auto& rels = prob.schema.relations();
        auto it = rels.begin();
        std::advance(it, pick(static_cast<int>(rels.size())));
        CQAtom a{it->first, {}};
        for (int sidx = 0; sidx < it->second; ++sidx) {
          int v = pick(std::min(vused + 1, static_cast<int>(vars.size())));
          vused = std::max(vused, v + 1);
          a.args.push_back(Term{vars[static_cast<std::size_t>(v)], true});
        }
        q.atoms.push_back(a);
      }
      if (!connected_cq(q)) {
        --i;
        continue;
      }
      prob.queries.push_back(q);
    }
    (void)bad;
    return prob;
  }
  throw ResourceError("generate_problem: no instance within budget");
}

}  // namespace fcqa
