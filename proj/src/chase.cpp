#include "fcqa/chase.hpp"

#include <algorithm>
#include <sstream>

namespace fcqa {

// ---------------------------------------------------------------------------
// ChasePrefix

ChasePrefix::ChasePrefix(Schema schema, Instance base, std::set<Uid> uids,
                         bool uids_closed)
    : m_schema(std::move(schema)),
      m_base(std::move(base)),
      m_uids(std::move(uids)) {
  if (!uids_closed)
    throw UsageError("chase requires transitively closed UIDs");
  validate(m_schema, m_base);
  for (const auto& u : m_uids) validate(m_schema, u);
  for (const auto& f : m_base.facts())
    m_facts.push_back({f, -1, std::nullopt, 0});
}

Instance ChasePrefix::instance() const {
  Instance out;
  for (const auto& cf : m_facts) out.add(cf.fact);
  return out;
}

int ChasePrefix::element_depth(const Elem& e) const {
  auto it = m_intro.find(e);
  return it == m_intro.end() ? 0 : m_facts[it->second.first].round;
}

void ChasePrefix::add_fact(Fact f, int parent, const Uid& via, int round) {
  int idx = static_cast<int>(m_facts.size());
  for (std::size_t i = 0; i < f.args.size(); ++i) {
    if (static_cast<int>(i) + 1 == via.to.index) continue;
    m_intro.emplace(f.args[i], std::make_pair(idx, static_cast<int>(i) + 1));
  }
  m_facts.push_back({std::move(f), parent, via, round});
}

void chase_round(ChasePrefix& P, ChaseMode mode) {
  if (mode == ChaseMode::CoreFirst && P.m_round != 0)
    throw UsageError("core-first mode is only legal on round 1");
  Instance I = P.instance();
  int round = P.m_round + 1;

  struct Pending {
    Elem exported;
    Uid uid;
    int parent;  // earliest active fact
  };
  std::vector<Pending> plain;
  std::map<std::pair<Elem, Position>, Pending> grouped;

  for (const auto& uid : P.m_uids) {
    std::set<Elem> active = active_elements(I, uid);
    if (active.empty()) continue;
    for (std::size_t fi = 0; fi < P.m_facts.size(); ++fi) {
      const Fact& f = P.m_facts[fi].fact;
      if (f.rel != uid.from.rel) continue;
      const Elem& a = f.args[uid.from.index - 1];
      if (!active.count(a)) continue;
      if (mode == ChaseMode::Plain) {
        plain.push_back({a, uid, static_cast<int>(fi)});
      } else {
        auto key = std::make_pair(a, uid.to);
        auto it = grouped.find(key);
        if (it == grouped.end())
          grouped.emplace(key, Pending{a, uid, static_cast<int>(fi)});
        else if (static_cast<int>(fi) < it->second.parent)
          it->second = Pending{a, uid, static_cast<int>(fi)};
      }
    }
  }

  auto make_fact = [&](const Pending& p) {
    int n = P.m_schema.arity(p.uid.to.rel);
    Fact f{p.uid.to.rel, std::vector<Elem>(static_cast<std::size_t>(n))};
    for (int i = 1; i <= n; ++i)
      f.args[i - 1] = (i == p.uid.to.index) ? p.exported : P.m_nulls.fresh();
    P.add_fact(std::move(f), p.parent, p.uid, round);
  };

  if (mode == ChaseMode::Plain)
    for (const auto& p : plain) make_fact(p);
  else
    for (const auto& [key, p] : grouped) make_fact(p);

  P.m_round = round;
}

ChasePrefix truncated_chase(const Schema& schema, const Instance& I0,
                            const std::set<Uid>& uids, int rounds) {
  if (rounds < 0) throw UsageError("rounds must be >= 0");
  ChasePrefix P(schema, I0, uids);
  for (int r = 0; r < rounds; ++r)
    chase_round(P, r == 0 ? ChaseMode::CoreFirst : ChaseMode::Plain);
  return P;
}

bool verify_unique_witness(const ChasePrefix& P) {
  std::map<std::pair<Elem, Position>, std::vector<int>> occ;
  for (std::size_t fi = 0; fi < P.facts().size(); ++fi) {
    const Fact& f = P.facts()[fi].fact;
    for (std::size_t i = 0; i < f.args.size(); ++i)
      occ[{f.args[i], Position{f.rel, static_cast<int>(i) + 1}}].push_back(
          static_cast<int>(fi));
  }
  for (const auto& [key, where] : occ) {
    if (where.size() < 2) continue;
    for (int fi : where)
      if (P.facts()[fi].round != 0) return false;
  }
  return true;
}

std::string to_dot(const ChasePrefix& P) {
  std::ostringstream os;
  os << "digraph chase {\n  node [shape=box];\n";
  for (std::size_t i = 0; i < P.facts().size(); ++i) {
    const auto& cf = P.facts()[i];
    os << "  f" << i << " [label=\"" << to_string(cf.fact) << "\\nround "
       << cf.round << "\"];\n";
    if (cf.parent >= 0)
      os << "  f" << cf.parent << " -> f" << i << " [label=\""
         << to_string(*cf.via) << "\"];\n";
  }
  os << "}\n";
  return os.str();
}

// ---------------------------------------------------------------------------
// LazyChase

LazyChase::LazyChase(Schema schema, Instance base, std::set<Uid> uids)
    : m_schema(std::move(schema)),
      m_base(std::move(base)),
      m_uids(std::move(uids)) {
  validate(m_schema, m_base);
  for (const auto& u : m_uids) validate(m_schema, u);
  for (const auto& f : m_base.facts()) m_base_facts.push_back(f);
  std::set<Position> tos;
  for (const auto& u : m_uids) {
    m_targets[u.from].push_back(u.to);
    tos.insert(u.to);
  }
  for (auto& [p, v] : m_targets) {
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
  }
  for (const auto& t : tos) {
    auto have = m_base.projection(t);
    for (const auto& a : want_at(m_base, m_uids, t))
      if (!have.count(a)) m_base_wants[a].insert(t);
  }
}

const std::vector<Position>& LazyChase::targets(const Position& p) const {
  auto it = m_targets.find(p);
  return it == m_targets.end() ? m_no_targets : it->second;
}

const std::set<Position>& LazyChase::base_wants(const Elem& a) const {
  auto it = m_base_wants.find(a);
  return it == m_base_wants.end() ? m_no_wants : it->second;
}

int LazyChase::depth(int node) const {
  return is_base_node(node) ? 0 : m_nodes[node - base_fact_count()].depth;
}

Position LazyChase::exported_position(int node) const {
  if (is_base_node(node)) throw InternalError("base node has no exported pos");
  return m_nodes[node - base_fact_count()].target;
}

Uid LazyChase::via_of(int node) const {
  const Node& n = m_nodes.at(node - base_fact_count());
  return Uid{n.from, n.target};
}

LazyChase::VElem LazyChase::exported_elem(int node) const {
  const Node& n = m_nodes.at(node - base_fact_count());
  if (n.parent < 0) return VElem{-1, 0, n.parent_elem};
  return VElem{n.parent, n.parent_pos, {}};
}

int LazyChase::child_of_base(const Elem& a, const Position& t) {
  if (!base_wants(a).count(t)) return -1;
  auto key = std::make_tuple(-1, a, 0, t);
  auto it = m_consed.find(key);
  if (it != m_consed.end()) return it->second;
  Node n;
  n.parent = -1;
  n.parent_elem = a;
  n.target = t;
  n.from = t;
  for (const auto& u : m_uids)
    if (u.to == t && m_base.projection(u.from).count(a)) {
      n.from = u.from;
      break;
    }
  n.depth = 1;
  int id = base_fact_count() + static_cast<int>(m_nodes.size());
  m_nodes.push_back(std::move(n));
  m_consed.emplace(key, id);
  return id;
}

int LazyChase::child_of(const VElem& e, const Position& t) {
  if (e.is_base()) return child_of_base(e.base_elem, t);
  Position p = position_of(e);
  const auto& ts = targets(p);
  if (!std::binary_search(ts.begin(), ts.end(), t)) return -1;
  auto key = std::make_tuple(e.node, Elem{}, e.pos, t);
  auto it = m_consed.find(key);
  if (it != m_consed.end()) return it->second;
  Node n;
  n.parent = e.node;
  n.parent_pos = e.pos;
  n.target = t;
  n.from = p;
  n.depth = depth(e.node) + 1;
  int id = base_fact_count() + static_cast<int>(m_nodes.size());
  m_nodes.push_back(std::move(n));
  m_consed.emplace(key, id);
  return id;
}

LazyChase::VFact LazyChase::fact_of(int node) {
  if (is_base_node(node)) {
    const Fact& f = m_base_facts[node];
    VFact out{node, f.rel, {}};
    for (const auto& a : f.args) out.args.push_back(VElem{-1, 0, a});
    return out;
  }
  const Node& n = m_nodes[node - base_fact_count()];
  int arity = m_schema.arity(n.target.rel);
  VFact out{node, n.target.rel, {}};
  out.args.resize(static_cast<std::size_t>(arity));
  for (int i = 1; i <= arity; ++i)
    out.args[i - 1] =
        (i == n.target.index) ? exported_elem(node) : VElem{node, i, {}};
  return out;
}

Position LazyChase::position_of(const VElem& e) const {
  if (e.is_base()) throw InternalError("position_of on base element");
  const Node& n = m_nodes.at(e.node - base_fact_count());
  return Position{n.target.rel, e.pos};
}

std::vector<LazyChase::VFact> LazyChase::facts_containing(const VElem& e) {
  std::vector<VFact> out;
  if (e.is_base()) {
    for (int i = 0; i < base_fact_count(); ++i) {
      const Fact& f = m_base_facts[i];
      if (std::find(f.args.begin(), f.args.end(), e.base_elem) != f.args.end())
        out.push_back(fact_of(i));
    }
    for (const auto& t : base_wants(e.base_elem))
      out.push_back(fact_of(child_of_base(e.base_elem, t)));
    return out;
  }
  out.push_back(fact_of(e.node));
  for (const auto& t : targets(position_of(e))) {
    int c = child_of(e, t);
    if (c >= 0) out.push_back(fact_of(c));
  }
  return out;
}

std::vector<LazyChase::VFact> LazyChase::facts_with_at(const VElem& e,
                                                       const Position& t) {
  std::vector<VFact> out;
  if (e.is_base()) {
    for (int i = 0; i < base_fact_count(); ++i) {
      const Fact& f = m_base_facts[i];
      if (f.rel == t.rel && t.index <= static_cast<int>(f.args.size()) &&
          f.args[t.index - 1] == e.base_elem)
        out.push_back(fact_of(i));
    }
    int c = child_of_base(e.base_elem, t);
    if (c >= 0) out.push_back(fact_of(c));
    return out;
  }
  if (position_of(e) == t) {
    out.push_back(fact_of(e.node));
    return out;
  }
  int c = child_of(e, t);
  if (c >= 0) out.push_back(fact_of(c));
  return out;
}

Elem LazyChase::name_of(const VElem& e) const {
  if (e.is_base()) return e.base_elem;
  return "~c" + std::to_string(e.node) + "_" + std::to_string(e.pos);
}

// Memo key: intro position plus the creating-UID spine up to n steps. When
// the spine reaches a base element within n steps, that element's identity
// pins the remaining context (the base instance is shared). Subtrees are
// position-determined, so equal keys give isomorphic n-neighborhoods.
std::string LazyChase::context_key(const VElem& e, int n) const {
  std::ostringstream os;
  os << n << "|";
  if (e.is_base()) {
    os << "b:" << e.base_elem;
    return os.str();
  }
  os << e.pos;
  int cur = e.node;
  for (int i = 0; i < n; ++i) {
    const Node& nd = m_nodes[cur - base_fact_count()];
    os << "|" << to_string(nd.from) << ">" << to_string(nd.target);
    if (nd.parent < 0) {
      os << "|b:" << nd.parent_elem;
      return os.str();
    }
    os << "@" << nd.parent_pos;
    cur = nd.parent;
  }
  return os.str();
}

std::uint64_t LazyChase::typekey(const VElem& e, int n) {
  if (n <= 0) return 0;
  std::string key = context_key(e, n);
  auto it = m_typekey_memo.find(key);
  if (it != m_typekey_memo.end()) return it->second;
  std::vector<std::string> encs;
  for (auto& F : facts_containing(e)) {
    std::ostringstream os;
    os << F.rel;
    for (std::size_t i = 0; i < F.args.size(); ++i) {
      bool self = F.args[i] == e;
      os << ","
         << (self ? std::string("*")
                  : std::to_string(typekey(F.args[i], n - 1)));
    }
    encs.push_back(os.str());
  }
  std::sort(encs.begin(), encs.end());
  encs.erase(std::unique(encs.begin(), encs.end()), encs.end());
  std::string enc;
  for (const auto& s : encs) enc += s + ";";
  auto [it2, fresh] = m_type_intern.emplace(enc, m_type_intern.size() + 1);
  (void)fresh;
  m_typekey_memo.emplace(std::move(key), it2->second);
  return it2->second;
}

bool LazyChase::essential(const VElem& e, int n) const {
  if (n <= 0) return true;
  if (e.is_base()) return false;
  int cur = e.node;
  for (int i = 0; i < n; ++i) {
    const Node& nd = m_nodes[cur - base_fact_count()];
    if (!m_uids.count(Uid{nd.target, nd.from})) return false;
    if (nd.parent < 0) return i + 1 >= n;  // only i+1 UIDs above
    cur = nd.parent;
  }
  return true;
}

bool LazyChase::leq_from_instance(const Instance& I, const Elem& a,
                                  const VElem& e, int n) {
  if (n <= 0) return true;
  auto key = std::make_tuple(a, n, e.node, e.base_elem, e.pos);
  auto it = m_leq_memo.find(key);
  if (it != m_leq_memo.end()) return it->second;
  bool ok = true;
  for (const Fact& f : I.facts()) {
    if (!ok) break;
    for (std::size_t p = 0; p < f.args.size() && ok; ++p) {
      if (f.args[p] != a) continue;
      Position at{f.rel, static_cast<int>(p) + 1};
      bool matched = false;
      for (auto& wf : facts_with_at(e, at)) {
        if (wf.rel != f.rel) continue;
        bool all = true;
        for (std::size_t i = 0; i < f.args.size() && all; ++i) {
          if (i == p) continue;
          all = leq_from_instance(I, f.args[i], wf.args[i], n - 1);
        }
        if (all) {
          matched = true;
          break;
        }
      }
      if (!matched) ok = false;
    }
  }
  m_leq_memo.emplace(key, ok);
  return ok;
}

}  // namespace fcqa
