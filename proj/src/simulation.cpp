#include "fcqa/simulation.hpp"

#include <algorithm>

namespace fcqa {

namespace {

struct ElemIndex {
  std::vector<Elem> elems;
  std::map<Elem, int> id;
  // facts containing each element, as (fact, positions where it occurs)
  std::vector<std::vector<const Fact*>> facts;

  explicit ElemIndex(const Instance& I) {
    for (const auto& e : I.domain()) {
      id.emplace(e, static_cast<int>(elems.size()));
      elems.push_back(e);
    }
    facts.resize(elems.size());
    for (const auto& f : I.facts()) {
      std::set<int> seen;
      for (const auto& a : f.args) {
        int i = id.at(a);
        if (seen.insert(i).second) facts[i].push_back(&f);
      }
    }
  }
};

// le[a][b] refined n rounds starting from all-true.
std::vector<std::vector<bool>> le_matrix(const ElemIndex& A,
                                         const ElemIndex& B, int n) {
  std::size_t na = A.elems.size(), nb = B.elems.size();
  std::vector<std::vector<bool>> le(na, std::vector<bool>(nb, true));
  for (int round = 0; round < n; ++round) {
    std::vector<std::vector<bool>> nxt(na, std::vector<bool>(nb, true));
    bool changed = false;
    for (std::size_t a = 0; a < na; ++a)
      for (std::size_t b = 0; b < nb; ++b) {
        bool ok = true;
        for (const Fact* f : A.facts[a]) {
          if (!ok) break;
          for (std::size_t p = 0; p < f->args.size() && ok; ++p) {
            if (f->args[p] != A.elems[a]) continue;
            bool matched = false;
            for (const Fact* g : B.facts[b]) {
              if (g->rel != f->rel || g->args[p] != B.elems[b]) continue;
              bool all = true;
              for (std::size_t i = 0; i < f->args.size() && all; ++i)
                all = le[A.id.at(f->args[i])][B.id.at(g->args[i])];
              if (all) {
                matched = true;
                break;
              }
            }
            ok = matched;
          }
        }
        nxt[a][b] = ok;
        changed |= ok != le[a][b];
      }
    le.swap(nxt);
    if (!changed) break;
  }
  return le;
}

}  // namespace

bool bounded_sim_leq(const Instance& I, const Elem& a, const Instance& Iprime,
                     const Elem& b, int n) {
  if (n <= 0) return true;
  ElemIndex A(I), B(Iprime);
  if (!A.id.count(a)) throw UsageError("element " + a + " not in source");
  if (!B.id.count(b)) throw UsageError("element " + b + " not in target");
  auto le = le_matrix(A, B, n);
  return le[A.id.at(a)][B.id.at(b)];
}

std::map<Elem, int> simeq_classes(const Instance& I, int k) {
  ElemIndex A(I);
  std::map<Elem, int> out;
  if (A.elems.empty()) return out;
  auto le = le_matrix(A, A, k);
  std::vector<int> cls(A.elems.size(), -1);
  int next = 0;
  for (std::size_t i = 0; i < A.elems.size(); ++i) {
    if (cls[i] >= 0) continue;
    cls[i] = next;
    for (std::size_t j = i + 1; j < A.elems.size(); ++j)
      if (cls[j] < 0 && le[i][j] && le[j][i]) cls[j] = next;
    ++next;
  }
  for (std::size_t i = 0; i < A.elems.size(); ++i) out[A.elems[i]] = cls[i];
  return out;
}

std::pair<Instance, std::map<Elem, Elem>> quotient(
    const Instance& I, const std::map<Elem, int>& partition) {
  for (const auto& e : I.domain())
    if (!partition.count(e))
      throw UsageError("partition does not cover element " + e);
  std::map<int, Elem> rep;
  for (const auto& [e, c] : partition) {
    auto it = rep.find(c);
    if (it == rep.end() || e < it->second) rep[c] = e;
  }
  std::map<Elem, Elem> chi;
  for (const auto& [e, c] : partition) chi[e] = rep.at(c);
  Instance out;
  for (const auto& f : I.facts()) {
    Fact g{f.rel, f.args};
    for (auto& a : g.args) a = chi.at(a);
    out.add(std::move(g));
  }
  return {out, chi};
}

bool validate_certificate(const Instance& source, const Instance& target,
                          const SimCertificate& cert) {
  ElemIndex A(source), B(target);
  auto le = le_matrix(A, B, cert.k);
  for (const auto& e : source.domain()) {
    auto it = cert.cov.find(e);
    if (it == cert.cov.end()) return false;
    if (!B.id.count(it->second)) return false;
    if (!le[A.id.at(e)][B.id.at(it->second)]) return false;
  }
  return true;
}

std::vector<FactClassInfo> achieved_fact_classes(const ChasePrefix& P, int k,
                                                 const std::set<Fd>& ufds) {
  std::vector<FactClassInfo> out;
  Instance I = P.instance();
  auto classes = simeq_classes(I, k);
  int cutoff = P.rounds_done() - k;  // classify facts at rounds 1..cutoff
  std::map<std::pair<Position, std::vector<int>>, int> seen;
  for (std::size_t fi = 0; fi < P.facts().size(); ++fi) {
    const auto& cf = P.facts()[fi];
    if (cf.round == 0 || cf.round > cutoff) continue;
    Position exported = cf.via->to;
    if (nondangerous(P.schema(), ufds, exported).empty()) continue;
    std::vector<int> tuple;
    for (const auto& a : cf.fact.args) tuple.push_back(classes.at(a));
    auto key = std::make_pair(exported, tuple);
    if (seen.emplace(key, static_cast<int>(fi)).second)
      out.push_back({exported, tuple, static_cast<int>(fi)});
  }
  return out;
}

}  // namespace fcqa
