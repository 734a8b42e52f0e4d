#include "fcqa/blowup.hpp"

#include <algorithm>
#include <functional>
#include <random>
#include <sstream>

#include "fcqa/simulation.hpp"

namespace fcqa {

namespace {
constexpr const char* kIndivPrefix = "~P";
}

bool is_individualizing_relation(const RelName& r) {
  return r.rfind(kIndivPrefix, 0) == 0;
}

std::pair<Instance, std::set<RelName>> individualize(const Instance& I0) {
  for (const auto& f : I0.facts())
    if (is_individualizing_relation(f.rel))
      throw UsageError("instance is already individualizing");
  Instance out = I0;
  std::set<RelName> rels;
  long idx = 0;
  for (const auto& a : I0.domain()) {
    RelName r = std::string(kIndivPrefix) + std::to_string(idx++);
    rels.insert(r);
    out.add(Fact{r, {a}});
  }
  return {out, rels};
}

Instance strip_individualizing(const Instance& I) {
  Instance out;
  for (const auto& f : I.facts())
    if (!is_individualizing_relation(f.rel)) out.add(f);
  return out;
}

// ---------------------------------------------------------------------------
// Acyclic groups

namespace {

std::vector<int> identity_perm(int n) {
  std::vector<int> p(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) p[static_cast<std::size_t>(i)] = i;
  return p;
}

std::vector<int> compose_perm(const std::vector<int>& a,
                              const std::vector<int>& b) {
  std::vector<int> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i)
    out[i] = a[static_cast<std::size_t>(b[i])];
  return out;
}

std::vector<int> invert_perm(const std::vector<int>& a) {
  std::vector<int> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i)
    out[static_cast<std::size_t>(a[i])] = static_cast<int>(i);
  return out;
}

// All images of reduced words of length <= L must be pairwise distinct.
bool certify_injective(const std::vector<std::vector<int>>& gens, int L) {
  int m = static_cast<int>(gens.size());
  std::vector<std::vector<int>> letters;  // gens then inverses
  for (const auto& g : gens) letters.push_back(g);
  for (const auto& g : gens) letters.push_back(invert_perm(g));
  auto inverse_of = [&](int li) { return li < m ? li + m : li - m; };

  std::set<std::vector<int>> seen;
  struct Item {
    std::vector<int> perm;
    int last;
  };
  std::vector<Item> level;
  std::vector<int> id = identity_perm(static_cast<int>(gens[0].size()));
  if (!seen.insert(id).second) return false;
  level.push_back({id, -1});
  for (int len = 1; len <= L; ++len) {
    std::vector<Item> next;
    for (const auto& it : level)
      for (int li = 0; li < 2 * m; ++li) {
        if (it.last >= 0 && li == inverse_of(it.last)) continue;
        auto p = compose_perm(it.perm, letters[static_cast<std::size_t>(li)]);
        if (!seen.insert(p).second) return false;
        next.push_back({std::move(p), li});
      }
    level = std::move(next);
  }
  return true;
}

}  // namespace

AcyclicGroup acyclic_group(int n_labels, int girth_target,
                           std::uint64_t seed) {
  if (n_labels < 1) throw UsageError("acyclic_group requires labels");
  if (girth_target < 3) throw UsageError("girth target must be >= 3");
  AcyclicGroup G;
  G.n_labels = n_labels;
  if (n_labels == 1) {
    G.cyclic = true;
    G.modulus = girth_target;
    G.girth_certified = girth_target;
    return G;
  }
  int L = girth_target / 2 + (girth_target % 2 ? 0 : 1);  // inj <= L => girth > 2L >= target
  // Word-count budget for certification.
  double words = 1;
  for (int i = 0; i < L; ++i) words *= 2.0 * n_labels;
  if (words > 5e6)
    throw ResourceError("acyclic_group: certification budget exceeded (~" +
                        std::to_string(static_cast<long>(words)) + " words)");

  std::mt19937_64 rng(seed * 2654435761u + 17);
  for (int degree = std::max(6, 2 * L + 2); degree <= 4096; degree += degree / 2) {
    for (int trial = 0; trial < 24; ++trial) {
      std::vector<std::vector<int>> gens;
      for (int i = 0; i < n_labels; ++i) {
        auto p = identity_perm(degree);
        std::shuffle(p.begin(), p.end(), rng);
        gens.push_back(std::move(p));
      }
      if (certify_injective(gens, L)) {
        G.cyclic = false;
        G.degree = degree;
        G.gens = std::move(gens);
        G.girth_certified = 2 * L + 1;
        return G;
      }
    }
  }
  throw ResourceError("acyclic_group: no certified generators found");
}

bool verify_girth(const AcyclicGroup& G, int girth_target) {
  if (G.cyclic) {
    // Shortest nonempty reduced power of 1 summing to 0 mod m is m itself.
    return G.modulus >= girth_target;
  }
  int L = girth_target / 2 + (girth_target % 2 ? 0 : 1);
  // Independent check: depth-first enumeration with explicit word tracking.
  int m = static_cast<int>(G.gens.size());
  std::vector<std::vector<int>> letters;
  for (const auto& g : G.gens) letters.push_back(g);
  for (const auto& g : G.gens) letters.push_back(invert_perm(g));
  std::map<std::vector<int>, std::vector<int>> image_word;
  bool ok = true;
  std::vector<int> word;
  std::function<void(const std::vector<int>&)> dfs =
      [&](const std::vector<int>& cur) {
        if (!ok) return;
        auto it = image_word.find(cur);
        if (it != image_word.end()) {
          ok = false;
          return;
        }
        image_word.emplace(cur, word);
        if (static_cast<int>(word.size()) == L) return;
        for (int li = 0; li < 2 * m; ++li) {
          if (!word.empty()) {
            int last = word.back();
            int inv = last < m ? last + m : last - m;
            if (li == inv) continue;
          }
          word.push_back(li);
          dfs(compose_perm(cur, letters[static_cast<std::size_t>(li)]));
          word.pop_back();
          if (!ok) return;
        }
      };
  dfs(identity_perm(G.degree));
  return ok;
}

GroupTable enumerate_group(const AcyclicGroup& G, long cap) {
  GroupTable T;
  if (G.cyclic) {
    T.size = G.modulus;
    if (T.size > cap) throw ResourceError("group exceeds enumeration cap");
    T.gen_elem.assign(static_cast<std::size_t>(G.n_labels), 1 % T.size);
    T.mult.assign(static_cast<std::size_t>(T.size),
                  std::vector<long>(static_cast<std::size_t>(T.size)));
    for (long g = 0; g < T.size; ++g)
      for (long h = 0; h < T.size; ++h) T.mult[g][h] = (g + h) % T.size;
    return T;
  }
  std::map<std::vector<int>, long> id_of;
  std::vector<std::vector<int>> elems;
  auto intern = [&](const std::vector<int>& p) {
    auto [it, fresh] = id_of.emplace(p, static_cast<long>(elems.size()));
    if (fresh) {
      elems.push_back(p);
      if (static_cast<long>(elems.size()) > cap)
        throw ResourceError("group exceeds enumeration cap (" +
                            std::to_string(cap) + ")");
    }
    return it->second;
  };
  intern(identity_perm(G.degree));
  std::vector<std::vector<int>> letters;
  for (const auto& g : G.gens) letters.push_back(g);
  for (const auto& g : G.gens) letters.push_back(invert_perm(g));
  for (std::size_t i = 0; i < elems.size(); ++i) {
    auto cur = elems[i];
    for (const auto& l : letters) intern(compose_perm(cur, l));
  }
  T.size = static_cast<long>(elems.size());
  for (const auto& g : G.gens) T.gen_elem.push_back(id_of.at(g));
  T.mult.assign(static_cast<std::size_t>(T.size), {});
  for (long g = 0; g < T.size; ++g) {
    T.mult[static_cast<std::size_t>(g)].resize(static_cast<std::size_t>(T.size));
    for (long h = 0; h < T.size; ++h)
      T.mult[static_cast<std::size_t>(g)][static_cast<std::size_t>(h)] =
          id_of.at(compose_perm(elems[static_cast<std::size_t>(g)],
                                elems[static_cast<std::size_t>(h)]));
  }
  return T;
}

LabelMap default_labels(const Instance& I, const Instance& I0) {
  LabelMap out;
  int idx = 0;
  for (const auto& f : I.facts()) {
    if (I0.contains(f)) continue;
    for (int i = 1; i <= static_cast<int>(f.args.size()); ++i)
      out[{f, i}] = idx++;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Products

namespace {

Elem prod_elem(const Elem& a, long g, const std::set<Elem>& base_dom) {
  if (g == 0 && base_dom.count(a)) return a;
  return a + "@" + std::to_string(g);
}

}  // namespace

Instance simple_product(const Instance& I, const Instance& I0,
                        const GroupTable& G, const LabelMap& labels) {
  for (const auto& f : I0.facts())
    if (!I.contains(f)) throw UsageError("simple_product: I0 not contained");
  std::set<Elem> base_dom = I0.domain();
  Instance out;
  for (long g = 0; g < G.size; ++g) {
    for (const auto& f : I.facts()) {
      Fact nf{f.rel, {}};
      if (I0.contains(f)) {
        for (const auto& a : f.args) nf.args.push_back(prod_elem(a, g, base_dom));
      } else {
        for (int i = 1; i <= static_cast<int>(f.args.size()); ++i) {
          auto it = labels.find({f, i});
          if (it == labels.end())
            throw UsageError("simple_product: missing label for " +
                             to_string(f));
          long tw = G.compose(g, G.gen_elem[static_cast<std::size_t>(
                                     it->second)]);
          nf.args.push_back(prod_elem(f.args[static_cast<std::size_t>(i - 1)],
                                      tw, base_dom));
        }
      }
      out.add(std::move(nf));
    }
  }
  return out;
}

Instance mixed_product(const Instance& I, const Instance& I1,
                       const std::map<Elem, Elem>& h, const Instance& Himage,
                       const GroupTable& G, const LabelMap& labels_of_image) {
  for (const auto& f : I1.facts())
    if (!I.contains(f)) throw UsageError("mixed_product: I1 not contained");
  for (const auto& a : I1.domain()) {
    auto it = h.find(a);
    if (it == h.end() || it->second != a)
      throw UsageError("mixed_product: h is not the identity on I1");
  }
  std::set<Elem> base_dom = I1.domain();
  Instance out;
  for (long g = 0; g < G.size; ++g) {
    for (const auto& f : I.facts()) {
      Fact nf{f.rel, {}};
      if (I1.contains(f)) {
        for (const auto& a : f.args) nf.args.push_back(prod_elem(a, g, base_dom));
      } else {
        Fact img{f.rel, f.args};
        for (auto& a : img.args) a = h.at(a);
        if (I1.contains(img))
          throw UsageError("mixed_product: h maps a new fact into I1");
        if (!Himage.contains(img))
          throw UsageError("mixed_product: h image fact missing");
        for (int i = 1; i <= static_cast<int>(f.args.size()); ++i) {
          auto it = labels_of_image.find({img, i});
          if (it == labels_of_image.end())
            throw UsageError("mixed_product: missing label for image of " +
                             to_string(f));
          long tw = G.compose(g, G.gen_elem[static_cast<std::size_t>(
                                     it->second)]);
          nf.args.push_back(prod_elem(f.args[static_cast<std::size_t>(i - 1)],
                                      tw, base_dom));
        }
      }
      out.add(std::move(nf));
    }
  }
  return out;
}

bool check_cautious(const Instance& I, const Instance& I1,
                    const std::map<Elem, Elem>& f) {
  for (const auto& a : I.domain())
    if (!f.count(a)) throw UsageError("check_cautious: f not total on " + a);
  std::vector<const Fact*> facts;
  for (const auto& fa : I.facts()) facts.push_back(&fa);
  for (std::size_t i = 0; i < facts.size(); ++i)
    for (std::size_t j = i + 1; j < facts.size(); ++j) {
      const Fact& A = *facts[i];
      const Fact& B = *facts[j];
      if (A.rel != B.rel) continue;
      bool overlap = false;
      for (std::size_t p = 0; p < A.args.size(); ++p)
        overlap |= A.args[p] == B.args[p];
      if (!overlap) continue;
      if (I1.contains(A) && I1.contains(B)) continue;
      bool agree = true;
      for (std::size_t p = 0; p < A.args.size(); ++p)
        agree &= f.at(A.args[p]) == f.at(B.args[p]);
      if (!agree) return false;
    }
  return true;
}

// ---------------------------------------------------------------------------
// End-to-end

namespace {

// Cyclic CQs of size <= k with a non-entailed match in M.
std::optional<std::string> cyclic_audit(const Schema& s, const Instance& M,
                                        const Instance& I0,
                                        const DependencySet& closure, int k) {
  for (const auto& q : enumerate_cqs(s, k, CqClass::All)) {
    if (is_berge_acyclic(q)) continue;
    if (!find_match(q, M)) continue;
    if (!decide_uqa(s, I0, closure, q).answer)
      return to_string(q);
  }
  return std::nullopt;
}

}  // namespace

UniversalModel build_universal_model(const Schema& s, const Instance& I0,
                                     const DependencySet& deps, int k,
                                     const UniversalModelOptions& opts) {
  UniversalModel out;
  out.certificate.k = k;
  out.closure = deps.finitely_closed ? deps : finite_closure(s, deps);

  if (!satisfies_fds(I0, out.closure.fds)) {
    out.certificate.vacuous = true;
    return out;
  }
  if (k < 1) throw UsageError("build_universal_model requires k >= 1");

  auto [I1, prels] = individualize(I0);
  Schema sind = s;
  for (const auto& r : prels) sind.add_relation(r, 1);

  // Adaptive path: run the ACQ completion at k and audit the short cyclic
  // queries directly; re-seed on failure, then fall back to the blowup.
  if (!opts.always_product) {
    for (int attempt = 0; attempt < std::max(1, opts.reseed_attempts);
         ++attempt) {
      BuildOptions bo;
      bo.seed = opts.seed + static_cast<std::uint64_t>(attempt) * 101;
      bo.validate = opts.validate;
      BuildResult res = complete_acq_universal(sind, I1, out.closure, k, bo);
      auto bad = cyclic_audit(s, res.J.inst, I0, out.closure, k);
      if (!bad) {
        out.model = strip_individualizing(res.J.inst);
        out.log = std::move(res.log);
        out.certificate.k_inflated = k;
        out.certificate.stats["facts"] = static_cast<long>(out.model.size());
        out.certificate.stats["attempt"] = attempt;
        return out;
      }
      out.certificate.stats["cyclic_failures"] += 1;
    }
  }

  // Faithful blowup: k' = k*(arity+1), quotient by ~=_{k'}, mixed product
  // with a (2k+1)-acyclic group.
  int kp = k * (s.max_arity() + 1);
  out.certificate.k_inflated = kp;
  BuildOptions bo;
  bo.seed = opts.seed;
  bo.validate = opts.validate;
  bo.per_copy_individualization = true;
  BuildResult res = complete_acq_universal(sind, I1, out.closure, kp, bo);
  const Instance& If = res.J.inst;
  const Instance& base = res.J.base;

  auto classes = simeq_classes(If, kp);
  // Base elements must be alone in their classes (they are individualized).
  std::map<int, int> class_size;
  for (const auto& [e, c] : classes) class_size[c]++;
  for (const auto& a : base.domain())
    if (class_size[classes.at(a)] != 1)
      throw InternalError("individualized element shares a ~=_k' class");
  auto [Ifq, h] = quotient(If, classes);

  if (!check_cautious(If, base, h))
    throw InternalError("completion output is not cautious");
  out.certificate.cautious = true;

  LabelMap labels = default_labels(Ifq, base);
  long n_labels = static_cast<long>(labels.size());
  AcyclicGroup G = acyclic_group(static_cast<int>(std::max<long>(1, n_labels)),
                                 2 * k + 1, opts.seed);
  out.certificate.girth_certified = G.girth_certified;
  GroupTable T = enumerate_group(G, opts.group_cap);
  out.certificate.group_size = T.size;
  if (T.size * static_cast<long>(If.size()) > opts.product_cap)
    throw ResourceError("mixed product would exceed the product cap (" +
                        std::to_string(T.size * (long)If.size()) + " facts)");
  Instance Im = mixed_product(If, base, h, Ifq, T, labels);
  out.certificate.product_used = true;

  if (auto v = find_violation(Im, out.closure))
    throw InternalError("mixed product violates dependencies: " + *v);
  if (auto bad = cyclic_audit(s, Im, I0, out.closure, k))
    throw InternalError("mixed product fails the cyclic audit on " + *bad);

  out.model = strip_individualizing(Im);
  out.log = std::move(res.log);
  out.certificate.stats["facts"] = static_cast<long>(out.model.size());
  return out;
}

}  // namespace fcqa
