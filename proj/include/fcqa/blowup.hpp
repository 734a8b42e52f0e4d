#pragma once

#include "fcqa/builder.hpp"
#include "fcqa/oracle.hpp"

namespace fcqa {

// Adds P_a(a) per element; returns the instance and the fresh relations.
// Throws when the instance is already individualizing.
std::pair<Instance, std::set<RelName>> individualize(const Instance& I0);

bool is_individualizing_relation(const RelName& r);
Instance strip_individualizing(const Instance& I);

// ---------------------------------------------------------------------------
// Acyclic groups

struct AcyclicGroup {
  bool cyclic = false;
  long modulus = 0;                    // cyclic case: Z/modulus
  int degree = 0;                      // permutation case
  std::vector<std::vector<int>> gens;  // permutations of {0..degree-1}
  int girth_certified = 0;
  int n_labels = 0;
};

// |X| = 1 gives Z/girth_target; otherwise randomized permutation generators
// certified by exhaustive injectivity over reduced words of length
// <= floor(girth_certified/2).
AcyclicGroup acyclic_group(int n_labels, int girth_target, std::uint64_t seed);

// Independent re-verification by word enumeration.
bool verify_girth(const AcyclicGroup& G, int girth_target);

// Enumerated group with composition; element 0 is the identity.
struct GroupTable {
  long size = 0;
  std::vector<long> gen_elem;  // generator index -> element id
  std::vector<std::vector<long>> mult;  // size x size composition

  long compose(long g, long h) const { return mult[g][h]; }
};

// BFS closure of the generators; throws ResourceError past `cap` elements.
GroupTable enumerate_group(const AcyclicGroup& G, long cap);

// Label assignment for products: (fact, position) -> generator index.
using LabelMap = std::map<std::pair<Fact, int>, int>;

// Labels of I \ I0 in deterministic order.
LabelMap default_labels(const Instance& I, const Instance& I0);

// ---------------------------------------------------------------------------
// Products

// (I, I0) x G: base facts copied diagonally, other facts twisted by their
// labels; (a, e) is identified with a for base elements.
Instance simple_product(const Instance& I, const Instance& I0,
                        const GroupTable& G, const LabelMap& labels);

// Mixed product (I, I1) x^h G, twisting by the labels of the h-images.
Instance mixed_product(const Instance& I, const Instance& I1,
                       const std::map<Elem, Elem>& h, const Instance& Himage,
                       const GroupTable& G, const LabelMap& labels_of_image);

// Overlapping facts are both in I1 or agree elementwise under f.
bool check_cautious(const Instance& I, const Instance& I1,
                    const std::map<Elem, Elem>& f);

// ---------------------------------------------------------------------------
// End-to-end universal model construction

struct UniversalModelOptions {
  std::uint64_t seed = 0;
  int reseed_attempts = 6;    // completion re-seeds before taking the product
  bool always_product = false;
  long product_cap = 400000;  // max facts in a materialized product
  long group_cap = 100000;    // max enumerated group size
  bool validate = false;
};

struct BuildCertificate {
  bool vacuous = false;
  int k = 0;
  int k_inflated = 0;        // k' actually used by the ACQ stage
  bool product_used = false;
  bool cautious = true;
  int girth_certified = 0;
  long group_size = 1;
  std::map<std::string, long> stats;
};

struct UniversalModel {
  Instance model;  // individualizing relations stripped
  BuildCertificate certificate;
  DependencySet closure;
  BuildLog log;
};

// Full pipeline: finite closure, individualization, ACQ-universal completion,
// cyclic audit; when short cycles survive, re-seed and finally fall back to
// the quotient + mixed-product blowup.
UniversalModel build_universal_model(const Schema& s, const Instance& I0,
                                     const DependencySet& deps, int k,
                                     const UniversalModelOptions& opts = {});

}  // namespace fcqa
