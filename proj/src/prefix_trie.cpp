#include "ecscan/prefix_trie.hpp"

#include <algorithm>
#include <cassert>

namespace ecscan {

namespace {

uint64_t sat_add(uint64_t a, uint64_t b) {
  uint64_t s = a + b;
  return s < a ? UINT64_MAX : s;
}

bool node_budget_blocked(uint64_t queries, int depth, const std::map<int, uint64_t>& limits) {
  auto it = limits.find(depth);
  return it != limits.end() && queries >= it->second;
}

}  // namespace

BudgetTable BudgetTable::ipv6_defaults() {
  BudgetTable t;
  t.routed_limits = {{48, 1}, {40, 4}, {32, 64}, {29, 512}, {16, 32768}};
  t.unrouted_limits = {{32, 1}, {16, 200}};
  t.combined_limit = 16384;
  return t;
}

int effective_scope(int source_len, std::optional<int> returned_scope, int floor) {
  if (floor > source_len) floor = source_len;
  if (!returned_scope) return source_len;
  return std::clamp(*returned_scope, floor, source_len);
}

void PrefixTrie::NodeDeleter::operator()(Node* n) const {
  if (!n) return;
  operator()(n->child[0].load());
  operator()(n->child[1].load());
  delete n;
}

PrefixTrie::PrefixTrie(Family family) : family_(family), root_(new Node()) {}

PrefixTrie PrefixTrie::from_seeds(std::span<const Prefix> seeds, RouteClass cls) {
  return cls == RouteClass::routed ? from_seed_sets(seeds, {}) : from_seed_sets({}, seeds);
}

PrefixTrie PrefixTrie::from_seed_sets(std::span<const Prefix> routed,
                                      std::span<const Prefix> unrouted) {
  struct Tagged {
    Prefix p;
    RouteClass cls;
  };
  std::vector<Tagged> all;
  all.reserve(routed.size() + unrouted.size());
  for (const auto& p : routed) all.push_back({p, RouteClass::routed});
  for (const auto& p : unrouted) all.push_back({p, RouteClass::unrouted});

  Family family = all.empty() ? Family::v4 : all.front().p.family;
  for (const auto& t : all)
    if (t.p.family != family) throw MixedFamilyError("seed prefixes mix address families");

  std::sort(all.begin(), all.end(),
            [](const Tagged& a, const Tagged& b) { return a.p < b.p; });

  PrefixTrie trie(family);
  const Prefix* last = nullptr;
  for (const auto& t : all) {
    if (last && last->contains(t.p)) continue;  // duplicates and contained seeds merge
    auto path = trie.make_path(t.p);
    for (size_t d = 0; d + 1 < path.size(); ++d) path[d]->announced_below = true;
    Node* terminal = path.back();
    terminal->announced = true;
    terminal->cls = t.cls;
    auto seed = std::make_unique<Seed>();
    seed->prefix = t.p;
    seed->cls = t.cls;
    seed->node = terminal;
    trie.seeds_.push_back(std::move(seed));
    last = &trie.seeds_.back()->prefix;
  }
  return trie;
}

PrefixTrie::Node* PrefixTrie::ensure_child(Node* parent, int bit) {
  Node* c = parent->child[bit].load(std::memory_order_acquire);
  if (c) return c;
  Node* fresh = new Node();
  if (parent->child[bit].compare_exchange_strong(c, fresh, std::memory_order_acq_rel))
    return fresh;
  delete fresh;
  return c;
}

std::vector<PrefixTrie::Node*> PrefixTrie::make_path(const Prefix& p) {
  std::vector<Node*> path;
  path.reserve(p.length + 1);
  Node* n = root_.get();
  path.push_back(n);
  for (int d = 0; d < p.length; ++d) {
    n = ensure_child(n, p.bits.bit(d));
    path.push_back(n);
  }
  return path;
}

const PrefixTrie::Node* PrefixTrie::find_node(const Prefix& p) const {
  const Node* n = root_.get();
  for (int d = 0; d < p.length && n; ++d) n = n->child[p.bits.bit(d)].load();
  return n;
}

void PrefixTrie::apply_scope(const Prefix& queried, int eff_scope) {
  assert(eff_scope <= queried.length);
  auto path = make_path(queried.supernet(eff_scope));
  if (path.back()->covered.exchange(true)) return;
  // Merge upward: a node whose two children are both covered is covered.
  for (int d = static_cast<int>(path.size()) - 2; d >= 0; --d) {
    Node* c0 = path[d]->child[0].load();
    Node* c1 = path[d]->child[1].load();
    if (!c0 || !c1 || !c0->covered.load() || !c1->covered.load()) break;
    if (path[d]->covered.exchange(true)) break;
  }
}

bool PrefixTrie::is_covered(const Prefix& p) const {
  const Node* n = root_.get();
  for (int d = 0;; ++d) {
    if (!n) return false;
    if (n->covered.load()) return true;
    if (d == p.length) return false;
    n = n->child[p.bits.bit(d)].load();
  }
}

void PrefixTrie::record_query(const Prefix& target) {
  for (Node* n : make_path(target)) n->queries.fetch_add(1, std::memory_order_relaxed);
  total_queries_.fetch_add(1, std::memory_order_relaxed);
}

uint64_t PrefixTrie::queries_within(const Prefix& p) const {
  const Node* n = find_node(p);
  return n ? n->queries.load() : 0;
}

RouteClass PrefixTrie::route_class_of(const Prefix& p) const {
  const Node* n = root_.get();
  for (int d = 0; n; ++d) {
    if (n->announced) return n->cls;
    if (d == p.length) break;
    n = n->child[p.bits.bit(d)].load();
  }
  // Above the seeds: the first announced descendant decides.
  if (n) {
    std::vector<const Node*> stack{n};
    while (!stack.empty()) {
      const Node* cur = stack.back();
      stack.pop_back();
      if (cur->announced) return cur->cls;
      for (int b = 1; b >= 0; --b)
        if (const Node* c = cur->child[b].load()) stack.push_back(c);
    }
  }
  return RouteClass::routed;
}

bool PrefixTrie::budget_ok(const Prefix& candidate, const BudgetTable& budgets) const {
  if (budgets.empty()) return true;
  const auto& limits = budgets.limits_for(route_class_of(candidate));
  if (budgets.combined_limit && budgets.combined_global &&
      total_queries_.load() >= *budgets.combined_limit)
    return false;
  const Node* n = root_.get();
  const Node* seed_node = nullptr;
  const Node* last = nullptr;
  for (int d = 0; n; ++d) {
    if (node_budget_blocked(n->queries.load(), d, limits)) return false;
    if (n->announced && !seed_node) seed_node = n;
    last = n;
    if (d == candidate.length) break;
    n = n->child[candidate.bits.bit(d)].load();
  }
  if (budgets.combined_limit && !budgets.combined_global) {
    // Counted at the seed prefix, or at the candidate itself when it
    // encloses the seed.
    const Node* at = seed_node ? seed_node : last;
    if (at && at->queries.load() >= *budgets.combined_limit) return false;
  }
  return true;
}

std::optional<Prefix> PrefixTrie::next_uncovered(AddrBits cursor, int source_len) const {
  cursor = cursor.masked(source_len);
  while (true) {
    const Node* node = root_.get();
    bool inside = false;
    for (int d = 0;; ++d) {
      if (node->covered.load()) {
        if (!advance_grid(cursor, family_, d)) return std::nullopt;
        break;
      }
      inside = inside || node->announced;
      if (!inside && !node->announced_below) {
        if (!advance_grid(cursor, family_, d)) return std::nullopt;
        break;
      }
      if (d == source_len)
        return Prefix{family_, cursor, static_cast<uint8_t>(source_len)};
      const Node* c = node->child[cursor.bit(d)].load();
      if (!c) {
        if (inside) return Prefix{family_, cursor, static_cast<uint8_t>(source_len)};
        // Announced space lies under the other child; step past this half.
        if (!advance_grid(cursor, family_, d + 1)) return std::nullopt;
        break;
      }
      node = c;
    }
  }
}

bool PrefixTrie::path_blocked(const Prefix& rep, const std::map<int, uint64_t>* limits,
                              std::optional<uint64_t> combined_at_rep) const {
  const Node* n = root_.get();
  for (int d = 0;; ++d) {
    if (!n) return false;
    if (n->covered.load()) return true;
    if (limits && node_budget_blocked(n->queries.load(), d, *limits)) return true;
    if (d == rep.length)
      return combined_at_rep && n->queries.load() >= *combined_at_rep;
    n = n->child[rep.bits.bit(d)].load();
  }
}

std::optional<AddrBits> PrefixTrie::descend(const Node* node, int depth, AddrBits acc,
                                            int source_len,
                                            const std::map<int, uint64_t>* limits,
                                            std::mt19937_64& rng) const {
  if (depth == source_len) return acc;
  if (!node) {
    // Untouched space below a seed: any completion is eligible.
    for (int d = depth; d < source_len; ++d) acc.set_bit(d, rng() & 1);
    return acc;
  }
  const Node* kids[2] = {node->child[0].load(), node->child[1].load()};
  auto eligible = [&](int b) {
    const Node* c = kids[b];
    if (!c) return true;
    if (c->covered.load()) return false;
    return !(limits && node_budget_blocked(c->queries.load(), depth + 1, *limits));
  };
  bool ok0 = eligible(0), ok1 = eligible(1);
  if (!ok0 && !ok1) return std::nullopt;
  int first = ok0 && ok1 ? static_cast<int>(rng() & 1) : (ok0 ? 0 : 1);
  for (int attempt = 0; attempt < 2; ++attempt) {
    int b = attempt == 0 ? first : 1 - first;
    if (!(b == 0 ? ok0 : ok1)) continue;
    AddrBits next = acc;
    next.set_bit(depth, b == 1);
    if (auto r = descend(kids[b], depth + 1, next, source_len, limits, rng)) return r;
  }
  return std::nullopt;
}

std::optional<Prefix> PrefixTrie::random_eligible(std::mt19937_64& rng, int source_len,
                                                  const BudgetTable& budgets, bool seed_once,
                                                  std::span<const size_t> seed_subset) {
  std::vector<size_t> indices;
  if (seed_subset.empty()) {
    indices.resize(seeds_.size());
    for (size_t i = 0; i < seeds_.size(); ++i) indices[i] = i;
  } else {
    indices.assign(seed_subset.begin(), seed_subset.end());
  }

  auto rep_of = [&](const Seed& s) {
    return s.prefix.length >= source_len ? s.prefix.supernet(source_len) : s.prefix;
  };
  auto pick = [&](std::vector<size_t>& pool) {
    std::uniform_int_distribution<size_t> d(0, pool.size() - 1);
    size_t at = d(rng);
    size_t idx = pool[at];
    pool[at] = pool.back();
    pool.pop_back();
    return idx;
  };

  if (seed_once) {
    // Seeds that never received a query are served first, ignoring budgets.
    std::vector<size_t> pending;
    for (size_t i : indices) {
      Seed& s = *seeds_[i];
      if (s.done.load()) continue;
      Prefix rep = rep_of(s);
      const Node* rn = find_node(rep);
      if (rn && rn->queries.load() > 0) continue;
      pending.push_back(i);
    }
    while (!pending.empty()) {
      Seed& s = *seeds_[pick(pending)];
      Prefix rep = rep_of(s);
      if (!path_blocked(rep, nullptr, std::nullopt)) {
        if (rep.length == source_len) return rep;
        if (auto bits = descend(s.node, s.prefix.length, s.prefix.bits, source_len,
                                nullptr, rng))
          return Prefix{family_, bits->masked(source_len),
                        static_cast<uint8_t>(source_len)};
      }
      s.done.store(true);  // fully covered, nothing can reopen it
    }
  }

  std::vector<size_t> pool;
  for (size_t i : indices)
    if (!seeds_[i]->done.load()) pool.push_back(i);
  while (!pool.empty()) {
    Seed& s = *seeds_[pick(pool)];
    Prefix rep = rep_of(s);
    const auto& limits = budgets.limits_for(s.cls);
    std::optional<uint64_t> combined;
    if (budgets.combined_limit) {
      if (budgets.combined_global) {
        if (total_queries_.load() >= *budgets.combined_limit) return std::nullopt;
      } else {
        combined = *budgets.combined_limit;
      }
    }
    if (!path_blocked(rep, &limits, combined)) {
      if (rep.length == source_len) return rep;
      if (auto bits =
              descend(s.node, s.prefix.length, s.prefix.bits, source_len, &limits, rng))
        return Prefix{family_, bits->masked(source_len), static_cast<uint8_t>(source_len)};
    }
    s.done.store(true);  // coverage and counters only grow
  }
  return std::nullopt;
}

uint64_t PrefixTrie::count_naive_targets(int source_len) const {
  struct Walker {
    int L;
    uint64_t operator()(const Node* n, int depth) const {
      if (!n) return 0;
      if (depth == L) return n->announced || n->announced_below ? 1 : 0;
      if (n->announced) {
        int shift = L - depth;
        return shift >= 64 ? UINT64_MAX : 1ULL << shift;
      }
      if (!n->announced_below) return 0;
      return sat_add((*this)(n->child[0].load(), depth + 1),
                     (*this)(n->child[1].load(), depth + 1));
    }
  };
  return Walker{source_len}(root_.get(), 0);
}

std::vector<Prefix> PrefixTrie::partitions(int depth) const {
  std::vector<Prefix> out;
  struct Walker {
    Family family;
    int depth;
    std::vector<Prefix>* out;
    void operator()(const Node* n, bool inside, int d, AddrBits acc) const {
      inside = inside || (n && n->announced);
      if (d == depth) {
        if (inside || (n && n->announced_below))
          out->push_back(Prefix{family, acc, static_cast<uint8_t>(depth)});
        return;
      }
      for (int b = 0; b < 2; ++b) {
        const Node* c = n ? n->child[b].load() : nullptr;
        if (inside || (c && (c->announced || c->announced_below))) {
          AddrBits next = acc;
          next.set_bit(d, b == 1);
          (*this)(c, inside, d + 1, next);
        }
      }
    }
  };
  Walker{family_, depth, &out}(root_.get(), false, 0, AddrBits{});
  return out;
}

uint64_t count_naive_targets(std::span<const Prefix> seeds, int source_len) {
  if (seeds.empty()) return 0;
  return PrefixTrie::from_seeds(seeds).count_naive_targets(source_len);
}

}  // namespace ecscan
