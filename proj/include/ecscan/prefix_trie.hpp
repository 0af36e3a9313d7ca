#pragma once

#include <atomic>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

#include "ecscan/prefix.hpp"

namespace ecscan {

enum class RouteClass : uint8_t { routed, unrouted };

struct MixedFamilyError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Per-prefix-length query limits, applied at trie nodes. The combined limit
// caps routed+unrouted queries per seed prefix, or per scan when global.
struct BudgetTable {
  std::map<int, uint64_t> routed_limits;
  std::map<int, uint64_t> unrouted_limits;
  std::optional<uint64_t> combined_limit;
  bool combined_global = false;

  bool empty() const {
    return routed_limits.empty() && unrouted_limits.empty() && !combined_limit;
  }
  const std::map<int, uint64_t>& limits_for(RouteClass cls) const {
    return cls == RouteClass::routed ? routed_limits : unrouted_limits;
  }
  // /48:1, /40:4, /32:64, /29:512, /16:32768 routed; /32:1, /16:200,
  // total 16384 unrouted.
  static BudgetTable ipv6_defaults();
};

// Returns the scope length used for skipping decisions: the returned scope
// clamped to [floor, source_len]; a response without an echoed scope maps
// to source_len (covers exactly the queried prefix).
int effective_scope(int source_len, std::optional<int> returned_scope, int floor);

// Binary radix model of the announced address space for one family, with
// coverage marks, per-node query counters and seed bookkeeping.
//
// Thread safety: counters and coverage flags are atomic and child insertion
// uses compare-and-swap, so concurrent workers may operate on disjoint
// address partitions without extra locking. Announced flags are immutable
// after construction.
class PrefixTrie {
 public:
  explicit PrefixTrie(Family family);
  PrefixTrie(PrefixTrie&& other) noexcept
      : family_(other.family_),
        root_(std::move(other.root_)),
        seeds_(std::move(other.seeds_)),
        total_queries_(other.total_queries_.load()) {}
  PrefixTrie& operator=(PrefixTrie&& other) noexcept {
    family_ = other.family_;
    root_ = std::move(other.root_);
    seeds_ = std::move(other.seeds_);
    total_queries_.store(other.total_queries_.load());
    return *this;
  }

  static PrefixTrie from_seeds(std::span<const Prefix> seeds,
                               RouteClass cls = RouteClass::routed);
  static PrefixTrie from_seed_sets(std::span<const Prefix> routed,
                                   std::span<const Prefix> unrouted);

  Family family() const { return family_; }
  size_t seed_count() const { return seeds_.size(); }
  const Prefix& seed(size_t i) const { return seeds_[i]->prefix; }

  // Marks the /effective_scope supernet of the queried prefix covered.
  // Idempotent; requires effective_scope <= queried.length.
  void apply_scope(const Prefix& queried, int eff_scope);
  bool is_covered(const Prefix& p) const;

  // Increments dispatch counters along the target's path; call once per
  // dispatched target (transport retries do not count again).
  void record_query(const Prefix& target);
  uint64_t queries_within(const Prefix& p) const;
  uint64_t total_queries() const { return total_queries_.load(); }

  // True iff every configured limit at lengths <= candidate.length still has
  // room for one more query, including the combined per-seed-prefix limit.
  bool budget_ok(const Prefix& candidate, const BudgetTable& budgets) const;

  // Lowest /source_len prefix at or after the cursor that intersects the
  // announced space and is not covered; nullopt when the sweep is done.
  std::optional<Prefix> next_uncovered(AddrBits cursor, int source_len) const;

  // Random uncovered, budget-eligible /source_len prefix drawn by binary
  // descent from a uniformly chosen seed root. With seed_once, seeds that
  // have not been queried yet are served first, ignoring budget limits.
  // seed_subset restricts the draw to the given seed indices (for worker
  // partitioning); empty means all seeds.
  std::optional<Prefix> random_eligible(std::mt19937_64& rng, int source_len,
                                        const BudgetTable& budgets, bool seed_once,
                                        std::span<const size_t> seed_subset = {});

  // Number of distinct /source_len prefixes intersecting the announced
  // space (saturating at uint64 max).
  uint64_t count_naive_targets(int source_len) const;

  // The /depth blocks intersecting the announced space, in address order.
  std::vector<Prefix> partitions(int depth) const;

 private:
  struct Node {
    std::atomic<Node*> child[2] = {nullptr, nullptr};
    std::atomic<uint64_t> queries{0};
    std::atomic<bool> covered{false};
    bool announced = false;
    bool announced_below = false;
    RouteClass cls = RouteClass::routed;
  };
  struct Seed {
    Prefix prefix;
    RouteClass cls;
    Node* node = nullptr;
    std::atomic<bool> done{false};
  };
  struct NodeDeleter {
    void operator()(Node* n) const;
  };

  Node* ensure_child(Node* parent, int bit);
  std::vector<Node*> make_path(const Prefix& p);
  const Node* find_node(const Prefix& p) const;
  RouteClass route_class_of(const Prefix& p) const;
  bool path_blocked(const Prefix& rep, const std::map<int, uint64_t>* limits,
                    std::optional<uint64_t> combined_at_rep) const;
  std::optional<AddrBits> descend(const Node* node, int depth, AddrBits acc, int source_len,
                                  const std::map<int, uint64_t>* limits,
                                  std::mt19937_64& rng) const;

  Family family_;
  std::unique_ptr<Node, NodeDeleter> root_;
  std::vector<std::unique_ptr<Seed>> seeds_;
  std::atomic<uint64_t> total_queries_{0};
};

// Naive target count over a seed list; the non-response-aware baseline.
uint64_t count_naive_targets(std::span<const Prefix> seeds, int source_len);

}  // namespace ecscan
