#pragma once

#include <map>
#include <optional>
#include <vector>

#include "vmcachen/tier_backend.hpp"
#include "vmcachen/types.hpp"

namespace vmcachen {

enum class MigrationMode { Async, Sync, SyncLight };

/// Which migration interface the buffer pool drives.
enum class MigrationEngineKind { MovePages2, Legacy, Mbind };

/// Per-page status codes. Successful entries hold the target tier index.
namespace migration_status {
constexpr int kAccessFailure = -1;
constexpr int kInvalidTarget = -2;
constexpr int kBusy = -3;
constexpr int kTierFull = -4;
constexpr int kSkipped = -5;
} // namespace migration_status

constexpr u32 kDefaultMaxBatchedMigration = 512;
/// Attempts on a busy page in Sync mode before giving up.
constexpr u32 kSyncRetryAttempts = 3;

struct MigrationRequest {
   std::vector<PageId> pages;
   std::vector<TierId> targets;
   MigrationMode mode = MigrationMode::Sync;
   u32 maxBatchedMigration = kDefaultMaxBatchedMigration;

   static MigrationRequest uniform(std::vector<PageId> pages, TierId target, MigrationMode mode = MigrationMode::Sync,
                                   u32 cap = kDefaultMaxBatchedMigration);
};

struct MigrationOutcome {
   std::vector<int> status;
   u64 rounds = 0;
   u64 shootdowns = 0;
   u64 migrated = 0;
   u64 failed = 0;
   /// Sum of modeled shootdown and copy costs (charged only if the cost model
   /// is enabled).
   u64 modeledNs = 0;
};

enum class InjectedFault { AccessFailure, InvalidTarget, Busy, WritebackBusy };

/// Deterministic per-page failure rules for exercising partial-failure paths.
/// Busy faults can be transient: they clear after `attempts` tries.
class FailureInjector {
public:
   static constexpr u32 kPermanent = ~0u;

   void inject(PageId pid, InjectedFault fault, u32 attempts = kPermanent);
   /// Each page in `pages` gets a fault with probability `rate`, drawn from a
   /// generator seeded with `seed`.
   static FailureInjector random(u64 seed, const std::vector<PageId>& pages, double rate);

   bool empty() const { return rules_.empty(); }
   /// Address/target validation failure for this page, if any.
   std::optional<InjectedFault> validationFault(PageId pid) const;
   /// Consumes one isolation attempt; returns the busy kind if still busy.
   std::optional<InjectedFault> isolationFault(PageId pid);

private:
   struct Rule {
      InjectedFault fault;
      u32 remaining;
   };
   std::map<PageId, Rule> rules_;
};

/// Batched inter-tier migration over TierBackend::retargetFrame. Reentrant:
/// concurrent calls must cover disjoint page sets that the callers hold
/// exclusively.
class MigrationEngine {
public:
   explicit MigrationEngine(TierBackend& backend) : backend_(backend) {}

   /// Optimistic batched migration: runs of consecutive pages with the same
   /// target form rounds, flushed in chunks of at most maxBatchedMigration
   /// pages (one shootdown per chunk). A per-page failure flushes the current
   /// round and scanning continues.
   MigrationOutcome movePages2(const MigrationRequest& req, FailureInjector* inj = nullptr);

   /// Legacy abort-on-failure semantics: cap 512, Sync. The first per-page
   /// error flushes the accumulated round and skips everything after it.
   MigrationOutcome movePagesLegacy(const MigrationRequest& req, FailureInjector* inj = nullptr);

   /// One page, one shootdown. Returns the target tier or a negative status.
   int mbindSingle(PageId pid, TierId target, FailureInjector* inj = nullptr);

   /// Same-target batch through the selected interface.
   MigrationOutcome migrate(MigrationEngineKind kind, const std::vector<PageId>& pages, TierId target,
                            MigrationMode mode, u32 cap);

private:
   struct RunOptions {
      bool abortOnFailure;
      MigrationMode mode;
      u32 cap;
   };

   MigrationOutcome run(const MigrationRequest& req, FailureInjector* inj, RunOptions opt);
   void validateShape(const MigrationRequest& req) const;
   int validate(PageId pid, TierId target, FailureInjector* inj) const;
   int isolate(PageId pid, MigrationMode mode, FailureInjector* inj);
   int migrateOne(PageId pid, TierId target, MigrationOutcome& out);
   int mbindOne(PageId pid, TierId target, FailureInjector* inj, MigrationOutcome& out);

   TierBackend& backend_;
};

} // namespace vmcachen
