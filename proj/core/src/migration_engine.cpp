#include "vmcachen/migration_engine.hpp"

#include <cassert>
#include <climits>
#include <random>
#include <unordered_set>

namespace vmcachen {

using namespace migration_status;

namespace {
constexpr int kUnset = INT_MIN;
}

MigrationRequest MigrationRequest::uniform(std::vector<PageId> pages, TierId target, MigrationMode mode, u32 cap) {
   MigrationRequest r;
   r.targets.assign(pages.size(), target);
   r.pages = std::move(pages);
   r.mode = mode;
   r.maxBatchedMigration = cap;
   return r;
}

//---------------------------------------------------------------------------

void FailureInjector::inject(PageId pid, InjectedFault fault, u32 attempts) {
   rules_[pid] = Rule{fault, attempts};
}

FailureInjector FailureInjector::random(u64 seed, const std::vector<PageId>& pages, double rate) {
   FailureInjector inj;
   std::mt19937_64 gen(seed);
   std::uniform_real_distribution<double> coin(0.0, 1.0);
   std::uniform_int_distribution<int> kind(0, 3);
   for (PageId pid : pages)
      if (coin(gen) < rate)
         inj.inject(pid, static_cast<InjectedFault>(kind(gen)));
   return inj;
}

std::optional<InjectedFault> FailureInjector::validationFault(PageId pid) const {
   auto it = rules_.find(pid);
   if (it == rules_.end())
      return std::nullopt;
   if (it->second.fault == InjectedFault::AccessFailure || it->second.fault == InjectedFault::InvalidTarget)
      return it->second.fault;
   return std::nullopt;
}

std::optional<InjectedFault> FailureInjector::isolationFault(PageId pid) {
   auto it = rules_.find(pid);
   if (it == rules_.end())
      return std::nullopt;
   Rule& r = it->second;
   if (r.fault != InjectedFault::Busy && r.fault != InjectedFault::WritebackBusy)
      return std::nullopt;
   if (r.remaining == 0)
      return std::nullopt;
   if (r.remaining != kPermanent)
      r.remaining--;
   return r.fault;
}

//---------------------------------------------------------------------------

void MigrationEngine::validateShape(const MigrationRequest& req) const {
   if (req.pages.size() != req.targets.size())
      throw RequestError("pages and targets differ in length");
   if (req.maxBatchedMigration == 0)
      throw RequestError("nr_max_batched_migration must be >= 1");
   std::unordered_set<PageId> seen;
   seen.reserve(req.pages.size());
   for (PageId p : req.pages)
      if (!seen.insert(p).second)
         throw RequestError("duplicate page " + std::to_string(p.slot) + " in request");
}

int MigrationEngine::validate(PageId pid, TierId target, FailureInjector* inj) const {
   if (pid.slot >= backend_.pageCount())
      return kAccessFailure;
   if (inj) {
      if (auto f = inj->validationFault(pid))
         return *f == InjectedFault::AccessFailure ? kAccessFailure : kInvalidTarget;
   }
   if (target.index >= backend_.memoryTiers())
      return kInvalidTarget;
   if (backend_.placementOf(pid).onDisk)
      return kAccessFailure;
   return 0;
}

// Sync waits out busy pages and writebacks (bounded); SyncLight waits only on
// busy pages; Async never waits.
int MigrationEngine::isolate(PageId pid, MigrationMode mode, FailureInjector* inj) {
   if (!inj)
      return 0;
   for (u32 attempt = 1;; attempt++) {
      auto f = inj->isolationFault(pid);
      if (!f)
         return 0;
      bool wait = false;
      if (mode == MigrationMode::Sync)
         wait = true;
      else if (mode == MigrationMode::SyncLight)
         wait = (*f == InjectedFault::Busy);
      if (!wait || attempt >= kSyncRetryAttempts)
         return kBusy;
   }
}

int MigrationEngine::migrateOne(PageId pid, TierId target, MigrationOutcome& out) {
   try {
      Placement src = backend_.placementOf(pid);
      backend_.retargetFrame(pid, target);
      if (!src.onDisk && src.tier != target)
         out.modeledNs += backend_.cost().charge(backend_.cost().copyNs(src.tier, target, backend_.pageSize()));
      return static_cast<int>(target.index);
   } catch (const TierFullError&) {
      return kTierFull;
   } catch (const IllegalStateError&) {
      return kAccessFailure;
   }
}

MigrationOutcome MigrationEngine::run(const MigrationRequest& req, FailureInjector* inj, RunOptions opt) {
   validateShape(req);
   const std::size_t n = req.pages.size();
   MigrationOutcome out;
   out.status.assign(n, kUnset);

   std::vector<std::size_t> round;
   std::optional<TierId> current;

   // Migrate the pages queued for the current round; returns true if any failed.
   auto flush = [&]() {
      bool anyFailed = false;
      if (!round.empty()) {
         out.rounds++;
         for (std::size_t start = 0; start < round.size(); start += opt.cap) {
            out.shootdowns++;
            out.modeledNs += backend_.cost().charge(backend_.cost().shootdownNs);
            std::size_t end = std::min<std::size_t>(round.size(), start + opt.cap);
            for (std::size_t j = start; j < end; j++) {
               std::size_t idx = round[j];
               out.status[idx] = migrateOne(req.pages[idx], *current, out);
               anyFailed |= out.status[idx] < 0;
            }
         }
      }
      round.clear();
      current.reset();
      return anyFailed;
   };
   auto skipFrom = [&](std::size_t from) {
      for (std::size_t k = from; k < n; k++)
         out.status[k] = kSkipped;
   };

   bool aborted = false;
   for (std::size_t i = 0; i < n && !aborted; i++) {
      PageId pid = req.pages[i];
      TierId target = req.targets[i];

      if (int err = validate(pid, target, inj)) {
         out.status[i] = err;
         flush();
         if (opt.abortOnFailure) {
            skipFrom(i + 1);
            aborted = true;
         }
         continue;
      }
      if (current && *current != target) {
         // target changed: end the current round
         if (flush() && opt.abortOnFailure) {
            skipFrom(i);
            aborted = true;
            continue;
         }
      }
      if (int err = isolate(pid, opt.mode, inj)) {
         out.status[i] = err;
         flush();
         if (opt.abortOnFailure) {
            skipFrom(i + 1);
            aborted = true;
         }
         continue;
      }
      current = target;
      round.push_back(i);
   }
   if (!aborted)
      flush();

   for (int s : out.status) {
      assert(s != kUnset);
      if (s >= 0)
         out.migrated++;
      else
         out.failed++;
   }
   return out;
}

MigrationOutcome MigrationEngine::movePages2(const MigrationRequest& req, FailureInjector* inj) {
   return run(req, inj, {false, req.mode, req.maxBatchedMigration});
}

MigrationOutcome MigrationEngine::movePagesLegacy(const MigrationRequest& req, FailureInjector* inj) {
   return run(req, inj, {true, MigrationMode::Sync, kDefaultMaxBatchedMigration});
}

int MigrationEngine::mbindOne(PageId pid, TierId target, FailureInjector* inj, MigrationOutcome& out) {
   out.rounds++;
   out.shootdowns++;
   out.modeledNs += backend_.cost().charge(backend_.cost().shootdownNs);
   if (int err = validate(pid, target, inj))
      return err;
   if (int err = isolate(pid, MigrationMode::Sync, inj))
      return err;
   return migrateOne(pid, target, out);
}

int MigrationEngine::mbindSingle(PageId pid, TierId target, FailureInjector* inj) {
   MigrationOutcome scratch;
   return mbindOne(pid, target, inj, scratch);
}

MigrationOutcome MigrationEngine::migrate(MigrationEngineKind kind, const std::vector<PageId>& pages, TierId target,
                                          MigrationMode mode, u32 cap) {
   switch (kind) {
      case MigrationEngineKind::MovePages2:
         return movePages2(MigrationRequest::uniform(pages, target, mode, cap));
      case MigrationEngineKind::Legacy:
         return movePagesLegacy(MigrationRequest::uniform(pages, target));
      case MigrationEngineKind::Mbind:
         break;
   }
   MigrationOutcome out;
   out.status.reserve(pages.size());
   for (PageId pid : pages) {
      int s = mbindOne(pid, target, nullptr, out);
      out.status.push_back(s);
      if (s >= 0)
         out.migrated++;
      else
         out.failed++;
   }
   return out;
}

} // namespace vmcachen
