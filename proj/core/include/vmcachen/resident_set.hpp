#pragma once

#include <atomic>
#include <memory>
#include <vector>

#include "vmcachen/types.hpp"

namespace vmcachen {

// open addressing hash table used for clock replacement to keep track of the
// pages cached in one memory tier
class ResidentSet {
public:
   static constexpr u64 kEmpty = ~0ull;
   static constexpr u64 kTombstone = ~0ull - 1;

   /// Table size is the next power of two >= 2 * tierCapacity.
   explicit ResidentSet(u64 tierCapacity);

   void insert(PageId pid);
   bool remove(PageId pid);
   bool contains(PageId pid) const;

   u64 size() const { return size_.load(std::memory_order_acquire); }
   u64 tableSize() const { return count_; }

   /// Advances the shared clock hand by `batch` slots and calls fn(PageId) for
   /// every live entry in the claimed range.
   template <class Fn>
   void iterateClockBatch(u64 batch, Fn&& fn) {
      u64 pos = clockPos_.load();
      u64 next;
      do {
         next = (pos + batch) & mask_;
      } while (!clockPos_.compare_exchange_weak(pos, next));
      for (u64 i = 0; i < batch; i++) {
         u64 curr = table_[pos].load(std::memory_order_acquire);
         if (curr != kEmpty && curr != kTombstone)
            fn(PageId(curr));
         pos = (pos + 1) & mask_;
      }
   }

   /// All live entries; exact only at quiescent points.
   std::vector<PageId> snapshot() const;

private:
   static u64 hash(u64 k);

   u64 count_;
   u64 mask_;
   std::unique_ptr<std::atomic<u64>[]> table_;
   std::atomic<u64> clockPos_{0};
   std::atomic<u64> size_{0};
};

} // namespace vmcachen
