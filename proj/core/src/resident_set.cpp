#include "vmcachen/resident_set.hpp"

#include <bit>
#include <algorithm>
#include <cassert>

namespace vmcachen {

ResidentSet::ResidentSet(u64 tierCapacity)
   : count_(std::bit_ceil(std::max<u64>(2, 2 * tierCapacity))), mask_(count_ - 1),
     table_(std::make_unique<std::atomic<u64>[]>(count_)) {
   for (u64 i = 0; i < count_; i++)
      table_[i].store(kEmpty, std::memory_order_relaxed);
   std::atomic_thread_fence(std::memory_order_seq_cst);
}

u64 ResidentSet::hash(u64 k) {
   const u64 m = 0xc6a4a7935bd1e995;
   const int r = 47;
   u64 h = 0x8445d61a4e774912 ^ (8 * m);
   k *= m;
   k ^= k >> r;
   k *= m;
   h ^= k;
   h *= m;
   h ^= h >> r;
   h *= m;
   h ^= h >> r;
   return h;
}

void ResidentSet::insert(PageId pid) {
   u64 pos = hash(pid.slot) & mask_;
   while (true) {
      u64 curr = table_[pos].load();
      assert(curr != pid.slot);
      if ((curr == kEmpty || curr == kTombstone) && table_[pos].compare_exchange_strong(curr, pid.slot)) {
         size_.fetch_add(1, std::memory_order_release);
         return;
      }
      pos = (pos + 1) & mask_;
   }
}

bool ResidentSet::remove(PageId pid) {
   u64 pos = hash(pid.slot) & mask_;
   for (u64 probes = 0; probes < count_; probes++) {
      u64 curr = table_[pos].load();
      if (curr == kEmpty)
         return false;
      if (curr == pid.slot && table_[pos].compare_exchange_strong(curr, kTombstone)) {
         size_.fetch_sub(1, std::memory_order_release);
         return true;
      }
      pos = (pos + 1) & mask_;
   }
   return false;
}

bool ResidentSet::contains(PageId pid) const {
   u64 pos = hash(pid.slot) & mask_;
   for (u64 probes = 0; probes < count_; probes++) {
      u64 curr = table_[pos].load();
      if (curr == kEmpty)
         return false;
      if (curr == pid.slot)
         return true;
      pos = (pos + 1) & mask_;
   }
   return false;
}

std::vector<PageId> ResidentSet::snapshot() const {
   std::vector<PageId> out;
   for (u64 i = 0; i < count_; i++) {
      u64 curr = table_[i].load();
      if (curr != kEmpty && curr != kTombstone)
         out.emplace_back(curr);
   }
   return out;
}

} // namespace vmcachen
