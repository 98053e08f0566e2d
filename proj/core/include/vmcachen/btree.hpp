#pragma once

#include <atomic>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "vmcachen/buffer_pool.hpp"

namespace vmcachen {

/// Fixed-slot B+tree over buffer-pool pages. Keys are byte strings of 1..64
/// bytes, values at most 128 bytes. Page 0 is the root and never moves; new
/// pages come from a bump allocator over the slot space.
///
/// Readers descend with optimistic reads and validate against each node's
/// fences; writers descend optimistically to the leaf and fall back to
/// exclusive lock coupling with preemptive splits.
class BTree {
public:
   static constexpr u32 kMaxKey = 64;
   static constexpr u32 kMaxValue = 128;

   /// Formats page 0 as an empty root leaf. The pool must be fresh.
   BTree(BufferPool& pool, Rng& rng);

   /// Inserts or overwrites.
   void insert(std::string_view key, std::string_view value, Rng& rng);
   std::optional<std::string> lookup(std::string_view key, Rng& rng);
   /// Up to `limit` entries with key >= from, in key order.
   std::vector<std::pair<std::string, std::string>> scan(std::string_view from, std::size_t limit, Rng& rng);

   u64 pagesAllocated() const { return nextPage_.load(); }
   BufferPool& pool() { return pool_; }

   static u32 leafCapacity(u32 pageSize);
   static u32 innerCapacity(u32 pageSize);

private:
   struct Descent {
      bool restart = false;
      u64 child = 0;
      bool leaf = false;
   };

   PageId allocate();
   PageId findLeaf(std::string_view key, bool after, Rng& rng);
   bool tryInsertAtLeaf(PageId leaf, std::string_view key, std::string_view value, Rng& rng);
   void insertPessimistic(std::string_view key, std::string_view value, Rng& rng);

   BufferPool& pool_;
   u32 leafCap_;
   u32 innerCap_;
   std::atomic<u64> nextPage_{1};
};

} // namespace vmcachen
