#include "vmcachen/state_word.hpp"

#include <bit>
#include <string>

namespace vmcachen {

LockState LockState::shared(u32 count) {
   if (count == 0 || count > kMaxShared)
      throw EncodingError("shared lock count out of range: " + std::to_string(count));
   return LockState(static_cast<u8>(count));
}

StateLayout::StateLayout(u32 tierCount) : tierCount_(tierCount) {
   if (tierCount < 2)
      throw ConfigError("need at least one memory tier and a disk tier");
   u32 memory = tierCount - 1;
   tierBits_ = memory <= 1 ? 0 : static_cast<u32>(std::bit_width(memory - 1));
   if (tierBits_ > 8)
      throw ConfigError("too many memory tiers");
   versionBits_ = 64 - 8 - tierBits_;
   versionMask_ = (1ull << versionBits_) - 1;
   tierMask_ = (1ull << tierBits_) - 1;
}

StateWord StateLayout::encode(LockState state, TierId tier, u64 version) const {
   if (tier.index >= memoryTiers())
      throw EncodingError("tier " + std::to_string(tier.index) + " is not a memory tier");
   if (version > versionMask_)
      throw EncodingError("version does not fit in " + std::to_string(versionBits_) + " bits");
   return StateWord((u64(state.byte()) << 56) | (u64(tier.index) << versionBits_) | version);
}

DecodedState StateLayout::decode(StateWord word) const {
   return {lockOf(word), tierOf(word), versionOf(word)};
}

StateWord StateLayout::withTier(StateWord w, TierId t) const {
   u64 cleared = w.bits & ~(tierMask_ << versionBits_);
   return StateWord(cleared | (u64(t.index) << versionBits_));
}

// version wraps modulo its width
StateWord StateLayout::bumped(StateWord w) const {
   u64 v = (versionOf(w) + 1) & versionMask_;
   return StateWord((w.bits & ~versionMask_) | v);
}

std::optional<StateWord> StateLayout::transition(StateWord current, Edge edge) const {
   LockState s = lockOf(current);
   LockKind k = s.kind();
   switch (edge.kind) {
      case EdgeKind::LockExclusive:
         if (k == LockKind::Unlocked || k == LockKind::Marked)
            return with(current, LockState::locked());
         return std::nullopt;
      case EdgeKind::LockShared:
         if (k == LockKind::Unlocked)
            return with(current, LockState::shared(1));
         if (k == LockKind::Shared && s.byte() < LockState::kMaxShared)
            return with(current, LockState::fromByte(s.byte() + 1));
         return std::nullopt;
      case EdgeKind::UnlockExclusive:
         if (k != LockKind::Locked)
            return std::nullopt;
         return with(edge.dirty ? bumped(current) : current, LockState::unlocked());
      case EdgeKind::UnlockShared:
         if (k != LockKind::Shared)
            return std::nullopt;
         return with(current, LockState::fromByte(s.byte() - 1));
      case EdgeKind::Mark:
         if (k != LockKind::Unlocked)
            return std::nullopt;
         return with(current, LockState::marked());
      case EdgeKind::Evict:
         if (k != LockKind::Locked)
            return std::nullopt;
         return with(bumped(current), LockState::evicted());
      case EdgeKind::SetTier:
         if (k != LockKind::Locked || edge.tier.index >= memoryTiers())
            return std::nullopt;
         return withTier(current, edge.tier);
      case EdgeKind::FaultIn:
         if (k != LockKind::Evicted || edge.tier.index >= memoryTiers())
            return std::nullopt;
         return with(withTier(current, edge.tier), LockState::locked());
   }
   return std::nullopt;
}

StateTable::StateTable(const StateLayout& layout, u64 pages, StateWord initial)
   : layout_(layout), count_(pages), words_(std::make_unique<std::atomic<u64>[]>(pages)) {
   for (u64 i = 0; i < pages; i++)
      words_[i].store(initial.bits, std::memory_order_relaxed);
   std::atomic_thread_fence(std::memory_order_seq_cst);
}

std::optional<StateWord> StateTable::apply(PageId pid, StateWord& expected, Edge edge) {
   auto next = layout_.transition(expected, edge);
   if (!next)
      return std::nullopt;
   u64 e = expected.bits;
   if (words_[pid.slot].compare_exchange_strong(e, next->bits))
      return next;
   expected = StateWord(e);
   return std::nullopt;
}

std::optional<StateWord> StateTable::applyLoop(PageId pid, Edge edge) {
   StateWord cur = load(pid);
   while (true) {
      if (!layout_.transition(cur, edge))
         return std::nullopt;
      if (auto w = apply(pid, cur, edge))
         return w;
   }
}

} // namespace vmcachen
