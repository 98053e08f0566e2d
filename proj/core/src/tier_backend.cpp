#include "vmcachen/tier_backend.hpp"

#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <new>

namespace vmcachen {

namespace {

constexpr std::align_val_t kArenaAlign{4096};

std::byte* allocArena(std::size_t bytes) {
   auto* p = static_cast<std::byte*>(::operator new[](bytes, kArenaAlign));
   std::memset(p, 0, bytes);
   return p;
}

std::string sysError(const char* what) {
   return std::string(what) + ": " + std::strerror(errno);
}

} // namespace

void ArenaDeleter::operator()(std::byte* p) const {
   ::operator delete[](p, kArenaAlign);
}

void TierTopology::validate() const {
   if (memoryTiers.empty())
      throw ConfigError("at least one memory tier is required");
   if (memoryTiers.size() > 255)
      throw ConfigError("too many memory tiers");
   for (std::size_t i = 0; i < memoryTiers.size(); i++)
      if (memoryTiers[i].capacityPages == 0)
         throw ConfigError("memory tier " + std::to_string(i) + " has zero capacity");
   if (disk.capacityPages == 0)
      throw ConfigError("disk tier has zero capacity");
   if (pageSize < 512 || (pageSize & (pageSize - 1)) != 0)
      throw ConfigError("page size must be a power of two >= 512, got " + std::to_string(pageSize));
}

//---------------------------------------------------------------------------

SimDisk::SimDisk(u64 pages, u32 pageSize, std::optional<std::string> path) : pages_(pages), pageSize_(pageSize) {
   if (path) {
      fd_ = ::open(path->c_str(), O_RDWR | O_CREAT, 0644);
      if (fd_ < 0)
         throw ConfigError(sysError(("open " + *path).c_str()));
      struct stat st {};
      if (::fstat(fd_, &st) != 0)
         throw ConfigError(sysError("fstat"));
      off_t want = static_cast<off_t>(pages * pageSize);
      if (st.st_size < want && ::ftruncate(fd_, want) != 0)
         throw ConfigError(sysError("ftruncate"));
   } else {
      store_.reset(allocArena(pages * pageSize));
   }
}

SimDisk::~SimDisk() {
   if (fd_ >= 0)
      ::close(fd_);
}

void SimDisk::read(PageId pid, std::span<std::byte> out) {
   peek(pid, out);
   reads_.fetch_add(1, std::memory_order_relaxed);
}

void SimDisk::peek(PageId pid, std::span<std::byte> out) {
   if (fd_ >= 0) {
      ssize_t n = ::pread(fd_, out.data(), pageSize_, static_cast<off_t>(pid.slot * pageSize_));
      if (n != static_cast<ssize_t>(pageSize_))
         throw Error(sysError("pread"));
   } else {
      std::memcpy(out.data(), store_.get() + pid.slot * pageSize_, pageSize_);
   }
}

void SimDisk::write(PageId pid, std::span<const std::byte> in) {
   if (fd_ >= 0) {
      ssize_t n = ::pwrite(fd_, in.data(), pageSize_, static_cast<off_t>(pid.slot * pageSize_));
      if (n != static_cast<ssize_t>(pageSize_))
         throw Error(sysError("pwrite"));
   } else {
      std::memcpy(store_.get() + pid.slot * pageSize_, in.data(), pageSize_);
   }
   writes_.fetch_add(1, std::memory_order_relaxed);
}

//---------------------------------------------------------------------------

TierBackend::TierBackend(TierTopology topology, CostModel cost, std::optional<std::string> diskPath)
   : topology_((topology.validate(), std::move(topology))), cost_(std::move(cost)),
     disk_(topology_.disk.capacityPages, topology_.pageSize, std::move(diskPath)) {
   for (const TierSpec& spec : topology_.memoryTiers) {
      auto pool = std::make_unique<FramePool>();
      pool->capacity = spec.capacityPages;
      pool->arena.reset(allocArena(spec.capacityPages * topology_.pageSize));
      pool->freeList.reserve(spec.capacityPages);
      // lowest frame index on top
      for (u64 f = spec.capacityPages; f-- > 0;)
         pool->freeList.push_back(f);
      pool->freeCount.store(spec.capacityPages);
      tiers_.push_back(std::move(pool));
   }
   pageTable_ = std::make_unique<std::atomic<u64>[]>(disk_.pages());
   for (u64 i = 0; i < disk_.pages(); i++)
      pageTable_[i].store(0, std::memory_order_relaxed);
}

TierBackend::~TierBackend() = default;

Placement TierBackend::decodeEntry(u64 e) {
   u64 tierPlusOne = (e >> kTierShift) & 0xFF;
   if (tierPlusOne == 0)
      return Placement::disk();
   return Placement::inMemory(TierId(static_cast<u32>(tierPlusOne - 1)), e & kFrameMask);
}

u64 TierBackend::entry(PageId pid) const {
   checkPid(pid);
   return pageTable_[pid.slot].load(std::memory_order_acquire);
}

void TierBackend::checkPid(PageId pid) const {
   if (pid.slot >= disk_.pages())
      throw IllegalStateError("page " + std::to_string(pid.slot) + " is outside the slot space");
}

void TierBackend::checkTier(TierId t) const {
   if (t.index >= tiers_.size())
      throw IllegalStateError("tier " + std::to_string(t.index) + " is not a memory tier");
}

void TierBackend::install(PageId pid, Placement p) {
   u64 old = pageTable_[pid.slot].load(std::memory_order_relaxed);
   u64 gen = ((old >> kGenShift) + 1) & 0xFFFF;
   u64 e = gen << kGenShift;
   if (!p.onDisk)
      e |= (u64(p.tier.index + 1) << kTierShift) | p.frame;
   pageTable_[pid.slot].store(e, std::memory_order_release);
}

u64 TierBackend::freeFrames(TierId t) const {
   checkTier(t);
   return tier(t).freeCount.load(std::memory_order_acquire);
}

std::optional<u64> TierBackend::allocFrame(TierId t) {
   FramePool& pool = tier(t);
   std::lock_guard guard(pool.latch);
   if (pool.freeList.empty())
      return std::nullopt;
   u64 f = pool.freeList.back();
   pool.freeList.pop_back();
   pool.freeCount.fetch_sub(1, std::memory_order_release);
   return f;
}

void TierBackend::freeFrame(TierId t, u64 frame) {
   FramePool& pool = tier(t);
   std::lock_guard guard(pool.latch);
   pool.freeList.push_back(frame);
   pool.freeCount.fetch_add(1, std::memory_order_release);
}

std::span<std::byte> TierBackend::frameBytes(Placement p) {
   if (p.onDisk)
      throw IllegalStateError("placement is on disk");
   checkTier(p.tier);
   return {tier(p.tier).arena.get() + p.frame * topology_.pageSize, topology_.pageSize};
}

std::span<const std::byte> TierBackend::frameBytes(Placement p) const {
   if (p.onDisk)
      throw IllegalStateError("placement is on disk");
   checkTier(p.tier);
   return {tier(p.tier).arena.get() + p.frame * topology_.pageSize, topology_.pageSize};
}

std::span<std::byte> TierBackend::pageBytes(PageId pid) {
   Placement p = placementOf(pid);
   if (p.onDisk)
      throw IllegalStateError("page " + std::to_string(pid.slot) + " is not cached");
   return frameBytes(p);
}

std::vector<std::byte> TierBackend::diskBytes(PageId pid) {
   checkPid(pid);
   std::vector<std::byte> out(topology_.pageSize);
   disk_.peek(pid, out);
   return out;
}

Placement TierBackend::bind(PageId pid, TierId target, bool fromDisk) {
   checkPid(pid);
   checkTier(target);
   if (!placementOf(pid).onDisk)
      throw IllegalStateError("page " + std::to_string(pid.slot) + " is already in memory");
   auto frame = allocFrame(target);
   if (!frame)
      throw TierFullError("tier " + std::to_string(target.index) + " has no free frame");
   Placement p = Placement::inMemory(target, *frame);
   auto bytes = frameBytes(p);
   if (fromDisk) {
      cost_.charge(topology_.disk.readLatencyNs);
      disk_.read(pid, bytes);
   } else {
      std::memset(bytes.data(), 0, bytes.size());
   }
   install(pid, p);
   return p;
}

Placement TierBackend::bindAndRead(PageId pid, TierId target) {
   return bind(pid, target, true);
}

Placement TierBackend::bindFresh(PageId pid, TierId target) {
   return bind(pid, target, false);
}

void TierBackend::release(PageId pid, bool write) {
   Placement p = placementOf(pid);
   if (p.onDisk)
      throw IllegalStateError("page " + std::to_string(pid.slot) + " is already on disk");
   if (write) {
      cost_.charge(topology_.disk.writeLatencyNs);
      disk_.write(pid, frameBytes(p));
   }
   install(pid, Placement::disk());
   freeFrame(p.tier, p.frame);
}

void TierBackend::writeBack(PageId pid) {
   release(pid, true);
}

void TierBackend::discard(PageId pid) {
   release(pid, false);
}

void TierBackend::flushPage(PageId pid) {
   Placement p = placementOf(pid);
   if (p.onDisk)
      throw IllegalStateError("page " + std::to_string(pid.slot) + " is not cached");
   cost_.charge(topology_.disk.writeLatencyNs);
   disk_.write(pid, frameBytes(p));
}

Placement TierBackend::retargetFrame(PageId pid, TierId target) {
   checkTier(target);
   Placement src = placementOf(pid);
   if (src.onDisk)
      throw IllegalStateError("page " + std::to_string(pid.slot) + " is not in memory");
   if (src.tier == target)
      return src;
   auto frame = allocFrame(target);
   if (!frame)
      throw TierFullError("tier " + std::to_string(target.index) + " has no free frame");
   Placement dst = Placement::inMemory(target, *frame);
   std::memcpy(frameBytes(dst).data(), frameBytes(src).data(), topology_.pageSize);
   install(pid, dst);
   freeFrame(src.tier, src.frame);
   bytesCopied_.fetch_add(topology_.pageSize, std::memory_order_relaxed);
   retargets_.fetch_add(1, std::memory_order_relaxed);
   return dst;
}

BackendStats TierBackend::counters() const {
   BackendStats s;
   s.diskReads = disk_.reads();
   s.diskWrites = disk_.writes();
   s.bytesCopied = bytesCopied_.load(std::memory_order_relaxed);
   s.retargets = retargets_.load(std::memory_order_relaxed);
   for (u32 t = 0; t < tiers_.size(); t++)
      s.occupancy.push_back(occupancy(TierId(t)));
   return s;
}

} // namespace vmcachen
