#include "vmcachen/btree.hpp"

#include <algorithm>
#include <cstring>
#include <thread>

namespace vmcachen {

namespace {

// Page layout
//   header (144 bytes): isLeaf u8 | pad | count u16 | lowerLen u8 | upperLen u8 |
//                       pad[2] | rightChild u64 | lower[64] | upper[64]
//   leaf slot (194):    klen u8 | vlen u8 | key[64] | value[128]
//   inner slot (80):    klen u8 | pad[7] | key[64] | child u64
// A fence length of 0xFF means unbounded. Keys in a node lie in (lower, upper].
constexpr u32 kHeader = 144;
constexpr u32 kLeafSlot = 194;
constexpr u32 kInnerSlot = 80;
constexpr u8 kUnbounded = 0xFF;
constexpr u32 oCount = 2;
constexpr u32 oLowerLen = 4;
constexpr u32 oUpperLen = 5;
constexpr u32 oRight = 8;
constexpr u32 oLower = 16;
constexpr u32 oUpper = 80;

template <class T>
T load(std::span<const std::byte> b, u32 off) {
   T v;
   std::memcpy(&v, b.data() + off, sizeof(T));
   return v;
}

template <class T>
void store(std::span<std::byte> b, u32 off, T v) {
   std::memcpy(b.data() + off, &v, sizeof(T));
}

std::string_view chars(std::span<const std::byte> b, u32 off, u32 len) {
   return {reinterpret_cast<const char*>(b.data() + off), len};
}

// Read-only access that stays in bounds whatever the page holds, so it is safe
// on bytes read optimistically.
class NodeView {
public:
   NodeView(std::span<const std::byte> b, u32 leafCap, u32 innerCap) : b_(b), leafCap_(leafCap), innerCap_(innerCap) {}

   bool leaf() const { return b_[0] != std::byte{0}; }
   u32 capacity() const { return leaf() ? leafCap_ : innerCap_; }
   u32 count() const { return std::min<u32>(load<u16>(b_, oCount), capacity()); }
   u64 rightChild() const { return load<u64>(b_, oRight); }

   std::optional<std::string_view> lower() const { return fence(oLowerLen, oLower); }
   std::optional<std::string_view> upper() const { return fence(oUpperLen, oUpper); }

   std::string_view key(u32 i) const {
      u32 off = slot(i);
      u32 len = std::min<u32>(load<u8>(b_, off), BTree::kMaxKey);
      return chars(b_, off + (leaf() ? 2 : 8), len);
   }
   std::string_view value(u32 i) const {
      u32 off = slot(i);
      u32 len = std::min<u32>(load<u8>(b_, off + 1), BTree::kMaxValue);
      return chars(b_, off + 66, len);
   }
   u64 child(u32 i) const { return load<u64>(b_, slot(i) + 72); }

   /// First slot whose key is >= k (or > k when `after`).
   u32 search(std::string_view k, bool after) const {
      u32 lo = 0, hi = count();
      while (lo < hi) {
         u32 mid = (lo + hi) / 2;
         std::string_view m = key(mid);
         if (after ? m <= k : m < k)
            lo = mid + 1;
         else
            hi = mid;
      }
      return lo;
   }

   /// Whether this node is responsible for k (or for the successor of k when
   /// `after`).
   bool covers(std::string_view k, bool after) const {
      auto lo = lower();
      auto hi = upper();
      if (after)
         return (!lo || *lo <= k) && (!hi || k < *hi);
      return (!lo || *lo < k) && (!hi || k <= *hi);
   }

private:
   u32 slot(u32 i) const { return kHeader + i * (leaf() ? kLeafSlot : kInnerSlot); }
   std::optional<std::string_view> fence(u32 lenOff, u32 off) const {
      u8 len = load<u8>(b_, lenOff);
      if (len == kUnbounded)
         return std::nullopt;
      return chars(b_, off, std::min<u32>(len, BTree::kMaxKey));
   }

   std::span<const std::byte> b_;
   u32 leafCap_;
   u32 innerCap_;
};

struct Entry {
   std::string key;
   std::string value;
   u64 child = 0;
};

// Decoded node, used on the write path.
struct Node {
   bool leaf = true;
   std::optional<std::string> lower;
   std::optional<std::string> upper;
   u64 right = 0;
   std::vector<Entry> entries;

   static Node parse(const NodeView& v) {
      Node n;
      n.leaf = v.leaf();
      if (auto l = v.lower())
         n.lower = std::string(*l);
      if (auto u = v.upper())
         n.upper = std::string(*u);
      n.right = v.rightChild();
      n.entries.reserve(v.count() + 1);
      for (u32 i = 0; i < v.count(); i++) {
         if (n.leaf)
            n.entries.push_back({std::string(v.key(i)), std::string(v.value(i)), 0});
         else
            n.entries.push_back({std::string(v.key(i)), {}, v.child(i)});
      }
      return n;
   }

   void write(std::span<std::byte> b) const {
      std::memset(b.data(), 0, kHeader);
      b[0] = std::byte{leaf ? u8(1) : u8(0)};
      store<u16>(b, oCount, static_cast<u16>(entries.size()));
      writeFence(b, oLowerLen, oLower, lower);
      writeFence(b, oUpperLen, oUpper, upper);
      store<u64>(b, oRight, right);
      for (std::size_t i = 0; i < entries.size(); i++) {
         const Entry& e = entries[i];
         u32 off = kHeader + static_cast<u32>(i) * (leaf ? kLeafSlot : kInnerSlot);
         store<u8>(b, off, static_cast<u8>(e.key.size()));
         if (leaf) {
            store<u8>(b, off + 1, static_cast<u8>(e.value.size()));
            std::memcpy(b.data() + off + 2, e.key.data(), e.key.size());
            std::memcpy(b.data() + off + 66, e.value.data(), e.value.size());
         } else {
            std::memcpy(b.data() + off + 8, e.key.data(), e.key.size());
            store<u64>(b, off + 72, e.child);
         }
      }
   }

   std::size_t position(std::string_view k) const {
      auto it = std::lower_bound(entries.begin(), entries.end(), k,
                                 [](const Entry& e, std::string_view x) { return std::string_view(e.key) < x; });
      return static_cast<std::size_t>(it - entries.begin());
   }

   void upsert(std::string_view k, std::string_view v) {
      std::size_t i = position(k);
      if (i < entries.size() && entries[i].key == k)
         entries[i].value = std::string(v);
      else
         entries.insert(entries.begin() + static_cast<std::ptrdiff_t>(i), Entry{std::string(k), std::string(v), 0});
   }

   bool contains(std::string_view k) const {
      std::size_t i = position(k);
      return i < entries.size() && entries[i].key == k;
   }

   struct Split;
   Split split() const;

private:
   static void writeFence(std::span<std::byte> b, u32 lenOff, u32 off, const std::optional<std::string>& f) {
      if (!f) {
         store<u8>(b, lenOff, kUnbounded);
         return;
      }
      store<u8>(b, lenOff, static_cast<u8>(f->size()));
      std::memcpy(b.data() + off, f->data(), f->size());
   }
};

struct Node::Split {
   Node left;
   Node right;
   std::string separator;
};

Node::Split Node::split() const {
   Split s;
   std::size_t m = entries.size() / 2;
   s.left.leaf = s.right.leaf = leaf;
   if (leaf) {
      s.separator = entries[m - 1].key;
      s.left.entries.assign(entries.begin(), entries.begin() + static_cast<std::ptrdiff_t>(m));
      s.right.entries.assign(entries.begin() + static_cast<std::ptrdiff_t>(m), entries.end());
   } else {
      s.separator = entries[m].key;
      s.left.entries.assign(entries.begin(), entries.begin() + static_cast<std::ptrdiff_t>(m));
      s.left.right = entries[m].child;
      s.right.entries.assign(entries.begin() + static_cast<std::ptrdiff_t>(m) + 1, entries.end());
      s.right.right = right;
   }
   s.left.lower = lower;
   s.left.upper = s.separator;
   s.right.lower = s.separator;
   s.right.upper = upper;
   return s;
}

void checkEntry(std::string_view key, std::string_view value) {
   if (key.empty() || key.size() > BTree::kMaxKey)
      throw RequestError("key must be 1.." + std::to_string(BTree::kMaxKey) + " bytes");
   if (value.size() > BTree::kMaxValue)
      throw RequestError("value exceeds " + std::to_string(BTree::kMaxValue) + " bytes");
}

void pauseAfter(u64 restarts) {
   if (restarts > 8)
      std::this_thread::yield();
}

} // namespace

u32 BTree::leafCapacity(u32 pageSize) {
   return pageSize > kHeader ? (pageSize - kHeader) / kLeafSlot : 0;
}

u32 BTree::innerCapacity(u32 pageSize) {
   return pageSize > kHeader ? (pageSize - kHeader) / kInnerSlot : 0;
}

BTree::BTree(BufferPool& pool, Rng& rng)
   : pool_(pool), leafCap_(leafCapacity(pool.pageSize())), innerCap_(innerCapacity(pool.pageSize())) {
   if (leafCap_ < 4 || innerCap_ < 4)
      throw ConfigError("page size too small for the B+tree (need >= 1024 bytes)");
   if (pool.pageCount() < 2)
      throw ConfigError("B+tree needs at least two page slots");
   PageHandle root = pool_.fixNew(PageId(0), rng);
   Node{}.write(root.mutableBytes());
}

PageId BTree::allocate() {
   u64 p = nextPage_.fetch_add(1);
   if (p >= pool_.pageCount())
      throw Error("B+tree page space exhausted");
   return PageId(p);
}

PageId BTree::findLeaf(std::string_view key, bool after, Rng& rng) {
   const u64 pages = pool_.pageCount();
   for (u64 restarts = 0;; restarts++) {
      pauseAfter(restarts);
      u64 pid = 0;
      bool restart = false;
      for (u32 depth = 0; depth < 64 && !restart; depth++) {
         Descent d = pool_.optimisticRead(
            PageId(pid),
            [&](std::span<const std::byte> b) {
               NodeView v(b, leafCap_, innerCap_);
               if (!v.covers(key, after))
                  return Descent{.restart = true};
               if (v.leaf())
                  return Descent{.leaf = true};
               u32 i = v.search(key, after);
               u64 c = i < v.count() ? v.child(i) : v.rightChild();
               if (c == 0 || c >= pages)
                  return Descent{.restart = true};
               return Descent{.child = c};
            },
            rng);
         if (d.restart)
            restart = true;
         else if (d.leaf)
            return PageId(pid);
         else
            pid = d.child;
      }
   }
}

std::optional<std::string> BTree::lookup(std::string_view key, Rng& rng) {
   checkEntry(key, {});
   struct Step {
      bool restart = false;
      std::optional<std::string> value;
   };
   for (u64 restarts = 0;; restarts++) {
      pauseAfter(restarts);
      PageId leaf = findLeaf(key, false, rng);
      Step s = pool_.optimisticRead(
         leaf,
         [&](std::span<const std::byte> b) {
            NodeView v(b, leafCap_, innerCap_);
            if (!v.leaf() || !v.covers(key, false))
               return Step{.restart = true};
            u32 i = v.search(key, false);
            if (i < v.count() && v.key(i) == key)
               return Step{.value = std::string(v.value(i))};
            return Step{};
         },
         rng);
      if (!s.restart)
         return s.value;
   }
}

std::vector<std::pair<std::string, std::string>> BTree::scan(std::string_view from, std::size_t limit, Rng& rng) {
   checkEntry(from, {});
   struct Chunk {
      bool restart = false;
      std::vector<std::pair<std::string, std::string>> items;
      std::optional<std::string> upper;
   };
   std::vector<std::pair<std::string, std::string>> out;
   std::string cursor(from);
   bool after = false;
   u64 restarts = 0;
   while (out.size() < limit) {
      pauseAfter(restarts);
      PageId leaf = findLeaf(cursor, after, rng);
      std::size_t want = limit - out.size();
      Chunk c = pool_.optimisticRead(
         leaf,
         [&](std::span<const std::byte> b) {
            NodeView v(b, leafCap_, innerCap_);
            if (!v.leaf() || !v.covers(cursor, after))
               return Chunk{.restart = true};
            Chunk ch;
            for (u32 i = v.search(cursor, after); i < v.count() && ch.items.size() < want; i++)
               ch.items.emplace_back(std::string(v.key(i)), std::string(v.value(i)));
            if (auto u = v.upper())
               ch.upper = std::string(*u);
            return ch;
         },
         rng);
      if (c.restart) {
         restarts++;
         continue;
      }
      restarts = 0;
      for (auto& kv : c.items)
         out.push_back(std::move(kv));
      if (!c.upper)
         break;
      cursor = *c.upper;
      after = true;
   }
   return out;
}

void BTree::insert(std::string_view key, std::string_view value, Rng& rng) {
   checkEntry(key, value);
   if (tryInsertAtLeaf(findLeaf(key, false, rng), key, value, rng))
      return;
   insertPessimistic(key, value, rng);
}

bool BTree::tryInsertAtLeaf(PageId leaf, std::string_view key, std::string_view value, Rng& rng) {
   PageHandle h = pool_.fix(leaf, AccessMode::Exclusive, rng);
   NodeView v(h.bytes(), leafCap_, innerCap_);
   if (!v.leaf() || !v.covers(key, false))
      return false;
   Node n = Node::parse(v);
   if (n.entries.size() >= leafCap_ && !n.contains(key))
      return false;
   n.upsert(key, value);
   n.write(h.mutableBytes());
   return true;
}

// Exclusive lock coupling from the root, splitting every full node on the way
// down so a parent always has room for one more separator.
void BTree::insertPessimistic(std::string_view key, std::string_view value, Rng& rng) {
   auto full = [&](const Node& n) { return n.entries.size() >= (n.leaf ? leafCap_ : innerCap_); };

   PageHandle node = pool_.fix(PageId(0), AccessMode::Exclusive, rng);
   Node n = Node::parse(NodeView(node.bytes(), leafCap_, innerCap_));
   if (full(n)) {
      // the root keeps its page id: both halves move to new pages
      PageId l = allocate();
      PageId r = allocate();
      Node::Split s = n.split();
      PageHandle hl = pool_.fixNew(l, rng);
      PageHandle hr = pool_.fixNew(r, rng);
      s.left.write(hl.mutableBytes());
      s.right.write(hr.mutableBytes());
      n = Node{};
      n.leaf = false;
      n.entries.push_back({s.separator, {}, l.slot});
      n.right = r.slot;
      n.write(node.mutableBytes());
   }

   while (!n.leaf) {
      std::size_t i = n.position(key);
      PageId childPid(i < n.entries.size() ? n.entries[i].child : n.right);
      PageHandle child = pool_.fix(childPid, AccessMode::Exclusive, rng);
      Node c = Node::parse(NodeView(child.bytes(), leafCap_, innerCap_));
      if (full(c)) {
         PageId fresh = allocate();
         PageHandle hf = pool_.fixNew(fresh, rng);
         Node::Split s = c.split();
         s.left.write(child.mutableBytes());
         s.right.write(hf.mutableBytes());
         n.entries.insert(n.entries.begin() + static_cast<std::ptrdiff_t>(i), Entry{s.separator, {}, childPid.slot});
         if (i + 1 < n.entries.size())
            n.entries[i + 1].child = fresh.slot;
         else
            n.right = fresh.slot;
         n.write(node.mutableBytes());
         if (std::string_view(key) > s.separator) {
            child = std::move(hf);
            c = std::move(s.right);
         } else {
            c = std::move(s.left);
         }
      }
      node = std::move(child);
      n = std::move(c);
   }
   n.upsert(key, value);
   n.write(node.mutableBytes());
}

} // namespace vmcachen
