#include <cstdlib>
#include <new>
#include <unordered_map>
#include <vector>

#include "semaforge/tensor.hpp"

namespace semaforge::detail {

namespace {

constexpr std::size_t kPooledMinBytes = 64 * 1024;
constexpr std::size_t kMaxCachedBytes = std::size_t{1} << 30;

class BlockCache {
 public:
  ~BlockCache() {
    for (auto& [bytes, blocks] : free_)
      for (void* p : blocks) ::operator delete(p);
  }

  void* take(std::size_t bytes) {
    auto it = free_.find(bytes);
    if (it == free_.end() || it->second.empty()) return ::operator new(bytes);
    void* p = it->second.back();
    it->second.pop_back();
    cached_ -= bytes;
    return p;
  }

  void give(void* p, std::size_t bytes) {
    if (cached_ + bytes > kMaxCachedBytes) {
      ::operator delete(p);
      return;
    }
    free_[bytes].push_back(p);
    cached_ += bytes;
  }

 private:
  std::unordered_map<std::size_t, std::vector<void*>> free_;
  std::size_t cached_ = 0;
};

BlockCache& cache() {
  thread_local BlockCache instance;
  return instance;
}

}  // namespace

void* pool_allocate(std::size_t bytes) {
  if (bytes < kPooledMinBytes) return ::operator new(bytes);
  return cache().take(bytes);
}

void pool_deallocate(void* ptr, std::size_t bytes) noexcept {
  if (bytes < kPooledMinBytes) {
    ::operator delete(ptr);
    return;
  }
  try {
    cache().give(ptr, bytes);
  } catch (...) {
    ::operator delete(ptr);
  }
}

}  // namespace semaforge::detail
