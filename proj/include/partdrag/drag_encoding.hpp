#pragma once

#include <memory>
#include <mutex>
#include <shared_mutex>
#include <string>
#include <unordered_map>
#include <vector>

#include "partdrag/core_types.hpp"

namespace partdrag {

/// Sparse multi-resolution drag encoding, laid out N x s x s x (6 * slots).
///
/// For slot k and frame n the six channels [6k, 6k + 6) hold three
/// two-channel groups: origin u, current location v^n and final location
/// v^N. A group marks exactly one cell (floor(s*h/H), floor(s*w/W)) with the
/// fractional part of (s*h/H, s*w/W); every other cell is -1. Empty slots are
/// -1 everywhere.
struct DragEncoding {
  int frames = 0;
  int size = 0;
  int slots = 0;
  std::vector<float> values;

  DragEncoding() = default;
  DragEncoding(int n, int s, int k)
      : frames(n), size(s), slots(k),
        values(static_cast<std::size_t>(n) * s * s * k * kEncodingChannels, -1.0f) {}

  int channels() const { return slots * kEncodingChannels; }

  std::size_t index(int n, int row, int col, int ch) const {
    return ((static_cast<std::size_t>(n) * size + row) * size + col) * channels() + ch;
  }
  float at(int n, int row, int col, int ch) const { return values[index(n, row, col, ch)]; }
  float& at(int n, int row, int col, int ch) { return values[index(n, row, col, ch)]; }

  /// Copies slot k into a single-slot encoding.
  DragEncoding slot(int k) const;

  friend bool operator==(const DragEncoding&, const DragEncoding&) = default;
};

/// Cell index and in-cell fraction of one coordinate at encoding size s.
struct EncodedCoordinate {
  int cell;
  double fraction;
};
EncodedCoordinate encode_coordinate(int pixel, int extent, int s);

DragEncoding encode_drag(const Drag& drag, int s, Resolution res);
/// Slot-wise concatenation of per-drag encodings over n frames; slots past
/// the last drag (up to drags.capacity) stay -1.
DragEncoding encode_drag_set(const DragSet& drags, int s, Resolution res, int n);

/// Inverse of encode_drag on a single-slot encoding. Throws ValidationError
/// when a channel group does not mark exactly one cell in some frame.
Drag decode_drag(const DragEncoding& enc, Resolution res);

/// Memoizes encode_drag_set by content. Concurrent lookups share a lock;
/// insertions are serialized.
class EncodingCache {
public:
  explicit EncodingCache(std::size_t max_entries = 4096) : max_entries_(max_entries) {}

  std::shared_ptr<const DragEncoding> get(const DragSet& drags, int s, Resolution res, int n);

  std::size_t size() const;
  std::size_t hits() const;
  void clear();

private:
  static std::string key_of(const DragSet& drags, int s, Resolution res, int n);

  std::size_t max_entries_;
  mutable std::shared_mutex mutex_;
  std::unordered_map<std::string, std::shared_ptr<const DragEncoding>> entries_;
  mutable std::mutex hit_mutex_;
  std::size_t hits_ = 0;
};

}  // namespace partdrag
