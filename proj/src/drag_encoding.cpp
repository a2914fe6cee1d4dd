#include "partdrag/drag_encoding.hpp"

#include <cmath>
#include <mutex>

namespace partdrag {

namespace {

constexpr float kBackground = -1.0f;

void mark(DragEncoding& enc, int n, int channel, Pixel p, Resolution res) {
  const auto row = encode_coordinate(p.h, res.height, enc.size);
  const auto col = encode_coordinate(p.w, res.width, enc.size);
  enc.at(n, row.cell, col.cell, channel) = static_cast<float>(row.fraction);
  enc.at(n, row.cell, col.cell, channel + 1) = static_cast<float>(col.fraction);
}

void write_slot(DragEncoding& enc, int slot, const Drag& d, Resolution res) {
  const int base = slot * kEncodingChannels;
  const Pixel last = d.terminus();
  for (int n = 0; n < enc.frames; ++n) {
    mark(enc, n, base + 0, d.origin, res);
    mark(enc, n, base + 2, d.trajectory[n], res);
    mark(enc, n, base + 4, last, res);
  }
}

}  // namespace

EncodedCoordinate encode_coordinate(int pixel, int extent, int s) {
  // s*pixel/extent with pixel in [0, extent) stays in [0, s).
  const long long scaled = static_cast<long long>(s) * pixel;
  const int cell = static_cast<int>(scaled / extent);
  const double fraction = static_cast<double>(scaled % extent) / extent;
  return {cell, fraction};
}

DragEncoding DragEncoding::slot(int k) const {
  if (k < 0 || k >= slots) throw ValidationError("encoding slot out of range");
  DragEncoding out(frames, size, 1);
  for (int n = 0; n < frames; ++n)
    for (int r = 0; r < size; ++r)
      for (int c = 0; c < size; ++c)
        for (int ch = 0; ch < kEncodingChannels; ++ch)
          out.at(n, r, c, ch) = at(n, r, c, k * kEncodingChannels + ch);
  return out;
}

DragEncoding encode_drag(const Drag& drag, int s, Resolution res) {
  if (s < 1) throw ValidationError("encoding size must be positive");
  DragSet single{{drag}, 1};
  validate_drag_set(single, res, drag.frame_count());
  DragEncoding enc(drag.frame_count(), s, 1);
  write_slot(enc, 0, drag, res);
  return enc;
}

DragEncoding encode_drag_set(const DragSet& set, int s, Resolution res, int n) {
  if (s < 1) throw ValidationError("encoding size must be positive");
  validate_drag_set(set, res, n);
  DragEncoding enc(n, s, set.capacity);
  for (int k = 0; k < set.size(); ++k) write_slot(enc, k, set.drags[k], res);
  return enc;
}

Drag decode_drag(const DragEncoding& enc, Resolution res) {
  if (enc.slots != 1) throw ValidationError("decode_drag expects a single-slot encoding");
  auto find_mark = [&](int n, int channel) -> Pixel {
    int found = 0;
    Pixel p;
    for (int r = 0; r < enc.size; ++r) {
      for (int c = 0; c < enc.size; ++c) {
        const float a = enc.at(n, r, c, channel);
        const float b = enc.at(n, r, c, channel + 1);
        if (a == kBackground && b == kBackground) continue;
        ++found;
        p.h = static_cast<int>(std::lround((r + static_cast<double>(a)) * res.height / enc.size));
        p.w = static_cast<int>(std::lround((c + static_cast<double>(b)) * res.width / enc.size));
      }
    }
    if (found != 1) {
      throw ValidationError("malformed drag encoding: frame " + std::to_string(n) + " channel group " +
                            std::to_string(channel / 2) + " marks " + std::to_string(found) + " cells");
    }
    return p;
  };

  Drag d;
  d.trajectory.reserve(enc.frames);
  for (int n = 0; n < enc.frames; ++n) {
    const Pixel u = find_mark(n, 0);
    if (n == 0) d.origin = u;
    d.trajectory.push_back(find_mark(n, 2));
    find_mark(n, 4);
  }
  return d;
}

std::string EncodingCache::key_of(const DragSet& set, int s, Resolution res, int n) {
  std::string key;
  auto put = [&](int v) { key.append(reinterpret_cast<const char*>(&v), sizeof v); };
  put(s);
  put(n);
  put(res.height);
  put(res.width);
  put(set.capacity);
  for (const Drag& d : set.drags) {
    put(d.origin.h);
    put(d.origin.w);
    put(d.frame_count());
    for (const Pixel& p : d.trajectory) {
      put(p.h);
      put(p.w);
    }
  }
  return key;
}

std::shared_ptr<const DragEncoding> EncodingCache::get(const DragSet& drags, int s, Resolution res, int n) {
  const std::string key = key_of(drags, s, res, n);
  {
    std::shared_lock lock(mutex_);
    if (auto it = entries_.find(key); it != entries_.end()) {
      std::lock_guard count(hit_mutex_);
      ++hits_;
      return it->second;
    }
  }
  auto enc = std::make_shared<const DragEncoding>(encode_drag_set(drags, s, res, n));
  std::unique_lock lock(mutex_);
  if (entries_.size() >= max_entries_) entries_.clear();
  auto [it, inserted] = entries_.emplace(key, std::move(enc));
  return it->second;
}

std::size_t EncodingCache::size() const {
  std::shared_lock lock(mutex_);
  return entries_.size();
}

std::size_t EncodingCache::hits() const {
  std::lock_guard count(hit_mutex_);
  return hits_;
}

void EncodingCache::clear() {
  std::unique_lock lock(mutex_);
  entries_.clear();
}

}  // namespace partdrag
