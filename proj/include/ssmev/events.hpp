#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace ssmev::events {

struct Event {
  std::uint64_t t = 0;  // microseconds
  std::uint16_t x = 0;
  std::uint16_t y = 0;
  std::int8_t p = 1;  // -1 or +1

  bool operator==(const Event&) const = default;
};

struct EventStream {
  std::vector<Event> events;
  std::uint16_t width = 0;
  std::uint16_t height = 0;

  bool operator==(const EventStream&) const = default;

  // Throws std::invalid_argument on bounds or order violations.
  void validate() const;
};

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t location)
      : std::runtime_error(what), location_(location) {}
  // 1-based line for CSV, byte offset for binary
  std::size_t location() const { return location_; }

 private:
  std::size_t location_;
};

enum class EventFormat { kCsv, kBinary };

EventFormat parse_format(std::string_view name);

struct ParseOptions {
  std::uint16_t width = 304;
  std::uint16_t height = 240;
  bool polarity_zero_one = false;  // map polarity 0 to -1
};

constexpr std::size_t kBinaryRecordSize = 13;

// CSV: one "t,x,y,p" record per line, t in integer microseconds. An optional
// "t,x,y,p" header line is accepted.
// Binary: 13-byte records, little-endian u64 t, u16 x, u16 y, i8 p.
EventStream parse_events(std::string_view bytes, EventFormat format, const ParseOptions& opts = {});
std::string serialize_events(const EventStream& stream, EventFormat format);

// Log-intensity field I(x, y, t), t in microseconds.
using IntensityField = std::function<double(std::uint16_t x, std::uint16_t y, double t)>;

// Emits an event each time the log intensity at a pixel moves by the
// threshold from that pixel's reference level. Crossings snap to the first
// grid time at which they are observed; the reference moves by exactly one
// threshold per event, so a jump of k thresholds yields k events.
EventStream synthesize_events(const IntensityField& field, std::uint16_t width,
                              std::uint16_t height, std::span<const std::uint64_t> times,
                              double threshold);

// Stacked histogram of one window: counts[polarity][bin][y][x], polarity
// channel 0 is -1 and channel 1 is +1. Counts saturate at 65535.
struct BinnedTensor {
  std::uint64_t window_start = 0;
  std::uint64_t window_len = 0;
  std::size_t bins = 0;
  std::uint16_t width = 0;
  std::uint16_t height = 0;
  std::vector<std::uint16_t> counts;

  std::size_t index(std::size_t polarity, std::size_t bin, std::size_t y, std::size_t x) const {
    return ((polarity * bins + bin) * height + y) * width + x;
  }
  std::uint64_t total() const;
};

// Half-open windows [k w, (k+1) w) for k = 0 .. floor(t_last / w); the bin of
// an event is floor(T (t - start) / w).
std::vector<BinnedTensor> bin_events(const EventStream& stream, std::uint64_t window_us = 50000,
                                     std::size_t t_bins = 10);

// Flat tensor container: magic "EVHT", u32 version (1), u32 ndim (5),
// u64 dims[5] = {windows, 2, T, H, W}, u64 window_us, then row-major LE u16.
std::string serialize_tensors(const std::vector<BinnedTensor>& windows);
std::vector<BinnedTensor> parse_tensors(std::string_view bytes);

struct BBox {
  double x = 0;
  double y = 0;
  double w = 0;
  double h = 0;
  int class_id = 0;
};

struct FilterProfile {
  double min_side = 0;
  double min_diag = 0;

  static FilterProfile gen1() { return {10.0, 30.0}; }
  static FilterProfile mpx1() { return {20.0, 60.0}; }
  static FilterProfile named(std::string_view name);
};

// Keeps a box iff min(w, h) >= min_side and its diagonal >= min_diag.
std::vector<BBox> filter_bboxes(std::span<const BBox> boxes, const FilterProfile& profile);

// "x,y,w,h,class" per line, optional header.
std::vector<BBox> parse_bboxes(std::string_view csv);
std::string serialize_bboxes(std::span<const BBox> boxes);

// Built-in scenes for the CLI. Grid times are step * step_us for
// step = 0 .. steps.
//   ramp: I = slope * step at every pixel
//   blink: square-wave brightness with the given period (in steps)
//   moving-bar: a bright vertical bar sweeping left to right
struct SceneOptions {
  std::string name = "ramp";
  std::uint16_t width = 8;
  std::uint16_t height = 8;
  std::size_t steps = 10;
  std::uint64_t step_us = 1000;
  double threshold = 0.3;
  double slope = 0.1;
  std::size_t period = 8;
};

EventStream synthesize_scene(const SceneOptions& opts);

}  // namespace ssmev::events
