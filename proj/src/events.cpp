#include "ssmev/events.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstring>
#include <limits>

namespace ssmev::events {

void EventStream::validate() const {
  for (std::size_t i = 0; i < events.size(); ++i) {
    const Event& e = events[i];
    if (e.x >= width || e.y >= height) {
      throw std::invalid_argument("event " + std::to_string(i) + " at (" + std::to_string(e.x) +
                                  ", " + std::to_string(e.y) + ") is outside " +
                                  std::to_string(width) + "x" + std::to_string(height));
    }
    if (e.p != 1 && e.p != -1) {
      throw std::invalid_argument("event " + std::to_string(i) + " has polarity " +
                                  std::to_string(e.p));
    }
    if (i > 0 && e.t < events[i - 1].t) {
      throw std::invalid_argument("event " + std::to_string(i) + " breaks time order");
    }
  }
}

EventFormat parse_format(std::string_view name) {
  if (name == "csv") return EventFormat::kCsv;
  if (name == "binary" || name == "bin" || name == "evb") return EventFormat::kBinary;
  throw std::invalid_argument("unknown event format '" + std::string(name) + "'");
}

namespace {

template <typename T>
bool parse_number(std::string_view field, T& out) {
  while (!field.empty() && field.front() == ' ') field.remove_prefix(1);
  while (!field.empty() && field.back() == ' ') field.remove_suffix(1);
  if (field.empty()) return false;
  const char* end = field.data() + field.size();
  auto [ptr, ec] = std::from_chars(field.data(), end, out);
  return ec == std::errc() && ptr == end;
}

std::vector<std::string_view> split(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t pos = line.find(sep, start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

// Calls fn(line, lineno) for every non-empty line, CR stripped.
template <typename F>
void for_each_line(std::string_view text, F&& fn) {
  std::size_t lineno = 0;
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    ++lineno;
    if (!line.empty()) fn(line, lineno);
    start = end + 1;
  }
}

std::int8_t check_polarity(long long p, const ParseOptions& opts, std::size_t where,
                           const char* unit) {
  if (p == 1) return 1;
  if (p == -1) return -1;
  if (p == 0 && opts.polarity_zero_one) return -1;
  throw ParseError(std::string("invalid polarity ") + std::to_string(p) + " at " + unit + " " +
                       std::to_string(where) +
                       (p == 0 ? " (use polarity_zero_one for {0,1} files)" : ""),
                   where);
}

void check_event(const Event& e, const Event* previous, const ParseOptions& opts,
                 std::size_t where, const char* unit) {
  if (e.x >= opts.width || e.y >= opts.height) {
    throw ParseError("coordinate (" + std::to_string(e.x) + ", " + std::to_string(e.y) +
                         ") out of bounds at " + unit + " " + std::to_string(where),
                     where);
  }
  if (previous != nullptr && e.t < previous->t) {
    throw ParseError("timestamps not sorted at " + std::string(unit) + " " + std::to_string(where),
                     where);
  }
}

void put_le(std::string& out, std::uint64_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_le(const unsigned char* p, int bytes) {
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

}  // namespace

EventStream parse_events(std::string_view bytes, EventFormat format, const ParseOptions& opts) {
  EventStream stream;
  stream.width = opts.width;
  stream.height = opts.height;

  if (format == EventFormat::kCsv) {
    bool first = true;
    for_each_line(bytes, [&](std::string_view line, std::size_t lineno) {
      const bool header = first && line == "t,x,y,p";
      first = false;
      if (header || line.front() == '#') return;
      const auto fields = split(line, ',');
      if (fields.size() != 4) {
        throw ParseError("expected 4 fields t,x,y,p at line " + std::to_string(lineno), lineno);
      }
      std::uint64_t t = 0;
      long long x = 0, y = 0, p = 0;
      if (!parse_number(fields[0], t) || !parse_number(fields[1], x) ||
          !parse_number(fields[2], y) || !parse_number(fields[3], p)) {
        throw ParseError("malformed record at line " + std::to_string(lineno), lineno);
      }
      if (x < 0 || y < 0 || x > std::numeric_limits<std::uint16_t>::max() ||
          y > std::numeric_limits<std::uint16_t>::max()) {
        throw ParseError("coordinate out of range at line " + std::to_string(lineno), lineno);
      }
      Event e{t, static_cast<std::uint16_t>(x), static_cast<std::uint16_t>(y),
              check_polarity(p, opts, lineno, "line")};
      check_event(e, stream.events.empty() ? nullptr : &stream.events.back(), opts, lineno,
                  "line");
      stream.events.push_back(e);
    });
    return stream;
  }

  const std::size_t whole = bytes.size() / kBinaryRecordSize * kBinaryRecordSize;
  if (whole != bytes.size()) {
    throw ParseError("truncated record at byte offset " + std::to_string(whole), whole);
  }
  stream.events.reserve(bytes.size() / kBinaryRecordSize);
  const auto* raw = reinterpret_cast<const unsigned char*>(bytes.data());
  for (std::size_t off = 0; off < bytes.size(); off += kBinaryRecordSize) {
    const unsigned char* r = raw + off;
    const auto p = static_cast<std::int8_t>(r[12]);
    Event e{get_le(r, 8), static_cast<std::uint16_t>(get_le(r + 8, 2)),
            static_cast<std::uint16_t>(get_le(r + 10, 2)),
            check_polarity(p, opts, off, "byte offset")};
    check_event(e, stream.events.empty() ? nullptr : &stream.events.back(), opts, off,
                "byte offset");
    stream.events.push_back(e);
  }
  return stream;
}

std::string serialize_events(const EventStream& stream, EventFormat format) {
  std::string out;
  if (format == EventFormat::kCsv) {
    for (const Event& e : stream.events) {
      out += std::to_string(e.t);
      out += ',';
      out += std::to_string(e.x);
      out += ',';
      out += std::to_string(e.y);
      out += ',';
      out += std::to_string(static_cast<int>(e.p));
      out += '\n';
    }
    return out;
  }
  out.reserve(stream.events.size() * kBinaryRecordSize);
  for (const Event& e : stream.events) {
    put_le(out, e.t, 8);
    put_le(out, e.x, 2);
    put_le(out, e.y, 2);
    out.push_back(static_cast<char>(e.p));
  }
  return out;
}

EventStream synthesize_events(const IntensityField& field, std::uint16_t width,
                              std::uint16_t height, std::span<const std::uint64_t> times,
                              double threshold) {
  if (!(threshold > 0.0)) throw std::invalid_argument("synthesize_events: threshold must be > 0");
  for (std::size_t i = 1; i < times.size(); ++i) {
    if (times[i] <= times[i - 1]) {
      throw std::invalid_argument("synthesize_events: time grid must be strictly increasing");
    }
  }
  EventStream stream;
  stream.width = width;
  stream.height = height;
  if (times.empty()) return stream;

  const std::size_t pixels = static_cast<std::size_t>(width) * height;
  std::vector<double> reference(pixels);
  for (std::uint16_t y = 0; y < height; ++y) {
    for (std::uint16_t x = 0; x < width; ++x) {
      reference[static_cast<std::size_t>(y) * width + x] =
          field(x, y, static_cast<double>(times[0]));
    }
  }
  // grid-exact crossings (e.g. 0.1 * 3 vs 0.3) count as reached
  const double reach = threshold * (1.0 - 1e-9);
  for (std::size_t k = 1; k < times.size(); ++k) {
    const double t = static_cast<double>(times[k]);
    for (std::uint16_t y = 0; y < height; ++y) {
      for (std::uint16_t x = 0; x < width; ++x) {
        double& ref = reference[static_cast<std::size_t>(y) * width + x];
        const double value = field(x, y, t);
        while (value - ref >= reach) {
          stream.events.push_back({times[k], x, y, 1});
          ref += threshold;
        }
        while (ref - value >= reach) {
          stream.events.push_back({times[k], x, y, -1});
          ref -= threshold;
        }
      }
    }
  }
  return stream;
}

std::uint64_t BinnedTensor::total() const {
  std::uint64_t s = 0;
  for (auto c : counts) s += c;
  return s;
}

std::vector<BinnedTensor> bin_events(const EventStream& stream, std::uint64_t window_us,
                                     std::size_t t_bins) {
  if (window_us == 0 || t_bins == 0 || window_us % t_bins != 0) {
    throw std::invalid_argument("bin_events: window length must be a positive multiple of the bin count");
  }
  stream.validate();
  std::vector<BinnedTensor> windows;
  if (stream.events.empty()) return windows;
  const std::size_t n_windows = stream.events.back().t / window_us + 1;
  const std::size_t plane = static_cast<std::size_t>(stream.width) * stream.height;
  windows.resize(n_windows);
  for (std::size_t k = 0; k < n_windows; ++k) {
    auto& w = windows[k];
    w.window_start = k * window_us;
    w.window_len = window_us;
    w.bins = t_bins;
    w.width = stream.width;
    w.height = stream.height;
    w.counts.assign(2 * t_bins * plane, 0);
  }
  for (const Event& e : stream.events) {
    auto& w = windows[e.t / window_us];
    const std::uint64_t offset = e.t - w.window_start;
    const std::size_t bin = static_cast<std::size_t>(offset * t_bins / window_us);
    const std::size_t channel = e.p > 0 ? 1 : 0;
    auto& c = w.counts[w.index(channel, bin, e.y, e.x)];
    if (c != std::numeric_limits<std::uint16_t>::max()) ++c;
  }
  return windows;
}

std::string serialize_tensors(const std::vector<BinnedTensor>& windows) {
  std::string out = "EVHT";
  put_le(out, 1, 4);
  put_le(out, 5, 4);
  const std::size_t bins = windows.empty() ? 0 : windows.front().bins;
  const std::uint16_t height = windows.empty() ? 0 : windows.front().height;
  const std::uint16_t width = windows.empty() ? 0 : windows.front().width;
  const std::uint64_t window_us = windows.empty() ? 0 : windows.front().window_len;
  for (std::uint64_t d : {static_cast<std::uint64_t>(windows.size()), std::uint64_t{2},
                          static_cast<std::uint64_t>(bins), std::uint64_t{height},
                          std::uint64_t{width}}) {
    put_le(out, d, 8);
  }
  put_le(out, window_us, 8);
  for (const auto& w : windows) {
    if (w.bins != bins || w.width != width || w.height != height) {
      throw std::invalid_argument("serialize_tensors: windows have different shapes");
    }
    for (auto c : w.counts) put_le(out, c, 2);
  }
  return out;
}

std::vector<BinnedTensor> parse_tensors(std::string_view bytes) {
  constexpr std::size_t header = 4 + 4 + 4 + 5 * 8 + 8;
  if (bytes.size() < header || bytes.substr(0, 4) != "EVHT") {
    throw ParseError("not an EVHT tensor container", 0);
  }
  const auto* raw = reinterpret_cast<const unsigned char*>(bytes.data());
  if (get_le(raw + 4, 4) != 1 || get_le(raw + 8, 4) != 5) {
    throw ParseError("unsupported EVHT version or rank", 4);
  }
  std::uint64_t dims[5];
  for (int i = 0; i < 5; ++i) dims[i] = get_le(raw + 12 + 8 * i, 8);
  const std::uint64_t window_us = get_le(raw + 52, 8);
  const std::uint64_t per_window = dims[1] * dims[2] * dims[3] * dims[4];
  if (dims[1] != 2 || bytes.size() != header + 2 * dims[0] * per_window) {
    throw ParseError("EVHT payload size does not match header", header);
  }
  std::vector<BinnedTensor> windows(dims[0]);
  const unsigned char* p = raw + header;
  for (std::uint64_t k = 0; k < dims[0]; ++k) {
    auto& w = windows[k];
    w.window_start = k * window_us;
    w.window_len = window_us;
    w.bins = dims[2];
    w.height = static_cast<std::uint16_t>(dims[3]);
    w.width = static_cast<std::uint16_t>(dims[4]);
    w.counts.resize(per_window);
    for (std::uint64_t i = 0; i < per_window; ++i, p += 2) {
      w.counts[i] = static_cast<std::uint16_t>(get_le(p, 2));
    }
  }
  return windows;
}

FilterProfile FilterProfile::named(std::string_view name) {
  if (name == "gen1") return gen1();
  if (name == "mpx1" || name == "1mpx") return mpx1();
  throw std::invalid_argument("unknown bbox filter profile '" + std::string(name) + "'");
}

std::vector<BBox> filter_bboxes(std::span<const BBox> boxes, const FilterProfile& profile) {
  std::vector<BBox> kept;
  for (const BBox& b : boxes) {
    const double diag = std::hypot(b.w, b.h);
    if (std::min(b.w, b.h) >= profile.min_side && diag >= profile.min_diag) kept.push_back(b);
  }
  return kept;
}

std::vector<BBox> parse_bboxes(std::string_view csv) {
  std::vector<BBox> boxes;
  bool first = true;
  for_each_line(csv, [&](std::string_view line, std::size_t lineno) {
    const bool header = first && line.rfind("x,y,w,h", 0) == 0;
    first = false;
    if (header || line.front() == '#') return;
    const auto f = split(line, ',');
    BBox b;
    if (f.size() != 5 || !parse_number(f[0], b.x) || !parse_number(f[1], b.y) ||
        !parse_number(f[2], b.w) || !parse_number(f[3], b.h) || !parse_number(f[4], b.class_id)) {
      throw ParseError("malformed box at line " + std::to_string(lineno), lineno);
    }
    if (!(b.w > 0.0) || !(b.h > 0.0)) {
      throw ParseError("box with non-positive size at line " + std::to_string(lineno), lineno);
    }
    boxes.push_back(b);
  });
  return boxes;
}

namespace {

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

}  // namespace

std::string serialize_bboxes(std::span<const BBox> boxes) {
  std::string out = "x,y,w,h,class\n";
  for (const BBox& b : boxes) {
    out += format_double(b.x) + ',' + format_double(b.y) + ',' + format_double(b.w) + ',' +
           format_double(b.h) + ',' + std::to_string(b.class_id) + '\n';
  }
  return out;
}

EventStream synthesize_scene(const SceneOptions& opts) {
  if (opts.width == 0 || opts.height == 0) throw std::invalid_argument("scene: empty sensor");
  if (opts.step_us == 0) throw std::invalid_argument("scene: step_us must be > 0");
  std::vector<std::uint64_t> times(opts.steps + 1);
  for (std::size_t k = 0; k <= opts.steps; ++k) times[k] = k * opts.step_us;
  const double step_us = static_cast<double>(opts.step_us);

  IntensityField field;
  if (opts.name == "ramp") {
    field = [&](std::uint16_t, std::uint16_t, double t) { return opts.slope * (t / step_us); };
  } else if (opts.name == "blink") {
    const std::size_t period = std::max<std::size_t>(2, opts.period);
    field = [=](std::uint16_t, std::uint16_t, double t) {
      const auto step = static_cast<std::size_t>(std::llround(t / step_us));
      return (step % period) < period / 2 ? 1.0 : 0.0;
    };
  } else if (opts.name == "moving-bar") {
    const double w = opts.width;
    field = [=](std::uint16_t x, std::uint16_t, double t) {
      const double pos = std::fmod(t / step_us, w);
      return std::abs(static_cast<double>(x) - pos) < 1.0 ? 1.0 : 0.0;
    };
  } else {
    throw std::invalid_argument("unknown scene '" + opts.name + "' (ramp, blink, moving-bar)");
  }
  return synthesize_events(field, opts.width, opts.height, times, opts.threshold);
}

}  // namespace ssmev::events
