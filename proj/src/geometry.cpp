#include "annoforge/geometry.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numbers>
#include <string>

#include "annoforge/error.hpp"

namespace annoforge::geometry {
namespace {

constexpr double kBoundaryEps = 1e-9;

double cross(Point o, Point a, Point b) noexcept {
  return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

bool on_segment(Point p, Point a, Point b) noexcept {
  const double dx = b.x - a.x;
  const double dy = b.y - a.y;
  const double len2 = dx * dx + dy * dy;
  if (len2 == 0.0) {
    return std::hypot(p.x - a.x, p.y - a.y) <= kBoundaryEps;
  }
  const double len = std::sqrt(len2);
  if (std::abs(cross(a, b, p)) > kBoundaryEps * len) return false;
  const double dot = (p.x - a.x) * dx + (p.y - a.y) * dy;
  return dot >= -kBoundaryEps * len && dot <= len2 + kBoundaryEps * len;
}

// Shared by the point test and the scanline so both agree bit for bit.
double edge_crossing_x(Point a, Point b, double y) noexcept {
  return (b.x - a.x) * (y - a.y) / (b.y - a.y) + a.x;
}

// Returns 0 if the point is not on the boundary, otherwise how many times the
// boundary passes through it. Each vertex belongs to the edge starting there.
int boundary_passes(Point p, std::span<const Point> v) noexcept {
  int passes = 0;
  const std::size_t n = v.size();
  for (std::size_t i = 0; i < n; ++i) {
    const Point a = v[i];
    const Point b = v[(i + 1) % n];
    if (p == b) continue;
    if (on_segment(p, a, b)) ++passes;
  }
  return passes;
}

bool crossing_parity(Point p, std::span<const Point> v) noexcept {
  bool inside = false;
  const std::size_t n = v.size();
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    if ((v[i].y > p.y) != (v[j].y > p.y)) {
      if (p.x < edge_crossing_x(v[i], v[j], p.y)) inside = !inside;
    }
  }
  return inside;
}

double fan_extent(std::span<const Point> v) noexcept {
  double total = 0.0;
  for (std::size_t i = 1; i + 1 < v.size(); ++i) total += std::abs(cross(v[0], v[i], v[i + 1]));
  return total / 2.0;
}

std::vector<Point> canonicalize(std::vector<Point> in) {
  std::vector<Point> out;
  out.reserve(in.size());
  for (const Point& p : in) {
    if (!out.empty() && out.back() == p) continue;
    out.push_back(p);
  }
  while (out.size() > 1 && out.front() == out.back()) out.pop_back();
  return out;
}

std::optional<std::string> validity_problem(std::span<const Point> v) {
  for (const Point& p : v) {
    if (!std::isfinite(p.x) || !std::isfinite(p.y)) return "non-finite coordinate";
  }
  if (v.size() < 3) return "fewer than 3 distinct vertices";
  if (fan_extent(v) < kMinPolygonArea) return "polygon has no area";
  return std::nullopt;
}

template <typename Inside, typename Intersect>
std::vector<Point> clip_half_plane(const std::vector<Point>& subject, Inside inside, Intersect intersect) {
  std::vector<Point> out;
  if (subject.empty()) return out;
  out.reserve(subject.size() + 4);
  Point prev = subject.back();
  bool prev_in = inside(prev);
  for (const Point& cur : subject) {
    const bool cur_in = inside(cur);
    if (cur_in) {
      if (!prev_in) out.push_back(intersect(prev, cur));
      out.push_back(cur);
    } else if (prev_in) {
      out.push_back(intersect(prev, cur));
    }
    prev = cur;
    prev_in = cur_in;
  }
  return out;
}

Point intersect_vertical(Point a, Point b, double x) noexcept {
  const double t = (x - a.x) / (b.x - a.x);
  return {x, a.y + t * (b.y - a.y)};
}

Point intersect_horizontal(Point a, Point b, double y) noexcept {
  const double t = (y - a.y) / (b.y - a.y);
  return {a.x + t * (b.x - a.x), y};
}

struct IndexRange {
  int lo = 0;
  int hi = -1;  // inclusive
};

IndexRange sample_range(double lo, double hi, int s, int limit) {
  IndexRange r;
  r.lo = std::max(0, static_cast<int>(std::floor(lo * s - 0.5)));
  r.hi = std::min(limit - 1, static_cast<int>(std::ceil(hi * s)));
  return r;
}

void validate_grid(const GridSpec& grid) {
  if (grid.width < 1 || grid.height < 1 || grid.supersample < 1) {
    fail(ErrorCode::ValidationError, "grid dimensions and supersample must be >= 1");
  }
}

RasterMask to_samples(const Region& region, const GridSpec& grid) {
  if (const auto* poly = std::get_if<Polygon>(&region)) return coverage(*poly, grid);
  return upsample(std::get<RasterMask>(region), grid);
}

}  // namespace

Polygon::Polygon(std::vector<Point> vertices) : vertices_(canonicalize(std::move(vertices))) {
  if (auto problem = validity_problem(vertices_)) fail(ErrorCode::DegeneratePolygon, *problem);
}

std::optional<Polygon> Polygon::try_make(std::vector<Point> vertices) {
  auto canon = canonicalize(std::move(vertices));
  if (validity_problem(canon)) return std::nullopt;
  return Polygon(Unchecked{}, std::move(canon));
}

RasterMask::RasterMask(int width, int height) : width_(width), height_(height) {
  if (width < 0 || height < 0) fail(ErrorCode::ValidationError, "negative mask dimensions");
  const std::size_t bits = static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
  words_.assign((bits + 63) / 64, 0);
}

bool RasterMask::get(int x, int y) const {
  const std::size_t bit = static_cast<std::size_t>(y) * width_ + x;
  return (words_[bit / 64] >> (bit % 64)) & 1u;
}

void RasterMask::set(int x, int y, bool value) {
  const std::size_t bit = static_cast<std::size_t>(y) * width_ + x;
  const std::uint64_t m = std::uint64_t{1} << (bit % 64);
  if (value) {
    words_[bit / 64] |= m;
  } else {
    words_[bit / 64] &= ~m;
  }
}

std::size_t RasterMask::popcount() const noexcept {
  std::size_t n = 0;
  for (auto w : words_) n += static_cast<std::size_t>(std::popcount(w));
  return n;
}

Point AffineTransform::apply(Point p) const noexcept {
  return {a * p.x + b * p.y + tx, c * p.x + d * p.y + ty};
}

AffineTransform AffineTransform::inverse() const {
  const double det = determinant();
  if (det == 0.0) fail(ErrorCode::SingularTransform, "determinant is zero");
  AffineTransform inv;
  inv.a = d / det;
  inv.b = -b / det;
  inv.c = -c / det;
  inv.d = a / det;
  inv.tx = -(inv.a * tx + inv.b * ty);
  inv.ty = -(inv.c * tx + inv.d * ty);
  return inv;
}

AffineTransform AffineTransform::after(const AffineTransform& f) const noexcept {
  AffineTransform r;
  r.a = a * f.a + b * f.c;
  r.b = a * f.b + b * f.d;
  r.tx = a * f.tx + b * f.ty + tx;
  r.c = c * f.a + d * f.c;
  r.d = c * f.b + d * f.d;
  r.ty = c * f.tx + d * f.ty + ty;
  return r;
}

AffineTransform AffineTransform::translate(double dx, double dy) noexcept {
  return {1.0, 0.0, dx, 0.0, 1.0, dy};
}

AffineTransform AffineTransform::scale(double sx, double sy) noexcept {
  return {sx, 0.0, 0.0, 0.0, sy, 0.0};
}

AffineTransform AffineTransform::horizontal_flip(double image_width) noexcept {
  return {-1.0, 0.0, image_width, 0.0, 1.0, 0.0};
}

AffineTransform AffineTransform::vertical_flip(double image_height) noexcept {
  return {1.0, 0.0, 0.0, 0.0, -1.0, image_height};
}

double signed_area(std::span<const Point> v) noexcept {
  double sum = 0.0;
  const std::size_t n = v.size();
  for (std::size_t i = 0; i < n; ++i) {
    const Point& p = v[i];
    const Point& q = v[(i + 1) % n];
    sum += p.x * q.y - q.x * p.y;
  }
  return sum / 2.0;
}

double polygon_area(const Polygon& poly) noexcept {
  return std::abs(signed_area(poly.vertices()));
}

bool point_in_polygon(Point pt, const Polygon& poly) noexcept {
  const auto v = poly.vertices();
  if (const int passes = boundary_passes(pt, v); passes > 0) return passes % 2 == 1;
  return crossing_parity(pt, v);
}

RasterMask coverage(const Polygon& poly, const GridSpec& grid) {
  validate_grid(grid);
  const int s = grid.supersample;
  const int cols = grid.width * s;
  const int rows = grid.height * s;
  RasterMask mask(cols, rows);

  const PixelRect box = bounding_box(poly);
  const IndexRange xr = sample_range(box.x0, box.x1(), s, cols);
  const IndexRange yr = sample_range(box.y0, box.y1(), s, rows);
  const auto v = poly.vertices();
  const std::size_t n = v.size();

  std::vector<double> xs;
  xs.reserve(n);
  for (int j = yr.lo; j <= yr.hi; ++j) {
    const double y = (j + 0.5) / s;
    const bool vertex_row = std::any_of(v.begin(), v.end(), [y](const Point& p) { return p.y == y; });
    if (vertex_row) {
      for (int i = xr.lo; i <= xr.hi; ++i) {
        if (point_in_polygon({(i + 0.5) / s, y}, poly)) mask.set(i, j);
      }
      continue;
    }

    xs.clear();
    for (std::size_t a = 0, b = n - 1; a < n; b = a++) {
      if ((v[a].y > y) != (v[b].y > y)) xs.push_back(edge_crossing_x(v[a], v[b], y));
    }
    if (xs.empty()) continue;
    std::sort(xs.begin(), xs.end());

    std::size_t at_or_left = 0;  // crossings with x <= px
    for (int i = xr.lo; i <= xr.hi; ++i) {
      const double px = (i + 0.5) / s;
      while (at_or_left < xs.size() && xs[at_or_left] <= px) ++at_or_left;
      const bool near_edge = (at_or_left > 0 && px - xs[at_or_left - 1] <= kBoundaryEps) ||
                             (at_or_left < xs.size() && xs[at_or_left] - px <= kBoundaryEps);
      bool inside;
      if (near_edge) {
        inside = point_in_polygon({px, y}, poly);
      } else {
        inside = (xs.size() - at_or_left) % 2 == 1;
      }
      if (inside) mask.set(i, j);
    }
  }
  return mask;
}

RasterMask rasterize(const Polygon& poly, const GridSpec& grid) {
  const RasterMask fine = coverage(poly, grid);
  const int s = grid.supersample;
  const int needed = s * s / 2 + 1;
  RasterMask mask(grid.width, grid.height);

  const PixelRect box = bounding_box(poly);
  const int x_lo = std::max(0, static_cast<int>(std::floor(box.x0)) - 1);
  const int x_hi = std::min(grid.width - 1, static_cast<int>(std::ceil(box.x1())));
  const int y_lo = std::max(0, static_cast<int>(std::floor(box.y0)) - 1);
  const int y_hi = std::min(grid.height - 1, static_cast<int>(std::ceil(box.y1())));
  for (int py = y_lo; py <= y_hi; ++py) {
    for (int px = x_lo; px <= x_hi; ++px) {
      int count = 0;
      for (int sy = 0; sy < s; ++sy) {
        for (int sx = 0; sx < s; ++sx) count += fine.get(px * s + sx, py * s + sy);
      }
      if (count >= needed) mask.set(px, py);
    }
  }
  return mask;
}

RasterMask upsample(const RasterMask& mask, const GridSpec& grid) {
  validate_grid(grid);
  if (mask.width() != grid.width || mask.height() != grid.height) {
    fail(ErrorCode::GridMismatch, "mask is " + std::to_string(mask.width()) + "x" +
                                      std::to_string(mask.height()) + ", grid is " +
                                      std::to_string(grid.width) + "x" + std::to_string(grid.height));
  }
  const int s = grid.supersample;
  RasterMask out(grid.width * s, grid.height * s);
  for (int y = 0; y < grid.height; ++y) {
    for (int x = 0; x < grid.width; ++x) {
      if (!mask.get(x, y)) continue;
      for (int sy = 0; sy < s; ++sy) {
        for (int sx = 0; sx < s; ++sx) out.set(x * s + sx, y * s + sy);
      }
    }
  }
  return out;
}

double iou(const Region& a, const Region& b, const GridSpec& grid) {
  const RasterMask ma = to_samples(a, grid);
  const RasterMask mb = to_samples(b, grid);
  const auto wa = ma.words();
  const auto wb = mb.words();
  std::size_t inter = 0;
  std::size_t uni = 0;
  for (std::size_t i = 0; i < wa.size(); ++i) {
    inter += static_cast<std::size_t>(std::popcount(wa[i] & wb[i]));
    uni += static_cast<std::size_t>(std::popcount(wa[i] | wb[i]));
  }
  if (uni == 0) return 0.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

std::optional<Polygon> clip_polygon_to_rect(const Polygon& poly, const PixelRect& rect) {
  const double x0 = rect.x0;
  const double x1 = rect.x1();
  const double y0 = rect.y0;
  const double y1 = rect.y1();
  std::vector<Point> pts(poly.vertices().begin(), poly.vertices().end());

  pts = clip_half_plane(pts, [x0](Point p) { return p.x >= x0; },
                        [x0](Point a, Point b) { return intersect_vertical(a, b, x0); });
  pts = clip_half_plane(pts, [x1](Point p) { return p.x <= x1; },
                        [x1](Point a, Point b) { return intersect_vertical(a, b, x1); });
  pts = clip_half_plane(pts, [y0](Point p) { return p.y >= y0; },
                        [y0](Point a, Point b) { return intersect_horizontal(a, b, y0); });
  pts = clip_half_plane(pts, [y1](Point p) { return p.y <= y1; },
                        [y1](Point a, Point b) { return intersect_horizontal(a, b, y1); });

  // Intersections are computed exactly on the clip line but the free
  // coordinate can drift by an ulp.
  for (Point& p : pts) {
    p.x = std::clamp(p.x, x0, x1);
    p.y = std::clamp(p.y, y0, y1);
  }
  return Polygon::try_make(std::move(pts));
}

Polygon transform_polygon(const Polygon& poly, const AffineTransform& t) {
  if (t.determinant() == 0.0) fail(ErrorCode::SingularTransform, "determinant is zero");
  std::vector<Point> out;
  out.reserve(poly.size());
  for (const Point& p : poly.vertices()) out.push_back(t.apply(p));
  return Polygon(std::move(out));
}

bool is_convex(const Polygon& poly) noexcept {
  const auto v = poly.vertices();
  const std::size_t n = v.size();
  int sign = 0;
  double turning = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const Point& a = v[i];
    const Point& b = v[(i + 1) % n];
    const Point& c = v[(i + 2) % n];
    const double z = cross(a, b, c);
    if (z != 0.0) {
      const int s = z > 0 ? 1 : -1;
      if (sign != 0 && s != sign) return false;
      sign = s;
    }
    const double in = std::atan2(b.y - a.y, b.x - a.x);
    const double out = std::atan2(c.y - b.y, c.x - b.x);
    double turn = out - in;
    while (turn > std::numbers::pi) turn -= 2 * std::numbers::pi;
    while (turn < -std::numbers::pi) turn += 2 * std::numbers::pi;
    turning += turn;
  }
  // Star polygons keep a consistent turn sign but wind more than once.
  return sign != 0 && std::abs(turning) < 2 * std::numbers::pi + 1e-6;
}

double convex_intersection_area(const Polygon& a, const Polygon& b) {
  if (!is_convex(a)) fail(ErrorCode::NotConvex, "first polygon is not convex");
  if (!is_convex(b)) fail(ErrorCode::NotConvex, "second polygon is not convex");

  const auto clip = b.vertices();
  const double orientation = signed_area(clip) > 0 ? 1.0 : -1.0;
  std::vector<Point> pts(a.vertices().begin(), a.vertices().end());
  const std::size_t n = clip.size();
  for (std::size_t i = 0; i < n && !pts.empty(); ++i) {
    const Point e0 = clip[i];
    const Point e1 = clip[(i + 1) % n];
    auto inside = [&](Point p) { return orientation * cross(e0, e1, p) >= 0.0; };
    auto intersect = [&](Point p, Point q) {
      const double dp = cross(e0, e1, p);
      const double dq = cross(e0, e1, q);
      const double t = dp / (dp - dq);
      return Point{p.x + t * (q.x - p.x), p.y + t * (q.y - p.y)};
    };
    pts = clip_half_plane(pts, inside, intersect);
  }
  if (pts.size() < 3) return 0.0;
  return std::abs(signed_area(pts));
}

PixelRect bounding_box(const Polygon& poly) noexcept {
  const auto v = poly.vertices();
  double x0 = v[0].x, x1 = v[0].x, y0 = v[0].y, y1 = v[0].y;
  for (const Point& p : v) {
    x0 = std::min(x0, p.x);
    x1 = std::max(x1, p.x);
    y0 = std::min(y0, p.y);
    y1 = std::max(y1, p.y);
  }
  return {x0, y0, x1 - x0, y1 - y0};
}

double bbox_iou(const Polygon& a, const Polygon& b) noexcept {
  const PixelRect ra = bounding_box(a);
  const PixelRect rb = bounding_box(b);
  const double w = std::min(ra.x1(), rb.x1()) - std::max(ra.x0, rb.x0);
  const double h = std::min(ra.y1(), rb.y1()) - std::max(ra.y0, rb.y0);
  const double inter = std::max(0.0, w) * std::max(0.0, h);
  const double uni = ra.area() + rb.area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

std::vector<std::uint64_t> rle_encode(const RasterMask& mask) {
  std::vector<std::uint64_t> counts;
  bool current = false;
  std::uint64_t run = 0;
  for (int y = 0; y < mask.height(); ++y) {
    for (int x = 0; x < mask.width(); ++x) {
      const bool bit = mask.get(x, y);
      if (bit != current) {
        counts.push_back(run);
        run = 0;
        current = bit;
      }
      ++run;
    }
  }
  counts.push_back(run);
  return counts;
}

RasterMask rle_decode(int width, int height, std::span<const std::uint64_t> counts) {
  if (width < 1 || height < 1) fail(ErrorCode::ValidationError, "mask size must be positive");
  const std::uint64_t total = static_cast<std::uint64_t>(width) * static_cast<std::uint64_t>(height);
  std::uint64_t sum = 0;
  for (auto c : counts) sum += c;
  if (sum != total) {
    fail(ErrorCode::ValidationError,
         "rle counts sum to " + std::to_string(sum) + ", expected " + std::to_string(total));
  }
  RasterMask mask(width, height);
  std::uint64_t pos = 0;
  bool bit = false;
  for (auto c : counts) {
    if (bit) {
      for (std::uint64_t k = 0; k < c; ++k) {
        const std::uint64_t p = pos + k;
        mask.set(static_cast<int>(p % width), static_cast<int>(p / width));
      }
    }
    pos += c;
    bit = !bit;
  }
  return mask;
}

std::optional<Polygon> mask_to_polygon(const RasterMask& mask) {
  const int w = mask.width();
  const int h = mask.height();
  std::vector<int> comp(static_cast<std::size_t>(w) * h, -1);
  auto at = [w](int x, int y) { return static_cast<std::size_t>(y) * w + x; };

  int best = -1;
  std::size_t best_size = 0;
  int best_start = -1;
  int ncomp = 0;
  std::vector<int> stack;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (!mask.get(x, y) || comp[at(x, y)] >= 0) continue;
      const int id = ncomp++;
      std::size_t size = 0;
      comp[at(x, y)] = id;
      stack.assign(1, static_cast<int>(at(x, y)));
      while (!stack.empty()) {
        const int p = stack.back();
        stack.pop_back();
        ++size;
        const int px = p % w, py = p / w;
        const int nx[4] = {px + 1, px - 1, px, px};
        const int ny[4] = {py, py, py + 1, py - 1};
        for (int k = 0; k < 4; ++k) {
          if (nx[k] < 0 || ny[k] < 0 || nx[k] >= w || ny[k] >= h) continue;
          if (!mask.get(nx[k], ny[k]) || comp[at(nx[k], ny[k])] >= 0) continue;
          comp[at(nx[k], ny[k])] = id;
          stack.push_back(static_cast<int>(at(nx[k], ny[k])));
        }
      }
      if (size > best_size) {
        best = id;
        best_size = size;
        best_start = static_cast<int>(at(x, y));
      }
    }
  }
  if (best < 0) return std::nullopt;

  auto inside = [&](int x, int y) { return x >= 0 && y >= 0 && x < w && y < h && comp[at(x, y)] == best; };
  // Walk pixel corners clockwise (y down) with the component on the right.
  // At a corner touched by two diagonal pixels, turning right first keeps
  // the walk on the 4-connected side.
  auto has_edge = [&](int cx, int cy, int dx, int dy) {
    if (dx == 1) return inside(cx, cy) && !inside(cx, cy - 1);
    if (dx == -1) return inside(cx - 1, cy - 1) && !inside(cx - 1, cy);
    if (dy == 1) return inside(cx - 1, cy) && !inside(cx, cy);
    return inside(cx, cy - 1) && !inside(cx - 1, cy - 1);
  };
  const int sx = best_start % w, sy = best_start / w;
  int cx = sx, cy = sy, dx = 1, dy = 0;
  std::vector<Point> pts{{static_cast<double>(sx), static_cast<double>(sy)}};
  const std::size_t limit = 4 * best_size + 4;
  for (std::size_t step = 0; step < limit; ++step) {
    cx += dx;
    cy += dy;
    if (cx == sx && cy == sy) break;
    const int cand[3][2] = {{-dy, dx}, {dx, dy}, {dy, -dx}};
    for (const auto& c : cand) {
      if (has_edge(cx, cy, c[0], c[1])) {
        if (c[0] != dx || c[1] != dy) pts.push_back({static_cast<double>(cx), static_cast<double>(cy)});
        dx = c[0];
        dy = c[1];
        break;
      }
    }
  }
  return Polygon::try_make(std::move(pts));
}

}  // namespace annoforge::geometry
