#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <variant>
#include <vector>

namespace annoforge::geometry {

struct Point {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const Point&, const Point&) = default;
};

/// Polygon areas below this are treated as degenerate (square pixels).
inline constexpr double kMinPolygonArea = 1e-6;

/// Default samples per pixel edge when rasterizing.
inline constexpr int kDefaultSupersample = 3;

/// A validated polygon in image space (origin top-left, x right, y down).
///
/// Construction drops consecutive duplicate vertices (including a closing
/// vertex equal to the first) and rejects fewer than three vertices,
/// non-finite coordinates, or a vertex set with no two-dimensional extent.
/// Self-intersecting input is kept and filled with the even-odd rule.
class Polygon {
 public:
  /// Throws Error(DegeneratePolygon).
  explicit Polygon(std::vector<Point> vertices);

  static std::optional<Polygon> try_make(std::vector<Point> vertices);

  std::span<const Point> vertices() const noexcept { return vertices_; }
  std::size_t size() const noexcept { return vertices_.size(); }
  const Point& operator[](std::size_t i) const { return vertices_[i]; }

  friend bool operator==(const Polygon&, const Polygon&) = default;

 private:
  struct Unchecked {};
  Polygon(Unchecked, std::vector<Point> vertices) : vertices_(std::move(vertices)) {}

  std::vector<Point> vertices_;
};

/// Axis-aligned rectangle; x0/y0 is the top-left corner.
struct PixelRect {
  double x0 = 0.0;
  double y0 = 0.0;
  double width = 0.0;
  double height = 0.0;

  double x1() const noexcept { return x0 + width; }
  double y1() const noexcept { return y0 + height; }
  double area() const noexcept { return width * height; }
};

struct GridSpec {
  int width = 0;
  int height = 0;
  int supersample = kDefaultSupersample;
};

/// Row-major bit grid.
class RasterMask {
 public:
  RasterMask() = default;
  RasterMask(int width, int height);

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }

  bool get(int x, int y) const;
  void set(int x, int y, bool value = true);

  std::size_t popcount() const noexcept;

  std::span<const std::uint64_t> words() const noexcept { return words_; }

  friend bool operator==(const RasterMask&, const RasterMask&) = default;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<std::uint64_t> words_;
};

/// (x, y) -> (a*x + b*y + tx, c*x + d*y + ty)
struct AffineTransform {
  double a = 1.0, b = 0.0, tx = 0.0;
  double c = 0.0, d = 1.0, ty = 0.0;

  double determinant() const noexcept { return a * d - b * c; }
  Point apply(Point p) const noexcept;

  /// Throws Error(SingularTransform).
  AffineTransform inverse() const;

  /// The transform that applies `first`, then `*this`.
  AffineTransform after(const AffineTransform& first) const noexcept;

  static AffineTransform identity() noexcept { return {}; }
  static AffineTransform translate(double dx, double dy) noexcept;
  static AffineTransform scale(double sx, double sy) noexcept;
  static AffineTransform horizontal_flip(double image_width) noexcept;
  static AffineTransform vertical_flip(double image_height) noexcept;

  friend bool operator==(const AffineTransform&, const AffineTransform&) = default;
};

/// Signed shoelace area over the closed vertex cycle.
double signed_area(std::span<const Point> vertices) noexcept;

/// Absolute shoelace area.
double polygon_area(const Polygon& poly) noexcept;

/// Even-odd containment. A point on the boundary is inside when the boundary
/// passes through it an odd number of times, which makes every boundary
/// point of a simple polygon inside and a transversal self-crossing outside.
bool point_in_polygon(Point pt, const Polygon& poly) noexcept;

/// Pixel mask on `grid`: a pixel is set when a strict majority of its
/// supersample x supersample sample points lie inside `poly`.
RasterMask rasterize(const Polygon& poly, const GridSpec& grid);

/// Sample-level coverage: a (width*s) x (height*s) mask with one bit per
/// sample point. popcount / s^2 estimates the covered area.
RasterMask coverage(const Polygon& poly, const GridSpec& grid);

/// Expands a pixel mask to sample resolution (each pixel becomes s x s bits).
/// Throws Error(GridMismatch) when the mask does not match the grid.
RasterMask upsample(const RasterMask& mask, const GridSpec& grid);

using Region = std::variant<Polygon, RasterMask>;

/// popcount(A & B) / popcount(A | B), evaluated at sample resolution; 0 when
/// the union is empty.
double iou(const Region& a, const Region& b, const GridSpec& grid);

/// Sutherland-Hodgman against the four rectangle half-planes. Returns nullopt
/// when no area survives.
std::optional<Polygon> clip_polygon_to_rect(const Polygon& poly, const PixelRect& rect);

/// Throws Error(SingularTransform) when det == 0.
Polygon transform_polygon(const Polygon& poly, const AffineTransform& t);

bool is_convex(const Polygon& poly) noexcept;

/// Exact overlap area of two convex polygons. Throws Error(NotConvex).
double convex_intersection_area(const Polygon& a, const Polygon& b);

PixelRect bounding_box(const Polygon& poly) noexcept;

double bbox_iou(const Polygon& a, const Polygon& b) noexcept;

/// Run-length encoding of a mask, row-major, alternating runs starting with
/// zeros (a leading zero-length run when the first bit is set).
std::vector<std::uint64_t> rle_encode(const RasterMask& mask);

/// Throws Error(ValidationError) when the runs do not sum to width*height.
RasterMask rle_decode(int width, int height, std::span<const std::uint64_t> counts);

/// Outer boundary of the largest 4-connected component, traced along pixel
/// edges. Holes are not represented. nullopt for an empty mask.
std::optional<Polygon> mask_to_polygon(const RasterMask& mask);

}  // namespace annoforge::geometry
