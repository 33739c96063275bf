#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>

namespace tifu {

struct Vec3 {
  double x = 0.0, y = 0.0, z = 0.0;

  double& operator[](int i) { return (&x)[i]; }
  double operator[](int i) const { return (&x)[i]; }
};

inline Vec3 operator+(const Vec3& a, const Vec3& b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
inline Vec3 operator-(const Vec3& a, const Vec3& b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
inline Vec3 operator*(const Vec3& a, double s) { return {a.x * s, a.y * s, a.z * s}; }
inline Vec3 operator*(double s, const Vec3& a) { return a * s; }
inline Vec3 operator/(const Vec3& a, double s) { return {a.x / s, a.y / s, a.z / s}; }
inline Vec3& operator+=(Vec3& a, const Vec3& b) { a = a + b; return a; }
inline Vec3& operator-=(Vec3& a, const Vec3& b) { a = a - b; return a; }
inline bool operator==(const Vec3& a, const Vec3& b) { return a.x == b.x && a.y == b.y && a.z == b.z; }

inline double dot(const Vec3& a, const Vec3& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
inline Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
inline double norm2(const Vec3& a) { return dot(a, a); }
inline double norm(const Vec3& a) { return std::sqrt(norm2(a)); }
inline Vec3 normalized(const Vec3& a) {
  double n = norm(a);
  return n > 0.0 ? a / n : Vec3{0.0, 0.0, 0.0};
}
inline Vec3 min(const Vec3& a, const Vec3& b) {
  return {std::min(a.x, b.x), std::min(a.y, b.y), std::min(a.z, b.z)};
}
inline Vec3 max(const Vec3& a, const Vec3& b) {
  return {std::max(a.x, b.x), std::max(a.y, b.y), std::max(a.z, b.z)};
}

struct Aabb {
  Vec3 lo{std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity(),
          std::numeric_limits<double>::infinity()};
  Vec3 hi{-std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity(),
          -std::numeric_limits<double>::infinity()};

  void expand(const Vec3& p) { lo = min(lo, p); hi = max(hi, p); }
  void expand(const Aabb& b) { lo = min(lo, b.lo); hi = max(hi, b.hi); }
  Vec3 center() const { return (lo + hi) * 0.5; }
  Vec3 extent() const { return hi - lo; }
  bool valid() const { return lo.x <= hi.x && lo.y <= hi.y && lo.z <= hi.z; }
  int longest_axis() const {
    Vec3 e = extent();
    if (e.x >= e.y && e.x >= e.z) return 0;
    return e.y >= e.z ? 1 : 2;
  }
};

// Maps canonical-cube coordinates back to the original mesh frame:
// original = scale * canonical + translation.
struct SimilarityTransform {
  double scale = 1.0;
  Vec3 translation{0.0, 0.0, 0.0};

  Vec3 apply(const Vec3& p) const { return p * scale + translation; }
  Vec3 apply_inverse(const Vec3& p) const { return (p - translation) / scale; }
};

// 3x3 rotation stored row-major, with an optional translation.
struct RigidTransform {
  double r[3][3] = {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
  Vec3 t{0.0, 0.0, 0.0};

  Vec3 apply(const Vec3& p) const {
    return {r[0][0] * p.x + r[0][1] * p.y + r[0][2] * p.z + t.x,
            r[1][0] * p.x + r[1][1] * p.y + r[1][2] * p.z + t.y,
            r[2][0] * p.x + r[2][1] * p.y + r[2][2] * p.z + t.z};
  }
  Vec3 rotate(const Vec3& p) const {
    return {r[0][0] * p.x + r[0][1] * p.y + r[0][2] * p.z,
            r[1][0] * p.x + r[1][1] * p.y + r[1][2] * p.z,
            r[2][0] * p.x + r[2][1] * p.y + r[2][2] * p.z};
  }

  static RigidTransform yaw_about_y(double degrees) {
    double rad = degrees * (3.14159265358979323846 / 180.0);
    double c = std::cos(rad), s = std::sin(rad);
    RigidTransform m;
    m.r[0][0] = c;  m.r[0][1] = 0; m.r[0][2] = s;
    m.r[1][0] = 0;  m.r[1][1] = 1; m.r[1][2] = 0;
    m.r[2][0] = -s; m.r[2][1] = 0; m.r[2][2] = c;
    return m;
  }
  static RigidTransform axis_angle(const Vec3& axis, double radians, const Vec3& translation = {}) {
    Vec3 u = normalized(axis);
    double c = std::cos(radians), s = std::sin(radians), k = 1.0 - c;
    RigidTransform m;
    m.r[0][0] = c + u.x * u.x * k;
    m.r[0][1] = u.x * u.y * k - u.z * s;
    m.r[0][2] = u.x * u.z * k + u.y * s;
    m.r[1][0] = u.y * u.x * k + u.z * s;
    m.r[1][1] = c + u.y * u.y * k;
    m.r[1][2] = u.y * u.z * k - u.x * s;
    m.r[2][0] = u.z * u.x * k - u.y * s;
    m.r[2][1] = u.z * u.y * k + u.x * s;
    m.r[2][2] = c + u.z * u.z * k;
    m.t = translation;
    return m;
  }
};

// splitmix64; used wherever the artifact needs seeded randomness so results do
// not depend on the standard library's distribution implementations.
struct Rng {
  uint64_t state;

  explicit Rng(uint64_t seed) : state(seed) {}

  uint64_t next_u64() {
    uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }
  // uniform in [0, 1)
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }
  // uniform in [lo, hi)
  double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }
  // uniform integer in [0, n)
  uint64_t next_below(uint64_t n) { return next_u64() % n; }
};

constexpr double kInf = std::numeric_limits<double>::infinity();

}  // namespace tifu
