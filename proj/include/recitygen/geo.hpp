#pragma once

namespace recitygen {

inline constexpr double kEarthRadiusM = 6371008.8;

struct GeoPoint {
  double lat = 0.0;
  double lon = 0.0;

  bool operator==(const GeoPoint&) const = default;
};

// Finite, lat within [-90, 90], lon within [-180, 180].
bool is_valid(const GeoPoint& p) noexcept;

// Great-circle distance in meters on the mean-radius sphere.
double haversine_m(const GeoPoint& a, const GeoPoint& b) noexcept;

}  // namespace recitygen
