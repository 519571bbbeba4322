#include "recitygen/geo.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace recitygen {

bool is_valid(const GeoPoint& p) noexcept {
  return std::isfinite(p.lat) && std::isfinite(p.lon) && p.lat >= -90.0 && p.lat <= 90.0 &&
         p.lon >= -180.0 && p.lon <= 180.0;
}

double haversine_m(const GeoPoint& a, const GeoPoint& b) noexcept {
  constexpr double rad = std::numbers::pi / 180.0;
  const double sin_dlat = std::sin((b.lat - a.lat) * rad / 2.0);
  const double sin_dlon = std::sin((b.lon - a.lon) * rad / 2.0);
  const double h =
      sin_dlat * sin_dlat + std::cos(a.lat * rad) * std::cos(b.lat * rad) * sin_dlon * sin_dlon;
  return 2.0 * kEarthRadiusM * std::asin(std::sqrt(std::clamp(h, 0.0, 1.0)));
}

}  // namespace recitygen
