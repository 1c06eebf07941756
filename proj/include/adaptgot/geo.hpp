#pragma once

#include <cmath>
#include <numbers>

#include "adaptgot/error.hpp"

namespace adaptgot::geo {

inline constexpr double kEarthRadiusKm = 6371.0;

struct LatLon {
    double lat = 0.0;  // degrees
    double lon = 0.0;  // degrees

    friend bool operator==(const LatLon&, const LatLon&) = default;
};

inline constexpr double deg2rad(double d) { return d * std::numbers::pi / 180.0; }

inline bool in_bounds(LatLon p) {
    return std::isfinite(p.lat) && std::isfinite(p.lon) && p.lat >= -90.0 && p.lat <= 90.0 &&
           p.lon >= -180.0 && p.lon <= 180.0;
}

/// Great-circle distance in kilometers.
inline double haversine(LatLon a, LatLon b) {
    const double phi1 = deg2rad(a.lat);
    const double phi2 = deg2rad(b.lat);
    const double dphi = phi2 - phi1;
    const double dlambda = deg2rad(b.lon - a.lon);
    const double s1 = std::sin(dphi / 2.0);
    const double s2 = std::sin(dlambda / 2.0);
    double h = s1 * s1 + std::cos(phi1) * std::cos(phi2) * s2 * s2;
    h = std::min(1.0, std::max(0.0, h));
    return 2.0 * kEarthRadiusKm * std::asin(std::sqrt(h));
}

/// Initial bearing from a to b, clockwise from north, in [0, 2*pi).
inline double azimuth(LatLon a, LatLon b) {
    if (a.lat == b.lat && a.lon == b.lon) throw ValidationError("undefined bearing: identical points");
    const double phi1 = deg2rad(a.lat);
    const double phi2 = deg2rad(b.lat);
    const double dlambda = deg2rad(b.lon - a.lon);
    const double y = std::sin(dlambda) * std::cos(phi2);
    const double x = std::cos(phi1) * std::sin(phi2) - std::sin(phi1) * std::cos(phi2) * std::cos(dlambda);
    double theta = std::atan2(y, x);
    if (theta < 0.0) theta += 2.0 * std::numbers::pi;
    if (theta >= 2.0 * std::numbers::pi) theta -= 2.0 * std::numbers::pi;
    return theta;
}

/// Planar offset (east, north) in km of `p` on the tangent plane around `origin`.
/// Longitude difference wraps to [-180, 180).
struct PlanarKm {
    double east = 0.0;
    double north = 0.0;
};

inline PlanarKm local_offset(LatLon origin, LatLon p) {
    double dlon = p.lon - origin.lon;
    if (dlon >= 180.0) dlon -= 360.0;
    if (dlon < -180.0) dlon += 360.0;
    return {kEarthRadiusKm * deg2rad(dlon) * std::cos(deg2rad(origin.lat)),
            kEarthRadiusKm * deg2rad(p.lat - origin.lat)};
}

}  // namespace adaptgot::geo
