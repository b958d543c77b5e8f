#pragma once

// Half-hourly site data: CSV ingestion and export.
//
//   timestamp,precip_mm,air_temp_c,pet_mm,theta_obs
//   2001-01-01T00:00:00Z,0,-3.5,0,0.31
//
// theta_obs may be empty (missing). Forcing columns may not.

#include "hpbm/pbm.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace hpbm::io {

inline constexpr std::int64_t kStepSeconds = 1800;

struct SiteData {
  std::string name;
  std::int64_t start_time = 0;  // unix seconds of the first row
  std::vector<pbm::Forcing> forcing;
  std::vector<double> observations;  // NaN where missing

  std::size_t size() const { return forcing.size(); }
  /// Whole 17520-step years in the record.
  int years() const { return static_cast<int>(forcing.size() / pbm::kStepsPerYear); }
  std::int64_t time_at(std::size_t step) const { return start_time + static_cast<std::int64_t>(step) * kStepSeconds; }
};

/// RFC 3339 date-time to unix seconds. Accepts 'Z' or a numeric offset and
/// whole seconds only. Throws InvalidInput.
std::int64_t parse_rfc3339(std::string_view text);
/// Unix seconds to "YYYY-MM-DDTHH:MM:SSZ".
std::string format_rfc3339(std::int64_t seconds);

/// Shortest decimal text that parses back to the same double.
std::string format_double(double value);

/// Throws DataError with the offending 1-based line on malformed rows,
/// non-finite or missing forcing, or timestamps that are not strictly
/// increasing at 30-minute steps.
SiteData read_site_csv(std::istream& in, std::string name = {});
SiteData read_site_csv(const std::filesystem::path& path, std::string name = {});

void write_site_csv(std::ostream& out, const SiteData& site);
void write_site_csv(const std::filesystem::path& path, const SiteData& site);

}  // namespace hpbm::io
