#include "hpbm/site_io.hpp"

#include "hpbm/error.hpp"

#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>

namespace hpbm::io {

namespace {

constexpr std::string_view kHeader = "timestamp,precip_mm,air_temp_c,pet_mm,theta_obs";

int digits(std::string_view s, std::size_t pos, std::size_t count) {
  if (pos + count > s.size()) throw InvalidInput("truncated timestamp");
  int v = 0;
  for (std::size_t i = pos; i < pos + count; ++i) {
    if (s[i] < '0' || s[i] > '9') throw InvalidInput("expected a digit in timestamp '" + std::string(s) + "'");
    v = v * 10 + (s[i] - '0');
  }
  return v;
}

void expect(std::string_view s, std::size_t pos, char c) {
  if (pos >= s.size() || s[pos] != c) {
    throw InvalidInput("expected '" + std::string(1, c) + "' in timestamp '" + std::string(s) + "'");
  }
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == ' ')) s.remove_suffix(1);
  while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
  return s;
}

double parse_number(std::string_view field, const char* column, std::size_t line) {
  field = trim(field);
  double v = 0.0;
  const char* first = field.data();
  const char* last = field.data() + field.size();
  if (!field.empty() && *first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, last, v);
  if (field.empty() || ec != std::errc() || ptr != last) {
    throw DataError(std::string(column) + ": cannot parse '" + std::string(field) + "'", line);
  }
  return v;
}

}  // namespace

std::int64_t parse_rfc3339(std::string_view s) {
  s = trim(s);
  const int year = digits(s, 0, 4);
  expect(s, 4, '-');
  const int month = digits(s, 5, 2);
  expect(s, 7, '-');
  const int day = digits(s, 8, 2);
  if (s.size() < 11 || (s[10] != 'T' && s[10] != 't')) throw InvalidInput("expected 'T' in timestamp '" + std::string(s) + "'");
  const int hour = digits(s, 11, 2);
  expect(s, 13, ':');
  const int minute = digits(s, 14, 2);
  expect(s, 16, ':');
  const int second = digits(s, 17, 2);

  namespace chr = std::chrono;
  const chr::year_month_day ymd{chr::year{year}, chr::month{static_cast<unsigned>(month)},
                                chr::day{static_cast<unsigned>(day)}};
  if (!ymd.ok() || hour > 23 || minute > 59 || second > 59) {
    throw InvalidInput("timestamp out of range: '" + std::string(s) + "'");
  }

  std::int64_t offset = 0;
  const std::size_t zone = 19;
  if (zone >= s.size()) throw InvalidInput("timestamp lacks a UTC offset: '" + std::string(s) + "'");
  if (s[zone] == 'Z' || s[zone] == 'z') {
    if (s.size() != zone + 1) throw InvalidInput("trailing text in timestamp '" + std::string(s) + "'");
  } else if (s[zone] == '+' || s[zone] == '-') {
    const int oh = digits(s, zone + 1, 2);
    expect(s, zone + 3, ':');
    const int om = digits(s, zone + 4, 2);
    if (s.size() != zone + 6 || oh > 23 || om > 59) throw InvalidInput("bad UTC offset in '" + std::string(s) + "'");
    offset = (s[zone] == '+' ? 1 : -1) * (oh * 3600 + om * 60);
  } else {
    throw InvalidInput("fractional seconds or bad offset in '" + std::string(s) + "'");
  }

  const std::int64_t days = chr::sys_days{ymd}.time_since_epoch().count();
  return days * 86400 + hour * 3600 + minute * 60 + second - offset;
}

std::string format_rfc3339(std::int64_t seconds) {
  namespace chr = std::chrono;
  std::int64_t days = seconds / 86400;
  std::int64_t rem = seconds % 86400;
  if (rem < 0) {
    rem += 86400;
    --days;
  }
  const chr::year_month_day ymd{chr::sys_days{chr::days{days}}};
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02d:%02d:%02dZ", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()), static_cast<int>(rem / 3600),
                static_cast<int>(rem / 60 % 60), static_cast<int>(rem % 60));
  return buf;
}

std::string format_double(double value) {
  if (std::isnan(value)) return "nan";
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, value);
  (void)ec;
  return std::string(buf, ptr);
}

SiteData read_site_csv(std::istream& in, std::string name) {
  SiteData site;
  site.name = std::move(name);
  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(in, line)) throw DataError("empty site file");
  ++line_no;
  if (trim(line) != kHeader) throw DataError("expected header '" + std::string(kHeader) + "'", line_no);

  std::int64_t previous = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string_view row = trim(line);
    if (row.empty()) continue;
    std::string_view fields[5];
    std::size_t count = 0;
    std::size_t begin = 0;
    while (true) {
      const std::size_t comma = row.find(',', begin);
      if (count == 5) throw DataError("expected 5 columns", line_no);
      fields[count++] = row.substr(begin, comma == std::string_view::npos ? std::string_view::npos : comma - begin);
      if (comma == std::string_view::npos) break;
      begin = comma + 1;
    }
    if (count != 5) throw DataError("expected 5 columns, found " + std::to_string(count), line_no);

    std::int64_t t = 0;
    try {
      t = parse_rfc3339(fields[0]);
    } catch (const InvalidInput& e) {
      throw DataError(e.what(), line_no);
    }
    if (site.forcing.empty()) {
      site.start_time = t;
    } else if (t <= previous) {
      throw DataError("timestamps must be strictly increasing", line_no);
    } else if (t - previous != kStepSeconds) {
      throw DataError("expected a 30-minute step, found " + std::to_string(t - previous) + " s", line_no);
    }
    previous = t;

    pbm::Forcing f;
    f.precip = parse_number(fields[1], "precip_mm", line_no);
    f.air_temp = parse_number(fields[2], "air_temp_c", line_no);
    f.pet = parse_number(fields[3], "pet_mm", line_no);
    if (!std::isfinite(f.precip) || !std::isfinite(f.air_temp) || !std::isfinite(f.pet)) {
      throw DataError("forcing must be finite", line_no);
    }
    if (f.precip < 0.0 || f.pet < 0.0) throw DataError("precip_mm and pet_mm must be nonnegative", line_no);
    double theta = std::numeric_limits<double>::quiet_NaN();
    if (!trim(fields[4]).empty()) {
      theta = parse_number(fields[4], "theta_obs", line_no);
      if (!std::isfinite(theta)) throw DataError("theta_obs must be finite or empty", line_no);
    }
    site.forcing.push_back(f);
    site.observations.push_back(theta);
  }
  if (site.forcing.empty()) throw DataError("site file has no data rows");
  return site;
}

SiteData read_site_csv(const std::filesystem::path& path, std::string name) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot open site file " + path.string());
  if (name.empty()) name = path.stem().string();
  return read_site_csv(in, std::move(name));
}

void write_site_csv(std::ostream& out, const SiteData& site) {
  if (site.observations.size() != site.forcing.size()) throw InvalidInput("site series are misaligned");
  out << kHeader << '\n';
  for (std::size_t t = 0; t < site.size(); ++t) {
    const pbm::Forcing& f = site.forcing[t];
    out << format_rfc3339(site.time_at(t)) << ',' << format_double(f.precip) << ',' << format_double(f.air_temp)
        << ',' << format_double(f.pet) << ',';
    if (std::isfinite(site.observations[t])) out << format_double(site.observations[t]);
    out << '\n';
  }
}

void write_site_csv(const std::filesystem::path& path, const SiteData& site) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidInput("cannot write " + path.string());
  write_site_csv(out, site);
  if (!out) throw InvalidInput("write failed for " + path.string());
}

}  // namespace hpbm::io
