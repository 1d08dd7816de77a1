#pragma once

// File formats.
//
// Covariance file (binary, all fields little-endian):
//   char[8]   "GSOTCOV1"
//   uint32    0x01020304 (byte-order mark)
//   uint32    format version (1)
//   uint64    Q, F, T, N
//   uint64    has_seed, seed
//   float64   propagation speed
//   float64   positions[Q], grid[N] (radians), omegas[F]
//   for f in 0..F-1, t in 0..T-1:
//     float64 Re(R)[Q*Q], then Im(R)[Q*Q], column-major
//
// The JSON variant stores the same fields with each matrix as "re"/"im"
// arrays; doubles are printed in shortest round-trip form so reading it back
// is exact as well.

#include <array>
#include <bit>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "gsot/forward_model.hpp"
#include "gsot/scenario.hpp"
#include "gsot/solver.hpp"
#include "gsot/types.hpp"

namespace gsot {

using Json = nlohmann::ordered_json;

/// Ordered key/value pairs echoed into output headers.
using Metadata = std::vector<std::pair<std::string, std::string>>;

struct CovarianceFile {
  ArrayGeometry geometry;
  AngularGrid grid;
  FrequencyBank bank;
  CovarianceSequence data;
  std::optional<std::uint64_t> seed;

  void validate() const {
    detail::require(geometry.size() == data.num_sensors(),
                    "covariance file: geometry and matrices disagree on Q");
    detail::require(bank.size() == data.num_freqs(),
                    "covariance file: frequency bank and matrices disagree on F");
  }
};

/// Shortest decimal string that parses back to exactly `x`.
inline std::string format_double(double x) {
  std::array<char, 64> buf{};
  const auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), x);
  if (ec != std::errc()) throw NumericalError("format_double: conversion failed");
  return std::string(buf.data(), ptr);
}

namespace detail {

inline constexpr char kCovMagic[8] = {'G', 'S', 'O', 'T', 'C', 'O', 'V', '1'};
inline constexpr std::uint32_t kByteOrderMark = 0x01020304u;
inline constexpr std::uint32_t kCovVersion = 1;

class LeWriter {
 public:
  explicit LeWriter(std::ostream& os) : os_(os) {}

  void raw(const char* p, std::size_t n) { os_.write(p, static_cast<std::streamsize>(n)); }

  template <class U>
  void uint(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) os_.put(static_cast<char>((v >> (8 * i)) & 0xffu));
  }
  void f64(double x) { uint(std::bit_cast<std::uint64_t>(x)); }
  void f64s(const std::vector<double>& xs) {
    for (double x : xs) f64(x);
  }

 private:
  std::ostream& os_;
};

class LeReader {
 public:
  LeReader(std::istream& is, std::string origin) : is_(is), origin_(std::move(origin)) {}

  void raw(char* p, std::size_t n) {
    is_.read(p, static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is_.gcount()) != n) fail("truncated file");
  }

  template <class U>
  U uint() {
    unsigned char b[sizeof(U)];
    raw(reinterpret_cast<char*>(b), sizeof(U));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<U>(b[i]) << (8 * i));
    return v;
  }
  double f64() { return std::bit_cast<double>(uint<std::uint64_t>()); }
  std::vector<double> f64s(std::size_t n) {
    std::vector<double> out(n);
    for (auto& x : out) x = f64();
    return out;
  }

  [[noreturn]] void fail(const std::string& msg) const { throw InvalidInput(origin_ + ": " + msg); }

 private:
  std::istream& is_;
  std::string origin_;
};

inline std::ofstream open_out(const std::string& path, bool binary = false) {
  std::ofstream os(path, binary ? std::ios::binary : std::ios::out);
  if (!os) throw InvalidInput("cannot open '" + path + "' for writing");
  return os;
}

inline std::ifstream open_in(const std::string& path, bool binary = false) {
  std::ifstream is(path, binary ? std::ios::binary : std::ios::in);
  if (!is) throw InvalidInput("cannot open '" + path + "'");
  return is;
}

inline void finish(std::ofstream& os, const std::string& path) {
  os.flush();
  if (!os) throw InvalidInput("write to '" + path + "' failed");
}

// Sanity cap on header dimensions so a corrupt header cannot request
// absurd allocations.
inline constexpr std::uint64_t kMaxDim = std::uint64_t{1} << 24;

}  // namespace detail

// ---------------------------------------------------------------------------
// covariance files
// ---------------------------------------------------------------------------

inline void write_covariance_binary(std::ostream& os, const CovarianceFile& file) {
  file.validate();
  const auto& d = file.data;
  const std::size_t Q = d.num_sensors();
  detail::LeWriter w(os);
  w.raw(detail::kCovMagic, sizeof(detail::kCovMagic));
  w.uint(detail::kByteOrderMark);
  w.uint(detail::kCovVersion);
  w.uint(static_cast<std::uint64_t>(Q));
  w.uint(static_cast<std::uint64_t>(d.num_freqs()));
  w.uint(static_cast<std::uint64_t>(d.num_times()));
  w.uint(static_cast<std::uint64_t>(file.grid.size()));
  w.uint(static_cast<std::uint64_t>(file.seed.has_value()));
  w.uint(file.seed.value_or(0));
  w.f64(file.geometry.propagation_speed());
  w.f64s(file.geometry.positions());
  w.f64s(file.grid.points());
  w.f64s(file.bank.omegas());
  for (const CMat& R : d.matrices()) {
    for (Eigen::Index k = 0; k < R.size(); ++k) w.f64(R.data()[k].real());
    for (Eigen::Index k = 0; k < R.size(); ++k) w.f64(R.data()[k].imag());
  }
}

inline CovarianceFile read_covariance_binary(std::istream& is, const std::string& origin = "<stream>") {
  detail::LeReader r(is, origin);
  char magic[8];
  r.raw(magic, sizeof(magic));
  if (std::memcmp(magic, detail::kCovMagic, sizeof(magic)) != 0) r.fail("not a covariance file");
  if (r.uint<std::uint32_t>() != detail::kByteOrderMark) r.fail("bad byte-order mark");
  const auto version = r.uint<std::uint32_t>();
  if (version != detail::kCovVersion) r.fail("unsupported version " + std::to_string(version));
  const auto Q = r.uint<std::uint64_t>();
  const auto F = r.uint<std::uint64_t>();
  const auto T = r.uint<std::uint64_t>();
  const auto N = r.uint<std::uint64_t>();
  for (auto dim : {Q, F, T, N})
    if (dim == 0 || dim > detail::kMaxDim) r.fail("invalid dimension in header");
  const auto has_seed = r.uint<std::uint64_t>();
  const auto seed = r.uint<std::uint64_t>();
  const double speed = r.f64();
  auto positions = r.f64s(Q);
  auto grid = r.f64s(N);
  auto omegas = r.f64s(F);

  const auto q = static_cast<Eigen::Index>(Q);
  std::vector<CMat> mats;
  mats.reserve(F * T);
  for (std::uint64_t k = 0; k < F * T; ++k) {
    CMat R(q, q);
    for (Eigen::Index i = 0; i < R.size(); ++i) R.data()[i] = Complex(r.f64(), 0.0);
    for (Eigen::Index i = 0; i < R.size(); ++i) R.data()[i].imag(r.f64());
    mats.push_back(std::move(R));
  }
  if (is.peek() != std::char_traits<char>::eof()) r.fail("trailing bytes after last matrix");

  CovarianceFile out{ArrayGeometry(std::move(positions), speed), AngularGrid(std::move(grid)),
                     FrequencyBank(std::move(omegas)),
                     CovarianceSequence(F, T, std::move(mats)), std::nullopt};
  if (has_seed) out.seed = seed;
  return out;
}

inline Json covariance_to_json(const CovarianceFile& file) {
  file.validate();
  const auto& d = file.data;
  Json j;
  j["format"] = "gsot-covariance";
  j["version"] = detail::kCovVersion;
  j["Q"] = d.num_sensors();
  j["F"] = d.num_freqs();
  j["T"] = d.num_times();
  j["N"] = file.grid.size();
  j["seed"] = file.seed ? Json(*file.seed) : Json(nullptr);
  j["propagation_speed"] = file.geometry.propagation_speed();
  j["positions"] = file.geometry.positions();
  j["grid_rad"] = file.grid.points();
  j["omegas"] = file.bank.omegas();
  Json mats = Json::array();
  for (std::size_t f = 0; f < d.num_freqs(); ++f)
    for (std::size_t t = 0; t < d.num_times(); ++t) {
      const CMat& R = d(f, t);
      std::vector<double> re(static_cast<std::size_t>(R.size())), im(re.size());
      for (Eigen::Index k = 0; k < R.size(); ++k) {
        re[static_cast<std::size_t>(k)] = R.data()[k].real();
        im[static_cast<std::size_t>(k)] = R.data()[k].imag();
      }
      mats.push_back(Json{{"f", f + 1}, {"t", t + 1}, {"re", re}, {"im", im}});
    }
  j["matrices"] = std::move(mats);
  return j;
}

inline CovarianceFile covariance_from_json(const Json& j) {
  try {
    if (j.at("format").get<std::string>() != "gsot-covariance")
      throw InvalidInput("covariance JSON: unexpected format tag");
    const auto Q = j.at("Q").get<std::size_t>();
    const auto F = j.at("F").get<std::size_t>();
    const auto T = j.at("T").get<std::size_t>();
    const auto& mats = j.at("matrices");
    detail::require(mats.size() == F * T, "covariance JSON: expected F*T matrices");
    std::vector<CMat> out(F * T);
    for (const auto& m : mats) {
      const auto f = m.at("f").get<std::size_t>();
      const auto t = m.at("t").get<std::size_t>();
      detail::require(f >= 1 && f <= F && t >= 1 && t <= T, "covariance JSON: index out of range");
      const auto re = m.at("re").get<std::vector<double>>();
      const auto im = m.at("im").get<std::vector<double>>();
      detail::require(re.size() == Q * Q && im.size() == Q * Q, "covariance JSON: bad matrix size");
      CMat R(static_cast<Eigen::Index>(Q), static_cast<Eigen::Index>(Q));
      for (std::size_t k = 0; k < Q * Q; ++k) R.data()[k] = Complex(re[k], im[k]);
      out[(f - 1) * T + (t - 1)] = std::move(R);
    }
    for (const auto& R : out) detail::require(R.size() > 0, "covariance JSON: missing matrix");
    std::optional<std::uint64_t> seed;
    if (!j.at("seed").is_null()) seed = j.at("seed").get<std::uint64_t>();
    CovarianceFile file{ArrayGeometry(j.at("positions").get<std::vector<double>>(),
                                      j.at("propagation_speed").get<double>()),
                        AngularGrid(j.at("grid_rad").get<std::vector<double>>()),
                        FrequencyBank(j.at("omegas").get<std::vector<double>>()),
                        CovarianceSequence(F, T, std::move(out)), seed};
    file.validate();
    return file;
  } catch (const Json::exception& e) {
    throw InvalidInput(std::string("covariance JSON: ") + e.what());
  }
}

inline void write_covariance_file(const std::string& path, const CovarianceFile& file, bool json = false) {
  auto os = detail::open_out(path, !json);
  if (json)
    os << covariance_to_json(file).dump(1) << '\n';
  else
    write_covariance_binary(os, file);
  detail::finish(os, path);
}

/// Reads either variant; the format is detected from the first byte.
inline CovarianceFile read_covariance_file(const std::string& path) {
  auto is = detail::open_in(path, true);
  if (is.peek() == '{') {
    try {
      return covariance_from_json(Json::parse(is));
    } catch (const Json::parse_error& e) {
      throw InvalidInput(path + ": " + e.what());
    }
  }
  return read_covariance_binary(is, path);
}

// ---------------------------------------------------------------------------
// spectra
// ---------------------------------------------------------------------------

/// Long-format CSV, one row per (t, f, theta), preceded by "# key: value"
/// metadata lines. t and f are 1-based; theta is in degrees.
inline void write_spectrum_csv(std::ostream& os, const SpatioTemporalSpectrum& spec,
                               const AngularGrid& grid, const FrequencyBank& bank,
                               const Metadata& meta) {
  detail::require(spec.num_points() == grid.size() && spec.num_freqs() == bank.size(),
                  "write_spectrum_csv: spectrum does not match grid/bank");
  for (const auto& [k, v] : meta) os << "# " << k << ": " << v << '\n';
  os << "t,f,omega,theta_deg,power\n";
  for (std::size_t t = 0; t < spec.num_times(); ++t)
    for (std::size_t f = 0; f < spec.num_freqs(); ++f) {
      const Vec& phi = spec(f, t);
      const std::string om = format_double(bank[f]);
      for (std::size_t i = 0; i < grid.size(); ++i)
        os << t + 1 << ',' << f + 1 << ',' << om << ',' << format_double(rad2deg(grid[i])) << ','
           << format_double(phi(static_cast<Eigen::Index>(i))) << '\n';
    }
}

/// Frequency-averaged spatial spectrum: columns t, theta_deg, power.
inline void write_spatial_csv(std::ostream& os, const SpatioTemporalSpectrum& spec,
                              const AngularGrid& grid, const Metadata& meta) {
  for (const auto& [k, v] : meta) os << "# " << k << ": " << v << '\n';
  os << "t,theta_deg,power\n";
  const auto avg = spatial_average(spec);
  for (std::size_t t = 0; t < avg.size(); ++t)
    for (std::size_t i = 0; i < grid.size(); ++i)
      os << t + 1 << ',' << format_double(rad2deg(grid[i])) << ','
         << format_double(avg[t](static_cast<Eigen::Index>(i))) << '\n';
}

inline Json metadata_json(const Metadata& meta) {
  Json j = Json::object();
  for (const auto& [k, v] : meta) j[k] = v;
  return j;
}

inline Json spectrum_to_json(const SpatioTemporalSpectrum& spec, const AngularGrid& grid,
                             const FrequencyBank& bank, const Metadata& meta) {
  Json j;
  j["metadata"] = metadata_json(meta);
  std::vector<double> deg;
  for (double th : grid.points()) deg.push_back(rad2deg(th));
  j["theta_deg"] = deg;
  j["omegas"] = bank.omegas();
  Json rows = Json::array();
  for (std::size_t t = 0; t < spec.num_times(); ++t)
    for (std::size_t f = 0; f < spec.num_freqs(); ++f) {
      const Vec& phi = spec(f, t);
      rows.push_back(Json{{"t", t + 1}, {"f", f + 1}, {"power", std::vector<double>(phi.begin(), phi.end())}});
    }
  j["spectra"] = std::move(rows);
  return j;
}

/// Parses the long CSV written by write_spectrum_csv back into a spectrum.
inline SpatioTemporalSpectrum read_spectrum_csv(std::istream& is) {
  std::string line;
  std::size_t F = 0, T = 0, N = 0;
  struct Row {
    std::size_t t, f;
    double power;
  };
  std::vector<Row> rows;
  bool header = false;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (!header) {
      header = true;
      continue;
    }
    std::stringstream ss(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    detail::require(cells.size() == 5, "spectrum CSV: expected 5 columns");
    Row r{std::stoul(cells[0]), std::stoul(cells[1]), std::stod(cells[4])};
    T = std::max(T, r.t);
    F = std::max(F, r.f);
    rows.push_back(r);
  }
  detail::require(F > 0 && T > 0 && rows.size() % (F * T) == 0, "spectrum CSV: ragged table");
  N = rows.size() / (F * T);
  std::vector<Vec> phi(F * T, Vec(static_cast<Eigen::Index>(N)));
  std::vector<std::size_t> fill(F * T, 0);
  for (const auto& r : rows) {
    const std::size_t k = (r.f - 1) * T + (r.t - 1);
    detail::require(fill[k] < N, "spectrum CSV: ragged table");
    phi[k](static_cast<Eigen::Index>(fill[k]++)) = r.power;
  }
  return SpatioTemporalSpectrum(F, T, std::move(phi));
}

// ---------------------------------------------------------------------------
// reports
// ---------------------------------------------------------------------------

/// Solver diagnostics; wall-clock timings only when `timing` is set.
inline Json report_to_json(const SolveReport& rep, const Metadata& meta, bool timing) {
  Json j;
  j["metadata"] = metadata_json(meta);
  j["sweeps"] = rep.sweeps;
  j["converged"] = rep.converged;
  j["epsilon"] = rep.epsilon;
  j["final_rel_change"] = rep.final_rel_change;
  j["newton_iterations"] = rep.newton_iterations;
  j["newton_max_iterations"] = rep.newton_max_iterations;
  j["newton_failures"] = rep.newton_failures;
  j["max_newton_residual"] = rep.max_newton_residual;
  j["max_psi_l1inf"] = rep.max_psi_l1inf;
  j["max_objective_increase"] = rep.max_objective_increase;
  j["objective_trace"] = rep.objective_trace;
  if (timing) {
    double total = 0.0;
    for (double s : rep.sweep_seconds) total += s;
    j["total_seconds"] = total;
    j["sweep_seconds"] = rep.sweep_seconds;
  }
  return j;
}

inline void write_rmse_csv(std::ostream& os, const std::vector<RmseRow>& rows, const Metadata& meta) {
  for (const auto& [k, v] : meta) os << "# " << k << ": " << v << '\n';
  os << "snr_db,method,trials,rmse_deg,rmse_rad\n";
  for (const auto& r : rows)
    os << format_double(r.snr_db) << ',' << method_name(r.method) << ',' << r.trials << ','
       << format_double(rad2deg(r.rmse)) << ',' << format_double(r.rmse) << '\n';
}

inline Json rmse_to_json(const std::vector<RmseRow>& rows, const Metadata& meta) {
  Json j;
  j["metadata"] = metadata_json(meta);
  Json arr = Json::array();
  for (const auto& r : rows)
    arr.push_back(Json{{"snr_db", r.snr_db},
                       {"method", method_name(r.method)},
                       {"trials", r.trials},
                       {"rmse_deg", rad2deg(r.rmse)},
                       {"rmse_rad", r.rmse}});
  j["rows"] = std::move(arr);
  return j;
}

}  // namespace gsot
