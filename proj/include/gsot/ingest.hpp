#pragma once

// Multichannel recordings to covariance sequences: Hann-windowed STFT on a
// set of retained bins, per-bin exponential averaging of y y^H, decimation in
// time.
//
// Geometry convention: a plane wave from angle theta reaches sensor q as
// x_q(t) = s(t + p_q sin(theta) / c), which matches the steering vector
// exp(i omega p_q sin(theta) / c) under the exp(-i omega t) DFT kernel.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include <json.hpp>

#include "gsot/forward_model.hpp"
#include "gsot/parallel.hpp"
#include "gsot/types.hpp"

namespace gsot {

// ---------------------------------------------------------------------------
// WAV
// ---------------------------------------------------------------------------

enum class WavFormat { Pcm16, Pcm24, Pcm32, Float32 };

struct WavData {
  double sample_rate = 0.0;
  /// channels[q][n], samples scaled to [-1, 1) for PCM.
  std::vector<std::vector<double>> channels;

  std::size_t num_frames() const { return channels.empty() ? 0 : channels.front().size(); }
};

namespace detail {

inline std::uint32_t get_le(const unsigned char* p, int n) {
  std::uint32_t v = 0;
  for (int i = 0; i < n; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return v;
}

inline void put_le(std::string& out, std::uint32_t v, int n) {
  for (int i = 0; i < n; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

}  // namespace detail

/// Parses RIFF/WAVE bytes: PCM 16/24/32-bit or IEEE float32, including
/// WAVE_FORMAT_EXTENSIBLE wrappers.
inline WavData parse_wav(const std::string& bytes, const std::string& origin = "<wav>") {
  auto fail = [&](const std::string& m) -> void { throw InvalidInput(origin + ": " + m); };
  const auto* b = reinterpret_cast<const unsigned char*>(bytes.data());
  if (bytes.size() < 12 || std::memcmp(b, "RIFF", 4) != 0 || std::memcmp(b + 8, "WAVE", 4) != 0)
    fail("not a RIFF/WAVE file");

  int tag = -1, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  const unsigned char* data = nullptr;
  std::size_t data_len = 0;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const std::uint32_t len = detail::get_le(b + pos + 4, 4);
    const std::size_t body = pos + 8;
    if (len > bytes.size() - body) fail("chunk extends past end of file");
    if (std::memcmp(b + pos, "fmt ", 4) == 0) {
      if (len < 16) fail("fmt chunk too short");
      tag = static_cast<int>(detail::get_le(b + body, 2));
      channels = static_cast<int>(detail::get_le(b + body + 2, 2));
      rate = detail::get_le(b + body + 4, 4);
      bits = static_cast<int>(detail::get_le(b + body + 14, 2));
      if (tag == 0xFFFE) {
        if (len < 40) fail("extensible fmt chunk too short");
        tag = static_cast<int>(detail::get_le(b + body + 24, 2));
      }
    } else if (std::memcmp(b + pos, "data", 4) == 0) {
      data = b + body;
      data_len = len;
    }
    pos = body + len + (len & 1u);
  }
  if (tag < 0) fail("missing fmt chunk");
  if (!data) fail("missing data chunk");
  if (channels < 1) fail("no channels");
  if (rate == 0) fail("zero sample rate");
  const bool pcm = tag == 1 && (bits == 16 || bits == 24 || bits == 32);
  const bool flt = tag == 3 && bits == 32;
  if (!pcm && !flt)
    fail("unsupported sample format (tag " + std::to_string(tag) + ", " + std::to_string(bits) + " bits)");

  const std::size_t width = static_cast<std::size_t>(bits / 8);
  const std::size_t frame = width * static_cast<std::size_t>(channels);
  const std::size_t n = data_len / frame;
  WavData out;
  out.sample_rate = rate;
  out.channels.assign(static_cast<std::size_t>(channels), std::vector<double>(n));
  const double scale = std::ldexp(1.0, bits - 1);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < static_cast<std::size_t>(channels); ++c) {
      const unsigned char* p = data + i * frame + c * width;
      const std::uint32_t raw = detail::get_le(p, static_cast<int>(width));
      double x;
      if (flt) {
        float f;
        std::memcpy(&f, &raw, sizeof(f));
        x = f;
      } else {
        // sign-extend
        const std::uint32_t sign = 1u << (bits - 1);
        const std::int64_t v = static_cast<std::int64_t>(raw ^ sign) - static_cast<std::int64_t>(sign);
        x = static_cast<double>(v) / scale;
      }
      out.channels[c][i] = x;
    }
  return out;
}

inline WavData read_wav(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw InvalidInput("cannot open WAV file '" + path + "'");
  std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return parse_wav(bytes, path);
}

/// Encodes samples; PCM values are clipped to the representable range.
inline std::string encode_wav(const WavData& wav, WavFormat fmt) {
  detail::require(!wav.channels.empty(), "encode_wav: no channels");
  const std::size_t n = wav.num_frames();
  for (const auto& ch : wav.channels) detail::require(ch.size() == n, "encode_wav: channel length mismatch");
  detail::require(wav.sample_rate > 0 && wav.sample_rate < 4.3e9, "encode_wav: bad sample rate");
  const int bits = fmt == WavFormat::Pcm16 ? 16 : fmt == WavFormat::Pcm24 ? 24 : 32;
  const int width = bits / 8;
  const auto C = static_cast<std::uint32_t>(wav.channels.size());
  const auto rate = static_cast<std::uint32_t>(std::lround(wav.sample_rate));
  const std::uint32_t data_len = static_cast<std::uint32_t>(n) * C * static_cast<std::uint32_t>(width);

  std::string out = "RIFF";
  detail::put_le(out, 36 + data_len, 4);
  out += "WAVEfmt ";
  detail::put_le(out, 16, 4);
  detail::put_le(out, fmt == WavFormat::Float32 ? 3 : 1, 2);
  detail::put_le(out, C, 2);
  detail::put_le(out, rate, 4);
  detail::put_le(out, rate * C * static_cast<std::uint32_t>(width), 4);
  detail::put_le(out, C * static_cast<std::uint32_t>(width), 2);
  detail::put_le(out, static_cast<std::uint32_t>(bits), 2);
  out += "data";
  detail::put_le(out, data_len, 4);
  const double scale = std::ldexp(1.0, bits - 1);
  for (std::size_t i = 0; i < n; ++i)
    for (const auto& ch : wav.channels) {
      if (fmt == WavFormat::Float32) {
        const float f = static_cast<float>(ch[i]);
        std::uint32_t raw;
        std::memcpy(&raw, &f, sizeof(raw));
        detail::put_le(out, raw, 4);
      } else {
        const double v = std::clamp(std::round(ch[i] * scale), -scale, scale - 1.0);
        detail::put_le(out, static_cast<std::uint32_t>(static_cast<std::int64_t>(v)), width);
      }
    }
  return out;
}

inline void write_wav(const std::string& path, const WavData& wav, WavFormat fmt) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw InvalidInput("cannot open '" + path + "' for writing");
  const std::string bytes = encode_wav(wav, fmt);
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw InvalidInput("write to '" + path + "' failed");
}

/// Geometry sidecar: {"positions": [...], "propagation_speed": c}.
inline ArrayGeometry read_geometry_json(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw InvalidInput("cannot open geometry file '" + path + "'");
  try {
    const auto j = nlohmann::json::parse(is);
    return ArrayGeometry(j.at("positions").get<std::vector<double>>(),
                         j.at("propagation_speed").get<double>());
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput(path + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// STFT covariances
// ---------------------------------------------------------------------------

struct IngestConfig {
  double sample_rate = 0.0;     ///< Hz
  double window_seconds = 0.2;  ///< Hann window length
  double overlap = 0.5;
  double f_lo = 0.0;  ///< Hz
  double f_hi = 0.0;  ///< Hz
  std::size_t num_bins = 61;
  double rho = 0.9;
  /// Frames per output time index; 0 picks about 0.5 s per index.
  std::size_t decimation = 0;
  int threads = 1;

  void validate() const {
    detail::require(sample_rate > 0.0, "IngestConfig: sample rate must be > 0");
    detail::require(window_seconds > 0.0, "IngestConfig: window length must be > 0");
    detail::require(overlap > 0.0 && overlap < 1.0, "IngestConfig: overlap must be in (0, 1)");
    detail::require(rho > 0.0 && rho < 1.0, "IngestConfig: rho must be in (0, 1)");
    detail::require(f_lo >= 0.0 && f_lo < f_hi && f_hi <= sample_rate / 2.0,
                    "IngestConfig: need 0 <= f_lo < f_hi <= sample_rate / 2");
    detail::require(num_bins >= 1, "IngestConfig: need at least one bin");
    detail::require(threads >= 1, "IngestConfig: threads must be >= 1");
  }

  std::size_t window_samples() const {
    return static_cast<std::size_t>(std::lround(window_seconds * sample_rate));
  }
  std::size_t hop_samples() const {
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(
                                        static_cast<double>(window_samples()) * (1.0 - overlap))));
  }
};

inline std::size_t stft_frame_count(std::size_t length, std::size_t window, std::size_t hop) {
  return length < window ? 0 : (length - window) / hop + 1;
}

/// Periodic Hann window of length W.
inline std::vector<double> hann_window(std::size_t W) {
  std::vector<double> w(W);
  for (std::size_t n = 0; n < W; ++n)
    w[n] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(n) / static_cast<double>(W));
  return w;
}

/// F DFT bin indices evenly spaced by index between the first and last bin
/// inside [f_lo, f_hi] (DC excluded).
inline std::vector<std::size_t> select_bins(const IngestConfig& cfg) {
  const auto W = static_cast<double>(cfg.window_samples());
  const auto lo = static_cast<std::size_t>(std::max(1.0, std::ceil(cfg.f_lo * W / cfg.sample_rate - 1e-9)));
  const auto hi = static_cast<std::size_t>(std::floor(cfg.f_hi * W / cfg.sample_rate + 1e-9));
  if (hi < lo || hi - lo + 1 < cfg.num_bins)
    throw InvalidInput("ingest: band [" + std::to_string(cfg.f_lo) + ", " + std::to_string(cfg.f_hi) +
                       "] Hz holds fewer than " + std::to_string(cfg.num_bins) + " bins");
  std::vector<std::size_t> bins(cfg.num_bins);
  if (cfg.num_bins == 1) {
    bins[0] = (lo + hi) / 2;
  } else {
    for (std::size_t j = 0; j < cfg.num_bins; ++j)
      bins[j] = lo + static_cast<std::size_t>(std::llround(static_cast<double>(j) * static_cast<double>(hi - lo) /
                                                           static_cast<double>(cfg.num_bins - 1)));
  }
  return bins;
}

struct IngestResult {
  CovarianceSequence covariances;
  FrequencyBank bank;  ///< rad/s
  std::vector<std::size_t> bins;
  std::size_t frames = 0;
  std::size_t decimation = 0;
};

inline IngestResult stft_covariances(const std::vector<std::vector<double>>& signals,
                                     const IngestConfig& cfg) {
  cfg.validate();
  detail::require(!signals.empty(), "ingest: no channels");
  const std::size_t L = signals.front().size();
  for (const auto& ch : signals) detail::require(ch.size() == L, "ingest: channel lengths differ");
  const std::size_t W = cfg.window_samples();
  const std::size_t hop = cfg.hop_samples();
  detail::require(W >= 2, "ingest: window shorter than two samples");
  detail::require(L >= W, "ingest: signal shorter than one window");
  const std::size_t M = stft_frame_count(L, W, hop);
  const auto bins = select_bins(cfg);
  const std::size_t F = bins.size();
  const auto Q = static_cast<Eigen::Index>(signals.size());

  std::size_t D = cfg.decimation;
  if (D == 0) {
    const double hop_s = static_cast<double>(hop) / cfg.sample_rate;
    D = std::min<std::size_t>(M, std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(0.5 / hop_s))));
  }
  const std::size_t T = M / D;
  detail::require(T >= 1, "ingest: fewer frames than one decimation period");

  // signals as a Q x L matrix
  Mat X(Q, static_cast<Eigen::Index>(L));
  for (Eigen::Index q = 0; q < Q; ++q)
    X.row(q) = Eigen::Map<const Eigen::RowVectorXd>(signals[static_cast<std::size_t>(q)].data(),
                                                    static_cast<Eigen::Index>(L));
  const auto win = hann_window(W);

  std::vector<CMat> mats(F * T);
  std::vector<double> omegas(F);
  detail::parallel_for(F, cfg.threads, [&](std::size_t f) {
    const std::size_t k = bins[f];
    omegas[f] = 2.0 * std::numbers::pi * static_cast<double>(k) * cfg.sample_rate / static_cast<double>(W);
    CVec kernel(static_cast<Eigen::Index>(W));
    for (std::size_t n = 0; n < W; ++n) {
      // reduce k*n mod W first so the phase stays exact for long windows
      const double ph = -2.0 * std::numbers::pi * static_cast<double>((k * n) % W) / static_cast<double>(W);
      kernel(static_cast<Eigen::Index>(n)) = win[n] * std::polar(1.0, ph);
    }
    CMat R = CMat::Zero(Q, Q);
    for (std::size_t m = 0; m < M; ++m) {
      const CVec y = X.middleCols(static_cast<Eigen::Index>(m * hop), static_cast<Eigen::Index>(W))
                         .cast<Complex>() * kernel;
      const CMat yy = y * y.adjoint();
      if (m == 0)
        R = yy;
      else
        R = cfg.rho * R + (1.0 - cfg.rho) * yy;
      if ((m + 1) % D == 0 && (m + 1) / D <= T) mats[f * T + (m + 1) / D - 1] = 0.5 * (R + R.adjoint());
    }
  });
  return IngestResult{CovarianceSequence(F, T, std::move(mats)), FrequencyBank(std::move(omegas)), bins, M, D};
}

}  // namespace gsot
