#include "ift/signal.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "ift/csv.hpp"
#include "ift/error.hpp"

namespace ift::signal {

namespace {

constexpr const char* kCsvHeader = "t,lax,lay,laz,lgx,lgy,lgz,rax,ray,raz,rgx,rgy,rgz";

// Reflect an out-of-range index into [0, n) without repeating the edge
// sample (…x2 x1 | x0 x1 x2…).
int64_t reflect_index(int64_t idx, int64_t n) {
  if (n == 1) return 0;
  while (idx < 0 || idx >= n) {
    if (idx < 0) idx = -idx;
    if (idx >= n) idx = 2 * (n - 1) - idx;
  }
  return idx;
}

}  // namespace

void ImuStream::validate() const {
  for (size_t i = 1; i < samples.size(); ++i) {
    if (!(samples[i].t > samples[i - 1].t)) {
      throw Error(ErrorKind::Data, "timestamps must be strictly increasing (sample " +
                                       std::to_string(i) + ": " + std::to_string(samples[i].t) +
                                       " after " + std::to_string(samples[i - 1].t) + ")");
    }
  }
}

double ImuStream::span_seconds() const {
  if (samples.size() < 2) return 0.0;
  return samples.back().t - samples.front().t;
}

ImuStream ImuStream::read_csv(const std::filesystem::path& path) {
  const io::CsvTable table = io::read_numeric_csv(path);
  std::string header;
  for (size_t i = 0; i < table.header.size(); ++i) header += (i ? "," : "") + table.header[i];
  if (header != kCsvHeader) {
    throw Error(ErrorKind::Data, path.string() + ": expected header '" + kCsvHeader + "', got '" + header + "'");
  }
  ImuStream s;
  s.samples.reserve(table.rows.size());
  for (const auto& row : table.rows) {
    ImuSample smp;
    smp.t = row[0];
    for (int c = 0; c < kChannels; ++c) smp.ch[static_cast<size_t>(c)] = row[static_cast<size_t>(c) + 1];
    s.samples.push_back(smp);
  }
  s.validate();
  return s;
}

void ImuStream::write_csv(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw Error(ErrorKind::Data, "cannot open for writing: " + path.string());
  os << kCsvHeader << "\n";
  for (const auto& s : samples) {
    os << io::format_double(s.t);
    for (double v : s.ch) os << ',' << io::format_double(v);
    os << "\n";
  }
  if (!os) throw Error(ErrorKind::Data, "write failed: " + path.string());
}

CalibrationOffset compute_offset(const ImuStream& stream, double duration_s) {
  if (stream.samples.size() < 2) {
    throw Error(ErrorKind::Data, "calibration needs at least 2 samples, got " +
                                     std::to_string(stream.samples.size()));
  }
  if (stream.span_seconds() < duration_s) {
    throw Error(ErrorKind::Data, "calibration window of " + std::to_string(duration_s) +
                                     " s exceeds available span of " +
                                     std::to_string(stream.span_seconds()) + " s");
  }
  const double t0 = stream.samples.front().t;
  CalibrationOffset off;
  int64_t count = 0;
  for (const auto& s : stream.samples) {
    if (s.t - t0 >= duration_s) break;
    for (int c = 0; c < kChannels; ++c) off.offset[static_cast<size_t>(c)] += s.ch[static_cast<size_t>(c)];
    ++count;
  }
  for (auto& v : off.offset) v /= static_cast<double>(count);
  return off;
}

ImuStream apply_calibration(const ImuStream& stream, const CalibrationOffset& offset) {
  ImuStream out = stream;
  for (auto& s : out.samples) {
    for (int g : kGyroChannels) s.ch[static_cast<size_t>(g)] -= offset.offset[static_cast<size_t>(g)];
  }
  return out;
}

ImuStream synchronize_and_resample(const ImuStream& stream, double video_start, double rate_hz) {
  if (rate_hz <= 0.0) throw Error(ErrorKind::Config, "resample rate must be positive");
  if (stream.samples.size() < 2) {
    throw Error(ErrorKind::Data, "resampling needs at least 2 samples");
  }
  const double t_first = stream.samples.front().t;
  const double t_last = stream.samples.back().t;
  if (video_start < t_first || video_start > t_last) {
    throw Error(ErrorKind::Data, "video start " + std::to_string(video_start) +
                                     " outside stream span [" + std::to_string(t_first) + ", " +
                                     std::to_string(t_last) + "]");
  }

  // closest sample timestamp to the video start
  size_t lo = 0;
  {
    size_t a = 0, b = stream.samples.size() - 1;
    while (b - a > 1) {
      const size_t mid = (a + b) / 2;
      if (stream.samples[mid].t <= video_start)
        a = mid;
      else
        b = mid;
    }
    lo = (video_start - stream.samples[a].t <= stream.samples[b].t - video_start) ? a : b;
  }
  const double t0 = stream.samples[lo].t;

  ImuStream out;
  size_t j = 0;
  for (int64_t k = 0;; ++k) {
    const double tk = t0 + static_cast<double>(k) / rate_hz;
    if (tk > t_last + 1e-9) break;
    while (j + 1 < stream.samples.size() && stream.samples[j + 1].t <= tk) ++j;
    ImuSample smp;
    smp.t = tk;
    if (stream.samples[j].t == tk || j + 1 == stream.samples.size()) {
      smp.ch = stream.samples[j].ch;
    } else {
      const auto& a = stream.samples[j];
      const auto& b = stream.samples[j + 1];
      const double alpha = (tk - a.t) / (b.t - a.t);
      for (int c = 0; c < kChannels; ++c) {
        smp.ch[static_cast<size_t>(c)] =
            (1.0 - alpha) * a.ch[static_cast<size_t>(c)] + alpha * b.ch[static_cast<size_t>(c)];
      }
    }
    out.samples.push_back(smp);
  }
  return out;
}

ImuStream highpass_filter(const ImuStream& stream, double cutoff_hz) {
  if (stream.samples.size() < 3) throw Error(ErrorKind::Data, "high-pass filter needs at least 3 samples");
  const double dt = stream.samples[1].t - stream.samples[0].t;
  for (size_t i = 1; i < stream.samples.size(); ++i) {
    const double gap = stream.samples[i].t - stream.samples[i - 1].t;
    if (std::abs(gap - dt) > 1e-6) {
      throw Error(ErrorKind::Data, "high-pass filter requires a uniform stream; gap at sample " +
                                       std::to_string(i) + " is " + std::to_string(gap) +
                                       " s vs nominal " + std::to_string(dt) + " s");
    }
  }
  const double fs = 1.0 / dt;
  if (cutoff_hz <= 0.0 || cutoff_hz >= fs / 2.0) {
    throw Error(ErrorKind::Config, "cutoff " + std::to_string(cutoff_hz) +
                                       " Hz outside (0, " + std::to_string(fs / 2.0) + ")");
  }

  // bilinear-transform Butterworth biquad (Q = 1/sqrt(2))
  const double K = std::tan(M_PI * cutoff_hz / fs);
  const double norm = 1.0 / (1.0 + std::sqrt(2.0) * K + K * K);
  const double b0 = norm, b1 = -2.0 * norm, b2 = norm;
  const double a1 = 2.0 * (K * K - 1.0) * norm;
  const double a2 = (1.0 - std::sqrt(2.0) * K + K * K) * norm;

  ImuStream out = stream;
  for (int c = 0; c < kChannels; ++c) {
    double x1 = 0.0, x2 = 0.0, y1 = 0.0, y2 = 0.0;
    for (auto& s : out.samples) {
      const double x0 = s.ch[static_cast<size_t>(c)];
      const double y0 = b0 * x0 + b1 * x1 + b2 * x2 - a1 * y1 - a2 * y2;
      x2 = x1;
      x1 = x0;
      y2 = y1;
      y1 = y0;
      s.ch[static_cast<size_t>(c)] = y0;
    }
  }
  return out;
}

Tensor stft_channel(const std::vector<double>& x, int window_len, int hop, int nfft) {
  if (x.empty()) throw Error(ErrorKind::Data, "stft of an empty signal");
  if (hop < 1 || window_len < 1 || nfft < window_len) {
    throw Error(ErrorKind::Config, "invalid stft configuration");
  }
  const int64_t n = static_cast<int64_t>(x.size());
  const int bins = nfft / 2 + 1;

  // periodic Hann window
  std::vector<double> win(static_cast<size_t>(window_len));
  for (int i = 0; i < window_len; ++i) {
    win[static_cast<size_t>(i)] = 0.5 * (1.0 - std::cos(2.0 * M_PI * i / window_len));
  }

  // DFT twiddle tables for the one-sided bins
  std::vector<double> ct(static_cast<size_t>(bins * nfft)), st(static_cast<size_t>(bins * nfft));
  for (int k = 0; k < bins; ++k) {
    for (int j = 0; j < nfft; ++j) {
      const double ang = -2.0 * M_PI * k * j / nfft;
      ct[static_cast<size_t>(k * nfft + j)] = std::cos(ang);
      st[static_cast<size_t>(k * nfft + j)] = std::sin(ang);
    }
  }

  const int64_t frames = (n + hop - 1) / hop;
  Tensor out({frames, bins});
  std::vector<double> frame(static_cast<size_t>(nfft), 0.0);
  const int64_t half = window_len / 2;
  for (int64_t f = 0; f < frames; ++f) {
    const int64_t center = f * hop;
    for (int j = 0; j < window_len; ++j) {
      const int64_t idx = reflect_index(center - half + j, n);
      frame[static_cast<size_t>(j)] = x[static_cast<size_t>(idx)] * win[static_cast<size_t>(j)];
    }
    for (int j = window_len; j < nfft; ++j) frame[static_cast<size_t>(j)] = 0.0;
    for (int k = 0; k < bins; ++k) {
      double re = 0.0, im = 0.0;
      const double* c = ct.data() + k * nfft;
      const double* s = st.data() + k * nfft;
      for (int j = 0; j < nfft; ++j) {
        re += frame[static_cast<size_t>(j)] * c[j];
        im += frame[static_cast<size_t>(j)] * s[j];
      }
      out.at(f, k) = std::sqrt(re * re + im * im);
    }
  }
  return out;
}

Tensor build_frame_features(const ImuStream& stream) {
  if (stream.empty()) throw Error(ErrorKind::Data, "cannot featurize an empty stream");
  const int64_t frames = static_cast<int64_t>(stream.size());
  Tensor features({frames, kFrameFeatureDim});

  std::vector<double> channel(static_cast<size_t>(frames));
  for (int c = 0; c < kChannels; ++c) {
    for (int64_t f = 0; f < frames; ++f) {
      channel[static_cast<size_t>(f)] = stream.samples[static_cast<size_t>(f)].ch[static_cast<size_t>(c)];
    }
    const Tensor spec = stft_channel(channel);
    for (int64_t f = 0; f < frames; ++f) {
      features.at(f, c) = channel[static_cast<size_t>(f)];
      for (int k = 0; k < kFreqBins; ++k) {
        features.at(f, kChannels + c * kFreqBins + k) = spec.at(f, k);
      }
    }
  }
  return features;
}

std::vector<WindowRef> segment_windows(int64_t frame_count, int64_t window, int64_t stride) {
  if (window < 1 || stride < 1) throw Error(ErrorKind::Config, "window and stride must be positive");
  if (frame_count < window) {
    throw Error(ErrorKind::Data, "sequence of " + std::to_string(frame_count) +
                                     " frames is shorter than the window of " + std::to_string(window));
  }
  std::vector<WindowRef> refs;
  for (int64_t start = 0; start + window <= frame_count; start += stride) {
    refs.push_back({start, start + window - 1});
  }
  return refs;
}

Tensor copy_window(const Tensor& features, int64_t start, int64_t len) {
  const int64_t dim = features.shape[1];
  Tensor w({len, dim});
  std::copy(features.data.begin() + start * dim, features.data.begin() + (start + len) * dim,
            w.data.begin());
  return w;
}

}  // namespace ift::signal
