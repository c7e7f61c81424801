#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "ift/tensor.hpp"

namespace ift::signal {

// Channel layout: left accel xyz, left gyro xyz, right accel xyz, right gyro
// xyz. Accelerometers in m/s^2, gyroscopes in rad/s.
constexpr int kChannels = 12;
constexpr std::array<int, 6> kGyroChannels = {3, 4, 5, 9, 10, 11};

constexpr int kStftWindow = 30;
constexpr int kStftHop = 1;
constexpr int kStftNfft = 32;
constexpr int kFreqBins = kStftNfft / 2 + 1;                       // 17
constexpr int kFrameFeatureDim = kChannels * (1 + kFreqBins);      // 12 + 204 = 216

struct ImuSample {
  double t = 0.0;
  std::array<double, kChannels> ch{};
};

struct ImuStream {
  std::vector<ImuSample> samples;

  // strictly increasing timestamps; throws Error(Data) otherwise
  void validate() const;
  double span_seconds() const;
  bool empty() const { return samples.empty(); }
  size_t size() const { return samples.size(); }

  // CSV with header t,lax,lay,laz,lgx,lgy,lgz,rax,ray,raz,rgx,rgy,rgz
  static ImuStream read_csv(const std::filesystem::path& path);
  void write_csv(const std::filesystem::path& path) const;
};

struct CalibrationOffset {
  std::array<double, kChannels> offset{};
};

// Magnitude spectrograms, one [frames x kFreqBins] matrix per channel.
struct Spectrogram {
  std::vector<Tensor> channels;
};

// Index-based sliding window over a feature sequence; the regression target
// is the landmark set of the window's last frame.
struct WindowRef {
  int64_t start = 0;
  int64_t target_frame = 0;
};

// Per-channel sample mean over the leading `duration_s` of the stream.
CalibrationOffset compute_offset(const ImuStream& stream, double duration_s = 4.0);

// Subtracts the offset on gyroscope channels only.
ImuStream apply_calibration(const ImuStream& stream, const CalibrationOffset& offset);

// Aligns the stream to `video_start` (closest sample timestamp) and
// resamples onto a uniform grid by linear interpolation.
ImuStream synchronize_and_resample(const ImuStream& stream, double video_start, double rate_hz = 30.0);

// Causal 2nd-order Butterworth high-pass per channel; requires a uniform
// stream (timestamps define the sampling rate).
ImuStream highpass_filter(const ImuStream& stream, double cutoff_hz = 0.1);

// Centered Hann-windowed magnitude STFT of one channel: reflect padding at
// the edges, zero padding window_len -> nfft, one-sided bins. hop=1 yields
// exactly one frame per input sample.
Tensor stft_channel(const std::vector<double>& x, int window_len = kStftWindow, int hop = kStftHop,
                    int nfft = kStftNfft);

// Feature sequence [frames x 216]: 12 time-domain values followed by 12x17
// spectrogram magnitudes (channel-major, bin-minor).
Tensor build_frame_features(const ImuStream& stream);

// Sliding windows over a [frames x dim] feature sequence.
std::vector<WindowRef> segment_windows(int64_t frame_count, int64_t window = 10, int64_t stride = 1);

// Materializes rows [start, start+len) of a feature sequence.
Tensor copy_window(const Tensor& features, int64_t start, int64_t len);

}  // namespace ift::signal
