#pragma once

// Hierarchical training objective as plain numeric functions: BCE-relaxed
// Hamming distance, per-bit error histogram, active-bit weights, mask loss.

#include "zebra/binary_io.hpp"
#include "zebra/renderer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <span>
#include <string>
#include <vector>

namespace zebra {

/// Per-pixel code-bit probabilities and mask probability, post-sigmoid.
struct PredictionMap {
  int width = 0, height = 0;
  unsigned digits = 0;
  std::vector<double> bits;  // pixel-major: bits[i * digits + j]
  std::vector<double> mask;  // one per pixel

  PredictionMap() = default;
  PredictionMap(int w, int h, unsigned d)
      : width(w), height(h), digits(d), bits(static_cast<std::size_t>(w) * h * d, 0.0),
        mask(static_cast<std::size_t>(w) * h, 0.0) {}

  std::size_t pixel_count() const { return mask.size(); }
  std::span<const double> pixel(std::size_t i) const { return {bits.data() + i * digits, digits}; }
  std::span<double> pixel(std::size_t i) { return {bits.data() + i * digits, digits}; }

  void validate() const {
    require(width >= 1 && height >= 1 && digits >= 1 && digits <= 62, "bad prediction map shape");
    require(mask.size() == static_cast<std::size_t>(width) * height && bits.size() == mask.size() * digits,
            "prediction map buffers do not match its shape");
    auto in_unit = [](double p) { return p >= 0.0 && p <= 1.0; };
    require(std::all_of(bits.begin(), bits.end(), in_unit) && std::all_of(mask.begin(), mask.end(), in_unit),
            "probabilities must lie in [0, 1]");
  }

  bool operator==(const PredictionMap&) const = default;
};

struct ErrorHistogram {
  std::vector<double> error;  // H_j, j = 1..d
  double lambda = 0.05;

  static ErrorHistogram zeros(unsigned digits, double lambda = 0.05) { return {std::vector<double>(digits, 0.0), lambda}; }
};

struct WeightVector {
  std::vector<double> w;
  double sigma = 0.5;

  static WeightVector uniform(unsigned digits) { return {std::vector<double>(digits, 1.0 / digits), 0.5}; }
};

struct LossParams {
  double alpha = 3.0;
  double epsilon = 1e-7;

  void validate() const {
    require(alpha >= 0, "alpha must be non-negative");
    require(epsilon > 0 && epsilon < 0.5, "epsilon must be in (0, 0.5)");
  }
};

/// Bit j of a binary code, j = 1 being the most significant of `digits`.
inline int code_bit(Code code, unsigned j, unsigned digits) { return static_cast<int>((code >> (digits - j)) & 1u); }

/// Rounds probabilities to bits (0.5 rounds up) and the mask likewise.
/// Pixels outside the rounded mask carry kInvalidCode.
inline CodeMap round_codes(const PredictionMap& pred) {
  pred.validate();
  CodeMap out(pred.width, pred.height, 2, pred.digits);
  for (std::size_t i = 0; i < pred.pixel_count(); ++i) {
    if (pred.mask[i] < 0.5) continue;
    Code c = 0;
    for (const double p : pred.pixel(i)) c = (c << 1) | (p >= 0.5 ? 1u : 0u);
    out.set(i, c, 0.0f);
  }
  return out;
}

/// sum_j w_j * -[b_j log p_j + (1 - b_j) log(1 - p_j)], p clamped to [eps, 1 - eps].
inline double hamming_bce(std::span<const double> b, std::span<const double> p, std::span<const double> w,
                          double epsilon = 1e-7) {
  require(b.size() == p.size() && p.size() == w.size(), "hamming_bce: length mismatch");
  double loss = 0;
  for (std::size_t j = 0; j < p.size(); ++j) {
    const double q = std::clamp(p[j], epsilon, 1.0 - epsilon);
    loss += w[j] * -(b[j] * std::log(q) + (1.0 - b[j]) * std::log(1.0 - q));
  }
  return loss;
}

inline double hamming_bce(std::span<const double> b, std::span<const double> p, double epsilon = 1e-7) {
  const std::vector<double> w(p.size(), p.empty() ? 0.0 : 1.0 / static_cast<double>(p.size()));
  return hamming_bce(b, p, w, epsilon);
}

/// d loss / d p_j = -w_j (b_j / p_j - (1 - b_j) / (1 - p_j)); zero where the clamp is active.
inline std::vector<double> hamming_bce_gradient(std::span<const double> b, std::span<const double> p,
                                                std::span<const double> w, double epsilon = 1e-7) {
  require(b.size() == p.size() && p.size() == w.size(), "hamming_bce_gradient: length mismatch");
  std::vector<double> g(p.size(), 0.0);
  for (std::size_t j = 0; j < p.size(); ++j) {
    if (p[j] < epsilon || p[j] > 1.0 - epsilon) continue;
    g[j] = -w[j] * (b[j] / p[j] - (1.0 - b[j]) / (1.0 - p[j]));
  }
  return g;
}

/// H_j <- lambda * err_j + (1 - lambda) * H_j, err_j the fraction of batch
/// codes whose bit j differs. An empty batch leaves the histogram unchanged.
inline ErrorHistogram update_histogram(const ErrorHistogram& hist, std::span<const Code> gt,
                                       std::span<const Code> pred) {
  require(gt.size() == pred.size(), "update_histogram: batch size mismatch");
  if (gt.empty()) return hist;
  const auto d = static_cast<unsigned>(hist.error.size());
  std::vector<std::size_t> wrong(d, 0);
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const Code diff = gt[i] ^ pred[i];
    for (unsigned j = 1; j <= d; ++j) wrong[j - 1] += code_bit(diff, j, d);
  }
  ErrorHistogram out = hist;
  for (unsigned j = 0; j < d; ++j) {
    const double err = static_cast<double>(wrong[j]) / static_cast<double>(gt.size());
    out.error[j] = hist.lambda * err + (1.0 - hist.lambda) * hist.error[j];
  }
  return out;
}

/// w_j proportional to exp(sigma * min(H_j, 0.5 - H_j)), normalized to sum 1.
inline WeightVector compute_weights(const ErrorHistogram& hist, double sigma = 0.5) {
  require(!hist.error.empty(), "compute_weights: empty histogram");
  WeightVector out{std::vector<double>(hist.error.size()), sigma};
  double sum = 0;
  for (std::size_t j = 0; j < hist.error.size(); ++j) {
    const double h = hist.error[j];
    out.w[j] = std::exp(sigma * std::min(h, 0.5 - h));
    sum += out.w[j];
  }
  for (auto& w : out.w) w /= sum;
  return out;
}

/// Mean over all pixels of |p_mask - gt|.
inline double mask_loss(std::span<const double> pred_mask, std::span<const std::uint8_t> gt_mask) {
  require(pred_mask.size() == gt_mask.size(), "mask_loss: size mismatch");
  require(!pred_mask.empty(), "mask_loss: empty input");
  double sum = 0;
  for (std::size_t i = 0; i < pred_mask.size(); ++i) sum += std::abs(pred_mask[i] - (gt_mask[i] ? 1.0 : 0.0));
  return sum / static_cast<double>(pred_mask.size());
}

struct TotalLoss {
  double total = 0;
  double mask = 0;
  double hier = 0;  // mean over predicted-mask pixels
  std::size_t code_pixels = 0;
  ErrorHistogram histogram;
  WeightVector weights;
};

/// L_mask + alpha * L_hier. The code term covers pixels whose rounded mask is
/// set; the histogram is refreshed from that batch before the weights are
/// taken. Ground-truth background pixels inside the predicted mask count
/// with all-zero target bits.
inline TotalLoss total_loss(const PredictionMap& pred, const CodeMap& gt, const ErrorHistogram& hist,
                            const LossParams& params = {}, double sigma = 0.5) {
  pred.validate();
  params.validate();
  require(gt.radix == 2, "total_loss: ground truth must be a binary code map");
  require(gt.width == pred.width && gt.height == pred.height && gt.digits == pred.digits,
          "total_loss: prediction and ground truth dimensions differ");
  require(hist.error.size() == pred.digits, "total_loss: histogram length differs from code length");
  const unsigned d = pred.digits;
  const CodeMap rounded = round_codes(pred);

  std::vector<std::size_t> batch;
  std::vector<Code> gt_codes, pred_codes;
  for (std::size_t i = 0; i < pred.pixel_count(); ++i) {
    if (!rounded.mask[i]) continue;
    batch.push_back(i);
    gt_codes.push_back(gt.mask[i] ? gt.codes[i] : 0);
    pred_codes.push_back(rounded.codes[i]);
  }

  TotalLoss out;
  out.mask = mask_loss(pred.mask, gt.mask);
  out.histogram = update_histogram(hist, gt_codes, pred_codes);
  out.weights = compute_weights(out.histogram, sigma);
  out.code_pixels = batch.size();
  std::vector<double> b(d);
  double sum = 0;
  for (std::size_t k = 0; k < batch.size(); ++k) {
    for (unsigned j = 1; j <= d; ++j) b[j - 1] = code_bit(gt_codes[k], j, d);
    sum += hamming_bce(b, pred.pixel(batch[k]), out.weights.w, params.epsilon);
  }
  out.hier = batch.empty() ? 0.0 : sum / static_cast<double>(batch.size());
  out.total = out.mask + params.alpha * out.hier;
  return out;
}

// ---------------------------------------------------------------------------
// Prediction map file: "ZBPM", u16 version, u32 width, u32 height, u8 digits,
// then per pixel f64 mask probability followed by d f64 bit probabilities.

inline void write_prediction_map(std::ostream& os, const PredictionMap& pred) {
  pred.validate();
  io::put_magic(os, "ZBPM");
  io::put<std::uint16_t>(os, 1);
  io::put<std::uint32_t>(os, static_cast<std::uint32_t>(pred.width));
  io::put<std::uint32_t>(os, static_cast<std::uint32_t>(pred.height));
  io::put<std::uint8_t>(os, static_cast<std::uint8_t>(pred.digits));
  for (std::size_t i = 0; i < pred.pixel_count(); ++i) {
    io::put<double>(os, pred.mask[i]);
    for (const double p : pred.pixel(i)) io::put<double>(os, p);
  }
}

inline PredictionMap read_prediction_map(std::istream& is) {
  io::expect_magic(is, "ZBPM");
  require(io::get<std::uint16_t>(is) == 1, "unsupported ZBPM version");
  const auto w = io::get<std::uint32_t>(is);
  const auto h = io::get<std::uint32_t>(is);
  const auto d = io::get<std::uint8_t>(is);
  require(w >= 1 && h >= 1 && w <= 1u << 15 && h <= 1u << 15 && d >= 1 && d <= 62, "bad ZBPM header");
  PredictionMap pred(static_cast<int>(w), static_cast<int>(h), d);
  for (std::size_t i = 0; i < pred.pixel_count(); ++i) {
    pred.mask[i] = io::get<double>(is);
    for (auto& p : pred.pixel(i)) p = io::get<double>(is);
  }
  pred.validate();
  return pred;
}

inline void write_prediction_map(const std::string& path, const PredictionMap& pred) {
  std::ofstream os(path, std::ios::binary);
  require(bool(os), "cannot open " + path + " for writing");
  write_prediction_map(os, pred);
}

inline PredictionMap read_prediction_map(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  require(bool(is), "cannot open " + path);
  return read_prediction_map(is);
}

}  // namespace zebra
