#include "porenet/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include "porenet/error.hpp"
#include "porenet/file_util.hpp"

namespace porenet {

void SyntheticSpec::validate() const {
  auto fail = [](const std::string& m) { throw Error(ErrorKind::kInvalidArgument, "synthetic: " + m); };
  if (fingers < 1) fail("fingers must be positive");
  if (impressions < 2) fail("impressions must be at least 2 (one per session)");
  if (pores_per_finger < 1) fail("pores_per_finger must be positive");
  if (width < kPatchSide || height < kPatchSide) fail("images must be at least 41x41");
  if (!(pore_jitter >= 0.0 && pore_jitter <= 1.0)) fail("pore_jitter must lie in [0, 1]");
  if (!(pore_dropout >= 0.0 && pore_dropout < 1.0)) fail("pore_dropout must lie in [0, 1)");
  if (!(noise_sigma >= 0.0)) fail("noise_sigma must be non-negative");
  if (!(ridge_period >= 8.0)) fail("ridge_period must be at least 8");
}

namespace {

constexpr double kPi = std::numbers::pi;

struct Blob {
  double x, y, sigma, amplitude;
};

struct Pore {
  double x, y, radius, brightness;
};

/// Ridge geometry and texture of one finger in its canonical frame.
class FingerModel {
 public:
  FingerModel(const SyntheticSpec& spec, std::mt19937_64& rng) : period_(spec.ridge_period) {
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    cx_ = spec.width / 2.0;
    cy_ = spec.height / 2.0;
    // Arcs around a distant centre blended with straight ridges running the same way at the image
    // centre, so the two gradients never cancel; the warp adds at most ~35% of the base gradient.
    const double d = 150.0 + 250.0 * u01(rng);
    const double a = u01(rng) * 2.0 * kPi;
    ox_ = d * std::cos(a);
    oy_ = d * std::sin(a);
    alpha_ = std::atan2(-oy_, -ox_);
    mix_ = 0.3 + 0.6 * u01(rng);
    beta_ = u01(rng) * kPi;
    warp_len_ = 80.0 + 80.0 * u01(rng);
    warp_amp_ = (0.15 + 0.2 * u01(rng)) * warp_len_ / (2.0 * kPi * period_);
    warp_phase_ = u01(rng) * 2.0 * kPi;

    auto scatter = [&](std::vector<Blob>& out, int count, double sigma_lo, double sigma_hi, double amp_lo,
                       double amp_hi) {
      for (int i = 0; i < count; ++i) {
        out.push_back({-20.0 + (spec.width + 40.0) * u01(rng), -20.0 + (spec.height + 40.0) * u01(rng),
                       sigma_lo + (sigma_hi - sigma_lo) * u01(rng),
                       (u01(rng) < 0.5 ? -1.0 : 1.0) * (amp_lo + (amp_hi - amp_lo) * u01(rng))});
      }
    };
    const double area_scale = spec.width * spec.height / (320.0 * 240.0);
    scatter(blobs_, static_cast<int>(30 * area_scale), 6.0, 20.0, 0.04, 0.10);
    scatter(blobs_, static_cast<int>(150 * area_scale), 2.5, 5.0, 0.03, 0.07);
    scatter(width_blobs_, static_cast<int>(150 * area_scale), 4.0, 9.0, 0.1, 0.3);
  }

  double phase(double x, double y) const {
    const double u = x - cx_;
    const double v = y - cy_;
    const double linear = u * std::cos(alpha_) + v * std::sin(alpha_);
    const double radial = std::hypot(u - ox_, v - oy_);
    const double warp =
        warp_amp_ * std::sin(2.0 * kPi * (u * std::cos(beta_) + v * std::sin(beta_)) / warp_len_ + warp_phase_);
    return ((1.0 - mix_) * linear + mix_ * radial) / period_ + warp;
  }

  /// Base intensity: dark ridges (phase near an integer), bright valleys, plus texture.
  double intensity(double x, double y) const {
    const double s = std::cos(2.0 * kPi * phase(x, y)) + field(width_blobs_, x, y);
    return 0.45 - 0.3 * std::tanh(2.0 * (s + 0.3)) / std::tanh(2.0) + field(blobs_, x, y);
  }

  static double field(const std::vector<Blob>& blobs, double x, double y) {
    double v = 0.0;
    for (const Blob& b : blobs) {
      const double dx = x - b.x, dy = y - b.y;
      const double r2 = dx * dx + dy * dy;
      if (r2 < 9.0 * b.sigma * b.sigma) v += b.amplitude * std::exp(-r2 / (2.0 * b.sigma * b.sigma));
    }
    return v;
  }

  /// Moves (x, y) onto the nearest ridge centre line with Newton steps on the phase.
  bool snap_to_ridge(double& x, double& y) const {
    for (int it = 0; it < 6; ++it) {
      const double h = 0.5;
      const double gx = (phase(x + h, y) - phase(x - h, y)) / (2.0 * h);
      const double gy = (phase(x, y + h) - phase(x, y - h)) / (2.0 * h);
      const double g2 = gx * gx + gy * gy;
      if (g2 < 1e-8) return false;
      const double p = phase(x, y);
      const double off = p - std::round(p);
      x -= off * gx / g2;
      y -= off * gy / g2;
    }
    const double p = phase(x, y);
    return std::abs(p - std::round(p)) < 0.02;
  }

 private:
  double period_, cx_, cy_, alpha_, ox_, oy_, mix_, beta_, warp_len_, warp_amp_, warp_phase_;
  std::vector<Blob> blobs_;        // intensity texture
  std::vector<Blob> width_blobs_;  // local ridge-width variation
};

std::vector<Pore> place_pores(const FingerModel& finger, const SyntheticSpec& spec, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> ux(3.0, spec.width - 4.0);
  std::uniform_real_distribution<double> uy(3.0, spec.height - 4.0);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const double min_dist = 12.0;
  std::vector<Pore> pores;
  for (int attempt = 0; attempt < 200 * spec.pores_per_finger && static_cast<int>(pores.size()) < spec.pores_per_finger;
       ++attempt) {
    double x = ux(rng), y = uy(rng);
    if (!finger.snap_to_ridge(x, y)) continue;
    if (x < 3.0 || y < 3.0 || x > spec.width - 4.0 || y > spec.height - 4.0) continue;
    const bool crowded = std::any_of(pores.begin(), pores.end(), [&](const Pore& p) {
      return std::hypot(p.x - x, p.y - y) < min_dist;
    });
    if (crowded) continue;
    pores.push_back({x, y, 1.5 + 0.7 * u01(rng), 0.85 + 0.1 * u01(rng)});
  }
  return pores;
}

GrayImage render(const FingerModel& finger, const std::vector<Pore>& pores, const AffineTransform& to_image,
                 const SyntheticSpec& spec, std::mt19937_64& rng) {
  const AffineTransform to_canonical = to_image.inverse();
  std::normal_distribution<double> noise(0.0, spec.noise_sigma);
  std::uniform_real_distribution<double> gain_dist(0.92, 1.08);
  const double gain = gain_dist(rng);
  GrayImage img(spec.width, spec.height);
  for (int y = 0; y < spec.height; ++y) {
    for (int x = 0; x < spec.width; ++x) {
      const PointF q = to_canonical.apply({static_cast<double>(x), static_cast<double>(y)});
      double v = finger.intensity(q.x, q.y);
      for (const Pore& p : pores) {
        const double d = std::hypot(q.x - p.x, q.y - p.y);
        const double w = std::clamp(p.radius + 0.5 - d, 0.0, 1.0);
        if (w > 0.0) v += (p.brightness - v) * w;
      }
      v = v * gain + (spec.noise_sigma > 0.0 ? noise(rng) : 0.0);
      img.set(x, y, static_cast<float>(std::clamp(v, 0.0, 1.0)));
    }
  }
  return img;
}

}  // namespace

SyntheticDataset make_synthetic_dataset(const SyntheticSpec& spec) {
  spec.validate();
  SyntheticDataset out;
  out.manifest.protocol = Protocol::kPolyU;
  const int session1 = (spec.impressions + 1) / 2;
  const PointF center{(spec.width - 1) / 2.0, (spec.height - 1) / 2.0};

  for (int f = 0; f < spec.fingers; ++f) {
    const int finger_id = spec.first_finger_id + f;
    std::seed_seq seq{static_cast<std::uint64_t>(spec.seed), static_cast<std::uint64_t>(finger_id)};
    std::mt19937_64 rng(seq);
    const FingerModel finger(spec, rng);
    const std::vector<Pore> canonical = place_pores(finger, spec, rng);

    std::uniform_real_distribution<double> rot(-spec.max_rotation_deg, spec.max_rotation_deg);
    std::uniform_real_distribution<double> shift(-spec.max_shift, spec.max_shift);
    const double j = spec.pore_jitter / std::sqrt(2.0);
    std::uniform_real_distribution<double> jitter(-j, j);
    std::uniform_real_distribution<double> u01(0.0, 1.0);

    for (int k = 0; k < spec.impressions; ++k) {
      SyntheticImpression imp;
      imp.entry.finger_id = finger_id;
      imp.entry.session = k < session1 ? 1 : 2;
      imp.entry.impression = k < session1 ? k + 1 : k - session1 + 1;
      imp.entry.path = imp.entry.image_id() + ".pgm";
      const double angle = rot(rng);
      const double dx = shift(rng), dy = shift(rng);
      imp.transform = AffineTransform::translation(dx, dy).compose(AffineTransform::rotation_about(center, angle));

      std::vector<Pore> visible;
      std::vector<int> ids;
      for (std::size_t i = 0; i < canonical.size(); ++i) {
        Pore p = canonical[i];
        p.x += jitter(rng);
        p.y += jitter(rng);
        if (u01(rng) < spec.pore_dropout) continue;
        visible.push_back(p);
        ids.push_back(static_cast<int>(i));
      }
      imp.image = render(finger, visible, imp.transform, spec, rng);
      imp.pores.image_id = imp.entry.image_id();
      std::vector<std::pair<Point, int>> truth;
      for (std::size_t i = 0; i < visible.size(); ++i) {
        const PointF q = imp.transform.apply({visible[i].x, visible[i].y});
        const Point p{static_cast<int>(std::lround(q.x)), static_cast<int>(std::lround(q.y))};
        if (p.x >= 2 && p.y >= 2 && p.x < spec.width - 2 && p.y < spec.height - 2) truth.emplace_back(p, ids[i]);
      }
      std::sort(truth.begin(), truth.end());
      for (const auto& [p, id] : truth) {
        imp.pores.pores.push_back(p);
        imp.pore_ids.push_back(id);
      }
      out.manifest.entries.push_back(imp.entry);
      out.impressions.push_back(std::move(imp));
    }
  }
  return out;
}

SyntheticDataset write_synthetic_dataset(const SyntheticSpec& spec, const std::filesystem::path& out_dir) {
  SyntheticDataset data = make_synthetic_dataset(spec);
  std::filesystem::create_directories(out_dir / "truth");
  std::ostringstream transforms;
  transforms.precision(17);
  for (std::size_t i = 0; i < data.impressions.size(); ++i) {
    SyntheticImpression& imp = data.impressions[i];
    save_pgm(imp.image, out_dir / imp.entry.path);
    save_pores(imp.pores, out_dir / "truth" / (imp.pores.image_id + ".txt"));
    const AffineTransform& t = imp.transform;
    transforms << imp.pores.image_id << ' ' << t.a << ' ' << t.b << ' ' << t.tx << ' ' << t.c << ' ' << t.d << ' '
               << t.ty << '\n';
  }
  write_text_atomic(out_dir / "manifest.txt", format_manifest(data.manifest));
  write_text_atomic(out_dir / "transforms.txt", transforms.str());
  const std::filesystem::path root = std::filesystem::absolute(out_dir);
  for (std::size_t i = 0; i < data.impressions.size(); ++i) {
    const std::string abs = (root / data.manifest.entries[i].path).string();
    data.manifest.entries[i].path = abs;
    data.impressions[i].entry.path = abs;
  }
  return data;
}

}  // namespace porenet
