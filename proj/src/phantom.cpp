#include "bvsviz/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>

#include "bvsviz/config.hpp"
#include "bvsviz/parallel.hpp"
#include "bvsviz/rng.hpp"

namespace bvsviz {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

int wrap(int v, int n) {
  const int m = v % n;
  return m < 0 ? m + n : m;
}

void check(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument("invalid phantom spec: " + msg);
}

// Per-pullback random draws shared by every slice.
struct PullbackGeometry {
  double radius_offset = 0;
  double swing_phase = 0;
  double lobe_phase = 0;
  double ellipticity_phase = 0;
  std::vector<double> helix_start;  // per family, in rows
  std::vector<int> embed;           // per strut, BVS only
};

PullbackGeometry draw_geometry(const PhantomSpec& spec, std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  PullbackGeometry g;
  g.radius_offset = (2.0 * unit(rng) - 1.0) * spec.lumen_radius_jitter;
  g.swing_phase = kTwoPi * unit(rng);
  g.lobe_phase = kTwoPi * unit(rng);
  g.ellipticity_phase = kTwoPi * unit(rng);
  for (int f = 0; f < spec.helix_families; ++f) {
    g.helix_start.push_back(unit(rng) * spec.angles);
  }
  std::uniform_int_distribution<int> embed(0, spec.bvs_embed_max);
  for (int i = 0; i < spec.helix_families * spec.struts_per_family; ++i) {
    g.embed.push_back(embed(rng));
  }
  return g;
}

std::vector<int> lumen_boundary(const PhantomSpec& spec, const PullbackGeometry& g,
                                int slice) {
  const double radius = spec.lumen_radius_mean + g.radius_offset +
                        spec.lumen_swing * std::sin(kTwoPi * slice / spec.lumen_period +
                                                    g.swing_phase);
  const double drift = spec.lumen_drift * slice;
  std::vector<int> b(static_cast<std::size_t>(spec.angles));
  for (int r = 0; r < spec.angles; ++r) {
    const double theta = kTwoPi * r / spec.angles;
    const double d = radius + spec.lumen_lobe * std::cos(theta - g.lobe_phase - drift) +
                     spec.lumen_ellipticity *
                         std::cos(2.0 * (theta - g.ellipticity_phase - drift));
    b[static_cast<std::size_t>(r)] = static_cast<int>(std::lround(d));
  }
  return b;
}

template <typename F>
void visit_fields(PhantomSpec& s, F&& f) {
  f("angles", s.angles);
  f("depth_raw", s.depth_raw);
  f("depth_trim", s.depth_trim);
  f("slices_per_pullback", s.slices_per_pullback);
  f("class_mix_metal", s.class_mix[0]);
  f("class_mix_bvs", s.class_mix[1]);
  f("class_mix_none", s.class_mix[2]);
  f("catheter_depth", s.catheter_depth);
  f("catheter_width", s.catheter_width);
  f("catheter_intensity", s.catheter_intensity);
  f("lumen_radius_mean", s.lumen_radius_mean);
  f("lumen_radius_jitter", s.lumen_radius_jitter);
  f("lumen_swing", s.lumen_swing);
  f("lumen_period", s.lumen_period);
  f("lumen_lobe", s.lumen_lobe);
  f("lumen_ellipticity", s.lumen_ellipticity);
  f("lumen_drift", s.lumen_drift);
  f("max_boundary_delta", s.max_boundary_delta);
  f("lumen_intensity", s.lumen_intensity);
  f("tissue_intensity", s.tissue_intensity);
  f("tissue_floor", s.tissue_floor);
  f("attenuation_length", s.attenuation_length);
  f("speckle", s.speckle);
  f("helix_families", s.helix_families);
  f("struts_per_family", s.struts_per_family);
  f("helix_rate", s.helix_rate);
  f("metal_half_angle", s.metal_half_angle);
  f("metal_half_depth", s.metal_half_depth);
  f("metal_intensity", s.metal_intensity);
  f("shadow_factor", s.shadow_factor);
  f("shadow_length", s.shadow_length);
  f("bvs_half_angle", s.bvs_half_angle);
  f("bvs_depth", s.bvs_depth);
  f("bvs_border", s.bvs_border);
  f("bvs_embed_max", s.bvs_embed_max);
  f("bvs_border_intensity", s.bvs_border_intensity);
  f("bvs_core_intensity", s.bvs_core_intensity);
}

}  // namespace

void PhantomSpec::validate(int max_crop) const {
  check(angles >= 8, "angles must be at least 8");
  check(depth_trim >= 0 && depth_raw > depth_trim, "depth_trim must be in [0, depth_raw)");
  check(trimmed_depth() >= std::max(32, max_crop),
        "depth_raw - depth_trim = " + std::to_string(trimmed_depth()) +
            " is smaller than the crop size " + std::to_string(std::max(32, max_crop)));
  check(angles >= max_crop, "angles smaller than the crop size");
  check(slices_per_pullback >= 1, "slices_per_pullback must be positive");
  check(class_mix[0] >= 0 && class_mix[1] >= 0 && class_mix[2] >= 0 &&
            class_mix[0] + class_mix[1] + class_mix[2] > 0,
        "class_mix needs nonnegative weights with a positive sum");
  check(catheter_depth >= 0 && catheter_width >= 0, "catheter geometry must be nonnegative");
  check(lumen_period > 0 && std::isfinite(lumen_period), "lumen_period must be positive");
  for (double v : {lumen_radius_mean, lumen_radius_jitter, lumen_swing, lumen_lobe,
                   lumen_ellipticity, lumen_drift, attenuation_length, speckle,
                   helix_rate}) {
    check(std::isfinite(v), "all numeric parameters must be finite");
  }
  check(lumen_radius_jitter >= 0 && lumen_swing >= 0 && lumen_lobe >= 0 &&
            lumen_ellipticity >= 0 && lumen_drift >= 0,
        "lumen variation amplitudes must be nonnegative");
  check(attenuation_length > 0, "attenuation_length must be positive");
  check(speckle >= 0, "speckle must be nonnegative");
  for (float v : {catheter_intensity, lumen_intensity, tissue_intensity, tissue_floor,
                  metal_intensity, shadow_factor, bvs_border_intensity,
                  bvs_core_intensity}) {
    check(std::isfinite(v) && v >= 0.0f && v <= 1.0f, "intensities must lie in [0,1]");
  }
  check(helix_families == 1 || helix_families == 2, "helix_families must be 1 or 2");
  check(struts_per_family >= 1, "struts_per_family must be positive");
  check(metal_half_angle >= 0 && metal_half_depth >= 0 && bvs_half_angle >= 0 &&
            bvs_depth >= 1 && bvs_border >= 0 && bvs_embed_max >= 0 && shadow_length >= 0,
        "strut geometry must be nonnegative");
  check(struts_per_family * (2 * std::max(metal_half_angle, bvs_half_angle) + 1) <= angles,
        "struts of one family overlap around the circumference");

  const double variation = lumen_radius_jitter + lumen_swing + lumen_lobe + lumen_ellipticity;
  const double deepest = lumen_radius_mean + variation + 1.0 +
                         std::max<double>(bvs_embed_max + bvs_depth, metal_half_depth + 1);
  check(deepest < trimmed_depth(),
        "lumen boundary plus struts can reach depth " + std::to_string(deepest) +
            ", beyond the trimmed depth " + std::to_string(trimmed_depth()));
  const double shallowest = lumen_radius_mean - variation - 1.0 - metal_half_depth;
  check(shallowest > catheter_depth + catheter_width,
        "lumen boundary can reach the catheter sheath");
  const double per_slice = lumen_swing * kTwoPi / lumen_period +
                           lumen_drift * (lumen_lobe + 2.0 * lumen_ellipticity);
  check(per_slice + 1.0 <= max_boundary_delta,
        "lumen motion of up to " + std::to_string(per_slice + 1.0) +
            " px/slice exceeds max_boundary_delta");
}

PhantomSpec PhantomSpec::desk() { return PhantomSpec{}; }

PhantomSpec PhantomSpec::paper() {
  PhantomSpec s;
  s.angles = 496;
  s.depth_raw = 976;  // 776 working depth + 200 trimmed
  s.depth_trim = 200;
  s.catheter_depth = 12;
  s.catheter_width = 6;
  s.lumen_radius_mean = 260.0;
  s.lumen_radius_jitter = 25.0;
  s.lumen_swing = 25.0;
  s.lumen_lobe = 30.0;
  s.lumen_ellipticity = 18.0;
  s.lumen_drift = 0.02;
  s.max_boundary_delta = 6;
  s.attenuation_length = 130.0;
  s.struts_per_family = 10;
  s.helix_rate = 6.0;
  s.metal_half_angle = 4;
  s.metal_half_depth = 4;
  s.shadow_length = 48;
  s.bvs_half_angle = 8;
  s.bvs_depth = 18;
  s.bvs_border = 2;
  s.bvs_embed_max = 12;
  return s;
}

KeyValues to_key_values(const PhantomSpec& spec) {
  KeyValues kv;
  PhantomSpec copy = spec;
  visit_fields(copy, [&](const char* name, auto& field) {
    using F = std::decay_t<decltype(field)>;
    if constexpr (std::is_floating_point_v<F>) {
      kv[name] = format_double(static_cast<double>(field));
    } else {
      kv[name] = std::to_string(field);
    }
  });
  kv["seed"] = std::to_string(spec.seed);
  return kv;
}

void apply_key_values(PhantomSpec& spec, const KeyValues& kv) {
  visit_fields(spec, [&](const char* name, auto& field) {
    using F = std::decay_t<decltype(field)>;
    if constexpr (std::is_floating_point_v<F>) {
      field = static_cast<F>(get_double(kv, name, static_cast<double>(field)));
    } else {
      field = get_int(kv, name, field);
    }
  });
  if (auto it = kv.find("seed"); it != kv.end()) spec.seed = std::stoull(it->second);
}

std::string spec_hash(const PhantomSpec& spec) {
  KeyValues kv = to_key_values(spec);
  kv.erase("seed");
  return fnv1a_hex(format_key_values(kv));
}

PullbackDataset generate_pullback(const PhantomSpec& spec, ClassLabel label,
                                  const std::string& pullback_id,
                                  std::uint64_t seed) {
  spec.validate();
  const PullbackGeometry geo = draw_geometry(spec, seed);
  const int rows = spec.angles;
  const int cols = spec.depth_raw;
  const bool device = label != ClassLabel::NoDevice;

  PullbackDataset pb;
  pb.id = pullback_id;
  pb.label = label;

  for (int s = 0; s < spec.slices_per_pullback; ++s) {
    PolarImage img;
    img.rows = rows;
    img.cols = cols;
    img.label = label;
    img.pullback_id = pullback_id;
    img.slice_index = s;
    img.pixels.assign(static_cast<std::size_t>(rows) * cols, 0.0f);
    const std::vector<int> boundary = lumen_boundary(spec, geo, s);

    for (int r = 0; r < rows; ++r) {
      const int b = boundary[static_cast<std::size_t>(r)];
      for (int c = 0; c < cols; ++c) {
        float v;
        if (c >= spec.catheter_depth && c < spec.catheter_depth + spec.catheter_width) {
          v = spec.catheter_intensity;
        } else if (c < b) {
          v = spec.lumen_intensity;
        } else {
          v = spec.tissue_floor +
              spec.tissue_intensity *
                  static_cast<float>(std::exp(-(c - b) / spec.attenuation_length));
        }
        img.at(r, c) = v;
      }
    }

    std::vector<std::uint8_t> mask;
    if (device) {
      mask.assign(img.pixels.size(), 0);
      for (int f = 0; f < spec.helix_families; ++f) {
        const double dir = f == 0 ? 1.0 : -1.0;
        for (int j = 0; j < spec.struts_per_family; ++j) {
          const double pos = geo.helix_start[static_cast<std::size_t>(f)] +
                             static_cast<double>(j) * rows / spec.struts_per_family +
                             dir * spec.helix_rate * s;
          const int rc = wrap(static_cast<int>(std::lround(pos)), rows);
          const int surface = boundary[static_cast<std::size_t>(rc)];

          if (label == ClassLabel::MetalStent) {
            const double ha = spec.metal_half_angle + 0.5;
            const double hd = spec.metal_half_depth + 0.5;
            for (int dr = -spec.metal_half_angle; dr <= spec.metal_half_angle; ++dr) {
              const int r = wrap(rc + dr, rows);
              const double reach = hd * std::sqrt(std::max(0.0, 1.0 - (dr / ha) * (dr / ha)));
              const int c0 = static_cast<int>(std::ceil(surface - reach));
              const int c1 = static_cast<int>(std::floor(surface + reach));
              for (int c = std::max(c0, 0); c <= std::min(c1, cols - 1); ++c) {
                img.at(r, c) = spec.metal_intensity;
                mask[static_cast<std::size_t>(r) * cols + c] = 1;
              }
              for (int c = c1 + 1; c <= std::min(c1 + spec.shadow_length, cols - 1); ++c) {
                // The shadow removes backscatter, not the detector floor.
                if (!mask[static_cast<std::size_t>(r) * cols + c]) {
                  float& v = img.at(r, c);
                  v = spec.tissue_floor + (v - spec.tissue_floor) * spec.shadow_factor;
                }
              }
            }
          } else {
            const int top = surface +
                            geo.embed[static_cast<std::size_t>(f * spec.struts_per_family + j)];
            const int ha = spec.bvs_half_angle;
            for (int dr = -ha; dr <= ha; ++dr) {
              const int r = wrap(rc + dr, rows);
              for (int k = 0; k < spec.bvs_depth; ++k) {
                const int c = top + k;
                const bool rim = std::abs(dr) > ha - spec.bvs_border ||
                                 k < spec.bvs_border ||
                                 k >= spec.bvs_depth - spec.bvs_border;
                img.at(r, c) = rim ? spec.bvs_border_intensity : spec.bvs_core_intensity;
                mask[static_cast<std::size_t>(r) * cols + c] = 1;
              }
            }
          }
        }
      }
    }

    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(s) + 1));
    std::normal_distribution<double> noise(0.0, 1.0);
    for (float& v : img.pixels) {
      const double m = std::max(0.0, 1.0 + spec.speckle * noise(rng));
      v = static_cast<float>(std::clamp(v * m, 0.0, 1.0));
    }

    if (device) img.strut_mask = std::move(mask);
    img.lumen_boundary = boundary;
    pb.slices.push_back(std::move(img));
  }
  return pb;
}

ClassLabel pullback_class(const PhantomSpec& spec, int index) {
  const int total = spec.class_mix[0] + spec.class_mix[1] + spec.class_mix[2];
  std::array<int, 3> assigned{};
  int chosen = 0;
  for (int i = 0; i <= index; ++i) {
    double best = -1e300;
    for (int c = 0; c < 3; ++c) {
      const double deficit =
          static_cast<double>(i + 1) * spec.class_mix[static_cast<std::size_t>(c)] / total -
          assigned[static_cast<std::size_t>(c)];
      if (spec.class_mix[static_cast<std::size_t>(c)] > 0 && deficit > best + 1e-12) {
        best = deficit;
        chosen = c;
      }
    }
    ++assigned[static_cast<std::size_t>(chosen)];
  }
  return label_from_index(chosen);
}

std::vector<PullbackDataset> generate_dataset(const PhantomSpec& spec, int n,
                                              std::uint64_t seed, int threads) {
  std::vector<PullbackDataset> out(static_cast<std::size_t>(std::max(n, 0)));
  parallel_for(n, threads, [&](int i) {
    char id[16];
    std::snprintf(id, sizeof id, "pb%03d", i);
    out[static_cast<std::size_t>(i)] = generate_pullback(
        spec, pullback_class(spec, i), id, derive_seed(seed, static_cast<std::uint64_t>(i)));
  });
  return out;
}

DatasetSplit split_by_pullback(std::vector<PullbackDataset> pullbacks,
                               double train_fraction, std::uint64_t seed) {
  if (pullbacks.size() < 2) {
    throw std::invalid_argument("split needs at least two pullbacks, got " +
                                std::to_string(pullbacks.size()));
  }
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw std::invalid_argument("train fraction must lie in (0,1)");
  }
  const std::size_t n = pullbacks.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(derive_seed(seed, 0x5e1));
  std::shuffle(order.begin(), order.end(), rng);

  std::vector<int> sizes(n);
  int total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sizes[i] = static_cast<int>(pullbacks[order[i]].slices.size());
    if (sizes[i] == 0) {
      throw std::invalid_argument("pullback " + pullbacks[order[i]].id + " is empty");
    }
    total += sizes[i];
  }

  // reach[i][s]: some subset of the first i pullbacks (seeded order) has s slices.
  std::vector<std::vector<char>> reach(n + 1, std::vector<char>(static_cast<std::size_t>(total) + 1, 0));
  reach[0][0] = 1;
  for (std::size_t i = 0; i < n; ++i) {
    for (int s = 0; s <= total; ++s) {
      if (!reach[i][static_cast<std::size_t>(s)]) continue;
      reach[i + 1][static_cast<std::size_t>(s)] = 1;
      reach[i + 1][static_cast<std::size_t>(s + sizes[i])] = 1;
    }
  }
  int best = -1;
  double best_err = 0;
  for (int s = 1; s < total; ++s) {
    if (!reach[n][static_cast<std::size_t>(s)]) continue;
    const double err = std::abs(static_cast<double>(s) / total - train_fraction);
    if (best < 0 || err <= best_err + 1e-12) {
      best = s;
      best_err = err;
    }
  }
  std::vector<char> in_train(n, 0);
  int s = best;
  for (std::size_t i = n; i-- > 0;) {
    if (reach[i][static_cast<std::size_t>(s)]) continue;
    in_train[order[i]] = 1;
    s -= sizes[i];
  }

  DatasetSplit split;
  for (std::size_t i = 0; i < n; ++i) {
    (in_train[i] ? split.train : split.test).push_back(std::move(pullbacks[i]));
  }
  for (const auto& a : split.train) {
    for (const auto& b : split.test) {
      if (a.id == b.id) {
        throw std::logic_error("pullback " + a.id + " assigned to both partitions");
      }
    }
  }
  return split;
}

DatasetSplit split_by_pullback_stratified(std::vector<PullbackDataset> pullbacks,
                                          double train_fraction, std::uint64_t seed) {
  DatasetSplit out;
  for (ClassLabel c : kAllClasses) {
    std::vector<PullbackDataset> group;
    for (auto& pb : pullbacks) {
      if (pb.label == c) group.push_back(std::move(pb));
    }
    if (group.empty()) continue;
    DatasetSplit part = split_by_pullback(std::move(group), train_fraction,
                                          derive_seed(seed, static_cast<std::uint64_t>(to_index(c))));
    for (auto& pb : part.train) out.train.push_back(std::move(pb));
    for (auto& pb : part.test) out.test.push_back(std::move(pb));
  }
  return out;
}

void depth_trim_all(std::vector<PullbackDataset>& pullbacks, int n) {
  for (auto& pb : pullbacks) {
    for (auto& img : pb.slices) img = depth_trim(img, n);
  }
}

}  // namespace bvsviz
