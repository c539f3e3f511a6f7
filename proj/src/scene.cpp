#include "shadowsteer/scene.hpp"

#include "shadowsteer/log.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <numbers>
#include <numeric>
#include <random>

#include "shadowsteer/errors.hpp"
#include "shadowsteer/image_io.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace shadowsteer::scene {
namespace {

constexpr double kPi = std::numbers::pi;

// Head placement and shape, shared by the heightfield and albedo so the skin
// region always sits on the dome.
struct FaceLayout {
  double cx, cy, rx, ry, dome_height;
  struct Bump {
    double x, y, sigma, amplitude;
  };
  std::vector<Bump> bumps;
  struct Wave {
    double kx, ky, phase, amplitude;
  };
  std::vector<Wave> waves;
};

FaceLayout face_layout(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto range = [&](double lo, double hi) { return lo + (hi - lo) * u(rng); };

  FaceLayout f{};
  f.cx = 0.5 + range(-0.06, 0.06);
  f.cy = 0.52 + range(-0.05, 0.05);
  f.rx = range(0.26, 0.34);
  f.ry = range(0.32, 0.40);
  f.dome_height = range(0.45, 0.6);

  // Nose-like ridge near the centre, then free bumps on the face.
  f.bumps.push_back({f.cx + range(-0.03, 0.03), f.cy + range(-0.02, 0.06), range(0.04, 0.06), range(0.12, 0.25)});
  const int extra = 2 + static_cast<int>(rng() % 4);
  for (int i = 0; i < extra; ++i) {
    const double angle = range(0.0, 2.0 * kPi);
    const double radius = 0.6 * std::sqrt(u(rng));
    f.bumps.push_back({f.cx + radius * f.rx * std::cos(angle), f.cy + radius * f.ry * std::sin(angle),
                       range(0.04, 0.09), range(-0.08, 0.22)});
  }
  for (int i = 0; i < 6; ++i) {
    const double kx = static_cast<double>(static_cast<int>(rng() % 7) - 3);
    const double ky = static_cast<double>(static_cast<int>(rng() % 7) - 3);
    f.waves.push_back({kx, ky, range(0.0, 2.0 * kPi), 0.015});
  }
  return f;
}

double ellipse_radius2(const FaceLayout& f, double x, double y) {
  const double dx = (x - f.cx) / f.rx;
  const double dy = (y - f.cy) / f.ry;
  return dx * dx + dy * dy;
}

Rgb random_color(std::mt19937_64& rng) {
  std::uniform_real_distribution<float> u(0.15f, 0.95f);
  Rgb c{};
  for (float& v : c) v = u(rng);
  return c;
}

double quantize16(double v) { return std::round(std::clamp(v, 0.0, 1.0) * 65535.0) / 65535.0; }

std::string sample_id(int identity, int light) { return fmt::format("{:04d}_{}", identity, light); }

}  // namespace

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  // splitmix64 finalizer over a combined word
  std::uint64_t z = a * 0x9E3779B97F4A7C15ULL + b + 0x632BE59BD9B4E019ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

IdentityParams sample_identity(std::uint64_t seed, int identity_id) {
  std::mt19937_64 rng(mix_seed(seed, 0x1d));
  IdentityParams p;
  p.identity_id = identity_id;
  p.heightfield_seed = rng();
  p.marking_seed = rng();
  for (auto& color : p.albedo_palette) color = random_color(rng);
  return p;
}

DepthMap identity_heightfield(const IdentityParams& identity, int size) {
  if (size < 2) throw InputError("heightfield size must be at least 2");
  const FaceLayout f = face_layout(identity.heightfield_seed);
  DepthMap depth(size, size);
  for (int r = 0; r < size; ++r) {
    for (int c = 0; c < size; ++c) {
      const double x = (c + 0.5) / size;
      const double y = (r + 0.5) / size;
      const double d2 = ellipse_radius2(f, x, y);
      const double inside = std::max(0.0, 1.0 - d2);
      double z = f.dome_height * std::sqrt(inside);
      double bumps = 0.0;
      for (const auto& b : f.bumps) {
        const double q = ((x - b.x) * (x - b.x) + (y - b.y) * (y - b.y)) / (2.0 * b.sigma * b.sigma);
        bumps += b.amplitude * std::exp(-q);
      }
      z += bumps * std::clamp(3.0 * inside, 0.0, 1.0);
      for (const auto& w : f.waves) z += w.amplitude * std::sin(2.0 * kPi * (w.kx * x + w.ky * y) + w.phase);
      depth(r, c) = static_cast<float>(quantize16(0.1 + 0.8 * std::clamp(z, 0.0, 1.0)));
    }
  }
  return depth;
}

RgbImage identity_albedo(const IdentityParams& identity, int size) {
  const FaceLayout f = face_layout(identity.heightfield_seed);
  std::mt19937_64 rng(identity.marking_seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto range = [&](double lo, double hi) { return lo + (hi - lo) * u(rng); };

  struct Patch {
    double x, y, rx, ry;
  };
  std::vector<Patch> patches;
  // Two eye-like patches, then optionally a mouth and a brow.
  const double eye_dx = range(0.09, 0.14);
  const double eye_y = f.cy + range(-0.12, -0.05);
  const double eye_r = range(0.035, 0.06);
  patches.push_back({f.cx - eye_dx, eye_y, eye_r, eye_r * range(0.6, 1.0)});
  patches.push_back({f.cx + eye_dx, eye_y, eye_r, eye_r * range(0.6, 1.0)});
  const int optional = static_cast<int>(rng() % 3);
  if (optional >= 1) patches.push_back({f.cx + range(-0.02, 0.02), f.cy + range(0.12, 0.2), range(0.06, 0.1), range(0.025, 0.04)});
  if (optional >= 2) patches.push_back({f.cx + range(-0.05, 0.05), eye_y - range(0.07, 0.1), range(0.08, 0.14), range(0.02, 0.03)});

  const auto& palette = identity.albedo_palette;
  RgbImage albedo(size, size);
  for (int r = 0; r < size; ++r) {
    for (int c = 0; c < size; ++c) {
      const double x = (c + 0.5) / size;
      const double y = (r + 0.5) / size;
      int which = ellipse_radius2(f, x, y) < 1.0 ? 1 : 0;
      if (which == 1) {
        for (const auto& p : patches) {
          const double dx = (x - p.x) / p.rx;
          const double dy = (y - p.y) / p.ry;
          if (dx * dx + dy * dy < 1.0) which = 2;
        }
      }
      for (int ch = 0; ch < 3; ++ch) albedo.at(r, c, ch) = palette[which][ch];
    }
  }
  return albedo;
}

Grid lambertian_shading(const DepthMap& depth, const LightPosition& light) {
  const int h = depth.height();
  const int w = depth.width();
  Grid shading(h, w);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const int cl = std::max(c - 1, 0), cr = std::min(c + 1, w - 1);
      const int ru = std::max(r - 1, 0), rd = std::min(r + 1, h - 1);
      const double dzdx = (depth(r, cr) - depth(r, cl)) / (static_cast<double>(cr - cl) / w);
      const double dzdy = (depth(rd, c) - depth(ru, c)) / (static_cast<double>(rd - ru) / h);
      const double nn = std::sqrt(dzdx * dzdx + dzdy * dzdy + 1.0);
      const double x = (c + 0.5) / w;
      const double y = (r + 0.5) / h;
      const double lx = light.x - x, ly = light.y - y, lz = light.z - depth(r, c);
      const double ln = std::sqrt(lx * lx + ly * ly + lz * lz);
      const double ndotl = (-dzdx * lx - dzdy * ly + lz) / (nn * ln);
      shading(r, c) = static_cast<float>(std::max(0.0, ndotl));
    }
  }
  return shading;
}

Sample render_sample(const IdentityParams& identity, const LightPosition& light, int size) {
  if (size != 32 && size != 64) throw InputError("render size must be 32 or 64");
  Sample s;
  s.identity_id = identity.identity_id;
  s.light = light;
  s.depth = identity_heightfield(identity, size);
  s.shadow = raycast_shadow(s.depth, light);
  const RgbImage albedo = identity_albedo(identity, size);
  const Grid shading = lambertian_shading(s.depth, light);
  s.image = RgbImage(size, size);
  for (int r = 0; r < size; ++r) {
    for (int c = 0; c < size; ++c) {
      const float k = shading(r, c) * s.shadow(r, c);
      for (int ch = 0; ch < 3; ++ch) s.image.at(r, c, ch) = std::clamp(albedo.at(r, c, ch) * k, 0.0f, 1.0f);
    }
  }
  return s;
}

std::vector<LightPosition> identity_lights(std::uint64_t seed, int identity_id, int count) {
  constexpr std::array<double, 3> kElevationsDeg{20.0, 40.0, 65.0};
  constexpr int kAzimuths = 8;
  constexpr double kRadius = 4.0;
  std::mt19937_64 rng(mix_seed(seed, 0x11a9 + static_cast<std::uint64_t>(identity_id)));
  std::uniform_real_distribution<double> jitter(-1.0, 1.0);

  std::vector<int> cells(kAzimuths * kElevationsDeg.size());
  std::vector<LightPosition> lights;
  while (static_cast<int>(lights.size()) < count) {
    std::iota(cells.begin(), cells.end(), 0);
    std::shuffle(cells.begin(), cells.end(), rng);
    for (int cell : cells) {
      if (static_cast<int>(lights.size()) == count) break;
      const double az = (cell % kAzimuths) * (2.0 * kPi / kAzimuths) + jitter(rng) * 10.0 * kPi / 180.0;
      const double el = (kElevationsDeg[cell / kAzimuths] + jitter(rng) * 4.0) * kPi / 180.0;
      lights.push_back({0.5 + kRadius * std::cos(el) * std::cos(az), 0.5 + kRadius * std::cos(el) * std::sin(az),
                        kRadius * std::sin(el)});
    }
  }
  return lights;
}

const ManifestEntry& DatasetManifest::entry(const std::string& id) const {
  auto it = std::find_if(samples.begin(), samples.end(), [&](const ManifestEntry& e) { return e.id == id; });
  if (it == samples.end()) throw InputError("manifest has no sample " + id);
  return *it;
}

json to_json(const DatasetManifest& m) {
  json samples = json::array();
  for (const auto& e : m.samples) {
    samples.push_back({{"id", e.id},
                       {"identity_id", e.identity_id},
                       {"light_index", e.light_index},
                       {"light", {e.light.x, e.light.y, e.light.z}},
                       {"image", e.image},
                       {"shadow", e.shadow},
                       {"depth", e.depth}});
  }
  return {{"version", m.version},
          {"image_size", m.image_size},
          {"identities", m.identities},
          {"lights_per_identity", m.lights_per_identity},
          {"seed", m.seed},
          {"samples", samples},
          {"splits", {{"train", m.train}, {"val", m.val}}},
          {"val_identities", m.val_identities}};
}

DatasetManifest manifest_from_json(const json& j) {
  DatasetManifest m;
  m.version = j.at("version").get<int>();
  if (m.version != DatasetManifest::kVersion) {
    throw InputError(fmt::format("unsupported manifest version {}", m.version));
  }
  m.image_size = j.at("image_size").get<int>();
  m.identities = j.at("identities").get<int>();
  m.lights_per_identity = j.at("lights_per_identity").get<int>();
  m.seed = j.at("seed").get<std::uint64_t>();
  for (const auto& s : j.at("samples")) {
    ManifestEntry e;
    e.id = s.at("id").get<std::string>();
    e.identity_id = s.at("identity_id").get<int>();
    e.light_index = s.at("light_index").get<int>();
    const auto& l = s.at("light");
    e.light = {l.at(0).get<double>(), l.at(1).get<double>(), l.at(2).get<double>()};
    e.image = s.at("image").get<std::string>();
    e.shadow = s.at("shadow").get<std::string>();
    e.depth = s.at("depth").get<std::string>();
    m.samples.push_back(std::move(e));
  }
  m.train = j.at("splits").at("train").get<std::vector<std::string>>();
  m.val = j.at("splits").at("val").get<std::vector<std::string>>();
  m.val_identities = j.value("val_identities", std::vector<int>{});
  return m;
}

DatasetManifest load_manifest(const fs::path& path_or_dir) {
  const fs::path path = fs::is_directory(path_or_dir) ? path_or_dir / "manifest.json" : path_or_dir;
  if (!fs::exists(path)) throw IoError("dataset manifest not found: " + path.string());
  DatasetManifest m = manifest_from_json(json::parse(io::read_text(path)));
  m.root = path.parent_path();
  return m;
}

DatasetManifest build_dataset(int n_identities, int lights_per_identity, int size, const fs::path& out_dir,
                              std::uint64_t seed, const BuildOptions& options) {
  if (n_identities < 1 || lights_per_identity < 1) throw InputError("need at least one identity and one light");
  if (size != 32 && size != 64) throw InputError("image size must be 32 or 64");
  if (fs::exists(out_dir) && !fs::is_empty(out_dir)) {
    if (!options.overwrite) {
      throw IoError("output directory " + out_dir.string() + " is not empty (pass overwrite to replace it)");
    }
    for (const char* sub : {"images", "shadow", "depth"}) fs::remove_all(out_dir / sub);
    fs::remove(out_dir / "manifest.json");
  }
  for (const char* sub : {"images", "shadow", "depth"}) fs::create_directories(out_dir / sub);

  DatasetManifest m;
  m.image_size = size;
  m.identities = n_identities;
  m.lights_per_identity = lights_per_identity;
  m.seed = seed;
  m.root = out_dir;

  // Held-out identities: whole subjects adding up to ~val_fraction of samples.
  std::vector<int> order(n_identities);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 split_rng(mix_seed(seed, 0x5917));
  std::shuffle(order.begin(), order.end(), split_rng);
  const int n_val = static_cast<int>(std::lround(options.val_fraction * n_identities));
  m.val_identities.assign(order.begin(), order.begin() + n_val);
  std::sort(m.val_identities.begin(), m.val_identities.end());
  if (n_val == 0) log::warn("dataset too small for a validation split; all {} identities go to train", n_identities);

  for (int id = 0; id < n_identities; ++id) {
    const IdentityParams identity = sample_identity(mix_seed(seed, static_cast<std::uint64_t>(id)), id);
    const auto lights = identity_lights(seed, id, lights_per_identity);
    const bool is_val = std::binary_search(m.val_identities.begin(), m.val_identities.end(), id);
    for (int li = 0; li < lights_per_identity; ++li) {
      const Sample s = render_sample(identity, lights[li], size);
      ManifestEntry e;
      e.id = sample_id(id, li);
      e.identity_id = id;
      e.light_index = li;
      e.light = lights[li];
      e.image = "images/" + e.id + ".png";
      e.shadow = "shadow/" + e.id + ".png";
      e.depth = "depth/" + e.id + ".png";
      io::write_rgb_png(out_dir / e.image, s.image);
      io::write_scalar_png(out_dir / e.shadow, s.shadow);
      io::write_scalar_png(out_dir / e.depth, s.depth);
      (is_val ? m.val : m.train).push_back(e.id);
      m.samples.push_back(std::move(e));
    }
  }
  io::write_text(out_dir / "manifest.json", to_json(m).dump(2));
  log::info("dataset: {} samples ({} train / {} val) in {}", m.samples.size(), m.train.size(), m.val.size(),
               out_dir.string());
  return m;
}

}  // namespace shadowsteer::scene
