#pragma once

// Dataset schema, manifest loading, synthetic generation with planted
// long-tailed coverage, and group-aware splitting.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "semcov/errors.hpp"
#include "semcov/io.hpp"
#include "semcov/nn.hpp"

namespace semcov {

/// Per-concept probabilities, each in [0, 1].
class DescriptorVector {
 public:
  DescriptorVector() = default;
  explicit DescriptorVector(std::vector<double> values) : values_(std::move(values)) {
    for (double v : values_)
      if (!(v >= 0.0 && v <= 1.0)) throw ArgumentError("descriptor probability outside [0,1]: " + std::to_string(v));
  }
  size_t size() const { return values_.size(); }
  double operator[](size_t i) const { return values_[i]; }
  const std::vector<double>& values() const { return values_; }
  bool operator==(const DescriptorVector&) const = default;

 private:
  std::vector<double> values_;
};

struct DatasetConfig {
  int K = 7;  // descriptors
  int T = 2;  // classes
  int S = 4;  // subgroups
  int channels = 3;
  int height = 32;
  int width = 32;

  int64_t image_size() const { return static_cast<int64_t>(channels) * height * width; }
  bool operator==(const DatasetConfig&) const = default;
  void validate() const {
    if (K <= 0 || T <= 0 || S <= 0) throw ConfigError("dataset dims K, T, S must be positive");
    if (channels <= 0 || height <= 0 || width <= 0) throw ConfigError("image dims must be positive");
  }
};

struct Sample {
  std::string sample_id;
  std::vector<float> image;  // channels x height x width, row-major
  DescriptorVector descriptors;
  int class_label = 0;
  int subgroup = 0;
  std::string group_key;  // e.g. patient id; empty means "the sample itself"
};

/// Planted generator parameters, indexed [class][descriptor][subgroup].
struct GeneratorTruth {
  /// Bernoulli presence rate per latent-class SCG.
  std::vector<double> latent_rate;
  /// Exact expected soft descriptor probability among samples whose observed
  /// label is `class` (what a soft coverage table measures).
  std::vector<double> expected_coverage;
  /// Per observed-label SCG of the generated set: mean of E[p | drawn
  /// presence] over its members (subsets keep the full-set values).
  std::vector<double> realized_coverage;
  std::vector<int> label_markers;
  double latent_prior_positive = 0.0;
};

struct Dataset {
  DatasetConfig config;
  std::vector<Sample> samples;
  std::optional<GeneratorTruth> generator_truth;
  int clamp_warnings = 0;

  size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }

  void validate() const {
    config.validate();
    std::unordered_set<std::string> ids;
    for (const auto& s : samples) {
      if (s.descriptors.size() != static_cast<size_t>(config.K))
        throw ConfigError("sample " + s.sample_id + " has wrong descriptor length");
      if (s.class_label < 0 || s.class_label >= config.T) throw ConfigError("sample " + s.sample_id + " class out of range");
      if (s.subgroup < 0 || s.subgroup >= config.S) throw ConfigError("sample " + s.sample_id + " subgroup out of range");
      if (static_cast<int64_t>(s.image.size()) != config.image_size())
        throw ConfigError("sample " + s.sample_id + " image size mismatch");
      if (!ids.insert(s.sample_id).second) throw ConfigError("duplicate sample_id " + s.sample_id);
    }
  }

  Dataset subset(const std::vector<size_t>& idx) const {
    Dataset out;
    out.config = config;
    out.generator_truth = generator_truth;
    out.samples.reserve(idx.size());
    for (size_t i : idx) out.samples.push_back(samples.at(i));
    return out;
  }
};

inline size_t scg_offset(const DatasetConfig& c, int cls, int d, int s) {
  return (static_cast<size_t>(cls) * c.K + d) * c.S + s;
}

struct SynthConfig {
  int64_t n_samples = 4000;
  int K = 7, T = 2, S = 4;
  int channels = 3, height = 32, width = 32;
  double tail_exponent = 1.5;
  uint64_t label_rule_seed = 7;
  double noise_level = 0.02;   // label flip probability
  double image_noise = 0.15;   // pixel noise standard deviation
  double blob_amplitude = 1.0;
  int group_size = 1;          // samples per group key
  uint64_t rng_seed = 1;
  std::string id_prefix = "s";

  void validate() const {
    if (n_samples < 0) throw ConfigError("n_samples must be >= 0");
    if (K <= 0 || T < 2 || S <= 0) throw ConfigError("synthetic dims need K >= 1, T >= 2, S >= 1");
    if (channels <= 0 || height < 4 || width < 4) throw ConfigError("synthetic image too small");
    if (!(tail_exponent > 0.0)) throw ConfigError("tail_exponent must be > 0");
    if (!(noise_level >= 0.0 && noise_level < 1.0)) throw ConfigError("noise_level must lie in [0,1)");
    if (!(image_noise >= 0.0)) throw ConfigError("image_noise must be >= 0");
    if (group_size < 1) throw ConfigError("group_size must be >= 1");
  }
  DatasetConfig dataset_config() const { return {K, T, S, channels, height, width}; }
};

namespace synth {

// Soft probability transform for planted presence z:
//   p = clamp(z·(0.7 + 0.3·u) + (1 − z)·0.15·u, 0, 1)
inline constexpr double kPresentBase = 0.7;
inline constexpr double kPresentSpread = 0.3;
inline constexpr double kAbsentSpread = 0.15;
inline constexpr double kMeanPresent = kPresentBase + kPresentSpread / 2;  // 0.85
inline constexpr double kMeanAbsent = kAbsentSpread / 2;                    // 0.075
inline constexpr double kRateMax = 0.9;
inline constexpr double kRateMin = 0.03;
inline constexpr int kMarkers = 3;

inline double soften(bool present, double u) {
  const double p = present ? kPresentBase + kPresentSpread * u : kAbsentSpread * u;
  return std::clamp(p, 0.0, 1.0);
}

/// Deterministic label rule: class 0 unless an odd number of marker
/// descriptors is present, then 1 + (position of first present marker)
/// mod (T − 1).
inline int rule_label(const std::vector<int>& markers, const std::vector<bool>& present, int T) {
  int first = -1, n = 0;
  for (size_t m = 0; m < markers.size(); ++m)
    if (present[markers[m]]) {
      if (first < 0) first = static_cast<int>(m);
      ++n;
    }
  if (n % 2 == 0) return 0;
  return 1 + first % (T - 1);
}

/// Markers are the descriptors with the lowest mean latent rate (rare
/// concepts tied to the positive classes), tie-broken by the rule seed.
inline std::vector<int> choose_markers(const SynthConfig& cfg, const std::vector<double>& rate) {
  const auto dc = cfg.dataset_config();
  Rng rng(cfg.label_rule_seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::pair<double, int>> mean_rate;
  for (int d = 0; d < cfg.K; ++d) {
    double m = 0;
    for (int c = 0; c < cfg.T; ++c)
      for (int s = 0; s < cfg.S; ++s) m += rate[scg_offset(dc, c, d, s)];
    mean_rate.emplace_back(m + 1e-9 * rng.uniform(), d);
  }
  std::sort(mean_rate.begin(), mean_rate.end());
  std::vector<int> markers;
  const int n = std::min(cfg.K, std::max(kMarkers, cfg.T - 1));
  for (int i = 0; i < n; ++i) markers.push_back(mean_rate[i].second);
  return markers;
}

/// Power-law rates over a seeded ranking of SCG indices.
inline std::vector<double> planted_rates(const SynthConfig& cfg) {
  const auto dc = cfg.dataset_config();
  const size_t n = static_cast<size_t>(cfg.T) * cfg.K * cfg.S;
  std::vector<size_t> rank(n);
  std::iota(rank.begin(), rank.end(), 0);
  Rng rng(cfg.rng_seed * 0x2545F4914F6CDD1DULL + 17);
  rng.shuffle(rank.begin(), rank.end());
  std::vector<double> rate(n);
  for (size_t r = 0; r < n; ++r)
    rate[rank[r]] = kRateMin + (kRateMax - kRateMin) * std::pow(static_cast<double>(r + 1), -cfg.tail_exponent);
  (void)dc;
  return rate;
}

inline double latent_prior_positive(const SynthConfig& cfg) { return 1.0 - 1.0 / cfg.T; }

/// Exact expected soft coverage conditioned on the observed label, by
/// enumeration over latent class and marker presence patterns.
inline std::vector<double> expected_coverage(const SynthConfig& cfg, const std::vector<double>& rate,
                                             const std::vector<int>& markers) {
  const auto dc = cfg.dataset_config();
  const int T = cfg.T;
  std::vector<double> out(rate.size(), 0.0);
  const int nm = static_cast<int>(markers.size());
  auto prior = [&](int c) { return c == 0 ? 1.0 / T : (1.0 - 1.0 / T) / (T - 1); };
  (void)latent_prior_positive;
  for (int s = 0; s < cfg.S; ++s)
    for (int y = 0; y < T; ++y) {
      // joint[c*] = P(c*) P(y | c*, s); marker_joint[c*][m] = P(c*) E[z_m 1{y} | c*, s]
      std::vector<double> joint(T, 0.0);
      std::vector<std::vector<double>> mj(T, std::vector<double>(nm, 0.0));
      for (int c = 0; c < T; ++c) {
        for (uint32_t pat = 0; pat < (1u << nm); ++pat) {
          double pz = 1.0;
          std::vector<bool> present(cfg.K, false);
          for (int m = 0; m < nm; ++m) {
            const bool on = (pat >> m) & 1u;
            const double r = rate[scg_offset(dc, c, markers[m], s)];
            pz *= on ? r : 1.0 - r;
            present[markers[m]] = on;
          }
          const int rl = rule_label(markers, present, T);
          const double py = rl == y ? 1.0 - cfg.noise_level : cfg.noise_level / (T - 1);
          joint[c] += prior(c) * pz * py;
          for (int m = 0; m < nm; ++m)
            if ((pat >> m) & 1u) mj[c][m] += prior(c) * pz * py;
        }
      }
      double total = 0;
      for (double j : joint) total += j;
      if (total <= 0) continue;
      for (int d = 0; d < cfg.K; ++d) {
        double ez = 0;
        const auto it = std::find(markers.begin(), markers.end(), d);
        for (int c = 0; c < T; ++c) {
          if (it != markers.end())
            ez += mj[c][it - markers.begin()];
          else
            ez += joint[c] * rate[scg_offset(dc, c, d, s)];
        }
        ez /= total;
        out[scg_offset(dc, y, d, s)] = kMeanAbsent + (kMeanPresent - kMeanAbsent) * ez;
      }
    }
  return out;
}

struct BlobStyle {
  double cy, cx, radius;
  std::vector<double> signature;  // per channel
};

/// Descriptor d stamps a Gaussian blob at a fixed site with a fixed channel
/// signature; sites tile the image on a regular grid.
inline BlobStyle blob_style(int d, int K, int channels, int height, int width) {
  const int grid = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(K))));
  const int row = d / grid, col = d % grid;
  BlobStyle b;
  b.cy = (row + 0.5) * height / grid;
  b.cx = (col + 0.5) * width / grid;
  b.radius = std::max(1.0, 0.35 * std::min(height, width) / grid);
  Rng rng(0xB10Bu + 131u * static_cast<uint64_t>(d));
  b.signature.resize(channels);
  double norm = 0;
  for (auto& v : b.signature) {
    v = rng.uniform(-1.0, 1.0);
    norm += v * v;
  }
  norm = std::sqrt(norm);
  for (auto& v : b.signature) v = v / (norm > 0 ? norm : 1.0) * std::sqrt(static_cast<double>(channels));
  return b;
}

}  // namespace synth

inline Dataset generate_synthetic_dataset(const SynthConfig& cfg) {
  cfg.validate();
  Dataset ds;
  ds.config = cfg.dataset_config();
  const auto rate = synth::planted_rates(cfg);
  const auto markers = synth::choose_markers(cfg, rate);
  GeneratorTruth truth;
  truth.latent_rate = rate;
  truth.label_markers = markers;
  truth.latent_prior_positive = synth::latent_prior_positive(cfg);
  truth.expected_coverage = synth::expected_coverage(cfg, rate, markers);
  ds.generator_truth = truth;

  std::vector<synth::BlobStyle> blobs;
  for (int d = 0; d < cfg.K; ++d) blobs.push_back(synth::blob_style(d, cfg.K, cfg.channels, cfg.height, cfg.width));
  // Subgroups shift the background tint (acquisition-context nuisance).
  std::vector<std::vector<double>> tint(cfg.S, std::vector<double>(cfg.channels));
  {
    Rng trng(0x71A7u);
    for (auto& t : tint)
      for (auto& v : t) v = trng.uniform(-0.2, 0.2);
  }

  const size_t n_scg = static_cast<size_t>(cfg.T) * cfg.K * cfg.S;
  std::vector<double> realized_sum(n_scg, 0.0);
  std::vector<size_t> members(n_scg, 0);

  Rng rng(cfg.rng_seed);
  const int width_digits = std::max<int>(1, static_cast<int>(std::to_string(std::max<int64_t>(cfg.n_samples - 1, 0)).size()));
  ds.samples.reserve(cfg.n_samples);
  for (int64_t i = 0; i < cfg.n_samples; ++i) {
    Sample smp;
    const int s = static_cast<int>(rng.below(cfg.S));
    const int latent = rng.uniform() < 1.0 / cfg.T ? 0 : 1 + static_cast<int>(rng.below(cfg.T - 1));
    std::vector<bool> present(cfg.K);
    std::vector<double> p(cfg.K);
    for (int d = 0; d < cfg.K; ++d) {
      present[d] = rng.bernoulli(rate[scg_offset(ds.config, latent, d, s)]);
      p[d] = synth::soften(present[d], rng.uniform());
    }
    int y = synth::rule_label(markers, present, cfg.T);
    if (rng.bernoulli(cfg.noise_level)) y = (y + 1 + static_cast<int>(rng.below(cfg.T - 1))) % cfg.T;
    for (int d = 0; d < cfg.K; ++d) {
      const size_t g = scg_offset(ds.config, y, d, s);
      realized_sum[g] += present[d] ? synth::kMeanPresent : synth::kMeanAbsent;
      ++members[g];
    }

    const int H = cfg.height, W = cfg.width, C = cfg.channels;
    smp.image.assign(static_cast<size_t>(C) * H * W, 0.0f);
    for (int c = 0; c < C; ++c)
      for (int yy = 0; yy < H; ++yy)
        for (int xx = 0; xx < W; ++xx) {
          double v = tint[s][c] + cfg.image_noise * rng.normal();
          for (int d = 0; d < cfg.K; ++d) {
            const auto& b = blobs[d];
            const double dy = yy + 0.5 - b.cy, dx = xx + 0.5 - b.cx;
            const double g = std::exp(-(dy * dy + dx * dx) / (2.0 * b.radius * b.radius));
            v += cfg.blob_amplitude * p[d] * b.signature[c] * g;
          }
          smp.image[(static_cast<size_t>(c) * H + yy) * W + xx] = static_cast<float>(v);
        }
    std::string num = std::to_string(i);
    smp.sample_id = cfg.id_prefix + std::string(width_digits - num.size(), '0') + num;
    smp.group_key = "g" + std::to_string(i / cfg.group_size);
    smp.descriptors = DescriptorVector(std::move(p));
    smp.class_label = y;
    smp.subgroup = s;
    ds.samples.push_back(std::move(smp));
  }
  auto& t = *ds.generator_truth;
  t.realized_coverage.assign(n_scg, 0.0);
  for (size_t g = 0; g < n_scg; ++g)
    if (members[g]) t.realized_coverage[g] = realized_sum[g] / static_cast<double>(members[g]);
  return ds;
}

// ---------------------------------------------------------------------------
// Manifest CSV: sample_id,image_path,class,subgroup,d_1,...,d_K[,group_key]

struct ManifestOptions {
  int K = 0;  // 0: infer from header
  int T = 0;  // 0: infer as max label + 1
  int S = 0;
  int channels = 3, height = 32, width = 32;
};

/// Reads a binary PPM (P6) or PGM (P5) raster, scaled to [0, 1].
inline std::vector<float> load_raster(const std::filesystem::path& path, int channels, int height, int width) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open image " + path.string());
  std::string magic;
  in >> magic;
  auto next_int = [&]() {
    int v = 0;
    while (true) {
      in >> std::ws;
      if (in.peek() == '#') {
        std::string line;
        std::getline(in, line);
        continue;
      }
      in >> v;
      return v;
    }
  };
  const int w = next_int(), h = next_int(), maxval = next_int();
  in.get();
  const int c = magic == "P6" ? 3 : magic == "P5" ? 1 : 0;
  if (c == 0) throw ParseError("unsupported raster format in " + path.string());
  if (c != channels || h != height || w != width || maxval <= 0 || maxval > 255)
    throw ParseError("image " + path.string() + " does not match configured dims");
  std::vector<unsigned char> buf(static_cast<size_t>(w) * h * c);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!in) throw ParseError("truncated image " + path.string());
  std::vector<float> out(buf.size());
  for (int ch = 0; ch < c; ++ch)
    for (int i = 0; i < w * h; ++i) out[static_cast<size_t>(ch) * w * h + i] = buf[static_cast<size_t>(i) * c + ch] / float(maxval);
  return out;
}

/// Writes an image as binary PPM, mapping [lo, hi] to [0, 255].
inline void write_raster(const std::filesystem::path& path, const std::vector<float>& img, int channels, int height,
                         int width, float lo = -1.5f, float hi = 1.5f) {
  if (channels != 3 && channels != 1) throw ConfigError("raster export supports 1 or 3 channels");
  std::ofstream out(path, std::ios::binary);
  out << (channels == 3 ? "P6" : "P5") << "\n" << width << " " << height << "\n255\n";
  for (int i = 0; i < width * height; ++i)
    for (int ch = 0; ch < channels; ++ch) {
      const float v = (img[static_cast<size_t>(ch) * width * height + i] - lo) / (hi - lo);
      out.put(static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f))));
    }
}

inline Dataset parse_manifest(std::istream& in, const ManifestOptions& opt,
                              const std::filesystem::path& base_dir = {}) {
  std::string line;
  if (!std::getline(in, line)) throw ParseError("empty manifest", 0);
  auto header = io::split_csv_line(line);
  std::map<std::string, size_t> col;
  for (size_t i = 0; i < header.size(); ++i) col[io::trim(header[i])] = i;
  for (const char* req : {"sample_id", "image_path", "class", "subgroup"})
    if (!col.count(req)) throw ParseError(std::string("missing column \"") + req + "\"", 0, req);
  int K = opt.K;
  if (K <= 0) {
    for (const auto& [name, _] : col)
      if (name.size() > 2 && name.rfind("d_", 0) == 0) K = std::max(K, std::stoi(name.substr(2)));
    if (K <= 0) throw ParseError("manifest has no descriptor columns", 0, "d_1");
  }
  std::vector<size_t> dcol(K);
  for (int d = 0; d < K; ++d) {
    const std::string name = "d_" + std::to_string(d + 1);
    auto it = col.find(name);
    if (it == col.end()) throw ParseError("missing column \"" + name + "\"", 0, name);
    dcol[d] = it->second;
  }
  const auto gk = col.find("group_key");

  Dataset ds;
  ds.config = {K, opt.T, opt.S, opt.channels, opt.height, opt.width};
  long row = 0;
  int max_class = -1, max_sub = -1;
  while (std::getline(in, line)) {
    ++row;
    if (io::trim(line).empty()) continue;
    auto cells = io::split_csv_line(line);
    auto cell = [&](size_t idx, const std::string& name) -> std::string {
      if (idx >= cells.size()) throw ParseError("missing value", row, name);
      return io::trim(cells[idx]);
    };
    Sample smp;
    smp.sample_id = cell(col["sample_id"], "sample_id");
    auto parse_index = [&](const std::string& name, int limit) {
      const std::string v = cell(col[name], name);
      long out = 0;
      if (!io::parse_long(v, out)) throw ParseError("non-integer " + name + " \"" + v + "\"", row, name);
      if (out < 0 || (limit > 0 && out >= limit)) throw ParseError(name + " index out of range: " + v, row, name);
      return static_cast<int>(out);
    };
    smp.class_label = parse_index("class", opt.T);
    smp.subgroup = parse_index("subgroup", opt.S);
    max_class = std::max(max_class, smp.class_label);
    max_sub = std::max(max_sub, smp.subgroup);
    std::vector<double> p(K);
    for (int d = 0; d < K; ++d) {
      const std::string name = "d_" + std::to_string(d + 1);
      const std::string v = cell(dcol[d], name);
      double x = 0;
      if (!io::parse_double(v, x) || !std::isfinite(x)) throw ParseError("non-numeric probability \"" + v + "\"", row, name);
      if (x < 0.0 || x > 1.0) {
        ++ds.clamp_warnings;
        x = std::clamp(x, 0.0, 1.0);
      }
      p[d] = x;
    }
    smp.descriptors = DescriptorVector(std::move(p));
    const std::string img = cell(col["image_path"], "image_path");
    if (img == "NONE") {
      smp.image.assign(static_cast<size_t>(ds.config.image_size()), 0.0f);
    } else {
      std::filesystem::path ip(img);
      if (ip.is_relative() && !base_dir.empty()) ip = base_dir / ip;
      smp.image = load_raster(ip, opt.channels, opt.height, opt.width);
    }
    if (gk != col.end() && gk->second < cells.size()) smp.group_key = io::trim(cells[gk->second]);
    ds.samples.push_back(std::move(smp));
  }
  if (ds.config.T <= 0) ds.config.T = std::max(max_class + 1, 1);
  if (ds.config.S <= 0) ds.config.S = std::max(max_sub + 1, 1);
  ds.validate();
  return ds;
}

inline Dataset load_manifest(const std::filesystem::path& path, const ManifestOptions& opt = {}) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open manifest " + path.string());
  return parse_manifest(in, opt, path.parent_path());
}

/// Writes a manifest; `image_paths` empty means NONE for every row.
inline void write_manifest(std::ostream& out, const Dataset& ds, const std::vector<std::string>& image_paths = {}) {
  out << "sample_id,image_path,class,subgroup";
  for (int d = 0; d < ds.config.K; ++d) out << ",d_" << d + 1;
  out << ",group_key\n";
  for (size_t i = 0; i < ds.samples.size(); ++i) {
    const auto& s = ds.samples[i];
    out << s.sample_id << "," << (image_paths.empty() ? "NONE" : image_paths[i]) << "," << s.class_label << ","
        << s.subgroup;
    for (double p : s.descriptors.values()) out << "," << io::fmt(p);
    out << "," << s.group_key << "\n";
  }
}

// ---------------------------------------------------------------------------
// Splitting.

struct SplitRatios {
  double train = 0.7, val = 0.1, test = 0.2;
};

struct SplitResult {
  Dataset train, val, test;
};

/// Seeded disjoint partition. With `by_group`, samples sharing a group key
/// always land in the same split (empty keys count as singleton groups).
inline SplitResult split_dataset(const Dataset& ds, const SplitRatios& r, bool by_group, uint64_t seed) {
  for (double x : {r.train, r.val, r.test})
    if (!(x >= 0.0)) throw ConfigError("split ratios must be non-negative");
  if (std::abs(r.train + r.val + r.test - 1.0) > 1e-9) throw ConfigError("split ratios must sum to 1");

  std::vector<std::vector<size_t>> groups;
  if (by_group) {
    std::map<std::string, size_t> gid;
    for (size_t i = 0; i < ds.samples.size(); ++i) {
      const auto& key = ds.samples[i].group_key.empty() ? ds.samples[i].sample_id : ds.samples[i].group_key;
      auto [it, fresh] = gid.emplace(key, groups.size());
      if (fresh) groups.emplace_back();
      groups[it->second].push_back(i);
    }
  } else {
    for (size_t i = 0; i < ds.samples.size(); ++i) groups.push_back({i});
  }
  Rng rng(seed);
  rng.shuffle(groups.begin(), groups.end());

  // A group goes to the split containing the midpoint of its cumulative span.
  const double n = static_cast<double>(ds.samples.size());
  std::array<std::vector<size_t>, 3> parts;
  double cum = 0;
  for (const auto& g : groups) {
    const double mid = (cum + g.size() / 2.0) / n;
    cum += static_cast<double>(g.size());
    const int which = mid < r.train ? 0 : mid < r.train + r.val ? 1 : 2;
    parts[which].insert(parts[which].end(), g.begin(), g.end());
  }
  for (auto& p : parts) std::sort(p.begin(), p.end());
  return {ds.subset(parts[0]), ds.subset(parts[1]), ds.subset(parts[2])};
}

// ---------------------------------------------------------------------------
// Binary dataset archive: "SCDS", u32 version, u64 header length, JSON header,
// then per sample: id, group key, class, subgroup, K f64 descriptors, image f32.

inline constexpr uint32_t kDatasetArchiveVersion = 1;

inline void write_dataset_archive(std::ostream& out, const Dataset& ds) {
  io::Json header;
  header["config"] = {{"K", ds.config.K}, {"T", ds.config.T}, {"S", ds.config.S},
                      {"channels", ds.config.channels}, {"height", ds.config.height}, {"width", ds.config.width}};
  header["n_samples"] = ds.samples.size();
  if (ds.generator_truth) {
    const auto& t = *ds.generator_truth;
    header["generator_truth"] = {{"latent_rate", t.latent_rate},
                                 {"expected_coverage", t.expected_coverage},
                                 {"realized_coverage", t.realized_coverage},
                                 {"label_markers", t.label_markers},
                                 {"latent_prior_positive", t.latent_prior_positive}};
  }
  out.write("SCDS", 4);
  io::write_u32(out, kDatasetArchiveVersion);
  io::write_string64(out, header.dump());
  for (const auto& s : ds.samples) {
    io::write_string64(out, s.sample_id);
    io::write_string64(out, s.group_key);
    io::write_i32(out, s.class_label);
    io::write_i32(out, s.subgroup);
    for (double p : s.descriptors.values()) io::write_f64(out, p);
    for (float v : s.image) io::write_f32(out, v);
  }
}

inline Dataset read_dataset_archive(std::istream& in) {
  char magic[4];
  in.read(magic, 4);
  if (!in || std::string(magic, 4) != "SCDS") throw ParseError("not a dataset archive");
  const uint32_t version = io::read_u32(in);
  if (version != kDatasetArchiveVersion) throw ParseError("unsupported dataset archive version " + std::to_string(version));
  const auto header = io::Json::parse(io::read_string64(in));
  Dataset ds;
  const auto& c = header.at("config");
  ds.config = {c.at("K"), c.at("T"), c.at("S"), c.at("channels"), c.at("height"), c.at("width")};
  if (header.contains("generator_truth")) {
    const auto& t = header["generator_truth"];
    GeneratorTruth g;
    g.latent_rate = t.at("latent_rate").get<std::vector<double>>();
    g.expected_coverage = t.at("expected_coverage").get<std::vector<double>>();
    g.realized_coverage = t.at("realized_coverage").get<std::vector<double>>();
    g.label_markers = t.at("label_markers").get<std::vector<int>>();
    g.latent_prior_positive = t.at("latent_prior_positive");
    ds.generator_truth = g;
  }
  const size_t n = header.at("n_samples");
  ds.samples.resize(n);
  for (auto& s : ds.samples) {
    s.sample_id = io::read_string64(in);
    s.group_key = io::read_string64(in);
    s.class_label = io::read_i32(in);
    s.subgroup = io::read_i32(in);
    std::vector<double> p(ds.config.K);
    for (auto& v : p) v = io::read_f64(in);
    s.descriptors = DescriptorVector(std::move(p));
    s.image.resize(static_cast<size_t>(ds.config.image_size()));
    for (auto& v : s.image) v = io::read_f32(in);
  }
  if (!in) throw ParseError("truncated dataset archive");
  ds.validate();
  return ds;
}

inline void save_dataset(const std::filesystem::path& path, const Dataset& ds) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path.string());
  write_dataset_archive(out, ds);
}

inline Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open dataset archive " + path.string());
  return read_dataset_archive(in);
}

}  // namespace semcov
