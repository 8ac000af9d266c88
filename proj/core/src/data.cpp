#include "attnpain/data.hpp"
#include <climits>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include "attnpain/image_io.hpp"

namespace fs = std::filesystem;

namespace attnpain::data {

// ------------------------------------------------------------------- PSPI

void validate_au(const AUVector& au) {
  auto check = [](int v, int hi, const char* name) {
    if (v < 0 || v > hi)
      throw ValidationError(std::string("AU out of range: ") + name + "=" +
                            std::to_string(v) + " (valid 0.." + std::to_string(hi) + ")");
  };
  check(au.au4, 5, "au4");
  check(au.au6, 5, "au6");
  check(au.au7, 5, "au7");
  check(au.au9, 5, "au9");
  check(au.au10, 5, "au10");
  check(au.au43, 1, "au43");
}

int pspi_score(const AUVector& au) {
  validate_au(au);
  return au.au4 + std::max(au.au6, au.au7) + std::max(au.au9, au.au10) + au.au43;
}

int binarize(int pspi) {
  if (pspi < 0 || pspi > 16)
    throw ValidationError("binarize: pspi out of range: " + std::to_string(pspi));
  return pspi > 0 ? 1 : 0;
}

std::vector<std::pair<std::string, long>> Corpus::subject_pain_counts() const {
  std::vector<std::pair<std::string, long>> out;
  std::unordered_map<std::string, size_t> index;
  for (const auto& s : samples) {
    auto it = index.find(s.subject_id);
    if (it == index.end()) {
      index.emplace(s.subject_id, out.size());
      out.emplace_back(s.subject_id, 0);
      it = index.find(s.subject_id);
    }
    if (s.label == 1) ++out[it->second].second;
  }
  return out;
}

// ------------------------------------------------------------------ folds

int FoldAssignment::fold(const std::string& subject_id) const {
  auto it = fold_of.find(subject_id);
  if (it == fold_of.end())
    throw ValidationError("FoldAssignment: unknown subject " + subject_id);
  return it->second;
}

std::vector<std::vector<std::string>> FoldAssignment::members() const {
  std::vector<std::vector<std::string>> m(static_cast<size_t>(num_folds));
  for (const auto& [sid, f] : fold_of) m[static_cast<size_t>(f)].push_back(sid);
  return m;
}

FoldAssignment make_folds(const std::vector<std::pair<std::string, long>>& subjects, int k,
                          uint64_t seed) {
  if (k < 1) throw ValidationError("make_folds: k must be >= 1");
  const size_t S = subjects.size();
  if (S < static_cast<size_t>(k))
    throw ValidationError("make_folds: " + std::to_string(S) + " subjects < " +
                          std::to_string(k) + " folds");

  // Seeded shuffle breaks pain-count ties differently per seed; the stable
  // sort then orders by pain count only.
  std::vector<size_t> order(S);
  std::iota(order.begin(), order.end(), 0);
  Prng rng = Prng(seed).split("fold-shuffle");
  rng.shuffle(order);
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    return subjects[a].second < subjects[b].second;
  });

  const size_t base = S / static_cast<size_t>(k);
  const size_t rem = S % static_cast<size_t>(k);
  std::vector<size_t> capacity(static_cast<size_t>(k), base);
  for (size_t f = 0; f < rem; ++f) ++capacity[f];

  std::vector<std::vector<size_t>> fold_members(static_cast<size_t>(k));
  std::vector<long> totals(static_cast<size_t>(k), 0);
  auto place = [&](size_t subj, size_t f) {
    fold_members[f].push_back(subj);
    totals[f] += subjects[subj].second;
    --capacity[f];
  };
  auto smallest_open_fold = [&]() {
    size_t best = static_cast<size_t>(k);
    for (size_t f = 0; f < static_cast<size_t>(k); ++f)
      if (capacity[f] > 0 && (best == static_cast<size_t>(k) || totals[f] < totals[best]))
        best = f;
    return best;
  };

  // Pair rank i with rank S-1-i, deal pairs round-robin where both fit;
  // pairs that fit nowhere split into singles on the lightest open folds.
  size_t cursor = 0;
  const size_t npairs = S / 2;
  for (size_t i = 0; i < npairs; ++i) {
    const size_t lo = order[i];
    const size_t hi = order[S - 1 - i];
    size_t f = static_cast<size_t>(k);
    for (size_t probe = 0; probe < static_cast<size_t>(k); ++probe) {
      const size_t cand = (cursor + probe) % static_cast<size_t>(k);
      if (capacity[cand] >= 2) {
        f = cand;
        break;
      }
    }
    if (f < static_cast<size_t>(k)) {
      place(lo, f);
      place(hi, f);
      cursor = (f + 1) % static_cast<size_t>(k);
    } else {
      place(hi, smallest_open_fold());
      place(lo, smallest_open_fold());
    }
  }
  if (S % 2 == 1) place(order[npairs], smallest_open_fold());

  // Greedy exchange phase. A move swaps one subject each way between two
  // folds, or two subjects each way (the compound move escapes parity
  // traps a single swap cannot fix). Best improving move wins each round.
  auto spread = [&]() {
    auto [mn, mx] = std::minmax_element(totals.begin(), totals.end());
    return *mx - *mn;
  };
  auto spread_after = [&](size_t fa, size_t fb, long delta) {
    long mn = LONG_MAX, mx = LONG_MIN;
    for (size_t f = 0; f < static_cast<size_t>(k); ++f) {
      long t = totals[f];
      if (f == fa) t -= delta;
      if (f == fb) t += delta;
      mn = std::min(mn, t);
      mx = std::max(mx, t);
    }
    return mx - mn;
  };
  struct Move {
    size_t fa = 0, fb = 0;
    size_t a1 = 0, b1 = 0;
    size_t a2 = 0, b2 = 0;  // == a1/b1 for single swaps
    long delta = 0;
  };
  const int max_rounds = static_cast<int>(S) * k;
  for (int round = 0; round < max_rounds; ++round) {
    const long cur = spread();
    if (cur == 0) break;
    long best_spread = cur;
    Move best;
    bool found = false;
    auto consider = [&](size_t fa, size_t fb, size_t a1, size_t b1, size_t a2, size_t b2) {
      const long delta = subjects[fold_members[fa][a1]].second -
                         subjects[fold_members[fb][b1]].second +
                         (a2 != a1 ? subjects[fold_members[fa][a2]].second -
                                         subjects[fold_members[fb][b2]].second
                                   : 0);
      if (delta == 0) return;
      const long next = spread_after(fa, fb, delta);
      if (next < best_spread) {
        best_spread = next;
        best = {fa, fb, a1, b1, a2, b2, delta};
        found = true;
      }
    };
    for (size_t fa = 0; fa < static_cast<size_t>(k); ++fa)
      for (size_t fb = fa + 1; fb < static_cast<size_t>(k); ++fb) {
        const size_t na = fold_members[fa].size(), nb = fold_members[fb].size();
        for (size_t a1 = 0; a1 < na; ++a1)
          for (size_t b1 = 0; b1 < nb; ++b1) {
            consider(fa, fb, a1, b1, a1, b1);
            for (size_t a2 = a1 + 1; a2 < na; ++a2)
              for (size_t b2 = b1 + 1; b2 < nb; ++b2) consider(fa, fb, a1, b1, a2, b2);
          }
      }
    if (!found) break;
    std::swap(fold_members[best.fa][best.a1], fold_members[best.fb][best.b1]);
    if (best.a2 != best.a1)
      std::swap(fold_members[best.fa][best.a2], fold_members[best.fb][best.b2]);
    totals[best.fa] -= best.delta;
    totals[best.fb] += best.delta;
  }

  FoldAssignment fa;
  fa.num_folds = k;
  for (size_t f = 0; f < static_cast<size_t>(k); ++f)
    for (size_t subj : fold_members[f])
      fa.fold_of[subjects[subj].first] = static_cast<int>(f);
  return fa;
}

// ------------------------------------------------------------- oversample

std::vector<size_t> oversample(const std::vector<size_t>& train_indices,
                               const std::vector<int>& labels, uint64_t seed) {
  if (train_indices.size() != labels.size())
    throw ValidationError("oversample: indices/labels length mismatch");
  std::vector<size_t> pos, neg;
  for (size_t i = 0; i < labels.size(); ++i)
    (labels[i] == 1 ? pos : neg).push_back(train_indices[i]);
  if (pos.empty() || neg.empty())
    throw ValidationError("oversample: both classes must be present");

  std::vector<size_t> out = train_indices;
  const auto& minority = pos.size() < neg.size() ? pos : neg;
  const size_t need = pos.size() < neg.size() ? neg.size() - pos.size() : pos.size() - neg.size();
  Prng rng = Prng(seed).split("oversample");
  for (size_t i = 0; i < need; ++i)
    out.push_back(minority[rng.below(minority.size())]);
  rng.shuffle(out);
  return out;
}

// ------------------------------------------------------------------ grids

Tensor downscale_half(const Tensor& image) {
  const auto& s = image.shape();
  if (s.size() != 3 || s[1] % 2 != 0 || s[2] % 2 != 0)
    throw ValidationError("downscale_half: needs [C,H,W] with even H and W, got " +
                          shape_str(s));
  const size_t C = s[0], H = s[1], W = s[2];
  Tensor out = Tensor::zeros({C, H / 2, W / 2});
  double* o = out.data_f64();
  std::vector<double> src = image.to_vector();
  for (size_t c = 0; c < C; ++c)
    for (size_t y = 0; y < H / 2; ++y)
      for (size_t x = 0; x < W / 2; ++x) {
        const size_t b = c * H * W + 2 * y * W + 2 * x;
        o[c * (H / 2) * (W / 2) + y * (W / 2) + x] =
            0.25 * (src[b] + src[b + 1] + src[b + W] + src[b + W + 1]);
      }
  return out;
}

std::vector<GridSample> make_grids(const Corpus& corpus, size_t stride) {
  if (stride == 0) throw ValidationError("make_grids: stride must be positive");
  // Group frames by (subject, video) preserving first-appearance order.
  std::vector<std::vector<const Sample*>> groups;
  std::map<std::pair<std::string, std::string>, size_t> group_index;
  for (const auto& s : corpus.samples) {
    auto key = std::make_pair(s.subject_id, s.video_id);
    auto it = group_index.find(key);
    if (it == group_index.end()) {
      group_index.emplace(key, groups.size());
      groups.emplace_back();
      it = group_index.find(key);
    }
    groups[it->second].push_back(&s);
  }

  std::vector<GridSample> out;
  for (const auto& g : groups) {
    if (g.size() < 4) continue;
    for (size_t start = 0; start + 4 <= g.size(); start += stride) {
      std::array<Tensor, 4> tiles;
      for (size_t i = 0; i < 4; ++i) tiles[i] = downscale_half(g[start + i]->image);
      const size_t C = tiles[0].shape()[0];
      const size_t h = tiles[0].shape()[1];
      const size_t w = tiles[0].shape()[2];
      Tensor grid = Tensor::zeros({C, 2 * h, 2 * w});
      double* gd = grid.data_f64();
      for (size_t i = 0; i < 4; ++i) {
        const size_t oy = (i / 2) * h;  // f1 top-left, f2 top-right, f3/f4 below
        const size_t ox = (i % 2) * w;
        std::vector<double> td = tiles[i].to_vector();
        for (size_t c = 0; c < C; ++c)
          for (size_t y = 0; y < h; ++y)
            for (size_t x = 0; x < w; ++x)
              gd[c * 4 * h * w + (oy + y) * 2 * w + ox + x] = td[c * h * w + y * w + x];
      }
      GridSample gs;
      gs.subject_id = g[start]->subject_id;
      gs.video_id = g[start]->video_id;
      gs.last_frame_index = g[start + 3]->frame_index;
      gs.image = std::move(grid);
      gs.label = g[start + 3]->label;
      out.push_back(std::move(gs));
    }
  }
  return out;
}

// ------------------------------------------------------------------ mixup

std::array<double, 2> blend_labels(const std::array<double, 2>& a,
                                   const std::array<double, 2>& b, double lambda) {
  return {lambda * a[0] + (1.0 - lambda) * b[0], lambda * a[1] + (1.0 - lambda) * b[1]};
}

Tensor blend_images(const Tensor& a, const Tensor& b, double lambda) {
  if (a.shape() != b.shape())
    throw ValidationError("blend_images: shapes " + shape_str(a.shape()) + " and " +
                          shape_str(b.shape()) + " differ");
  Tensor mixed = Tensor::zeros(a.shape(), a.dtype());
  const auto xa = a.to_vector();
  const auto xb = b.to_vector();
  for (size_t p = 0; p < xa.size(); ++p)
    mixed.set_item(p, lambda * xa[p] + (1.0 - lambda) * xb[p]);
  return mixed;
}

std::vector<MixSample> mixup(const std::vector<MixSample>& batch, double alpha,
                             double fraction, bool same_subject, uint64_t seed) {
  if (alpha <= 0.0)
    throw ValidationError("mixup: alpha must be positive, got " + std::to_string(alpha));
  if (fraction < 0.0 || fraction > 1.0)
    throw ValidationError("mixup: fraction must lie in [0, 1]");
  std::vector<MixSample> out = batch;
  if (batch.empty() || fraction == 0.0) return out;

  Prng rng = Prng(seed).split("mixup");
  const size_t n_mix =
      static_cast<size_t>(std::llround(fraction * static_cast<double>(batch.size())));
  std::vector<size_t> pool(batch.size());
  std::iota(pool.begin(), pool.end(), 0);
  rng.shuffle(pool);
  std::vector<size_t> chosen(pool.begin(), pool.begin() + std::min(n_mix, pool.size()));
  std::sort(chosen.begin(), chosen.end());

  auto hard = [](const MixSample& s) { return s.label[1] >= s.label[0] ? 1 : 0; };

  for (size_t i : chosen) {
    std::vector<size_t> partners;
    for (size_t j = 0; j < batch.size(); ++j) {
      if (j == i || hard(batch[j]) == hard(batch[i])) continue;
      if (same_subject && batch[j].subject_id != batch[i].subject_id) continue;
      partners.push_back(j);
    }
    if (partners.empty()) continue;
    const size_t j = partners[rng.below(partners.size())];
    const double lambda = rng.beta(alpha, alpha);
    out[i].image = blend_images(batch[i].image, batch[j].image, lambda);
    out[i].label = blend_labels(batch[i].label, batch[j].label, lambda);
  }
  return out;
}

// -------------------------------------------------------------- synthetic

namespace {

struct Region {
  size_t y0, y1, x0, x1;  // half-open pixel ranges
};

std::vector<Region> au_regions(size_t size) {
  auto px = [&](double f) {
    return static_cast<size_t>(std::lround(f * static_cast<double>(size)));
  };
  // Compact features: brow band directly above the two eyes, nose centered
  // below. Together they cover ~14% of the face.
  return {
      {px(0.25), px(0.375), px(0.25), px(0.75)},
      {px(0.375), px(0.5), px(0.25), px(0.5)},
      {px(0.375), px(0.5), px(0.5), px(0.75)},
      {px(0.5), px(0.625), px(0.4375), px(0.5625)},
  };
}

void add_region(std::vector<double>& img, size_t size, const Region& r, double amount) {
  if (amount == 0.0) return;
  for (size_t y = r.y0; y < r.y1 && y < size; ++y)
    for (size_t x = r.x0; x < r.x1 && x < size; ++x) img[y * size + x] += amount;
}

// Contrast budget of the generator, tuned once against the reference
// corpus: base/texture/blob levels keep the background quiet, the region
// gains decide how visible each AU group is at full intensity.
constexpr double kBaseLevel = 0.22;
constexpr double kTextureAmp = 0.006;
constexpr double kBlobAmp = 0.02;
constexpr double kFrameNoise = 0.02;
constexpr double kBrowGain = 0.20;
constexpr double kEyeGain = 0.18;
constexpr double kEyeClosureGain = 0.12;
constexpr double kNoseGain = 0.18;
constexpr double kEventProb = 0.65;

}  // namespace

Tensor au_region_mask(size_t image_size) {
  Tensor mask = Tensor::zeros({image_size, image_size});
  double* m = mask.data_f64();
  for (const auto& r : au_regions(image_size))
    for (size_t y = r.y0; y < r.y1 && y < image_size; ++y)
      for (size_t x = r.x0; x < r.x1 && x < image_size; ++x) m[y * image_size + x] = 1.0;
  return mask;
}

Corpus gen_synthetic(const SyntheticParams& p) {
  if (p.num_subjects == 0 || p.videos_per_subject == 0 || p.frames_per_video == 0)
    throw ValidationError("gen_synthetic: sizes must be positive");
  if (p.signal_strength < 0.0 || p.signal_strength > 1.0)
    throw ValidationError("gen_synthetic: signal_strength must lie in [0, 1]");
  if (p.image_size < 8) throw ValidationError("gen_synthetic: image_size must be >= 8");

  const size_t S = p.image_size;
  const auto regions = au_regions(S);
  Corpus corpus;
  corpus.channels = 1;
  corpus.height = S;
  corpus.width = S;
  Prng root(p.seed);

  for (size_t subj = 0; subj < p.num_subjects; ++subj) {
    Prng srng = root.split("subject").split(subj);

    // Identity texture: low-frequency cosine mix plus two blobs placed
    // outside the AU regions (top margin or chin area). Kept dim so the
    // planted AU brightness dominates the contrast budget.
    std::vector<double> base(S * S, kBaseLevel);
    double freq[4][2], phase[4];
    for (int w = 0; w < 4; ++w) {
      freq[w][0] = srng.uniform(0.5, 2.5);
      freq[w][1] = srng.uniform(0.5, 2.5);
      phase[w] = srng.uniform(0.0, 2.0 * M_PI);
    }
    for (size_t y = 0; y < S; ++y)
      for (size_t x = 0; x < S; ++x) {
        double fy = static_cast<double>(y) / static_cast<double>(S);
        double fx = static_cast<double>(x) / static_cast<double>(S);
        double v = 0.0;
        for (int w = 0; w < 4; ++w)
          v += std::cos(2.0 * M_PI * (freq[w][0] * fx + freq[w][1] * fy) + phase[w]);
        base[y * S + x] += kTextureAmp * v;
      }
    for (int blob = 0; blob < 2; ++blob) {
      const double cy = blob == 0 ? srng.uniform(0.03, 0.15) : srng.uniform(0.78, 0.92);
      const double cx = srng.uniform(0.15, 0.85);
      const double sigma = 0.09;
      for (size_t y = 0; y < S; ++y)
        for (size_t x = 0; x < S; ++x) {
          double dy = static_cast<double>(y) / static_cast<double>(S) - cy;
          double dx = static_cast<double>(x) / static_cast<double>(S) - cx;
          base[y * S + x] += kBlobAmp * std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
        }
    }

    for (size_t vid = 0; vid < p.videos_per_subject; ++vid) {
      Prng vrng = srng.split("video").split(vid);
      const size_t F = p.frames_per_video;

      // Pain burst: triangular envelope over a contiguous window.
      const bool has_event = vrng.bernoulli(kEventProb);
      size_t t0 = 0, dur = 0;
      if (has_event) {
        dur = std::max<size_t>(4, static_cast<size_t>(std::llround(
                                      static_cast<double>(F) * vrng.uniform(0.25, 0.5))));
        dur = std::min(dur, F);
        t0 = F > dur ? vrng.below(F - dur + 1) : 0;
      }
      const int au4_peak = 1 + static_cast<int>(vrng.below(5));
      const int au6_peak = static_cast<int>(vrng.below(6));
      const int au7_peak = static_cast<int>(vrng.below(6));
      const int au9_peak = static_cast<int>(vrng.below(6));
      const int au10_peak = static_cast<int>(vrng.below(6));
      const int au43_peak = vrng.bernoulli(0.5) ? 1 : 0;

      Prng frng = vrng.split("frame-noise");
      for (size_t t = 0; t < F; ++t) {
        // Triangular burst envelope; the slopes produce the near-threshold
        // frames that dominate the training signal late in a run.
        double env = 0.0;
        if (has_event && t >= t0 && t < t0 + dur) {
          env = dur > 1 ? 1.0 - std::abs(2.0 * static_cast<double>(t - t0) /
                                             static_cast<double>(dur - 1) -
                                         1.0)
                        : 1.0;
        }
        auto level = [&](int peak) {
          return static_cast<int>(std::lround(env * static_cast<double>(peak)));
        };
        AUVector au;
        au.au4 = level(au4_peak);
        au.au6 = level(au6_peak);
        au.au7 = level(au7_peak);
        au.au9 = level(au9_peak);
        au.au10 = level(au10_peak);
        au.au43 = level(au43_peak);

        std::vector<double> img = base;
        for (auto& v : img) v += frng.uniform(-kFrameNoise, kFrameNoise);
        const double gain = p.signal_strength;
        add_region(img, S, regions[0], gain * kBrowGain * au.au4 / 5.0);
        const double eye = gain * (kEyeGain * std::max(au.au6, au.au7) / 5.0 + kEyeClosureGain * au.au43);
        add_region(img, S, regions[1], eye);
        add_region(img, S, regions[2], eye);
        add_region(img, S, regions[3], gain * kNoseGain * std::max(au.au9, au.au10) / 5.0);
        for (auto& v : img) v = std::clamp(v, 0.0, 1.0);

        Sample s;
        char sid[16], vidbuf[16];
        std::snprintf(sid, sizeof sid, "s%02zu", subj);
        std::snprintf(vidbuf, sizeof vidbuf, "v%02zu", vid);
        s.subject_id = sid;
        s.video_id = vidbuf;
        s.frame_index = static_cast<long>(t);
        s.image = Tensor::from_data({1, S, S}, img);
        s.au = au;
        s.pspi = pspi_score(au);
        s.label = binarize(s.pspi);
        corpus.samples.push_back(std::move(s));
      }
    }
  }
  return corpus;
}

// --------------------------------------------------------------- manifest

namespace {

std::vector<std::string> split_csv_row(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  fields.push_back(cur);
  return fields;
}

long parse_long(const std::string& s, const std::string& context) {
  try {
    size_t used = 0;
    long v = std::stol(s, &used);
    if (used != s.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw ValidationError(context + ": not an integer: '" + s + "'");
  }
}

constexpr const char* kManifestHeader =
    "subject_id,video_id,frame_index,image_path,au4,au6,au7,au9,au10,au43";

}  // namespace

Corpus load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError(path + ": cannot open manifest");
  const fs::path base_dir = fs::path(path).parent_path();

  std::string line;
  if (!std::getline(in, line)) throw FormatError(path + ": empty manifest");
  auto header = split_csv_row(line);
  auto expected = split_csv_row(kManifestHeader);
  bool has_pspi = false;
  if (header.size() == expected.size() + 1 && header.back() == "pspi") {
    has_pspi = true;
  } else if (header.size() != expected.size()) {
    throw FormatError(path + ": unexpected manifest header '" + line + "'");
  }
  for (size_t i = 0; i < expected.size(); ++i)
    if (header[i] != expected[i])
      throw FormatError(path + ": unexpected manifest header '" + line + "'");

  Corpus corpus;
  std::map<std::pair<std::string, std::string>, long> last_frame;
  size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty() || line == "\r") continue;
    const std::string ctx = path + ": row " + std::to_string(row);
    auto fields = split_csv_row(line);
    if (fields.size() != header.size())
      throw ValidationError(ctx + ": expected " + std::to_string(header.size()) +
                            " fields, got " + std::to_string(fields.size()));
    Sample s;
    s.subject_id = fields[0];
    s.video_id = fields[1];
    s.frame_index = parse_long(fields[2], ctx);
    s.au.au4 = static_cast<int>(parse_long(fields[4], ctx));
    s.au.au6 = static_cast<int>(parse_long(fields[5], ctx));
    s.au.au7 = static_cast<int>(parse_long(fields[6], ctx));
    s.au.au9 = static_cast<int>(parse_long(fields[7], ctx));
    s.au.au10 = static_cast<int>(parse_long(fields[8], ctx));
    s.au.au43 = static_cast<int>(parse_long(fields[9], ctx));
    try {
      s.pspi = pspi_score(s.au);
    } catch (const ValidationError& e) {
      throw ValidationError(ctx + ": " + e.what());
    }
    if (has_pspi) {
      const long declared = parse_long(fields[10], ctx);
      if (declared != s.pspi)
        throw ValidationError(ctx + ": pspi mismatch for " + s.subject_id + "/" +
                              s.video_id + " frame " + std::to_string(s.frame_index) +
                              ": column says " + std::to_string(declared) +
                              ", AUs imply " + std::to_string(s.pspi));
    }
    s.label = binarize(s.pspi);

    const fs::path img_path = base_dir / fields[3];
    s.image = read_image(img_path.string());
    const auto& sh = s.image.shape();
    if (corpus.samples.empty()) {
      corpus.channels = sh[0];
      corpus.height = sh[1];
      corpus.width = sh[2];
    } else if (sh[0] != corpus.channels || sh[1] != corpus.height || sh[2] != corpus.width) {
      throw ValidationError(ctx + ": image size " + shape_str(sh) +
                            " differs from corpus " +
                            shape_str({corpus.channels, corpus.height, corpus.width}));
    }

    auto key = std::make_pair(s.subject_id, s.video_id);
    auto it = last_frame.find(key);
    if (it != last_frame.end() && s.frame_index <= it->second)
      throw ValidationError(ctx + ": frame_index " + std::to_string(s.frame_index) +
                            " not strictly increasing within video " + s.video_id);
    last_frame[key] = s.frame_index;

    corpus.samples.push_back(std::move(s));
  }
  if (corpus.samples.empty()) throw FormatError(path + ": manifest has no samples");
  return corpus;
}

void save_corpus(const Corpus& corpus, const std::string& dir) {
  if (corpus.samples.empty()) throw ValidationError("save_corpus: empty corpus");
  std::error_code ec;
  fs::create_directories(fs::path(dir) / "images", ec);
  if (ec) throw IoError(dir + ": cannot create output directory");

  const std::string manifest_path = (fs::path(dir) / "manifest.csv").string();
  std::ofstream out(manifest_path);
  if (!out) throw IoError(manifest_path + ": cannot open for writing");
  out << kManifestHeader << ",pspi\n";
  const bool color = corpus.channels == 3;
  for (const auto& s : corpus.samples) {
    std::ostringstream name;
    name << "images/" << s.subject_id << "_" << s.video_id << "_f" << s.frame_index
         << (color ? ".ppm" : ".pgm");
    const std::string img_path = (fs::path(dir) / name.str()).string();
    if (color)
      write_ppm(s.image, img_path);
    else
      write_pgm(s.image, img_path);
    out << s.subject_id << "," << s.video_id << "," << s.frame_index << "," << name.str()
        << "," << s.au.au4 << "," << s.au.au6 << "," << s.au.au7 << "," << s.au.au9 << ","
        << s.au.au10 << "," << s.au.au43 << "," << s.pspi << "\n";
  }
  if (!out) throw IoError(manifest_path + ": write failed");
}

}  // namespace attnpain::data
