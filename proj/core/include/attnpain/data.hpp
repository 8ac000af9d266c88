#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "attnpain/tensor.hpp"

namespace attnpain::data {

// Intensities of the six pain-relevant action units for one frame.
// au4..au10 grade 0-5, au43 (eye closure) is binary.
struct AUVector {
  int au4 = 0;
  int au6 = 0;
  int au7 = 0;
  int au9 = 0;
  int au10 = 0;
  int au43 = 0;
};

void validate_au(const AUVector& au);

// AU4 + max(AU6, AU7) + max(AU9, AU10) + AU43, range 0-16.
int pspi_score(const AUVector& au);

// 1 iff pspi > 0.
int binarize(int pspi);

struct Sample {
  std::string subject_id;
  std::string video_id;
  long frame_index = 0;
  Tensor image;  // [C,H,W], values in [0,1]
  AUVector au;
  int pspi = 0;
  int label = 0;
};

struct Corpus {
  std::vector<Sample> samples;
  size_t channels = 1;
  size_t height = 0;
  size_t width = 0;

  // Subjects in order of first appearance with their pain-frame counts.
  std::vector<std::pair<std::string, long>> subject_pain_counts() const;
};

// Subject-disjoint k folds balanced on pain-frame counts: pair the fewest-
// with the most-pain subjects, deal pairs round-robin under fold capacity,
// then exchange up to four subjects between the extreme folds while the
// max-min spread of per-fold pain totals improves.
struct FoldAssignment {
  int num_folds = 0;
  std::map<std::string, int> fold_of;

  int fold(const std::string& subject_id) const;
  std::vector<std::vector<std::string>> members() const;
};

FoldAssignment make_folds(const std::vector<std::pair<std::string, long>>& subjects,
                          int k = 5, uint64_t seed = 0);

// Re-draws minority-class entries with replacement until class counts are
// equal; returns original + extra indices, shuffled. labels[i] belongs to
// train_indices[i].
std::vector<size_t> oversample(const std::vector<size_t>& train_indices,
                               const std::vector<int>& labels, uint64_t seed);

// One 2x2 tile of four consecutive half-scaled frames from one video,
// labeled by the fourth frame.
struct GridSample {
  std::string subject_id;
  std::string video_id;
  long last_frame_index = 0;
  Tensor image;  // [C,H,W], same size as the source frames
  int label = 0;
};

// 2x2 area-average downscale; requires even height and width.
Tensor downscale_half(const Tensor& image);

// Windows of 4 consecutive frames per video (never crossing video
// boundaries), stepping by `stride`. Videos shorter than 4 frames yield
// nothing.
std::vector<GridSample> make_grids(const Corpus& corpus, size_t stride = 4);

// A training item as seen by mixup: pixels plus a soft two-class label
// [p(no-pain), p(pain)].
struct MixSample {
  Tensor image;
  std::array<double, 2> label{1.0, 0.0};
  std::string subject_id;
};

// Convex blends used by mixup: lambda*a + (1-lambda)*b.
std::array<double, 2> blend_labels(const std::array<double, 2>& a,
                                   const std::array<double, 2>& b, double lambda);
Tensor blend_images(const Tensor& a, const Tensor& b, double lambda);

// Replaces a seeded `fraction` of the batch with convex blends
// lambda*x_i + (1-lambda)*x_j, lambda ~ Beta(alpha, alpha), where the
// partner j has a distinct hard label and, when same_subject is set, the
// same subject. Samples with no eligible partner stay unmixed.
std::vector<MixSample> mixup(const std::vector<MixSample>& batch, double alpha,
                             double fraction, bool same_subject, uint64_t seed);

struct SyntheticParams {
  size_t num_subjects = 10;
  size_t videos_per_subject = 4;
  size_t frames_per_video = 25;
  double signal_strength = 1.0;
  size_t image_size = 32;
  uint64_t seed = 0;
};

// Deterministic grayscale corpus: per-subject base texture, per-video
// piecewise-linear AU envelopes, AU-specific brightness planted in fixed
// facial regions (brow, eyes, nose). Default parameters give a pain
// prevalence close to 0.2.
Corpus gen_synthetic(const SyntheticParams& params);

// [H,W] 0/1 mask of the union of planted AU regions at this image size.
Tensor au_region_mask(size_t image_size);

// CSV manifest + PGM/PPM ingestion. Header:
// subject_id,video_id,frame_index,image_path,au4,au6,au7,au9,au10,au43[,pspi]
// image_path is resolved relative to the manifest's directory.
Corpus load_manifest(const std::string& path);

// Writes <dir>/manifest.csv plus one 8-bit PGM (or PPM for 3-channel
// corpora) per frame under <dir>/images/.
void save_corpus(const Corpus& corpus, const std::string& dir);

}  // namespace attnpain::data
