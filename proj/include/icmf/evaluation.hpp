#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "icmf/clicks.hpp"
#include "icmf/mask.hpp"
#include "icmf/tensor.hpp"

namespace icmf {

class Segmenter;

struct EvalOptions {
  std::size_t max_clicks = 20;
  std::vector<double> thresholds{0.85, 0.90};
};

struct EvalRecord {
  std::string instance_id;
  std::vector<double> ious;  // ious[k]: IoU after k + 1 clicks
  std::vector<Click> clicks;
};

/// Simulated interactive session: first_click, then deterministic corrective
/// clicks, each followed by a prediction that sees the previous binarized
/// mask. Stops after `max_clicks` or once IoU reaches the largest threshold.
EvalRecord evaluate_instance(const Segmenter& seg, const Tensor& image, const BitMask& gt,
                             const EvalOptions& opts = {}, std::string instance_id = {});

/// Clicks needed to reach `threshold`; instances that never do count as `max_clicks`.
double noc(const std::vector<EvalRecord>& records, double threshold, std::size_t max_clicks = 20);
/// Instances that never reach `threshold`.
std::size_t nof(const std::vector<EvalRecord>& records, double threshold);
/// Mean IoU after 1..max_clicks clicks; stopped instances carry their last IoU forward.
std::vector<double> miou_curve(const std::vector<EvalRecord>& records, std::size_t max_clicks = 20);

struct EvalSummary {
  double noc85 = 0.0;
  double noc90 = 0.0;
  std::size_t nof85 = 0;
  std::size_t nof90 = 0;
  std::vector<double> miou_curve;
  std::size_t n_instances = 0;
};

EvalSummary summarize(const std::vector<EvalRecord>& records, std::size_t max_clicks = 20);
void to_json(nlohmann::json& j, const EvalSummary& s);
void to_json(nlohmann::json& j, const EvalRecord& r);

/// One row per instance: id, clicks to 85% and 90% (empty if never), final IoU,
/// and the space-separated IoU sequence.
std::string records_csv(const std::vector<EvalRecord>& records);

struct EvalSample {
  std::string id;
  Tensor image;  // [3, side, side]
  BitMask gt;
};

/// Evaluates every sample; `threads` > 1 spreads instances over worker threads.
/// Output order follows `samples` regardless of scheduling.
std::vector<EvalRecord> evaluate_dataset(const Segmenter& seg, const std::vector<EvalSample>& samples,
                                         const EvalOptions& opts = {}, std::size_t threads = 1);

struct PairDataset {
  std::vector<EvalSample> samples;
  std::vector<std::string> rejects;  // "file: reason"
};

/// Reads `name.png` / `name_mask.png` pairs from a directory, sorted by name.
/// Images are padded to square (bottom/right) and resized to `side`; masks
/// are thresholded at > 128 and resized with nearest neighbour. Unmatched
/// files, unreadable files and empty masks are reported, not fatal.
PairDataset load_pair_dataset(const std::string& dir, std::size_t side);

}  // namespace icmf
