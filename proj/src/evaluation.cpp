#include "icmf/evaluation.hpp"

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <iomanip>
#include <map>
#include <sstream>
#include <thread>

#include "icmf/click_oracle.hpp"
#include "icmf/image.hpp"
#include "icmf/model.hpp"
#include "icmf/seg_head.hpp"

namespace icmf {

EvalRecord evaluate_instance(const Segmenter& seg, const Tensor& image, const BitMask& gt,
                             const EvalOptions& opts, std::string instance_id) {
  if (gt.empty_mask()) throw ContractError("evaluate_instance: empty ground truth");
  if (image.rank() != 3 || image.dim(1) != gt.height || image.dim(2) != gt.width)
    throw ShapeError("evaluate_instance: image " + shape_str(image.shape()) + " vs mask " +
                     std::to_string(gt.height) + "x" + std::to_string(gt.width));
  if (opts.max_clicks == 0 || opts.thresholds.empty())
    throw ContractError("evaluate_instance: need max_clicks > 0 and at least one threshold");
  const double stop_at = *std::max_element(opts.thresholds.begin(), opts.thresholds.end());

  EvalRecord rec;
  rec.instance_id = std::move(instance_id);
  InteractionState state;
  Click click = first_click(gt);
  for (std::size_t k = 0; k < opts.max_clicks; ++k) {
    state.add_click(click, gt.height, gt.width);
    rec.clicks.push_back(state.clicks.back());
    const BitMask pred = binarize(seg.predict(image, state, &gt));
    const double score = iou(pred, gt);
    rec.ious.push_back(score);
    if (score >= stop_at || k + 1 == opts.max_clicks) break;
    state.prev_mask = pred;
    auto next = next_click(pred, gt, ClickPolicy::eval());
    if (!next) break;  // unreachable: pred == gt means IoU 1
    click = *next;
  }
  return rec;
}

namespace {

std::size_t clicks_to(const EvalRecord& r, double threshold) {
  for (std::size_t k = 0; k < r.ious.size(); ++k)
    if (r.ious[k] >= threshold) return k + 1;
  return 0;
}

}  // namespace

double noc(const std::vector<EvalRecord>& records, double threshold, std::size_t max_clicks) {
  if (records.empty()) throw ContractError("noc of an empty record set");
  double total = 0.0;
  for (const auto& r : records) {
    const std::size_t k = clicks_to(r, threshold);
    total += static_cast<double>(k ? k : max_clicks);
  }
  return total / static_cast<double>(records.size());
}

std::size_t nof(const std::vector<EvalRecord>& records, double threshold) {
  return static_cast<std::size_t>(std::count_if(
      records.begin(), records.end(), [&](const EvalRecord& r) { return clicks_to(r, threshold) == 0; }));
}

std::vector<double> miou_curve(const std::vector<EvalRecord>& records, std::size_t max_clicks) {
  std::vector<double> curve(max_clicks, 0.0);
  if (records.empty()) return curve;
  for (const auto& r : records) {
    if (r.ious.empty()) continue;
    for (std::size_t k = 0; k < max_clicks; ++k) curve[k] += r.ious[std::min(k, r.ious.size() - 1)];
  }
  for (double& v : curve) v /= static_cast<double>(records.size());
  return curve;
}

EvalSummary summarize(const std::vector<EvalRecord>& records, std::size_t max_clicks) {
  EvalSummary s;
  s.n_instances = records.size();
  s.miou_curve = miou_curve(records, max_clicks);
  if (records.empty()) return s;
  s.noc85 = noc(records, 0.85, max_clicks);
  s.noc90 = noc(records, 0.90, max_clicks);
  s.nof85 = nof(records, 0.85);
  s.nof90 = nof(records, 0.90);
  return s;
}

void to_json(nlohmann::json& j, const EvalSummary& s) {
  j = nlohmann::json{{"noc85", s.noc85},           {"noc90", s.noc90},
                     {"nof85", s.nof85},           {"nof90", s.nof90},
                     {"miou_curve", s.miou_curve}, {"n_instances", s.n_instances}};
}

void to_json(nlohmann::json& j, const EvalRecord& r) {
  j = nlohmann::json{{"instance_id", r.instance_id}, {"ious", r.ious}, {"clicks", r.clicks}};
}

std::string records_csv(const std::vector<EvalRecord>& records) {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "instance_id,noc85,noc90,final_iou,ious\n";
  for (const auto& r : records) {
    const std::size_t a = clicks_to(r, 0.85), b = clicks_to(r, 0.90);
    os << r.instance_id << ',';
    if (a) os << a;
    os << ',';
    if (b) os << b;
    os << ',' << (r.ious.empty() ? 0.0 : r.ious.back()) << ',';
    for (std::size_t k = 0; k < r.ious.size(); ++k) os << (k ? " " : "") << r.ious[k];
    os << '\n';
  }
  return os.str();
}

std::vector<EvalRecord> evaluate_dataset(const Segmenter& seg, const std::vector<EvalSample>& samples,
                                         const EvalOptions& opts, std::size_t threads) {
  std::vector<EvalRecord> out(samples.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < samples.size(); i = next++)
      out[i] = evaluate_instance(seg, samples[i].image, samples[i].gt, opts, samples[i].id);
  };
  threads = std::clamp<std::size_t>(threads, 1, std::max<std::size_t>(1, samples.size()));
  if (threads == 1) {
    worker();
    return out;
  }
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  return out;
}

PairDataset load_pair_dataset(const std::string& dir, std::size_t side) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw DataError("'" + dir + "' is not a directory");
  std::map<std::string, fs::path> images, masks;
  PairDataset ds;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const fs::path& p = entry.path();
    if (p.extension() != ".png") continue;
    const std::string stem = p.stem().string();
    const std::string suffix = "_mask";
    if (stem.size() > suffix.size() && stem.ends_with(suffix))
      masks[stem.substr(0, stem.size() - suffix.size())] = p;
    else
      images[stem] = p;
  }
  for (const auto& [name, path] : masks)
    if (!images.count(name)) ds.rejects.push_back(path.filename().string() + ": no matching image");
  for (const auto& [name, path] : images) {
    auto m = masks.find(name);
    if (m == masks.end()) {
      ds.rejects.push_back(path.filename().string() + ": no matching mask");
      continue;
    }
    try {
      const Image8 img = decode_png(read_file(path.string()), 3);
      const Image8 gray = decode_png(read_file(m->second.string()), 1);
      if (img.width != gray.width || img.height != gray.height) {
        ds.rejects.push_back(m->second.filename().string() + ": size differs from image");
        continue;
      }
      BitMask gt = resize_nearest(pad_to_square(gray_to_mask(gray, 128)), side, side);
      if (gt.empty_mask()) {
        ds.rejects.push_back(m->second.filename().string() + ": empty mask");
        continue;
      }
      Tensor t = resize_bilinear(pad_to_square(image_to_tensor(img)), side, side);
      ds.samples.push_back({name, std::move(t), std::move(gt)});
    } catch (const DataError& e) {
      ds.rejects.push_back(path.filename().string() + ": " + e.what());
    }
  }
  return ds;
}

}  // namespace icmf
