// Acceptance checks. Prints one [PASS]/[FAIL] line per criterion and exits
// nonzero if any fails.

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include "equine/classifier.hpp"
#include "equine/dataset.hpp"
#include "equine/detector.hpp"
#include "equine/ethogram.hpp"
#include "equine/evaluation.hpp"
#include "equine/image_io.hpp"
#include "equine/pipeline.hpp"
#include "equine/serialization.hpp"
#include "test_support.hpp"

namespace fs = std::filesystem;
using namespace equine;

namespace {

// Tolerances and limits.
constexpr double kIouTol = 1e-9;
constexpr double kProbSumTol = 1e-6;
constexpr double kCurveTol = 1e-12;
constexpr double kEthogramLimitS = 1.0;
constexpr double kIouLimitS = 5.0;
constexpr double kSplitLimitS = 1.0;
constexpr double kOverfitLimitS = 600.0;
constexpr double kDetectorMinIou = 0.5;
constexpr double kClassifierMinAcc = 0.95;

struct Check {
  bool ok = true;
  std::ostringstream why;

  void expect(bool cond, const std::string& what) {
    if (!cond && ok) why << what;
    ok = ok && cond;
  }
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

int failures = 0;

void report(const std::string& name, const std::function<std::string(Check&)>& body) {
  Check c;
  std::string detail;
  try {
    detail = body(c);
  } catch (const std::exception& e) {
    c.ok = false;
    c.why << "exception: " << e.what();
  }
  if (!c.ok) ++failures;
  std::cout << (c.ok ? "[PASS] " : "[FAIL] ") << name << ": " << (c.ok ? detail : c.why.str()) << std::endl;
}

std::string fmt(double v, int precision = 3) {
  std::ostringstream s;
  s.precision(precision);
  s << std::fixed << v;
  return s.str();
}

// ---------------------------------------------------------------------------

std::string ethogram_oracle(Check& c) {
  const auto start = Clock::now();
  const auto& table = CueProfileTable::canonical();
  int n = 0;
  for (Eyes e : kAllEyes) {
    for (Ears a : kAllEars) {
      for (Nose s : kAllNose) {
        for (Neck k : kAllNeck) {
          const CueAnnotation cue{e, a, s, k};
          std::array<int, kNumEmotions> score{};
          for (const auto& row : table.rows()) {
            score[index_of(row.label)] = (row.cues.eyes == e) + (row.cues.ears == a) + (row.cues.nose == s) +
                                         (row.cues.neck == k);
          }
          const int best = *std::max_element(score.begin(), score.end());
          std::vector<EmotionLabel> tied;
          for (EmotionLabel l : kEmotionLabels) {
            if (score[index_of(l)] == best) tied.push_back(l);
          }
          const auto got = classify_cues(cue);
          c.expect(got.score == best && got.tied == tied && got.best == tied.front() &&
                       got.ambiguous == (tied.size() > 1),
                   "mismatch at combination " + std::to_string(n));
          ++n;
        }
      }
    }
  }
  c.expect(n == 192, "expected 192 combinations, saw " + std::to_string(n));
  for (const auto& row : table.rows()) {
    const auto r = classify_cues(row.cues);
    c.expect(r.best == row.label && r.score == 4, "canonical profile " + std::string(to_string(row.label)) + " not 4/4");
  }
  const double t = seconds_since(start);
  c.expect(t < kEthogramLimitS, "took " + fmt(t) + " s");
  return std::to_string(n) + " combinations agree, 4 profiles score 4/4, " + fmt(t) + " s";
}

std::string iou_oracle(Check& c) {
  const auto start = Clock::now();
  std::mt19937_64 rng(2024);
  double worst = 0;
  for (int i = 0; i < 1000; ++i) {
    const auto a = testing::random_box(rng, 64);
    const auto b = testing::random_box(rng, 64);
    worst = std::max(worst, std::abs(iou(a, b) - testing::pixel_iou(a, b)));
  }
  const double t = seconds_since(start);
  std::ostringstream dev;
  dev << std::scientific << std::setprecision(1) << worst;
  c.expect(worst <= kIouTol, "max deviation " + dev.str());
  c.expect(t < kIouLimitS, "took " + fmt(t) + " s");
  return "1000 pairs, max deviation " + dev.str() + ", " + fmt(t) + " s";
}

DatasetManifest labeled_manifest(int per_class) {
  DatasetManifest m;
  for (EmotionLabel l : kEmotionLabels) {
    for (int i = 0; i < per_class; ++i) {
      const std::string id = std::string(to_string(l)) + "_" + std::to_string(i);
      m.records.push_back({id, id + ".png", 300, 200});
      m.annotations.push_back({id, {0, 0, 10, 10}, l, std::nullopt, false});
    }
  }
  return m;
}

std::map<EmotionLabel, int> class_counts(const DatasetManifest& m, const std::vector<std::string>& ids) {
  std::map<EmotionLabel, int> out;
  for (const auto& id : ids) ++out[*m.find_annotation(id)->label];
  return out;
}

std::string split_protocol(Check& c) {
  const auto start = Clock::now();
  const auto m = labeled_manifest(120);
  const auto a = stratified_split(m, {100, 20, 42});
  const auto b = stratified_split(m, {100, 20, 42});
  const auto& train = a.splits.at("train");
  const auto& val = a.splits.at("val");
  c.expect(train.size() == 400 && val.size() == 80, "sizes " + std::to_string(train.size()) + "/" + std::to_string(val.size()));
  for (EmotionLabel l : kEmotionLabels) {
    c.expect(class_counts(m, train)[l] == 100 && class_counts(m, val)[l] == 20, "per-class counts off");
  }
  std::set<std::string> tr(train.begin(), train.end());
  for (const auto& id : val) c.expect(!tr.count(id), "train/val overlap");
  c.expect(a.splits == b.splits, "seeded runs differ");

  const auto folds = kfold_split(m, 10, 42);
  c.expect(folds.size() == 10, "fold count");
  std::multiset<std::string> all;
  for (const auto& f : folds) {
    c.expect(f.val.size() == 48, "fold size " + std::to_string(f.val.size()));
    for (EmotionLabel l : kEmotionLabels) c.expect(class_counts(m, f.val)[l] == 12, "fold class count");
    std::set<std::string> ftr(f.train.begin(), f.train.end());
    c.expect(ftr.size() == 432, "fold train size");
    for (const auto& id : f.val) c.expect(!ftr.count(id), "fold train/val overlap");
    all.insert(f.val.begin(), f.val.end());
  }
  c.expect(all.size() == 480 && std::set<std::string>(all.begin(), all.end()).size() == 480, "folds not a partition");
  const double t = seconds_since(start);
  c.expect(t < kSplitLimitS, "took " + fmt(t) + " s");
  return "400/80 with 100/20 per class, deterministic; 10 folds of 48 (12 per class) partition 480, " + fmt(t) + " s";
}

std::string geometry(Check& c) {
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<int> dim(16, 1600);
  int worst = 0;
  for (int i = 0; i < 100; ++i) {
    const int w = dim(rng), h = dim(rng);
    const auto r = rescale_to_height(make_uniform_image(w, h, 1, 2, 3), 200);
    const double exact = w * 200.0 / h;
    c.expect(r.image.height == 200, "height");
    c.expect(r.image.width == std::max(1, round_half_up(exact)), "width rule at " + std::to_string(w) + "x" + std::to_string(h));
    c.expect(std::abs(r.image.width - exact) <= 0.5 + 1e-9, "ratio drift at " + std::to_string(w) + "x" + std::to_string(h));
    c.expect(r.scale_factor == 200.0 / h, "scale factor");
    // Round trip from the finer of the two coordinate systems.
    const double f = r.scale_factor;
    for (int j = 0; j < 10; ++j) {
      const bool up = f > 1;
      const auto b = testing::random_box(rng, up ? std::min(w, h) : 200);
      const auto back = up ? scale_box(scale_box(b, f), 1 / f) : scale_box(scale_box(b, 1 / f), f);
      worst = std::max({worst, std::abs(back.x - b.x), std::abs(back.y - b.y), std::abs(back.w - b.w), std::abs(back.h - b.h)});
    }
  }
  c.expect(worst <= 1, "round trip off by " + std::to_string(worst) + " px");
  return "100 sizes follow round-half-up width, scale_box round trip within " + std::to_string(worst) + " px";
}

std::size_t closed_form_head(std::size_t features) { return features * 256 + 256 + 256 * 128 + 128 + 128 * 4 + 4; }

std::string classifier_suite(Check& c) {
  std::ostringstream detail;
  const std::vector<Image> probes{make_uniform_image(150, 150, 0, 0, 0), make_uniform_image(150, 150, 255, 255, 255),
                                  make_toy_roi(EmotionLabel::Annoyed, 150, 3), make_toy_roi(EmotionLabel::Relaxed, 150, 4)};
  for (BaseArchitecture base : {BaseArchitecture::Vgg16, BaseArchitecture::ResNet50V2, BaseArchitecture::Xception}) {
    ClassifierConfig cfg;
    cfg.base = base;
    cfg.seed = 1;
    const auto m = build_classifier(cfg);
    const auto fs_ = m.feature_shape();
    const std::size_t features = static_cast<std::size_t>(fs_.channels) * fs_.height * fs_.width;
    c.expect(m.head_parameter_count() == closed_form_head(features),
             std::string(to_string(base)) + " head count " + std::to_string(m.head_parameter_count()));
    for (const auto& img : probes) {
      const auto p = predict(m, img);
      double sum = 0;
      for (double v : p.probabilities) {
        c.expect(v >= 0 && v <= 1, "probability out of range");
        sum += v;
      }
      c.expect(std::abs(sum - 1) <= kProbSumTol, std::string(to_string(base)) + " probabilities sum to " + std::to_string(sum));
    }
    detail << to_string(base) << " head " << m.head_parameter_count() << " (F=" << features << "); ";
  }

  // Frozen parameters across one epoch, and serialization, on the reference VGG16.
  ClassifierConfig cfg;
  cfg.epochs = 1;
  cfg.seed = 3;
  auto m = build_classifier(cfg);
  apply_freeze_policy(m);
  const auto frozen = m.frozen_parameter_names();
  std::map<std::string, Eigen::MatrixXf> before;
  for (const auto* p : m.network().parameters()) before[p->name] = p->value;
  const auto rois = testing::toy_rois(2, 100);
  train_classifier(m, rois, rois, cfg);
  std::size_t checked = 0, changed = 0;
  const std::set<std::string> frozen_set(frozen.begin(), frozen.end());
  for (const auto* p : m.network().parameters()) {
    const bool same = p->value.size() == before[p->name].size() &&
                      std::memcmp(p->value.data(), before[p->name].data(), sizeof(float) * p->value.size()) == 0;
    if (frozen_set.count(p->name)) {
      c.expect(same, "frozen parameter " + p->name + " changed");
      ++checked;
    } else {
      changed += same ? 0 : 1;
    }
  }
  c.expect(checked > 0 && changed > 0, "nothing frozen or nothing trained");

  testing::TempDir dir("equine_accept_cls");
  save_classifier(m, dir / "c.eqm");
  const auto loaded = load_classifier(dir / "c.eqm");
  for (const auto& img : probes) c.expect(predict(loaded, img) == predict(m, img), "round trip changed a prediction");
  detail << checked << " frozen tensors bit-identical after an epoch; round trip exact";
  return detail.str();
}

std::string toy_overfit(Check& c) {
  const auto start = Clock::now();
  const auto scenes = testing::toy_detector_samples(10, 11);
  DetectorConfig dc;
  dc.epochs = 200;
  dc.seed = 1;
  const auto det = train_detector(scenes, dc);
  const auto ev = evaluate_detector(det.model, scenes, kDetectorMinIou);
  double min_iou = 1;
  for (const auto& r : ev.per_image) min_iou = std::min(min_iou, r.best ? r.iou : 0.0);
  c.expect(min_iou >= kDetectorMinIou, "detector min IoU " + fmt(min_iou));
  c.expect(ev.precision && *ev.precision == 1.0 && ev.recall == 1.0, "detector precision/recall below 1");
  const double t_det = seconds_since(start);

  const auto rois = testing::toy_rois(4, 500);
  ClassifierConfig cc;  // reference VGG16, 40 epochs, lr 1e-4, batch 16
  cc.seed = 2;
  auto m = build_classifier(cc);
  apply_freeze_policy(m);
  const auto rep = train_classifier(m, rois, rois, cc);
  int correct = 0;
  for (const auto& r : rois) correct += predict(m, r.image).label == r.label;
  const double acc = static_cast<double>(correct) / static_cast<double>(rois.size());
  c.expect(rep.epochs.size() == 40, "classifier ran " + std::to_string(rep.epochs.size()) + " epochs");
  c.expect(acc >= kClassifierMinAcc, "classifier train accuracy " + fmt(acc));
  const double t = seconds_since(start);
  c.expect(t < kOverfitLimitS, "took " + fmt(t) + " s");
  return "detector min IoU " + fmt(min_iou) + ", P=R=1 (" + fmt(t_det, 1) + " s); VGG16 train accuracy " + fmt(acc) +
         "; total " + fmt(t, 1) + " s";
}

// --- CLI helpers -------------------------------------------------------------

int run_cli(const std::string& args, const fs::path& out) {
  const std::string cmd = std::string("\"") + EQUINE_CLI_PATH + "\" " + args + " > \"" + out.string() + "\" 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

std::string end_to_end(Check& c) {
  testing::TempDir dir("equine_accept_e2e");
  const auto d = dir.path().string();
  const auto log = dir / "log.txt";
  auto step = [&](const std::string& name, const std::string& args) {
    const int code = run_cli(args, log);
    if (code != 0) throw std::runtime_error(name + " exited " + std::to_string(code) + ": " + slurp(log));
  };
  step("synth", "synth --out " + d + "/data --per-class 3 --seed 5");
  step("ingest", "ingest --dir " + d + "/data/images --labels " + d + "/data/labels.csv --manifest " + d + "/m.jsonl");
  step("split", "split --manifest " + d + "/m.jsonl --train-per-class 2 --val-per-class 1 --seed 1");
  step("train-detector", "train-detector --manifest " + d + "/m.jsonl --out " + d + "/det.eqm --epochs 200 --seed 1");
  step("train-classifier", "train-classifier --manifest " + d + "/m.jsonl --out " + d +
                               "/cls.eqm --epochs 5 --width-divisor 8 --seed 1 --report " + d + "/report.csv");

  const fs::path manifest_path = dir / "m.jsonl";
  const auto manifest = load_manifest(manifest_path);
  const auto& id = manifest.splits.at("train").front();
  const fs::path image_path = resolve_uri(manifest_path, manifest.find_record(id)->uri);
  const int code = run_cli("infer --image " + image_path.string() + " --detector " + d + "/det.eqm --classifier " + d +
                               "/cls.eqm",
                           dir / "infer.json");
  c.expect(code == 0, "infer exited " + std::to_string(code) + ": " + slurp(dir / "infer.json"));
  if (code != 0) return "";
  const auto got = nlohmann::json::parse(slurp(dir / "infer.json"));

  // Staged recomputation with the library.
  const auto det = load_detector(dir / "det.eqm");
  const auto cls = load_classifier(dir / "cls.eqm");
  const Image image = read_image(image_path);
  const auto scaled = rescale_to_height(image, 200);
  const auto best = best_roi(detect(det, scaled.image));
  c.expect(best.has_value(), "staged detection found nothing");
  if (!best) return "";
  const auto roi = *clamp_box(scale_box(best->box, 1.0 / scaled.scale_factor), image.width, image.height);
  const auto pred = predict(cls, crop_and_resize(image, roi, 150));
  c.expect(got.at("roi") == nlohmann::json(roi), "roi " + got.at("roi").dump() + " vs " + nlohmann::json(roi).dump());
  c.expect(got.at("score").get<double>() == best->score, "score differs");
  c.expect(got.at("label") == nlohmann::json(pred.label), "label differs");
  c.expect(got.at("probabilities").get<std::array<double, 4>>() == pred.probabilities, "probabilities differ");
  c.expect(got.contains("timings_ms") && got.contains("model_versions"), "missing timings or versions");

  // No ROI: untrained detector on a uniform image.
  step("train-detector (0 epochs)", "train-detector --manifest " + d + "/m.jsonl --out " + d + "/det0.eqm --epochs 0");
  write_png(make_uniform_image(300, 200, 128, 128, 128), dir / "uniform.png");
  const int no_roi = run_cli("infer --image " + d + "/uniform.png --detector " + d + "/det0.eqm --classifier " + d +
                                 "/cls.eqm",
                             log);
  c.expect(no_roi == 4, "uniform image exited " + std::to_string(no_roi));
  return "infer on " + id + " matches staged recomputation (roi " + got.at("roi").dump() + ", " +
         got.at("label").get<std::string>() + "); uniform image exits " + std::to_string(no_roi);
}

std::vector<std::vector<double>> read_csv_rows(const fs::path& p) {
  std::ifstream in(p);
  std::string line;
  std::getline(in, line);
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    std::vector<double> row;
    std::stringstream s(line);
    std::string cell;
    while (std::getline(s, cell, ',')) row.push_back(std::stod(cell));
    rows.push_back(row);
  }
  return rows;
}

std::string evaluation_identities(Check& c) {
  std::mt19937_64 rng(99);
  std::uniform_int_distribution<int> pick(0, 3), len(1, 200);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = len(rng);
    std::vector<EmotionLabel> p(n), t(n);
    for (int i = 0; i < n; ++i) {
      p[i] = kEmotionLabels[pick(rng)];
      t[i] = kEmotionLabels[pick(rng)];
    }
    const auto m = confusion_matrix(p, t);
    c.expect(static_cast<double>(m.trace()) / n == accuracy(p, t), "trace/n differs from accuracy");
  }

  std::vector<TrainReport> constant(10);
  for (auto& r : constant) {
    for (int e = 1; e <= 40; ++e) r.epochs.push_back({e, 0.7, 0.7, 0, 0});
  }
  const auto avg = cv_average(constant);
  c.expect(avg.val_accuracy.size() == 40, "constant average length");
  for (std::size_t e = 0; e < avg.val_accuracy.size(); ++e) {
    c.expect(std::abs(avg.val_accuracy[e] - 0.7) <= kCurveTol && std::abs(avg.train_accuracy[e] - 0.7) <= kCurveTol,
             "constant curve average drifts");
  }

  testing::TempDir dir("equine_accept_cv");
  const auto d = dir.path().string();
  const auto log = dir / "log.txt";
  c.expect(run_cli("synth --out " + d + "/rois --rois --per-class 10 --seed 3", log) == 0, "synth failed");
  c.expect(run_cli("ingest --dir " + d + "/rois/images --labels " + d + "/rois/labels.csv --manifest " + d + "/m.jsonl",
                   log) == 0,
           "ingest failed");
  const int code = run_cli("cv --manifest " + d + "/m.jsonl --k 10 --epochs 40 --width-divisor 8 --seed 4 --out " + d +
                               "/cv.csv --reports-dir " + d + "/folds",
                           log);
  c.expect(code == 0, "cv exited " + std::to_string(code) + ": " + slurp(log));
  if (code != 0) return "";
  const auto curve = read_csv_rows(dir / "cv.csv");
  c.expect(curve.size() == 40, "cv curve has " + std::to_string(curve.size()) + " rows");
  std::vector<std::vector<std::vector<double>>> folds;
  for (int f = 1; f <= 10; ++f) folds.push_back(read_csv_rows(dir / ("folds/fold" + std::to_string(f) + ".csv")));
  for (std::size_t e = 0; e < curve.size(); ++e) {
    c.expect(curve[e][0] == static_cast<double>(e + 1), "epoch column");
    double val = 0, train = 0;
    for (const auto& f : folds) {
      val += f.at(e)[2];
      train += f.at(e)[1];
    }
    c.expect(std::abs(curve[e][1] - val / 10) <= kCurveTol && std::abs(curve[e][2] - train / 10) <= kCurveTol,
             "cv curve is not the fold mean at epoch " + std::to_string(e + 1));
    c.expect(curve[e][1] >= 0 && curve[e][1] <= 1, "accuracy out of range");
  }
  return "trace/n = accuracy on 100 labelings; constant 0.7 averages to 0.7; cv wrote 40 epochs averaging 10 folds (final val " +
         fmt(curve.back()[1]) + ")";
}

}  // namespace

int main() {
  report("Ethogram exhaustive oracle", ethogram_oracle);
  report("IoU oracle equivalence", iou_oracle);
  report("Split protocol", split_protocol);
  report("Geometry", geometry);
  report("Classifier shape/normalization suite", classifier_suite);
  report("Toy overfit oracles", toy_overfit);
  report("End-to-end CLI", end_to_end);
  report("Evaluation identities", evaluation_identities);
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
  return failures == 0 ? 0 : 1;
}
