#include "equine/ethogram.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "equine/error.hpp"

namespace equine {
namespace {

constexpr std::array<std::string_view, 4> kEmotionNames{"Alarmed", "Annoyed", "Curious",
                                                        "Relaxed"};
constexpr std::array<std::string_view, 3> kEyesNames{"OpenNoSclera", "OpenSomeSclera",
                                                     "PartiallyToMostlyShut"};
constexpr std::array<std::string_view, 4> kEarsNames{"StiffForward", "StiffBackPinned",
                                                     "ForwardRelaxed", "RelaxedSideways"};
constexpr std::array<std::string_view, 4> kNoseNames{"OpenNostrilsTense", "ClosedNostrilsTense",
                                                     "OpenNostrilsRelaxed", "RelaxedAll"};
constexpr std::array<std::string_view, 4> kNeckNames{"AboveParallel", "ParallelOrAbove",
                                                     "ApproxParallel", "ParallelOrBelow"};

template <typename Enum, std::size_t N>
std::optional<Enum> parse_name(const std::array<std::string_view, N>& names,
                               std::string_view text) noexcept {
  for (std::size_t i = 0; i < N; ++i) {
    if (names[i] == text) return static_cast<Enum>(i);
  }
  return std::nullopt;
}

template <typename Enum>
std::size_t distinct_values(const std::vector<CueProfile>& rows, Enum CueAnnotation::*member) {
  std::set<Enum> seen;
  for (const auto& row : rows) seen.insert(row.cues.*member);
  return seen.size();
}

}  // namespace

std::string_view to_string(EmotionLabel label) noexcept { return kEmotionNames[index_of(label)]; }
std::string_view to_string(Eyes v) noexcept { return kEyesNames[static_cast<std::size_t>(v)]; }
std::string_view to_string(Ears v) noexcept { return kEarsNames[static_cast<std::size_t>(v)]; }
std::string_view to_string(Nose v) noexcept { return kNoseNames[static_cast<std::size_t>(v)]; }
std::string_view to_string(Neck v) noexcept { return kNeckNames[static_cast<std::size_t>(v)]; }

std::optional<EmotionLabel> parse_emotion(std::string_view text) noexcept {
  return parse_name<EmotionLabel>(kEmotionNames, text);
}
std::optional<Eyes> parse_eyes(std::string_view text) noexcept {
  return parse_name<Eyes>(kEyesNames, text);
}
std::optional<Ears> parse_ears(std::string_view text) noexcept {
  return parse_name<Ears>(kEarsNames, text);
}
std::optional<Nose> parse_nose(std::string_view text) noexcept {
  return parse_name<Nose>(kNoseNames, text);
}
std::optional<Neck> parse_neck(std::string_view text) noexcept {
  return parse_name<Neck>(kNeckNames, text);
}

int match_count(const CueAnnotation& a, const CueAnnotation& b) noexcept {
  return int{a.eyes == b.eyes} + int{a.ears == b.ears} + int{a.nose == b.nose} +
         int{a.neck == b.neck};
}

const CueProfileTable& CueProfileTable::canonical() {
  // Curious shares the eye state of Alarmed ("open with little or no sclera");
  // its neck row ("usually parallel, may be slightly below or above") is
  // encoded as ApproxParallel.
  static const CueProfileTable table{{
      {EmotionLabel::Alarmed,
       {Eyes::OpenNoSclera, Ears::StiffForward, Nose::OpenNostrilsTense, Neck::AboveParallel}},
      {EmotionLabel::Annoyed,
       {Eyes::OpenSomeSclera, Ears::StiffBackPinned, Nose::ClosedNostrilsTense,
        Neck::ParallelOrAbove}},
      {EmotionLabel::Curious,
       {Eyes::OpenNoSclera, Ears::ForwardRelaxed, Nose::OpenNostrilsRelaxed,
        Neck::ApproxParallel}},
      {EmotionLabel::Relaxed,
       {Eyes::PartiallyToMostlyShut, Ears::RelaxedSideways, Nose::RelaxedAll,
        Neck::ParallelOrBelow}},
  }};
  return table;
}

const CueProfile* CueProfileTable::find(EmotionLabel label) const noexcept {
  auto it = std::find_if(rows_.begin(), rows_.end(),
                         [label](const CueProfile& p) { return p.label == label; });
  return it == rows_.end() ? nullptr : &*it;
}

CueMatchResult classify_cues(const CueAnnotation& cues, const CueProfileTable& table) {
  if (table.size() == 0) throw std::invalid_argument("classify_cues: empty profile table");

  std::array<int, kNumEmotions> best_per_label;
  best_per_label.fill(-1);
  for (const auto& row : table.rows()) {
    auto& slot = best_per_label[index_of(row.label)];
    slot = std::max(slot, match_count(cues, row.cues));
  }

  CueMatchResult result;
  result.score = *std::max_element(best_per_label.begin(), best_per_label.end());
  for (EmotionLabel label : kEmotionLabels) {
    if (best_per_label[index_of(label)] == result.score) result.tied.push_back(label);
  }
  result.best = result.tied.front();
  result.ambiguous = result.tied.size() > 1;
  return result;
}

TableValidation validate_profile_table(const CueProfileTable& table) {
  TableValidation report;
  const auto& rows = table.rows();
  if (rows.size() != kNumEmotions) {
    report.violations.push_back("expected 4 profiles, got " + std::to_string(rows.size()));
  }

  for (EmotionLabel label : kEmotionLabels) {
    auto n = std::count_if(rows.begin(), rows.end(),
                           [label](const CueProfile& p) { return p.label == label; });
    if (n == 0) report.violations.push_back("missing profile for " + std::string(to_string(label)));
    if (n > 1) report.violations.push_back("duplicate profile for " + std::string(to_string(label)));
  }

  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = i + 1; j < rows.size(); ++j) {
      if (rows[i].cues == rows[j].cues) {
        report.violations.push_back("profiles not distinct: " +
                                    std::string(to_string(rows[i].label)) + " and " +
                                    std::string(to_string(rows[j].label)));
      }
    }
  }

  // Each dimension must use as many distinct values as it can: all of them
  // when the dimension has at least as many values as rows. Eyes has three
  // states for four emotions, so exactly one eye state is shared.
  auto check = [&](std::size_t used, std::size_t domain, std::string_view name) {
    if (used < std::min(domain, rows.size())) {
      report.violations.push_back("cue values reused in " + std::string(name));
    }
  };
  check(distinct_values(rows, &CueAnnotation::eyes), kAllEyes.size(), "eyes");
  check(distinct_values(rows, &CueAnnotation::ears), kAllEars.size(), "ears");
  check(distinct_values(rows, &CueAnnotation::nose), kAllNose.size(), "nose");
  check(distinct_values(rows, &CueAnnotation::neck), kAllNeck.size(), "neck");
  return report;
}

std::string format_profile_table(const CueProfileTable& table) {
  std::ostringstream out;
  out << "# equine cue profile table v1\n";
  out << "# emotion eyes ears nose neck\n";
  for (const auto& row : table.rows()) {
    out << to_string(row.label) << ' ' << to_string(row.cues.eyes) << ' '
        << to_string(row.cues.ears) << ' ' << to_string(row.cues.nose) << ' '
        << to_string(row.cues.neck) << '\n';
  }
  return out.str();
}

CueProfileTable parse_profile_table(std::string_view text) {
  std::vector<CueProfile> rows;
  std::istringstream in{std::string(text)};
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;

    std::istringstream fields(line);
    std::string emotion, eyes, ears, nose, neck, extra;
    fields >> emotion >> eyes >> ears >> nose >> neck;
    auto where = "profile table line " + std::to_string(line_no) + ": ";
    if (neck.empty() || (fields >> extra)) throw DataError(where + "expected 5 columns");

    auto label = parse_emotion(emotion);
    auto e = parse_eyes(eyes);
    auto a = parse_ears(ears);
    auto n = parse_nose(nose);
    auto k = parse_neck(neck);
    if (!label) throw DataError(where + "unknown label " + emotion);
    if (!e || !a || !n || !k) throw DataError(where + "unknown cue value");
    rows.push_back({*label, {*e, *a, *n, *k}});
  }
  return CueProfileTable(std::move(rows));
}

CueProfileTable load_profile_table(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open profile table " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_profile_table(buffer.str());
}

void save_profile_table(const CueProfileTable& table, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write profile table " + path.string());
  out << format_profile_table(table);
}

}  // namespace equine
