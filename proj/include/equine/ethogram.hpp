#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace equine {

/// The four emotion categories. Declaration order is the canonical order used
/// for tie-breaking and for confusion-matrix axes.
enum class EmotionLabel : std::uint8_t { Alarmed, Annoyed, Curious, Relaxed };

inline constexpr std::size_t kNumEmotions = 4;
inline constexpr std::array<EmotionLabel, kNumEmotions> kEmotionLabels{
    EmotionLabel::Alarmed, EmotionLabel::Annoyed, EmotionLabel::Curious,
    EmotionLabel::Relaxed};

constexpr std::size_t index_of(EmotionLabel label) noexcept {
  return static_cast<std::size_t>(label);
}

std::string_view to_string(EmotionLabel label) noexcept;
std::optional<EmotionLabel> parse_emotion(std::string_view text) noexcept;

enum class Eyes : std::uint8_t { OpenNoSclera, OpenSomeSclera, PartiallyToMostlyShut };
enum class Ears : std::uint8_t { StiffForward, StiffBackPinned, ForwardRelaxed, RelaxedSideways };
enum class Nose : std::uint8_t {
  OpenNostrilsTense,
  ClosedNostrilsTense,
  OpenNostrilsRelaxed,
  RelaxedAll
};
enum class Neck : std::uint8_t { AboveParallel, ParallelOrAbove, ApproxParallel, ParallelOrBelow };

inline constexpr std::array<Eyes, 3> kAllEyes{Eyes::OpenNoSclera, Eyes::OpenSomeSclera,
                                              Eyes::PartiallyToMostlyShut};
inline constexpr std::array<Ears, 4> kAllEars{Ears::StiffForward, Ears::StiffBackPinned,
                                              Ears::ForwardRelaxed, Ears::RelaxedSideways};
inline constexpr std::array<Nose, 4> kAllNose{Nose::OpenNostrilsTense, Nose::ClosedNostrilsTense,
                                              Nose::OpenNostrilsRelaxed, Nose::RelaxedAll};
inline constexpr std::array<Neck, 4> kAllNeck{Neck::AboveParallel, Neck::ParallelOrAbove,
                                              Neck::ApproxParallel, Neck::ParallelOrBelow};

std::string_view to_string(Eyes v) noexcept;
std::string_view to_string(Ears v) noexcept;
std::string_view to_string(Nose v) noexcept;
std::string_view to_string(Neck v) noexcept;

std::optional<Eyes> parse_eyes(std::string_view text) noexcept;
std::optional<Ears> parse_ears(std::string_view text) noexcept;
std::optional<Nose> parse_nose(std::string_view text) noexcept;
std::optional<Neck> parse_neck(std::string_view text) noexcept;

/// Observable cue state of one horse, one value per dimension.
struct CueAnnotation {
  Eyes eyes{};
  Ears ears{};
  Nose nose{};
  Neck neck{};

  friend bool operator==(const CueAnnotation&, const CueAnnotation&) = default;
};

/// Number of dimensions (0..4) on which two cue annotations agree.
int match_count(const CueAnnotation& a, const CueAnnotation& b) noexcept;

struct CueProfile {
  EmotionLabel label{};
  CueAnnotation cues{};

  friend bool operator==(const CueProfile&, const CueProfile&) = default;
};

/// Emotion -> cue profile rows. May hold an invalid table (wrong row count,
/// duplicated rows) so that it can be checked with validate_profile_table.
class CueProfileTable {
 public:
  CueProfileTable() = default;
  explicit CueProfileTable(std::vector<CueProfile> rows) : rows_(std::move(rows)) {}

  /// The four ethogram rows: Alarmed, Annoyed, Curious, Relaxed.
  static const CueProfileTable& canonical();

  const std::vector<CueProfile>& rows() const noexcept { return rows_; }
  std::size_t size() const noexcept { return rows_.size(); }
  const CueProfile* find(EmotionLabel label) const noexcept;

  friend bool operator==(const CueProfileTable&, const CueProfileTable&) = default;

 private:
  std::vector<CueProfile> rows_;
};

struct CueMatchResult {
  EmotionLabel best{};
  int score = 0;
  std::vector<EmotionLabel> tied;
  bool ambiguous = false;
};

/// Scores `cues` against every profile by unweighted match count. The best
/// label is the earliest tied label in canonical order.
/// Throws std::invalid_argument on an empty table.
CueMatchResult classify_cues(const CueAnnotation& cues,
                             const CueProfileTable& table = CueProfileTable::canonical());

struct TableValidation {
  std::vector<std::string> violations;
  bool ok() const noexcept { return violations.empty(); }
};

TableValidation validate_profile_table(const CueProfileTable& table);

// Text form: a header comment, then one whitespace-separated row per emotion
// with columns `emotion eyes ears nose neck`.
std::string format_profile_table(const CueProfileTable& table);
CueProfileTable parse_profile_table(std::string_view text);
CueProfileTable load_profile_table(const std::filesystem::path& path);
void save_profile_table(const CueProfileTable& table, const std::filesystem::path& path);

}  // namespace equine
