#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace seqrec {

/// Dense item identifier. Valid items are 1..item_count; 0 is padding.
using ItemId = std::int32_t;
inline constexpr ItemId kPadItem = 0;

// ---------------------------------------------------------------------------
// Ingestion
// ---------------------------------------------------------------------------

/// Describes a delimiter-separated interaction file. With `header` set the
/// column fields name header cells; without it they hold zero-based column
/// indices written as decimal strings ("0", "1", ...).
struct FormatSpec {
  char delimiter = ',';
  bool header = true;
  std::string user_column = "user";
  std::string item_column = "item";
  std::string time_column = "ts";
};

/// One interaction as read from disk. The views point into the owning
/// RawEventTable and stay valid as long as the table does.
struct RawEvent {
  std::string_view user;
  std::string_view item;
  std::int64_t timestamp;
};

/// Columnar store of raw events. User and item strings are interned in order
/// of first appearance, which keeps ML-20M-sized inputs within a few hundred
/// megabytes.
class RawEventTable {
 public:
  void add(std::string_view user, std::string_view item, std::int64_t timestamp);

  std::size_t size() const { return timestamps_.size(); }
  bool empty() const { return timestamps_.empty(); }
  RawEvent operator[](std::size_t row) const;

  // Interned representation, used by preprocess.
  std::uint32_t user_key(std::size_t row) const { return users_[row]; }
  std::uint32_t item_key(std::size_t row) const { return items_[row]; }
  std::int64_t timestamp(std::size_t row) const { return timestamps_[row]; }
  std::size_t distinct_users() const { return user_names_.size(); }
  std::size_t distinct_items() const { return item_names_.size(); }
  const std::string& user_name(std::uint32_t key) const { return user_names_[key]; }
  const std::string& item_name(std::uint32_t key) const { return item_names_[key]; }

 private:
  struct StringHash {
    using is_transparent = void;
    std::size_t operator()(std::string_view s) const {
      return std::hash<std::string_view>{}(s);
    }
  };
  using Interner =
      std::unordered_map<std::string, std::uint32_t, StringHash, std::equal_to<>>;

  static std::uint32_t intern(Interner& index, std::vector<std::string>& names,
                              std::string_view value);

  Interner user_index_;
  Interner item_index_;
  std::vector<std::string> user_names_;
  std::vector<std::string> item_names_;
  std::vector<std::uint32_t> users_;
  std::vector<std::uint32_t> items_;
  std::vector<std::int64_t> timestamps_;
};

/// Reads every data row, preserving file order. Throws Error(kIngest) naming
/// a missing column, or giving the 1-based line number of a malformed row.
RawEventTable ingest(const std::filesystem::path& path, const FormatSpec& format);
RawEventTable ingest(std::istream& input, const FormatSpec& format);

// ---------------------------------------------------------------------------
// Preprocessing
// ---------------------------------------------------------------------------

/// Bijection between raw identifiers and dense ids. Item slot 0 is the
/// padding token and has an empty raw name.
class Catalog {
 public:
  Catalog() = default;
  Catalog(std::vector<std::string> item_names, std::vector<std::string> user_names);

  std::int32_t item_count() const {
    return static_cast<std::int32_t>(item_names_.size()) - 1;
  }
  std::int32_t user_count() const {
    return static_cast<std::int32_t>(user_names_.size());
  }
  const std::string& item_name(ItemId item) const { return item_names_.at(item); }
  const std::string& user_name(std::int32_t user) const { return user_names_.at(user); }
  /// Returns kPadItem when the raw id is unknown.
  ItemId item_id(std::string_view raw) const;
  /// Returns -1 when the raw id is unknown.
  std::int32_t user_id(std::string_view raw) const;

  const std::vector<std::string>& item_names() const { return item_names_; }
  const std::vector<std::string>& user_names() const { return user_names_; }

 private:
  std::vector<std::string> item_names_{std::string()};
  std::vector<std::string> user_names_;
  std::unordered_map<std::string, ItemId> item_index_;
  std::unordered_map<std::string, std::int32_t> user_index_;
};

enum class FilterMode { kFixpoint, kOnePass };

struct PreprocessOptions {
  int min_user_len = 20;
  int min_item_count = 5;
  FilterMode filter_mode = FilterMode::kFixpoint;
  /// Keep only the first (user, item) event when set.
  bool deduplicate = false;
};

struct DatasetStats {
  std::int64_t users = 0;
  std::int64_t items = 0;
  std::int64_t interactions = 0;
  double avg_length = 0.0;
  double density = 0.0;  // interactions / (users * items), as a fraction
};

/// Per-user chronologically ordered dense item sequences, stored CSR-style.
class InteractionLog {
 public:
  InteractionLog() = default;
  InteractionLog(Catalog catalog, std::vector<std::int64_t> offsets,
                 std::vector<ItemId> items);

  const Catalog& catalog() const { return catalog_; }
  std::int32_t user_count() const {
    return static_cast<std::int32_t>(offsets_.size()) - 1;
  }
  std::int32_t item_count() const { return catalog_.item_count(); }
  std::int64_t interaction_count() const {
    return static_cast<std::int64_t>(items_.size());
  }
  std::span<const ItemId> sequence(std::int32_t user) const;

  const std::vector<std::int64_t>& offsets() const { return offsets_; }
  const std::vector<ItemId>& items() const { return items_; }

  DatasetStats stats() const;

 private:
  Catalog catalog_;
  std::vector<std::int64_t> offsets_{0};
  std::vector<ItemId> items_;
};

/// Builds a log directly from dense sequences (raw names are the decimal ids).
/// Used by synthetic generators and tests.
InteractionLog make_log(const std::vector<std::vector<ItemId>>& sequences,
                        std::int32_t item_count);

/// Applies the item-count and user-length filters and assigns dense ids.
/// Events are ordered per user by (timestamp, input order). Users and items
/// receive dense ids in order of first appearance in that sorted stream, with
/// users visited in order of first appearance in the input.
InteractionLog preprocess(const RawEventTable& events,
                          const PreprocessOptions& options = {});

// ---------------------------------------------------------------------------
// Split
// ---------------------------------------------------------------------------

enum class Partition : std::uint8_t { kValidation = 0, kTest = 1 };

std::string_view to_string(Partition partition);
Partition partition_from_string(std::string_view name);

/// Leave-last-N split with a random validation/test partition of users.
class SplitDataset {
 public:
  SplitDataset(InteractionLog log, int n_holdout, std::vector<Partition> labels,
               std::uint64_t seed);

  const InteractionLog& log() const { return log_; }
  std::int32_t user_count() const { return log_.user_count(); }
  std::int32_t item_count() const { return log_.item_count(); }
  int n_holdout() const { return n_holdout_; }
  std::uint64_t seed() const { return seed_; }

  /// History available for training and as generation input.
  std::span<const ItemId> train(std::int32_t user) const;
  /// Held-out ground truth in interaction order.
  std::span<const ItemId> holdout(std::int32_t user) const;
  Partition partition(std::int32_t user) const { return labels_[user]; }
  std::vector<std::int32_t> users_in(Partition partition) const;

 private:
  InteractionLog log_;
  int n_holdout_;
  std::vector<Partition> labels_;
  std::uint64_t seed_;
};

SplitDataset split(InteractionLog log, int n_holdout = 10,
                   double val_fraction = 0.5, std::uint64_t seed = 0);

// ---------------------------------------------------------------------------
// On-disk bundle
// ---------------------------------------------------------------------------
//
// <dir>/metadata.json   counts, statistics, filter parameters, seed
// <dir>/offsets.bin     (users + 1) x int32 little-endian CSR offsets
// <dir>/items.bin       interactions x int32 little-endian dense item ids
// <dir>/users.txt       raw user id per dense user id, one per line
// <dir>/items.txt       raw item id per dense item id 1..I, one per line

struct BundleInfo {
  PreprocessOptions options;
  int n_holdout = 10;
  double val_fraction = 0.5;
  std::uint64_t seed = 0;
  std::string source;
};

void write_bundle(const std::filesystem::path& dir, const InteractionLog& log,
                  const BundleInfo& info);
InteractionLog read_bundle(const std::filesystem::path& dir);
/// Serialized metadata.json contents for (log, info); exposed so callers can
/// compare against an existing bundle before rewriting it.
std::string bundle_metadata(const InteractionLog& log, const BundleInfo& info);

}  // namespace seqrec
