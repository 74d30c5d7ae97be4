#include "seqrec/data.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "seqrec/error.hpp"
#include "seqrec/rng.hpp"

namespace seqrec {
namespace {

std::vector<std::string_view> split_fields(std::string_view line, char delimiter) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(delimiter, start);
    if (pos == std::string_view::npos) {
      fields.push_back(line.substr(start));
      break;
    }
    fields.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return fields;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '"')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '"' || s.back() == '\r'))
    s.remove_suffix(1);
  return s;
}

std::size_t resolve_column(const std::vector<std::string_view>& header,
                           const std::string& name, bool has_header) {
  if (has_header) {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (trim(header[i]) == name) return i;
    }
    throw Error(ErrorCategory::kIngest, "missing column '" + name + "'");
  }
  std::size_t index = 0;
  const auto [ptr, ec] =
      std::from_chars(name.data(), name.data() + name.size(), index);
  if (ec != std::errc() || ptr != name.data() + name.size()) {
    throw Error(ErrorCategory::kIngest,
                "column '" + name + "' must be a zero-based index when the file has no header");
  }
  return index;
}

template <class Int>
void append_le(std::string& out, Int value) {
  using U = std::make_unsigned_t<Int>;
  auto bits = static_cast<U>(value);
  for (std::size_t b = 0; b < sizeof(Int); ++b) {
    out.push_back(static_cast<char>(bits & 0xff));
    bits >>= 8;
  }
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCategory::kIo, "cannot open " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCategory::kIo, "cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCategory::kIo, "short write to " + path.string());
}

std::vector<std::int32_t> decode_le32(const std::string& bytes,
                                      const std::filesystem::path& path) {
  if (bytes.size() % 4 != 0) {
    throw Error(ErrorCategory::kData, path.string() + ": size is not a multiple of 4");
  }
  std::vector<std::int32_t> values(bytes.size() / 4);
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::uint32_t v = 0;
    for (int b = 3; b >= 0; --b) {
      v = (v << 8) | static_cast<unsigned char>(bytes[i * 4 + b]);
    }
    values[i] = static_cast<std::int32_t>(v);
  }
  return values;
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCategory::kIo, "cannot open " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  return lines;
}

std::string format_percent(double fraction) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.4g%%", fraction * 100.0);
  return buf;
}

}  // namespace

// ---------------------------------------------------------------------------
// RawEventTable / ingest
// ---------------------------------------------------------------------------

std::uint32_t RawEventTable::intern(Interner& index, std::vector<std::string>& names,
                                    std::string_view value) {
  if (auto it = index.find(value); it != index.end()) return it->second;
  const auto key = static_cast<std::uint32_t>(names.size());
  names.emplace_back(value);
  index.emplace(names.back(), key);
  return key;
}

void RawEventTable::add(std::string_view user, std::string_view item,
                        std::int64_t timestamp) {
  users_.push_back(intern(user_index_, user_names_, user));
  items_.push_back(intern(item_index_, item_names_, item));
  timestamps_.push_back(timestamp);
}

RawEvent RawEventTable::operator[](std::size_t row) const {
  return RawEvent{user_names_[users_[row]], item_names_[items_[row]], timestamps_[row]};
}

RawEventTable ingest(const std::filesystem::path& path, const FormatSpec& format) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCategory::kIo, "cannot open " + path.string());
  return ingest(in, format);
}

RawEventTable ingest(std::istream& input, const FormatSpec& format) {
  RawEventTable table;
  std::string line;
  std::size_t line_no = 0;
  std::size_t user_col = 0, item_col = 0, time_col = 0;

  if (format.header) {
    if (!std::getline(input, line)) {
      throw Error(ErrorCategory::kIngest, "input is empty (expected a header row)");
    }
    ++line_no;
    const auto header = split_fields(line, format.delimiter);
    user_col = resolve_column(header, format.user_column, true);
    item_col = resolve_column(header, format.item_column, true);
    time_col = resolve_column(header, format.time_column, true);
  } else {
    const std::vector<std::string_view> none;
    user_col = resolve_column(none, format.user_column, false);
    item_col = resolve_column(none, format.item_column, false);
    time_col = resolve_column(none, format.time_column, false);
  }
  const std::size_t needed = std::max({user_col, item_col, time_col}) + 1;

  std::vector<std::string_view> fields;
  while (std::getline(input, line)) {
    ++line_no;
    std::string_view view(line);
    if (!view.empty() && view.back() == '\r') view.remove_suffix(1);
    if (view.empty()) continue;

    fields.clear();
    std::size_t start = 0;
    while (fields.size() < needed) {
      const std::size_t pos = view.find(format.delimiter, start);
      if (pos == std::string_view::npos) {
        fields.push_back(view.substr(start));
        break;
      }
      fields.push_back(view.substr(start, pos - start));
      start = pos + 1;
    }
    if (fields.size() < needed) {
      throw Error(ErrorCategory::kIngest,
                  "line " + std::to_string(line_no) + ": expected at least " +
                      std::to_string(needed) + " fields");
    }
    const std::string_view ts_text = trim(fields[time_col]);
    std::int64_t ts = 0;
    const auto [ptr, ec] =
        std::from_chars(ts_text.data(), ts_text.data() + ts_text.size(), ts);
    if (ec != std::errc() || ptr != ts_text.data() + ts_text.size()) {
      throw Error(ErrorCategory::kIngest, "line " + std::to_string(line_no) +
                                              ": unparsable timestamp '" +
                                              std::string(ts_text) + "'");
    }
    table.add(trim(fields[user_col]), trim(fields[item_col]), ts);
  }
  return table;
}

// ---------------------------------------------------------------------------
// Catalog / InteractionLog
// ---------------------------------------------------------------------------

Catalog::Catalog(std::vector<std::string> item_names, std::vector<std::string> user_names)
    : item_names_(std::move(item_names)), user_names_(std::move(user_names)) {
  if (item_names_.empty()) item_names_.emplace_back();
  item_index_.reserve(item_names_.size());
  for (std::size_t i = 1; i < item_names_.size(); ++i) {
    if (!item_index_.emplace(item_names_[i], static_cast<ItemId>(i)).second) {
      throw Error(ErrorCategory::kData, "duplicate raw item id '" + item_names_[i] + "'");
    }
  }
  user_index_.reserve(user_names_.size());
  for (std::size_t u = 0; u < user_names_.size(); ++u) {
    if (!user_index_.emplace(user_names_[u], static_cast<std::int32_t>(u)).second) {
      throw Error(ErrorCategory::kData, "duplicate raw user id '" + user_names_[u] + "'");
    }
  }
}

ItemId Catalog::item_id(std::string_view raw) const {
  const auto it = item_index_.find(std::string(raw));
  return it == item_index_.end() ? kPadItem : it->second;
}

std::int32_t Catalog::user_id(std::string_view raw) const {
  const auto it = user_index_.find(std::string(raw));
  return it == user_index_.end() ? -1 : it->second;
}

InteractionLog::InteractionLog(Catalog catalog, std::vector<std::int64_t> offsets,
                               std::vector<ItemId> items)
    : catalog_(std::move(catalog)), offsets_(std::move(offsets)), items_(std::move(items)) {
  if (offsets_.empty() || offsets_.front() != 0 ||
      offsets_.back() != static_cast<std::int64_t>(items_.size()) ||
      !std::is_sorted(offsets_.begin(), offsets_.end())) {
    throw Error(ErrorCategory::kData, "inconsistent sequence offsets");
  }
  if (static_cast<std::int32_t>(offsets_.size()) - 1 != catalog_.user_count()) {
    throw Error(ErrorCategory::kData, "user count does not match catalog");
  }
  const ItemId max_item = catalog_.item_count();
  for (ItemId item : items_) {
    if (item < 1 || item > max_item) {
      throw Error(ErrorCategory::kData,
                  "item id " + std::to_string(item) + " outside catalog");
    }
  }
}

std::span<const ItemId> InteractionLog::sequence(std::int32_t user) const {
  const auto begin = static_cast<std::size_t>(offsets_[user]);
  const auto end = static_cast<std::size_t>(offsets_[user + 1]);
  return std::span<const ItemId>(items_).subspan(begin, end - begin);
}

DatasetStats InteractionLog::stats() const {
  DatasetStats s;
  s.users = user_count();
  s.items = item_count();
  s.interactions = interaction_count();
  if (s.users > 0) s.avg_length = static_cast<double>(s.interactions) / s.users;
  if (s.users > 0 && s.items > 0) {
    s.density = static_cast<double>(s.interactions) /
                (static_cast<double>(s.users) * static_cast<double>(s.items));
  }
  return s;
}

InteractionLog make_log(const std::vector<std::vector<ItemId>>& sequences,
                        std::int32_t item_count) {
  std::vector<std::string> item_names(static_cast<std::size_t>(item_count) + 1);
  for (ItemId i = 1; i <= item_count; ++i) item_names[i] = std::to_string(i);
  std::vector<std::string> user_names(sequences.size());
  std::vector<std::int64_t> offsets{0};
  std::vector<ItemId> items;
  for (std::size_t u = 0; u < sequences.size(); ++u) {
    user_names[u] = std::to_string(u);
    items.insert(items.end(), sequences[u].begin(), sequences[u].end());
    offsets.push_back(static_cast<std::int64_t>(items.size()));
  }
  return InteractionLog(Catalog(std::move(item_names), std::move(user_names)),
                        std::move(offsets), std::move(items));
}

// ---------------------------------------------------------------------------
// preprocess
// ---------------------------------------------------------------------------

InteractionLog preprocess(const RawEventTable& events, const PreprocessOptions& options) {
  if (options.min_user_len < 1 || options.min_item_count < 1) {
    throw Error(ErrorCategory::kParameter, "filter thresholds must be >= 1");
  }
  const std::size_t n = events.size();
  const std::size_t n_users = events.distinct_users();
  const std::size_t n_items = events.distinct_items();

  // Group rows by user (users in first-appearance order), then order each
  // group by timestamp. stable_sort keeps input order for equal timestamps.
  std::vector<std::size_t> user_begin(n_users + 1, 0);
  for (std::size_t r = 0; r < n; ++r) ++user_begin[events.user_key(r) + 1];
  std::partial_sum(user_begin.begin(), user_begin.end(), user_begin.begin());
  std::vector<std::uint32_t> order(n);
  {
    std::vector<std::size_t> cursor(user_begin.begin(), user_begin.end() - 1);
    for (std::size_t r = 0; r < n; ++r) {
      order[cursor[events.user_key(r)]++] = static_cast<std::uint32_t>(r);
    }
  }
  for (std::size_t u = 0; u < n_users; ++u) {
    std::stable_sort(order.begin() + static_cast<std::ptrdiff_t>(user_begin[u]),
                     order.begin() + static_cast<std::ptrdiff_t>(user_begin[u + 1]),
                     [&](std::uint32_t a, std::uint32_t b) {
                       return events.timestamp(a) < events.timestamp(b);
                     });
  }

  std::vector<std::uint8_t> alive(n, 1);
  if (options.deduplicate) {
    std::vector<std::uint32_t> seen_by(n_items, UINT32_MAX);
    for (std::size_t u = 0; u < n_users; ++u) {
      for (std::size_t p = user_begin[u]; p < user_begin[u + 1]; ++p) {
        const std::uint32_t item = events.item_key(order[p]);
        if (seen_by[item] == u) {
          alive[p] = 0;
        } else {
          seen_by[item] = static_cast<std::uint32_t>(u);
        }
      }
    }
  }

  // `alive` is indexed by position in `order`.
  std::vector<std::int64_t> item_counts(n_items);
  bool changed = true;
  while (changed) {
    changed = false;
    std::fill(item_counts.begin(), item_counts.end(), 0);
    for (std::size_t p = 0; p < n; ++p) {
      if (alive[p]) ++item_counts[events.item_key(order[p])];
    }
    for (std::size_t p = 0; p < n; ++p) {
      if (alive[p] && item_counts[events.item_key(order[p])] < options.min_item_count) {
        alive[p] = 0;
        changed = true;
      }
    }
    bool users_changed = false;
    for (std::size_t u = 0; u < n_users; ++u) {
      std::int64_t len = 0;
      for (std::size_t p = user_begin[u]; p < user_begin[u + 1]; ++p) len += alive[p];
      if (len > 0 && len < options.min_user_len) {
        for (std::size_t p = user_begin[u]; p < user_begin[u + 1]; ++p) alive[p] = 0;
        users_changed = true;
      }
    }
    if (options.filter_mode == FilterMode::kOnePass) break;
    // A user removal can only break item counts, so a round without user
    // removals leaves both constraints satisfied.
    changed = users_changed;
  }

  std::vector<ItemId> dense_item(n_items, kPadItem);
  std::vector<std::string> item_names{std::string()};
  std::vector<std::string> user_names;
  std::vector<std::int64_t> offsets{0};
  std::vector<ItemId> items;
  for (std::size_t u = 0; u < n_users; ++u) {
    const std::size_t before = items.size();
    for (std::size_t p = user_begin[u]; p < user_begin[u + 1]; ++p) {
      if (!alive[p]) continue;
      const std::uint32_t key = events.item_key(order[p]);
      if (dense_item[key] == kPadItem) {
        dense_item[key] = static_cast<ItemId>(item_names.size());
        item_names.push_back(events.item_name(key));
      }
      items.push_back(dense_item[key]);
    }
    if (items.size() != before) {
      user_names.push_back(events.user_name(static_cast<std::uint32_t>(u)));
      offsets.push_back(static_cast<std::int64_t>(items.size()));
    }
  }
  if (items.empty()) {
    throw Error(ErrorCategory::kData, "dataset is empty after filtering");
  }
  return InteractionLog(Catalog(std::move(item_names), std::move(user_names)),
                        std::move(offsets), std::move(items));
}

// ---------------------------------------------------------------------------
// split
// ---------------------------------------------------------------------------

std::string_view to_string(Partition partition) {
  return partition == Partition::kValidation ? "validation" : "test";
}

Partition partition_from_string(std::string_view name) {
  if (name == "validation") return Partition::kValidation;
  if (name == "test") return Partition::kTest;
  throw Error(ErrorCategory::kParameter,
              "unknown split '" + std::string(name) + "' (expected validation|test)");
}

SplitDataset::SplitDataset(InteractionLog log, int n_holdout,
                           std::vector<Partition> labels, std::uint64_t seed)
    : log_(std::move(log)), n_holdout_(n_holdout), labels_(std::move(labels)), seed_(seed) {
  if (static_cast<std::int32_t>(labels_.size()) != log_.user_count()) {
    throw Error(ErrorCategory::kData, "one partition label per user required");
  }
}

std::span<const ItemId> SplitDataset::train(std::int32_t user) const {
  const auto seq = log_.sequence(user);
  return seq.first(seq.size() - static_cast<std::size_t>(n_holdout_));
}

std::span<const ItemId> SplitDataset::holdout(std::int32_t user) const {
  const auto seq = log_.sequence(user);
  return seq.last(static_cast<std::size_t>(n_holdout_));
}

std::vector<std::int32_t> SplitDataset::users_in(Partition partition) const {
  std::vector<std::int32_t> users;
  for (std::int32_t u = 0; u < user_count(); ++u) {
    if (labels_[u] == partition) users.push_back(u);
  }
  return users;
}

SplitDataset split(InteractionLog log, int n_holdout, double val_fraction,
                   std::uint64_t seed) {
  if (n_holdout < 1) throw Error(ErrorCategory::kParameter, "n_holdout must be >= 1");
  if (!(val_fraction >= 0.0 && val_fraction <= 1.0)) {
    throw Error(ErrorCategory::kParameter, "val_fraction must lie in [0, 1]");
  }
  for (std::int32_t u = 0; u < log.user_count(); ++u) {
    if (static_cast<std::int64_t>(log.sequence(u).size()) <= n_holdout) {
      throw Error(ErrorCategory::kData,
                  "user '" + log.catalog().user_name(u) + "' has " +
                      std::to_string(log.sequence(u).size()) +
                      " interactions, need more than n_holdout=" +
                      std::to_string(n_holdout));
    }
  }
  Rng rng(derive_seed(seed, "split"));
  std::vector<Partition> labels(static_cast<std::size_t>(log.user_count()));
  for (auto& label : labels) {
    label = rng.uniform() < val_fraction ? Partition::kValidation : Partition::kTest;
  }
  return SplitDataset(std::move(log), n_holdout, std::move(labels), seed);
}

// ---------------------------------------------------------------------------
// bundle
// ---------------------------------------------------------------------------

std::string bundle_metadata(const InteractionLog& log, const BundleInfo& info) {
  const DatasetStats s = log.stats();
  nlohmann::json meta;
  meta["format_version"] = 1;
  meta["source"] = info.source;
  meta["users"] = s.users;
  meta["items"] = s.items;
  meta["interactions"] = s.interactions;
  meta["avg_length"] = s.avg_length;
  meta["density"] = s.density;
  meta["density_percent"] = format_percent(s.density);
  meta["filters"] = {
      {"min_user_len", info.options.min_user_len},
      {"min_item_count", info.options.min_item_count},
      {"filter_mode",
       info.options.filter_mode == FilterMode::kFixpoint ? "fixpoint" : "one_pass"},
      {"deduplicate", info.options.deduplicate},
  };
  meta["split"] = {
      {"n_holdout", info.n_holdout},
      {"val_fraction", info.val_fraction},
      {"seed", info.seed},
  };
  meta["files"] = {
      {"offsets", "offsets.bin"},
      {"items", "items.bin"},
      {"user_ids", "users.txt"},
      {"item_ids", "items.txt"},
      {"encoding", "int32 little-endian"},
  };
  return meta.dump(2) + "\n";
}

void write_bundle(const std::filesystem::path& dir, const InteractionLog& log,
                  const BundleInfo& info) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorCategory::kIo, "cannot create " + dir.string());

  std::string offsets;
  offsets.reserve(log.offsets().size() * 4);
  for (std::int64_t off : log.offsets()) {
    if (off > INT32_MAX) {
      throw Error(ErrorCategory::kData, "bundle offsets exceed 32-bit range");
    }
    append_le(offsets, static_cast<std::int32_t>(off));
  }
  std::string items;
  items.reserve(log.items().size() * 4);
  for (ItemId item : log.items()) append_le(items, item);

  std::string users_txt;
  for (const auto& name : log.catalog().user_names()) users_txt += name + "\n";
  std::string items_txt;
  const auto& item_names = log.catalog().item_names();
  for (std::size_t i = 1; i < item_names.size(); ++i) items_txt += item_names[i] + "\n";

  write_file(dir / "offsets.bin", offsets);
  write_file(dir / "items.bin", items);
  write_file(dir / "users.txt", users_txt);
  write_file(dir / "items.txt", items_txt);
  // Metadata last: its presence marks a complete bundle.
  write_file(dir / "metadata.json", bundle_metadata(log, info));
}

InteractionLog read_bundle(const std::filesystem::path& dir) {
  if (!std::filesystem::exists(dir / "metadata.json")) {
    throw Error(ErrorCategory::kIo, "no dataset bundle at " + dir.string());
  }
  const auto meta = nlohmann::json::parse(read_file(dir / "metadata.json"));
  if (meta.value("format_version", 0) != 1) {
    throw Error(ErrorCategory::kData, "unsupported bundle format version");
  }
  const auto offsets32 = decode_le32(read_file(dir / "offsets.bin"), dir / "offsets.bin");
  const auto items = decode_le32(read_file(dir / "items.bin"), dir / "items.bin");
  std::vector<std::string> item_names{std::string()};
  for (auto& line : read_lines(dir / "items.txt")) item_names.push_back(std::move(line));
  auto user_names = read_lines(dir / "users.txt");

  if (meta.at("users").get<std::int64_t>() != static_cast<std::int64_t>(user_names.size()) ||
      meta.at("items").get<std::int64_t>() != static_cast<std::int64_t>(item_names.size() - 1) ||
      meta.at("interactions").get<std::int64_t>() != static_cast<std::int64_t>(items.size())) {
    throw Error(ErrorCategory::kData, "bundle arrays disagree with metadata.json");
  }
  std::vector<std::int64_t> offsets(offsets32.begin(), offsets32.end());
  return InteractionLog(Catalog(std::move(item_names), std::move(user_names)),
                        std::move(offsets), std::vector<ItemId>(items.begin(), items.end()));
}

}  // namespace seqrec
