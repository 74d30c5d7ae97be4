#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "seqrec/model.hpp"
#include "seqrec/rng.hpp"

namespace seqrec::testing {

// Logits depend only on the last prefix item: row[last][i] for i in 1..I.
class TableModel : public NextItemModel {
 public:
  explicit TableModel(std::vector<std::vector<double>> rows) : rows_(std::move(rows)) {}

  std::int32_t item_count() const override {
    return static_cast<std::int32_t>(rows_.size()) - 1;
  }

  ScoreVector forward(std::span<const ItemId> prefix) const override {
    check_prefix(prefix);
    ScoreVector out;
    out.kind = ScoreVector::Kind::kLogits;
    out.values = rows_[static_cast<std::size_t>(prefix.back())];
    out.values[0] = kMaskedLogit;
    return out;
  }

 private:
  std::vector<std::vector<double>> rows_;
};

// Item i is always followed by i + 1 (wrapping at I).
inline TableModel cycle_table(int items, double strength = 5.0) {
  std::vector<std::vector<double>> rows(items + 1, std::vector<double>(items + 1, 0.0));
  for (int i = 1; i <= items; ++i) rows[i][i % items + 1] = strength;
  return TableModel(rows);
}

// Every distinct prefix gets its own pseudo-random logits.
class HashModel : public NextItemModel {
 public:
  HashModel(std::int32_t items, std::uint64_t seed, double scale = 2.0)
      : items_(items), seed_(seed), scale_(scale) {}

  std::int32_t item_count() const override { return items_; }

  ScoreVector forward(std::span<const ItemId> prefix) const override {
    check_prefix(prefix);
    std::uint64_t h = seed_;
    for (ItemId item : prefix) h = mix64(h ^ static_cast<std::uint64_t>(item));
    Rng rng(h);
    ScoreVector out;
    out.kind = ScoreVector::Kind::kLogits;
    out.values.resize(static_cast<std::size_t>(items_) + 1);
    out.values[0] = kMaskedLogit;
    for (std::int32_t i = 1; i <= items_; ++i) out.values[i] = scale_ * rng.normal();
    return out;
  }

 private:
  std::int32_t items_;
  std::uint64_t seed_;
  double scale_;
};

class UniformModel : public NextItemModel {
 public:
  explicit UniformModel(std::int32_t items) : items_(items) {}
  std::int32_t item_count() const override { return items_; }
  ScoreVector forward(std::span<const ItemId> prefix) const override {
    check_prefix(prefix);
    ScoreVector out;
    out.kind = ScoreVector::Kind::kLogits;
    out.values.assign(static_cast<std::size_t>(items_) + 1, 0.0);
    out.values[0] = kMaskedLogit;
    return out;
  }

 private:
  std::int32_t items_;
};

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& name)
      : path_(std::filesystem::temp_directory_path() / ("seqrec_test_" + name)) {
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& child) const { return path_ / child; }

 private:
  std::filesystem::path path_;
};

inline std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace seqrec::testing
