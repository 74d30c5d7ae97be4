#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "seqrec/data.hpp"

namespace seqrec {

/// Every user walks the cycle 1 -> 2 -> ... -> item_count -> 1 from a random
/// start. The next item is a deterministic function of the current one.
std::vector<std::vector<ItemId>> cycle_sequences(int users, int item_count, int length,
                                                 std::uint64_t seed);

/// Users follow one of `behaviors` hidden first-order Markov chains. Under
/// each behavior an item has `successors` preferred next items with weights
/// proportional to 1, decay, decay^2, ...; with probability `noise` the next
/// item is uniform instead. Items already visited are never revisited, so
/// each sequence holds distinct items.
struct MarkovMixtureSpec {
  int users = 2000;
  int item_count = 200;
  int behaviors = 4;
  int successors = 3;
  double decay = 0.5;
  double noise = 0.1;
  int min_length = 30;
  int max_length = 60;
  std::uint64_t seed = 0;
};

std::vector<std::vector<ItemId>> markov_mixture_sequences(const MarkovMixtureSpec& spec);

/// Writes sequences as "user,item,ts" rows: user u is "u<u>", item i is
/// "i<i>", timestamps count up within each user.
void write_events_csv(const std::filesystem::path& path,
                      const std::vector<std::vector<ItemId>>& sequences);

}  // namespace seqrec
