#include "seqrec/synthetic.hpp"

#include <cmath>
#include <fstream>

#include "seqrec/error.hpp"
#include "seqrec/rng.hpp"

namespace seqrec {

std::vector<std::vector<ItemId>> cycle_sequences(int users, int item_count, int length,
                                                 std::uint64_t seed) {
  if (users < 1 || item_count < 2 || length < 2) {
    throw Error(ErrorCategory::kParameter, "cycle dataset needs users >= 1, items >= 2, length >= 2");
  }
  Rng rng(derive_seed(seed, "cycle"));
  std::vector<std::vector<ItemId>> out(static_cast<std::size_t>(users));
  for (auto& seq : out) {
    auto item = static_cast<ItemId>(rng.below(static_cast<std::uint64_t>(item_count)));
    seq.resize(static_cast<std::size_t>(length));
    for (auto& x : seq) {
      x = item + 1;
      item = (item + 1) % item_count;
    }
  }
  return out;
}

std::vector<std::vector<ItemId>> markov_mixture_sequences(const MarkovMixtureSpec& spec) {
  if (spec.users < 1 || spec.behaviors < 1 || spec.successors < 1 || spec.min_length < 2 ||
      spec.max_length < spec.min_length || spec.max_length > spec.item_count ||
      !(spec.noise >= 0.0 && spec.noise <= 1.0) || !(spec.decay > 0.0)) {
    throw Error(ErrorCategory::kParameter, "invalid Markov mixture specification");
  }
  const auto n_items = static_cast<std::uint64_t>(spec.item_count);
  Rng world(derive_seed(spec.seed, "mixture.world"));

  // successors[b][i] = preferred next items of item i under behavior b.
  std::vector<std::vector<std::vector<ItemId>>> successors(
      static_cast<std::size_t>(spec.behaviors),
      std::vector<std::vector<ItemId>>(n_items + 1));
  std::vector<ItemId> pool(n_items);
  for (auto& behavior : successors) {
    for (std::uint64_t i = 1; i <= n_items; ++i) {
      for (std::uint64_t j = 0; j < n_items; ++j) pool[j] = static_cast<ItemId>(j + 1);
      world.shuffle(pool.begin(), pool.end());
      for (ItemId c : pool) {
        if (static_cast<int>(behavior[i].size()) == spec.successors) break;
        if (c != static_cast<ItemId>(i)) behavior[i].push_back(c);
      }
    }
  }

  std::vector<double> weights(static_cast<std::size_t>(spec.successors));
  for (std::size_t r = 0; r < weights.size(); ++r) {
    weights[r] = std::pow(spec.decay, static_cast<double>(r));
  }

  std::vector<std::vector<ItemId>> out(static_cast<std::size_t>(spec.users));
  std::vector<std::uint8_t> visited(n_items + 1);
  for (std::size_t u = 0; u < out.size(); ++u) {
    Rng rng(derive_seed(spec.seed, "mixture.user", u));
    const auto behavior = rng.below(static_cast<std::uint64_t>(spec.behaviors));
    const auto length =
        spec.min_length +
        static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.max_length - spec.min_length + 1)));
    std::fill(visited.begin(), visited.end(), 0);
    auto& seq = out[u];
    auto draw_unvisited = [&] {
      std::uint64_t free = 0;
      for (std::uint64_t i = 1; i <= n_items; ++i) free += !visited[i];
      std::uint64_t pick = rng.below(free);
      for (std::uint64_t i = 1; i <= n_items; ++i) {
        if (visited[i]) continue;
        if (pick-- == 0) return static_cast<ItemId>(i);
      }
      return kPadItem;
    };

    ItemId current = draw_unvisited();
    while (true) {
      seq.push_back(current);
      visited[current] = 1;
      if (static_cast<int>(seq.size()) == length) break;
      const double noise_draw = rng.uniform();
      double total = 0.0;
      const auto& cands = successors[behavior][current];
      for (std::size_t r = 0; r < cands.size(); ++r) {
        if (!visited[cands[r]]) total += weights[r];
      }
      ItemId next = kPadItem;
      if (noise_draw >= spec.noise && total > 0.0) {
        double x = rng.uniform() * total;
        for (std::size_t r = 0; r < cands.size(); ++r) {
          if (visited[cands[r]]) continue;
          next = cands[r];
          x -= weights[r];
          if (x < 0.0) break;
        }
      } else {
        next = draw_unvisited();
      }
      current = next;
    }
  }
  return out;
}

void write_events_csv(const std::filesystem::path& path,
                      const std::vector<std::vector<ItemId>>& sequences) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCategory::kIo, "cannot write " + path.string());
  out << "user,item,ts\n";
  for (std::size_t u = 0; u < sequences.size(); ++u) {
    for (std::size_t t = 0; t < sequences[u].size(); ++t) {
      out << 'u' << u << ",i" << sequences[u][t] << ',' << t + 1 << '\n';
    }
  }
  if (!out) throw Error(ErrorCategory::kIo, "failed writing " + path.string());
}

}  // namespace seqrec
