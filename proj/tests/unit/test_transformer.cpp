#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "seqrec/checkpoint.hpp"
#include "seqrec/decode.hpp"
#include "seqrec/error.hpp"
#include "seqrec/rng.hpp"
#include "seqrec/transformer.hpp"
#include "test_support.hpp"

namespace seqrec {
namespace {

using testing::TempDir;

ModelConfig make_config(int d, int items, int max_len, int blocks, int heads) {
  ModelConfig c;
  c.hidden_size = d;
  c.num_blocks = blocks;
  c.num_heads = heads;
  c.dropout = 0.0;
  c.max_seq_len = max_len;
  c.item_count = items;
  return c;
}

// Same fill rule as tests/oracles/transformer_forward.py: tensor k gets
// 0.5 * sin(0.37 * (j + 1) + 0.1 + 0.6 * k).
template <class Real>
ParameterSet<Real> oracle_parameters(const ModelConfig& c) {
  ParameterSet<Real> p(c);
  const auto& tensors = p.layout.tensors();
  for (std::size_t k = 0; k < tensors.size(); ++k) {
    auto t = p.tensor(tensors[k].name);
    for (std::size_t j = 0; j < t.size(); ++j) {
      t[j] = static_cast<Real>(0.5 * std::sin(0.37 * static_cast<double>(j + 1) + 0.1 +
                                              0.6 * static_cast<double>(k)));
    }
  }
  return p;
}

std::vector<std::string> expected_names(int blocks) {
  std::vector<std::string> names{"item_embedding", "position_embedding"};
  for (int b = 0; b < blocks; ++b) {
    const std::string p = "block" + std::to_string(b) + ".";
    for (const char* n : {"ln1.weight", "ln1.bias", "attn.qkv.weight", "attn.qkv.bias",
                          "attn.proj.weight", "attn.proj.bias", "ln2.weight", "ln2.bias",
                          "mlp.fc.weight", "mlp.fc.bias", "mlp.proj.weight", "mlp.proj.bias"}) {
      names.push_back(p + n);
    }
  }
  names.push_back("final_ln.weight");
  names.push_back("final_ln.bias");
  return names;
}

struct ForwardFixture {
  ModelConfig config;
  std::vector<ItemId> tokens;
  std::vector<std::vector<double>> logits;  // items 1..I per position
};

ForwardFixture tiny_fixture() {
  return {make_config(2, 3, 4, 1, 1),
          {2, 1, 3},
          {{-0.034139377830217178, 0.0043560539618031704, 0.040572995612059432},
           {-0.034139373365286517, 0.0043560590865752277, 0.040572998716094821},
           {-0.034139375055976716, 0.0043560571460295608, 0.040572997540721085}}};
}

ForwardFixture small_fixture() {
  return {make_config(4, 5, 6, 2, 2),
          {3, 5, 1, 4},
          {{-0.53695693284126922, 0.84186371306180552, 0.68962323372300838,
            -0.71680519532181453, -0.81961101669157976},
           {-0.5838210275001704, 0.73574199496954118, 0.71724287124117103,
            -0.60567484242777581, -0.82707791496135341},
           {-0.56654888016702365, 0.77843859547968564, 0.70771346416274139,
            -0.65009953657788599, -0.82560462625276498},
           {-0.51097399422007017, 0.88556629092261585, 0.6715654625576446,
            -0.76378242807416152, -0.81007224953920265}}};
}

void expect_matches(const ForwardFixture& f, std::span<const double> flat, double tol) {
  const std::size_t width = static_cast<std::size_t>(f.config.item_count) + 1;
  ASSERT_EQ(flat.size(), f.tokens.size() * width);
  for (std::size_t t = 0; t < f.tokens.size(); ++t) {
    EXPECT_TRUE(std::isinf(flat[t * width]) && flat[t * width] < 0);
    for (std::size_t i = 1; i < width; ++i) {
      EXPECT_NEAR(flat[t * width + i], f.logits[t][i - 1], tol) << "position " << t << " item " << i;
    }
  }
}

TEST(TransformerLayout, TensorNamesAndOrder) {
  const ParameterLayout layout(make_config(4, 5, 6, 2, 2));
  std::vector<std::string> names;
  for (const auto& t : layout.tensors()) names.push_back(t.name);
  EXPECT_EQ(names, expected_names(2));
  EXPECT_EQ(layout.find("item_embedding").shape, (std::vector<std::int64_t>{6, 4}));
  EXPECT_EQ(layout.find("block1.mlp.fc.weight").shape, (std::vector<std::int64_t>{16, 4}));
}

TEST(TransformerForward, TinyFixtureDouble) {
  const auto f = tiny_fixture();
  const auto p = oracle_parameters<double>(f.config);
  expect_matches(f, sequence_logits(p, f.tokens), 1e-12);
}

TEST(TransformerForward, SmallFixtureDouble) {
  const auto f = small_fixture();
  const auto p = oracle_parameters<double>(f.config);
  expect_matches(f, sequence_logits(p, f.tokens), 1e-12);
}

TEST(TransformerForward, SmallFixtureFloatThroughSession) {
  const auto f = small_fixture();
  const Transformer model(oracle_parameters<float>(f.config));
  std::vector<double> flat;
  for (std::size_t t = 1; t <= f.tokens.size(); ++t) {
    const auto s = model.forward(std::span(f.tokens).first(t));
    flat.insert(flat.end(), s.values.begin(), s.values.end());
  }
  expect_matches(f, flat, 2e-5);
}

TEST(TransformerForward, ZeroParametersGiveEqualLogits) {
  const Transformer model(Parameters(make_config(8, 7, 10, 2, 2)));
  const std::vector<ItemId> prefix{3, 1, 7, 7};
  const auto s = model.forward(prefix);
  for (ItemId i = 2; i <= 7; ++i) EXPECT_EQ(s.values[i], s.values[1]);
}

TEST(TransformerForward, LongPrefixIsTruncatedToMaxLength) {
  const auto cfg = make_config(8, 9, 5, 2, 2);
  const Transformer model(init_parameters(cfg, 3, 0.3));
  const std::vector<ItemId> prefix{1, 2, 3, 4, 5, 6, 7, 8};
  const auto full = model.forward(prefix);
  const auto tail = model.forward(std::span(prefix).last(5));
  EXPECT_EQ(full.values, tail.values);
}

TEST(TransformerForward, OutOfCatalogPrefixIsRejected) {
  const Transformer model(init_parameters(make_config(4, 5, 6, 1, 1), 1));
  const std::vector<ItemId> bad{1, 6};
  const std::vector<ItemId> empty;
  try {
    model.forward(bad);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.category(), ErrorCategory::kModel);
  }
  EXPECT_THROW(model.forward(empty), Error);
}

TEST(TransformerForward, SoftmaxIsAProbabilityVector) {
  const auto cfg = make_config(16, 30, 12, 2, 2);
  const Transformer model(init_parameters(cfg, 8, 0.5));
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<ItemId> prefix(1 + rng.below(12));
    for (auto& x : prefix) x = 1 + static_cast<ItemId>(rng.below(30));
    const auto p = apply_temperature(model.forward(prefix), 1.0);
    EXPECT_EQ(p.values[0], 0.0);
    double sum = 0.0;
    for (double v : p.values) {
      EXPECT_GE(v, 0.0);
      sum += v;
    }
    EXPECT_NEAR(sum, 1.0, 1e-5);
  }
}

TEST(TransformerForward, SessionMatchesFullSequencePath) {
  const auto cfg = make_config(12, 15, 6, 2, 3);
  const auto params = init_parameters(cfg, 4, 0.4);
  const Transformer model(params);
  const std::vector<ItemId> tokens{4, 9, 1, 15, 2, 2};
  const auto flat = sequence_logits(params, tokens);
  const std::size_t width = 16;
  auto session = model.start(std::span(tokens).first(1));
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    if (t > 0) session->push(tokens[t]);
    const auto& s = session->logits();
    for (std::size_t i = 1; i < width; ++i) {
      EXPECT_EQ(s.values[i], flat[t * width + i]) << "t=" << t << " i=" << i;
    }
  }
}

TEST(TransformerForward, SessionRebuildsPastMaxLength) {
  const auto cfg = make_config(8, 10, 4, 2, 2);
  const Transformer model(init_parameters(cfg, 5, 0.4));
  const std::vector<ItemId> tokens{1, 2, 3, 4, 5, 6, 7};
  auto session = model.start(std::span(tokens).first(2));
  for (std::size_t t = 2; t < tokens.size(); ++t) {
    session->push(tokens[t]);
    const auto expect = model.forward(std::span(tokens).first(t + 1));
    EXPECT_EQ(session->logits().values, expect.values) << "length " << t + 1;
  }
  auto copy = session->clone();
  copy->push(8);
  session->push(8);
  EXPECT_EQ(copy->logits().values, session->logits().values);
}

TEST(TransformerForward, CausalityAcrossPositions) {
  const auto cfg = make_config(8, 12, 8, 2, 2);
  const auto params = init_parameters(cfg, 6, 0.4).cast<double>();
  const std::vector<ItemId> base{3, 7, 1, 9, 12, 5};
  const auto ref = sequence_logits(params, base);
  const std::size_t width = 13;
  for (std::size_t j = 0; j < base.size(); ++j) {
    auto changed = base;
    changed[j] = changed[j] % 12 + 1;
    const auto out = sequence_logits(params, changed);
    for (std::size_t t = 0; t < base.size(); ++t) {
      bool same = true;
      for (std::size_t i = 1; i < width; ++i) same &= out[t * width + i] == ref[t * width + i];
      if (t < j) {
        EXPECT_TRUE(same) << "position " << t << " saw a change at " << j;
      } else {
        EXPECT_FALSE(same) << "position " << t << " ignored a change at " << j;
      }
    }
  }
}

TEST(TransformerForward, OutputProjectionIsTiedToEmbedding) {
  const auto cfg = make_config(8, 6, 6, 1, 1);
  auto params = init_parameters(cfg, 7, 0.4);
  const std::vector<ItemId> prefix{1, 2};
  const auto before = Transformer(params).forward(prefix);

  // Item 5 is not in the prefix: only its own output logit can move.
  auto emb = params.tensor("item_embedding");
  for (int k = 0; k < 8; ++k) emb[5 * 8 + k] += 0.25f;
  const auto after = Transformer(params).forward(prefix);
  for (ItemId i = 1; i <= 6; ++i) {
    if (i == 5) EXPECT_NE(after.values[i], before.values[i]);
    else EXPECT_EQ(after.values[i], before.values[i]);
  }

  // Item 2 is in the prefix: the input side changes every logit.
  for (int k = 0; k < 8; ++k) emb[2 * 8 + k] += (k % 2 ? 0.25f : -0.15f);
  const auto moved = Transformer(params).forward(prefix);
  for (ItemId i : {1, 3, 4, 6}) EXPECT_NE(moved.values[i], after.values[i]);

  for (const auto& t : params.layout.tensors()) {
    EXPECT_EQ(t.name.find("output"), std::string::npos);
    EXPECT_EQ(t.name.find("head"), std::string::npos);
  }
}

TEST(TransformerInit, FollowsTheInitScheme) {
  const auto cfg = make_config(16, 50, 20, 2, 2);
  const auto p = init_parameters(cfg, 1);
  for (float v : p.tensor("item_embedding").first(16)) EXPECT_EQ(v, 0.0f);
  for (float v : p.tensor("block0.ln1.weight")) EXPECT_EQ(v, 1.0f);
  for (float v : p.tensor("block1.mlp.fc.bias")) EXPECT_EQ(v, 0.0f);
  const auto w = p.tensor("block0.mlp.fc.weight");
  double sum = 0.0, sq = 0.0;
  for (float v : w) {
    sum += v;
    sq += static_cast<double>(v) * v;
  }
  const double n = static_cast<double>(w.size());
  EXPECT_NEAR(sum / n, 0.0, 0.003);
  EXPECT_NEAR(std::sqrt(sq / n), 0.02, 0.002);
  EXPECT_EQ(init_parameters(cfg, 1).values, p.values);
  EXPECT_NE(init_parameters(cfg, 2).values, p.values);
}

TEST(TransformerConfig, ValidationNamesTheField) {
  auto c = make_config(6, 5, 8, 1, 4);
  try {
    c.validate();
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.category(), ErrorCategory::kConfig);
    EXPECT_NE(std::string(e.what()).find("num_heads"), std::string::npos);
  }
  c.num_heads = 2;
  c.max_seq_len = 1;
  EXPECT_THROW(c.validate(), Error);
}

// ---------------------------------------------------------------------------
// Loss and gradients
// ---------------------------------------------------------------------------

TEST(TransformerLoss, UniformModelGivesLogItemCount) {
  const auto cfg = make_config(4, 7, 8, 1, 1);
  const ParameterSet<double> zero(cfg);
  const std::vector<std::vector<ItemId>> batch{{3, 5}};
  EXPECT_NEAR(batch_loss(zero, batch), std::log(7.0), 1e-12);
}

TEST(TransformerLoss, BatchLossIsTargetWeightedMean) {
  const auto cfg = make_config(8, 9, 8, 2, 2);
  const auto p = init_parameters(cfg, 3, 0.3).cast<double>();
  const std::vector<ItemId> a{1, 2, 3, 4, 5};
  const std::vector<ItemId> b{9, 8};
  const std::vector<std::vector<ItemId>> only_a{a};
  const std::vector<std::vector<ItemId>> only_b{b};
  const std::vector<std::vector<ItemId>> both{a, {0, 0, 0, 9, 8}};
  const double la = batch_loss(p, only_a);
  const double lb = batch_loss(p, only_b);
  EXPECT_NEAR(batch_loss(p, both), (4.0 * la + 1.0 * lb) / 5.0, 1e-12);

  ParameterSet<double> ga(cfg), gboth(cfg);
  EXPECT_NEAR(loss_and_gradients(p, only_a, ga), la, 1e-12);
  EXPECT_NEAR(loss_and_gradients(p, both, gboth), batch_loss(p, both), 1e-12);
}

TEST(TransformerLoss, LeftPaddingDoesNotChangeTheLoss) {
  const auto cfg = make_config(8, 9, 8, 1, 2);
  const auto p = init_parameters(cfg, 3, 0.3).cast<double>();
  const std::vector<std::vector<ItemId>> plain{{4, 2, 7}};
  const std::vector<std::vector<ItemId>> padded{{0, 0, 0, 4, 2, 7}};
  EXPECT_NEAR(batch_loss(p, plain), batch_loss(p, padded), 1e-13);
}

TEST(TransformerLoss, BatchWithoutTargetsIsRejected) {
  const auto cfg = make_config(4, 5, 8, 1, 1);
  const ParameterSet<double> p(cfg);
  ParameterSet<double> g(cfg);
  const std::vector<std::vector<ItemId>> pads{{0, 0, 0}, {0, 0, 2}};
  EXPECT_THROW(loss_and_gradients(p, pads, g), Error);
}

TEST(TransformerLoss, DropoutIsSeeded) {
  auto cfg = make_config(8, 9, 8, 2, 2);
  cfg.dropout = 0.3;
  const auto p = init_parameters(cfg, 3, 0.3);
  Parameters g1(cfg), g2(cfg), g3(cfg);
  const std::vector<std::vector<ItemId>> batch{{1, 2, 3, 4}, {0, 5, 6, 7}};
  const DropoutSpec d1{0.3, 10}, d2{0.3, 11};
  const double l1 = loss_and_gradients(p, batch, g1, &d1);
  const double l2 = loss_and_gradients(p, batch, g2, &d1);
  const double l3 = loss_and_gradients(p, batch, g3, &d2);
  EXPECT_EQ(l1, l2);
  EXPECT_EQ(g1.values, g2.values);
  EXPECT_NE(l1, l3);
}

struct GradCheck {
  double worst_tensor = 0.0;  // ||analytic - numeric|| / max(||analytic||, ||numeric||)
  double worst_entry = 0.0;   // same per entry, Richardson-extrapolated differences
  std::string tensor_where;
  std::string entry_where;
};

// Central differences with step h in double precision, per tensor; per entry
// the h and h/2 differences are combined as (4 D(h/2) - D(h)) / 3, which
// cancels the O(h^2) truncation term. Entries with both gradients below 1e-7
// in magnitude count as agreeing.
GradCheck check_gradients(const ModelConfig& cfg, std::uint64_t seed,
                          const std::vector<std::vector<ItemId>>& batch, double h) {
  auto p = init_parameters(cfg, seed, 0.5).cast<double>();
  // Non-trivial LayerNorm parameters and biases.
  Rng rng(seed + 100);
  for (const auto& t : p.layout.tensors()) {
    if (t.name.find("ln") != std::string::npos || t.name.ends_with(".bias")) {
      for (auto& v : p.tensor(t.name)) v += 0.3 * rng.normal();
    }
  }
  ParameterSet<double> g(cfg);
  loss_and_gradients(p, batch, g);
  auto central = [&](std::size_t idx, double step) {
    const double keep = p.values[idx];
    p.values[idx] = keep + step;
    const double up = batch_loss(p, batch);
    p.values[idx] = keep - step;
    const double down = batch_loss(p, batch);
    p.values[idx] = keep;
    return (up - down) / (2.0 * step);
  };
  GradCheck out;
  for (const auto& t : p.layout.tensors()) {
    double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
    for (std::size_t j = 0; j < t.size; ++j) {
      const std::size_t idx = t.offset + j;
      const double analytic = g.values[idx];
      const double coarse = central(idx, h);
      diff2 += (coarse - analytic) * (coarse - analytic);
      a2 += analytic * analytic;
      n2 += coarse * coarse;
      const double numeric = (4.0 * central(idx, h / 2) - coarse) / 3.0;
      const double scale = std::max(std::abs(numeric), std::abs(analytic));
      const double rel = scale < 1e-7 ? 0.0 : std::abs(numeric - analytic) / scale;
      if (rel > out.worst_entry) {
        out.worst_entry = rel;
        out.entry_where = t.name + "[" + std::to_string(j) + "] analytic " +
                          std::to_string(analytic) + " numeric " + std::to_string(numeric);
      }
    }
    const double scale = std::sqrt(std::max(a2, n2));
    const double rel = scale < 1e-7 ? 0.0 : std::sqrt(diff2) / scale;
    if (rel > out.worst_tensor) {
      out.worst_tensor = rel;
      out.tensor_where = t.name;
    }
  }
  return out;
}

TEST(TransformerGradients, MatchFiniteDifferencesOneBlock) {
  const auto cfg = make_config(4, 5, 8, 1, 1);
  const std::vector<std::vector<ItemId>> batch{{0, 0, 1, 3, 5, 2, 4, 1}, {2, 2, 5, 4, 1, 3, 3, 5}};
  const auto r = check_gradients(cfg, 21, batch, 1e-3);
  EXPECT_LT(r.worst_tensor, 1e-4) << r.tensor_where;
  EXPECT_LT(r.worst_entry, 1e-4) << r.entry_where;
}

TEST(TransformerGradients, MatchFiniteDifferencesTwoBlocksTwoHeads) {
  const auto cfg = make_config(4, 5, 6, 2, 2);
  const std::vector<std::vector<ItemId>> batch{{0, 3, 1, 4, 5, 2}, {5, 1, 2, 2, 4, 3}};
  const auto r = check_gradients(cfg, 22, batch, 1e-3);
  EXPECT_LT(r.worst_tensor, 1e-4) << r.tensor_where;
  EXPECT_LT(r.worst_entry, 1e-4) << r.entry_where;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

TEST(Checkpoint, RoundTripIsBitExact) {
  TempDir dir("ckpt_roundtrip");
  const auto cfg = make_config(8, 11, 7, 2, 2);
  const auto params = init_parameters(cfg, 9, 0.7);
  save_checkpoint(dir / "m.ckpt", params, {{"note", "x"}});
  const auto back = load_checkpoint(dir / "m.ckpt");
  EXPECT_EQ(back.params.values, params.values);
  EXPECT_EQ(back.params.config.hidden_size, 8);
  EXPECT_EQ(back.params.config.item_count, 11);
  EXPECT_EQ(back.params.config.max_seq_len, 7);
  EXPECT_EQ(back.extra["note"], "x");
}

TEST(Checkpoint, HeaderAndManifest) {
  TempDir dir("ckpt_header");
  const auto cfg = make_config(2, 3, 4, 1, 1);
  save_checkpoint(dir / "m.ckpt", Parameters(cfg));
  const std::string bytes = testing::slurp(dir / "m.ckpt");
  ASSERT_GT(bytes.size(), 16u);
  EXPECT_EQ(bytes.substr(0, 8), "SEQRECKP");
  std::uint64_t n = 0;
  for (int i = 7; i >= 0; --i) n = (n << 8) | static_cast<unsigned char>(bytes[8 + i]);
  const auto meta = nlohmann::json::parse(bytes.substr(16, n));
  EXPECT_EQ(meta["format_version"], 1);
  const auto& manifest = meta["tensors"];
  ASSERT_EQ(manifest.size(), 16u);
  EXPECT_EQ(manifest[0]["name"], "item_embedding");
  EXPECT_EQ(manifest[0]["offset"], 0);
  EXPECT_EQ(manifest[1]["offset"], 4 * 2 * 4);
  EXPECT_EQ(bytes.size(), 16 + n + 4 * ParameterLayout(cfg).total_size());
}

TEST(Checkpoint, FixtureModelReproducesFrozenOutput) {
  TempDir dir("ckpt_fixture");
  const auto f = tiny_fixture();
  save_checkpoint(dir / "tiny.ckpt", oracle_parameters<float>(f.config));
  const Transformer model(load_checkpoint(dir / "tiny.ckpt").params);
  std::vector<double> flat;
  for (std::size_t t = 1; t <= f.tokens.size(); ++t) {
    const auto s = model.forward(std::span(f.tokens).first(t));
    flat.insert(flat.end(), s.values.begin(), s.values.end());
  }
  expect_matches(f, flat, 1e-6);
}

TEST(Checkpoint, DamagedFilesAreRejected) {
  TempDir dir("ckpt_damaged");
  const auto cfg = make_config(4, 5, 6, 1, 1);
  save_checkpoint(dir / "m.ckpt", init_parameters(cfg, 1));
  const std::string bytes = testing::slurp(dir / "m.ckpt");
  auto write = [&](const std::string& name, const std::string& content) {
    std::ofstream out(dir / name, std::ios::binary);
    out << content;
    return dir / name;
  };
  auto expect_checkpoint_error = [](const std::filesystem::path& path) {
    try {
      load_checkpoint(path);
      FAIL() << path;
    } catch (const Error& e) {
      EXPECT_EQ(e.category(), ErrorCategory::kCheckpoint) << e.what();
    }
  };
  expect_checkpoint_error(write("truncated.ckpt", bytes.substr(0, bytes.size() - 3)));
  expect_checkpoint_error(write("short.ckpt", bytes.substr(0, 10)));
  std::string magic = bytes;
  magic[0] = 'X';
  expect_checkpoint_error(write("magic.ckpt", magic));
  std::string version = bytes;
  const auto pos = version.find("\"format_version\":1");
  ASSERT_NE(pos, std::string::npos);
  version[pos + 17] = '7';
  expect_checkpoint_error(write("version.ckpt", version));
  EXPECT_THROW(load_checkpoint(dir / "missing.ckpt"), Error);
}

}  // namespace
}  // namespace seqrec
