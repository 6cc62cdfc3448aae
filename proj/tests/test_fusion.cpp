// Copyright 2026 The ovcount Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "ovc/fusion.hpp"
#include "ovc/model.hpp"

namespace {

using ovc::Tensor;
using ovc::TokenMatrix;
using ovc::TokenRole;

TokenMatrix tokens(ovc::Rng& rng, std::size_t n, std::size_t d, TokenRole role) {
  return {rng.normal_tensor({n, d}, 1.0), role};
}

TEST(Enhancer, ShapesAndZeroShotRows) {
  ovc::Rng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t d = 8, n = 1 + rng.index(20), p = rng.index(7), q = 1 + rng.index(4);
    const auto params = ovc::EnhancerParams::init(d, 2, 16, 1 + rng.index(2), rng);
    const auto [z_vt, z_i] = ovc::feature_enhancer(tokens(rng, n, d, TokenRole::image),
                                                   TokenMatrix(rng.normal_tensor({p, d}, 1.0), TokenRole::exemplar),
                                                   tokens(rng, q, d, TokenRole::text), params);
    EXPECT_EQ(z_vt.tokens.dims(), (ovc::Shape{p + q, d}));
    EXPECT_EQ(z_i.tokens.dims(), (ovc::Shape{n, d}));
    EXPECT_EQ(z_vt.role, TokenRole::fused);
  }
}

TEST(Enhancer, ZeroBlocksPassInputsThrough) {
  ovc::Rng rng(2);
  const auto img = tokens(rng, 10, 8, TokenRole::image), ex = tokens(rng, 3, 8, TokenRole::exemplar),
             txt = tokens(rng, 2, 8, TokenRole::text);
  const auto [z_vt, z_i] = ovc::feature_enhancer(img, ex, txt, ovc::EnhancerParams::zeros(8, 2, 16, 2));
  EXPECT_EQ(z_i.tokens, img.tokens);
  const Tensor parts[] = {ex.tokens, txt.tokens};
  EXPECT_EQ(z_vt.tokens, ovc::concat_rows(parts));
}

TEST(Enhancer, Errors) {
  ovc::Rng rng(3);
  const auto p = ovc::EnhancerParams::zeros(8, 2, 16, 1);
  const auto img = tokens(rng, 4, 8, TokenRole::image);
  EXPECT_THROW(ovc::feature_enhancer(img, TokenMatrix(Tensor::zeros({0, 8}), TokenRole::exemplar),
                                     TokenMatrix(Tensor::zeros({0, 8}), TokenRole::text), p),
               ovc::ValueError);
  EXPECT_THROW(ovc::feature_enhancer(img, TokenMatrix(Tensor::zeros({0, 8}), TokenRole::exemplar),
                                     tokens(rng, 2, 6, TokenRole::text), p),
               ovc::ShapeError);
}

// ---------------------------------------------------------------------------
// Selection

std::vector<std::size_t> brute_select(const Tensor& zi, const Tensor& zvt, std::size_t k) {
  std::vector<double> score(zi.rows());
  for (std::size_t i = 0; i < zi.rows(); ++i) {
    double best = -INFINITY;
    for (std::size_t j = 0; j < zvt.rows(); ++j) {
      double dot = 0.0;
      for (std::size_t c = 0; c < zi.cols(); ++c) dot += zi(i, c) * zvt(j, c);
      best = std::max(best, dot);
    }
    score[i] = best;
  }
  return oracle::topk(score, k);
}

TEST(Select, MatchesBruteForce) {
  ovc::Rng rng(4);
  const auto zi = tokens(rng, 5, 4, TokenRole::image), zvt = tokens(rng, 2, 4, TokenRole::fused);
  for (std::size_t k = 1; k <= 7; ++k) {
    const auto sel = ovc::select_queries(zi, zvt, k);
    EXPECT_EQ(sel.indices, brute_select(zi.tokens, zvt.tokens, k));
    EXPECT_EQ(sel.queries, ovc::gather_rows(zi.tokens, sel.indices));
  }
  for (int trial = 0; trial < 200; ++trial) {
    const auto a = tokens(rng, 1 + rng.index(300), 3, TokenRole::image);
    const auto b = tokens(rng, 1 + rng.index(5), 3, TokenRole::fused);
    const std::size_t k = 1 + rng.index(400);
    EXPECT_EQ(ovc::select_queries(a, b, k).indices, brute_select(a.tokens, b.tokens, k));
  }
}

TEST(Select, AllTokensWhenKAtLeastN) {
  ovc::Rng rng(5);
  const auto zi = tokens(rng, 12, 4, TokenRole::image), zvt = tokens(rng, 3, 4, TokenRole::fused);
  EXPECT_EQ(ovc::select_queries(zi, zvt).indices.size(), 12u);
}

TEST(Select, OrthogonalPromptsTieToSmallestIndices) {
  Tensor zi = Tensor::zeros({6, 4});
  std::vector<double> v(24, 0.0);
  for (std::size_t i = 0; i < 6; ++i) v[i * 4 + (i % 2)] = 1.0 + static_cast<double>(i);  // columns 0/1 only
  const TokenMatrix img(Tensor({6, 4}, v), TokenRole::image);
  const TokenMatrix prompt(Tensor::matrix({{0, 0, 1, 0}, {0, 0, 0, 2}}), TokenRole::fused);
  EXPECT_EQ(ovc::select_queries(img, prompt, 3).indices, (std::vector<std::size_t>{0, 1, 2}));
}

TEST(Select, DominatedColumnsDoNotChangeSelection) {
  ovc::Rng rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    // positive image tokens, so a scaled-down copy of a prompt row scores lower on every token
    const auto zi = TokenMatrix(rng.uniform_tensor({20, 4}, 0.1, 1.0), TokenRole::image);
    const auto zvt = TokenMatrix(rng.uniform_tensor({3, 4}, 0.1, 1.0), TokenRole::fused);
    const Tensor extra = ovc::scale(ovc::gather_rows(zvt.tokens, std::vector<std::size_t>{1}), 0.5);
    const Tensor parts[] = {zvt.tokens, extra};
    const TokenMatrix wider(ovc::concat_rows(parts), TokenRole::fused);
    EXPECT_EQ(ovc::select_queries(zi, zvt, 7).indices, ovc::select_queries(zi, wider, 7).indices);
  }
}

TEST(Select, EmptyPromptThrows) {
  ovc::Rng rng(7);
  EXPECT_THROW(ovc::select_queries(tokens(rng, 3, 4, TokenRole::image), TokenMatrix(Tensor::zeros({0, 4}), TokenRole::fused)),
               ovc::ValueError);
}

// ---------------------------------------------------------------------------
// Decoder

TEST(Decoder, ShapeRangeAndDeterminism) {
  ovc::Rng rng(8);
  const auto zi = tokens(rng, 30, 8, TokenRole::image), zvt = tokens(rng, 5, 8, TokenRole::fused);
  const auto p = ovc::DecoderParams::init(8, 2, 16, 1, rng);
  const auto sel = ovc::select_queries(zi, zvt, 12);
  const auto a = ovc::decode_similarity(zi, zvt, sel.indices, p), b = ovc::decode_similarity(zi, zvt, sel.indices, p);
  EXPECT_EQ(a.scores.dims(), (ovc::Shape{12, 5}));
  EXPECT_EQ(a.centers.dims(), (ovc::Shape{12, 2}));
  for (double v : a.scores.data()) {
    EXPECT_GT(v, 0.0);
    EXPECT_LT(v, 1.0);
  }
  for (double v : a.centers.data()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
  EXPECT_EQ(a.scores, b.scores);
  EXPECT_EQ(a.centers, b.centers);
}

TEST(Decoder, ZeroBlocksGiveSigmoidOfDotProducts) {
  ovc::Rng rng(9);
  const auto zi = tokens(rng, 25, 8, TokenRole::image), zvt = tokens(rng, 4, 8, TokenRole::fused);
  const auto sel = ovc::select_queries(zi, zvt, 10);
  const auto sm = ovc::decode_similarity(zi, zvt, sel.indices, ovc::DecoderParams::zeros(8, 2, 16, 2));
  for (std::size_t r = 0; r < 10; ++r)
    for (std::size_t j = 0; j < 4; ++j) {
      double dot = 0.0;
      for (std::size_t c = 0; c < 8; ++c) dot += zi.tokens(sel.indices[r], c) * zvt.tokens(j, c);
      EXPECT_NEAR(sm.scores(r, j), 1.0 / (1.0 + std::exp(-dot)), 1e-10);
    }
}

TEST(Decoder, OutOfRangeIndexThrows) {
  ovc::Rng rng(10);
  const auto zi = tokens(rng, 4, 8, TokenRole::image), zvt = tokens(rng, 2, 8, TokenRole::fused);
  const std::vector<std::size_t> bad{0, 4};
  EXPECT_THROW(ovc::decode_similarity(zi, zvt, bad, ovc::DecoderParams::zeros(8, 2, 16, 1)), ovc::ValueError);
}

// ---------------------------------------------------------------------------
// Counting

ovc::SimilarityMatrix matrix(Tensor scores) {
  const std::size_t k = scores.rows();
  std::vector<std::size_t> sel(k);
  for (std::size_t i = 0; i < k; ++i) sel[i] = i;
  return {std::move(scores), sel, Tensor::full({k, 2}, 0.5), 0};
}

TEST(Count, DirectEnumeration) {
  const auto sm = matrix(Tensor::matrix({{0.9, 0.1}, {0.4, 0.45}, {0.6, 0.2}}));
  const auto r = ovc::count_from_similarity(sm, 0.5);
  EXPECT_EQ(r.count, 2u);
  EXPECT_EQ(r.kept, (std::vector<std::size_t>{0, 2}));
  EXPECT_EQ(r.confidence, (std::vector<double>{0.9, 0.45, 0.6}));
  EXPECT_EQ(ovc::count_from_similarity(sm, 0.95).count, 0u);
  EXPECT_EQ(ovc::count_from_similarity(sm, 0.0).count, 3u);
  EXPECT_THROW(ovc::count_from_similarity(sm, 1.5), ovc::ValueError);
}

TEST(Count, MonotoneInThreshold) {
  ovc::Rng rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const auto sm = matrix(ovc::sigmoid_map(rng.normal_tensor({1 + rng.index(40), 1 + rng.index(5)}, 3.0)));
    std::size_t prev = sm.k();
    for (int t = 0; t <= 100; ++t) {
      const auto c = ovc::count_from_similarity(sm, t / 100.0).count;
      EXPECT_LE(c, prev);
      prev = c;
    }
  }
}

// ---------------------------------------------------------------------------
// Full forward pass

TEST(Model, ShapeChainAndDeterminism) {
  ovc::ModelConfig cfg;
  const auto params = ovc::ModelParams::init(cfg, 3);
  const auto enc = ovc::Encoders::from_seed(cfg, 3);
  ovc::Rng rng(12);
  const Tensor image = rng.uniform_tensor({64, 96, 3}, 0.0, 1.0);
  const auto feats = enc.image.encode(image);
  const auto text = enc.text.encode("storage tank");
  const ovc::ExemplarBoxes boxes{{{4, 4, 20, 18}, {30, 10, 50, 40}}};
  const auto a = ovc::infer(params, cfg, feats, text, boxes);
  const std::size_t n = 3 * 4 * 6;
  EXPECT_EQ(a.n, n);
  EXPECT_EQ(a.similarity.scores.dims(), (ovc::Shape{std::min<std::size_t>(900, n), 2 * 3 + 2}));
  EXPECT_EQ(a.positions.size(), n);
  const auto b = ovc::infer(params, cfg, feats, text, boxes);
  EXPECT_EQ(a.similarity.scores, b.similarity.scores);

  const auto zs = ovc::infer(params, cfg, feats, text, {});
  EXPECT_EQ(zs.similarity.columns(), 2u);
}

}  // namespace
