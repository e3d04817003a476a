#pragma once

#include <vector>

#include "tokendrop/flops.hpp"
#include "tokendrop/policy.hpp"
#include "tokendrop/synthetic.hpp"

namespace tokendrop::oracles {

// Physically gathers live tokens at every group boundary, runs the dense
// blocks on the reduced sequence, and scatters survivors back. Independent
// of the masked execution path it checks.
std::vector<double> gathered_vit_logits(const Model& m, const Image& img, const KeepMasks& masks);

// Per-head loop re-evaluation of the interpreter scores for the live
// patch tokens of `seq_values` ([rows x d], row 0 = class), no graph ops.
std::vector<double> naive_scores(const InterpreterParams& ip, const std::vector<double>& seq_values,
                                 int rows, int d, const std::vector<std::uint8_t>& live);

// Instruction-free recount of the total model cost by a plain loop.
long long recount_flops(const CostConfig& cfg, const std::vector<int>& keep_trace);

// Direct bilinear evaluation at one output pixel.
double bilinear_at(const std::vector<double>& scores, int grid_rows, int grid_cols, int out_h,
                   int out_w, int y, int x);

// Orientation statistic over the masked-in (or masked-out) pixels: mean
// |horizontal difference| minus mean |vertical difference|. Positive means
// vertical stripes dominate.
double stripe_orientation_statistic(const Image& img, const Mask& mask, bool inside);

// Small untrained model for structural tests.
Model tiny_model(int blocks = 2, int group_count = 1, int d_emb = 16, int heads = 2,
                 int image_size = 16, int patch = 8, int classes = 2, std::uint64_t seed = 1);

using NamedGrads = std::map<std::string, std::vector<double>>;

// Exact expectation of the single-episode policy-gradient estimator for
// interpreter 0: enumerates every raw keep configuration, applies the same
// all-drop rescue as sampling, weights by the Bernoulli probability of the
// raw draw, and sums advantage * d(log-prob)/dW built from public graph ops
// (a second implementation, independent of the training path).
NamedGrads exact_policy_gradient(const Model& m, const Image& img, int label,
                                 const RewardConfig& cfg);

// Monte Carlo average of the same estimator through the training path.
NamedGrads mc_policy_gradient(const Model& m, const Image& img, int label, const RewardConfig& cfg,
                              int episodes, std::uint64_t seed);

}  // namespace tokendrop::oracles
