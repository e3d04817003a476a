#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "tokendrop/params.hpp"

namespace tokendrop {

// Row-major H x W x C pixel block, values in [0,1].
struct Image {
    int h = 0, w = 0, c = 1;
    std::vector<double> pix;

    double at(int y, int x, int ch = 0) const {
        return pix[static_cast<std::size_t>((y * w + x) * c + ch)];
    }
    double& at(int y, int x, int ch = 0) {
        return pix[static_cast<std::size_t>((y * w + x) * c + ch)];
    }
};

struct GridPos {
    int row = 0, col = 0;
    bool operator==(const GridPos&) const = default;
};

// Patch tokens plus (once embedded) the class token at row 0. Dropped
// tokens stay in the tensor but are masked out of every computation; the
// live flags are the source of truth.
struct TokenSequence {
    Tensor tokens;                    // [n_patches x patch_len] or [n_patches+1 x d_emb]
    std::vector<GridPos> grid;        // per patch token, original grid position
    std::vector<std::uint8_t> live;   // per tensor row (class row included when embedded)
    int n_patches = 0;
    int grid_rows = 0, grid_cols = 0;
    bool embedded = false;            // class token present at row 0 iff true

    int row_of_patch(int patch_idx) const { return embedded ? patch_idx + 1 : patch_idx; }
    int live_patch_count() const;
    // live flags for the tensor rows, as used by attention masking
    const std::vector<std::uint8_t>& row_live() const { return live; }
};

struct BlockParams {
    Param wq, bq, wk, bk, wv, bv, wo, bo;  // attention projections, width d_emb
    Param w1, b1, w2, b2;                  // feed-forward d -> 4d -> d
    Param ln1_g, ln1_b, ln2_g, ln2_b;
    std::vector<Param*> all();
};

struct VitParams {
    int image_h = 32, image_w = 32, channels = 1;
    int patch_size = 8;
    int d_emb = 64;
    int heads = 4;
    int num_classes = 2;

    Param patch_w, patch_b;  // [patch_len x d_emb], [d_emb]
    Param pos_table;         // [n_patches+1 x d_emb], row 0 = class slot
    Param class_token;       // [d_emb]
    Param head_w, head_b;    // [d_emb x classes], [classes]
    std::vector<BlockParams> blocks;

    double ln_eps = 1e-5;

    int n_patches() const { return (image_h / patch_size) * (image_w / patch_size); }
    int patch_len() const { return patch_size * patch_size * channels; }
    int head_dim() const { return d_emb / heads; }

    // Allocates every block and initializes weights with truncated normal
    // sigma=0.02 (biases zero, layer-norm gains one).
    void build(int block_count, Rng& rng);
    std::vector<Param*> all_params();
    std::vector<Param*> embedding_params();  // patch embed + positions + class token
    std::vector<Param*> block_params(int first_block, int last_block);  // inclusive range
};

// Optional per-forward probe: captures the post-softmax attention of one
// block (all heads, full matrix) for inspection and the attention baseline.
struct AttentionCapture {
    int block_index = -1;
    int rows = 0;
    std::vector<std::vector<double>> heads;  // per head, rows x rows row-major

    // Mean over heads of the class-token row, patch entries only.
    std::vector<double> cls_to_patches() const;
};

// Splits the image into non-overlapping patch_size x patch_size patches,
// flattened row-major (then channel-minor), in row-major grid order.
TokenSequence patchify(Graph& g, const Image& img, int patch_size);

// Linear patch embedding plus positional entries indexed by each token's
// original grid slot; prepends the class token. All tokens start live.
TokenSequence embed(Binder& b, const TokenSequence& seq, const VitParams& p);

TokenSequence msa_forward(Binder& b, const TokenSequence& seq, const BlockParams& bp,
                          int heads, double ln_eps, AttentionCapture* capture = nullptr);

TokenSequence ffn_forward(Binder& b, const TokenSequence& seq, const BlockParams& bp, double ln_eps);

Tensor classifier_logits(Binder& b, const TokenSequence& seq, const VitParams& p);

// Keep decisions applied at group boundaries: mask g (length n_patches,
// 1=keep) is ANDed into the live flags before block g*blocks_per_group.
struct KeepMasks {
    int blocks_per_group = 0;
    std::vector<std::vector<std::uint8_t>> per_group;
};

// Full backbone pass. With no masks this is a plain ViT.
Tensor vit_forward(Binder& b, const Image& img, const VitParams& p,
                   const KeepMasks* masks = nullptr, AttentionCapture* capture = nullptr);

// Inverse of patchify for round-trip checks and patch-level rendering.
Image unpatchify(const std::vector<std::vector<double>>& patches,
                 const std::vector<GridPos>& grid, int patch_size, int h, int w, int c);

}  // namespace tokendrop
