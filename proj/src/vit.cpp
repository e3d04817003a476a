#include "tokendrop/vit.hpp"

#include <cmath>
#include <stdexcept>

namespace tokendrop {

int TokenSequence::live_patch_count() const {
    int n = 0;
    const int off = embedded ? 1 : 0;
    for (int i = 0; i < n_patches; ++i) n += live[static_cast<std::size_t>(i + off)] ? 1 : 0;
    return n;
}

std::vector<Param*> BlockParams::all() {
    return {&wq, &bq, &wk, &bk, &wv, &bv, &wo, &bo, &w1, &b1, &w2, &b2,
            &ln1_g, &ln1_b, &ln2_g, &ln2_b};
}

void VitParams::build(int block_count, Rng& rng) {
    if (d_emb % heads != 0) {
        throw std::invalid_argument("embedding width " + std::to_string(d_emb) +
                                    " not divisible by " + std::to_string(heads) + " heads");
    }
    if (image_h % patch_size != 0 || image_w % patch_size != 0) {
        throw std::invalid_argument("image " + std::to_string(image_h) + "x" + std::to_string(image_w) +
                                    " not divisible by patch size " + std::to_string(patch_size));
    }
    const int pl = patch_len();
    patch_w = Param("embed.w", {pl, d_emb});
    patch_b = Param("embed.b", {d_emb});
    pos_table = Param("embed.pos", {n_patches() + 1, d_emb});
    class_token = Param("embed.cls", {d_emb});
    head_w = Param("head.w", {d_emb, num_classes});
    head_b = Param("head.b", {num_classes});

    blocks.clear();
    blocks.reserve(static_cast<std::size_t>(block_count));
    const int hidden = 4 * d_emb;  // fixed feed-forward expansion
    for (int i = 0; i < block_count; ++i) {
        const std::string pre = "block" + std::to_string(i) + ".";
        BlockParams bp;
        bp.wq = Param(pre + "wq", {d_emb, d_emb});
        bp.bq = Param(pre + "bq", {d_emb});
        bp.wk = Param(pre + "wk", {d_emb, d_emb});
        bp.bk = Param(pre + "bk", {d_emb});
        bp.wv = Param(pre + "wv", {d_emb, d_emb});
        bp.bv = Param(pre + "bv", {d_emb});
        bp.wo = Param(pre + "wo", {d_emb, d_emb});
        bp.bo = Param(pre + "bo", {d_emb});
        bp.w1 = Param(pre + "ffn.w1", {d_emb, hidden});
        bp.b1 = Param(pre + "ffn.b1", {hidden});
        bp.w2 = Param(pre + "ffn.w2", {hidden, d_emb});
        bp.b2 = Param(pre + "ffn.b2", {d_emb});
        bp.ln1_g = Param(pre + "ln1.g", {d_emb});
        bp.ln1_b = Param(pre + "ln1.b", {d_emb});
        bp.ln2_g = Param(pre + "ln2.g", {d_emb});
        bp.ln2_b = Param(pre + "ln2.b", {d_emb});
        blocks.push_back(std::move(bp));
    }

    for (Param* p : all_params()) p->fill_truncated_normal(rng, 0.02);
    patch_b.fill(0.0);
    head_b.fill(0.0);
    for (auto& bp : blocks) {
        bp.bq.fill(0.0); bp.bk.fill(0.0); bp.bv.fill(0.0); bp.bo.fill(0.0);
        bp.b1.fill(0.0); bp.b2.fill(0.0);
        bp.ln1_g.fill(1.0); bp.ln1_b.fill(0.0);
        bp.ln2_g.fill(1.0); bp.ln2_b.fill(0.0);
    }
}

std::vector<Param*> VitParams::all_params() {
    std::vector<Param*> out = {&patch_w, &patch_b, &pos_table, &class_token, &head_w, &head_b};
    for (auto& bp : blocks)
        for (Param* p : bp.all()) out.push_back(p);
    return out;
}

std::vector<Param*> VitParams::embedding_params() {
    return {&patch_w, &patch_b, &pos_table, &class_token};
}

std::vector<Param*> VitParams::block_params(int first_block, int last_block) {
    std::vector<Param*> out;
    for (int i = first_block; i <= last_block; ++i)
        for (Param* p : blocks[static_cast<std::size_t>(i)].all()) out.push_back(p);
    return out;
}

std::vector<double> AttentionCapture::cls_to_patches() const {
    std::vector<double> out(static_cast<std::size_t>(rows > 0 ? rows - 1 : 0), 0.0);
    if (heads.empty() || rows < 2) return out;
    for (const auto& h : heads)
        for (int j = 1; j < rows; ++j) out[static_cast<std::size_t>(j - 1)] += h[static_cast<std::size_t>(j)];
    for (double& v : out) v /= static_cast<double>(heads.size());
    return out;
}

TokenSequence patchify(Graph& g, const Image& img, int patch_size) {
    if (patch_size <= 0 || img.h % patch_size != 0 || img.w % patch_size != 0) {
        throw std::invalid_argument("patchify: image " + std::to_string(img.h) + "x" +
                                    std::to_string(img.w) + " not divisible by patch size " +
                                    std::to_string(patch_size));
    }
    const int gr = img.h / patch_size, gc = img.w / patch_size;
    const int n = gr * gc;
    const int pl = patch_size * patch_size * img.c;

    std::vector<double> values(static_cast<std::size_t>(n) * static_cast<std::size_t>(pl));
    std::vector<GridPos> grid(static_cast<std::size_t>(n));
    for (int r = 0; r < gr; ++r) {
        for (int cidx = 0; cidx < gc; ++cidx) {
            const int tok = r * gc + cidx;
            grid[static_cast<std::size_t>(tok)] = {r, cidx};
            std::size_t k = static_cast<std::size_t>(tok) * static_cast<std::size_t>(pl);
            for (int dy = 0; dy < patch_size; ++dy)
                for (int dx = 0; dx < patch_size; ++dx)
                    for (int ch = 0; ch < img.c; ++ch)
                        values[k++] = img.at(r * patch_size + dy, cidx * patch_size + dx, ch);
        }
    }

    TokenSequence seq;
    seq.tokens = g.leaf({n, pl}, std::move(values));
    seq.grid = std::move(grid);
    seq.live.assign(static_cast<std::size_t>(n), 1);
    seq.n_patches = n;
    seq.grid_rows = gr;
    seq.grid_cols = gc;
    seq.embedded = false;
    return seq;
}

Image unpatchify(const std::vector<std::vector<double>>& patches, const std::vector<GridPos>& grid,
                 int patch_size, int h, int w, int c) {
    Image img;
    img.h = h;
    img.w = w;
    img.c = c;
    img.pix.assign(static_cast<std::size_t>(h) * static_cast<std::size_t>(w) * static_cast<std::size_t>(c), 0.0);
    for (std::size_t t = 0; t < patches.size(); ++t) {
        const GridPos gp = grid[t];
        std::size_t k = 0;
        for (int dy = 0; dy < patch_size; ++dy)
            for (int dx = 0; dx < patch_size; ++dx)
                for (int ch = 0; ch < c; ++ch)
                    img.at(gp.row * patch_size + dy, gp.col * patch_size + dx, ch) = patches[t][k++];
    }
    return img;
}

TokenSequence embed(Binder& b, const TokenSequence& seq, const VitParams& p) {
    if (seq.embedded) throw std::invalid_argument("embed: sequence already embedded");
    Graph& g = b.graph();

    Tensor projected = add_rowvec(matmul(seq.tokens, b(p.patch_w)), b(p.patch_b));

    // Positional rows are selected by each token's original grid slot, not by
    // row order, so a permuted sequence still picks up its own entries. The
    // gather is expressed as a selection matrix to keep pos_table on the tape.
    const int n = seq.n_patches;
    std::vector<double> sel(static_cast<std::size_t>(n + 1) * static_cast<std::size_t>(n + 1), 0.0);
    sel[0] = 1.0;
    for (int i = 0; i < n; ++i) {
        const int slot = seq.grid[static_cast<std::size_t>(i)].row * seq.grid_cols +
                         seq.grid[static_cast<std::size_t>(i)].col;
        sel[static_cast<std::size_t>((i + 1) * (n + 1) + slot + 1)] = 1.0;
    }
    Tensor pos_rows = matmul(g.leaf({n + 1, n + 1}, std::move(sel)), b(p.pos_table));

    Tensor stacked = concat_rows(b(p.class_token), projected);
    Tensor tokens = add(stacked, pos_rows);

    TokenSequence out;
    out.tokens = tokens;
    out.grid = seq.grid;
    out.live.assign(static_cast<std::size_t>(n + 1), 1);
    out.n_patches = n;
    out.grid_rows = seq.grid_rows;
    out.grid_cols = seq.grid_cols;
    out.embedded = true;
    return out;
}

TokenSequence msa_forward(Binder& b, const TokenSequence& seq, const BlockParams& bp,
                          int heads, double ln_eps, AttentionCapture* capture) {
    const auto& live = seq.row_live();
    bool any_live = false;
    for (auto v : live) any_live |= (v != 0);
    if (!any_live) throw std::invalid_argument("msa_forward: no live tokens");

    const int d = seq.tokens.cols();
    const int hd = d / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

    Tensor normed = layer_norm(seq.tokens, b(bp.ln1_g), b(bp.ln1_b), ln_eps);
    Tensor q = add_rowvec(matmul(normed, b(bp.wq)), b(bp.bq));
    Tensor k = add_rowvec(matmul(normed, b(bp.wk)), b(bp.bk));
    Tensor v = add_rowvec(matmul(normed, b(bp.wv)), b(bp.bv));

    if (capture) {
        capture->rows = seq.tokens.rows();
        capture->heads.clear();
    }

    std::vector<Tensor> head_out;
    head_out.reserve(static_cast<std::size_t>(heads));
    for (int h = 0; h < heads; ++h) {
        Tensor qh = slice_cols(q, h * hd, (h + 1) * hd);
        Tensor kh = slice_cols(k, h * hd, (h + 1) * hd);
        Tensor vh = slice_cols(v, h * hd, (h + 1) * hd);
        Tensor scores = affine(matmul(qh, transpose(kh)), scale, 0.0);
        Tensor attn = softmax_rows_masked(scores, live);
        if (capture) capture->heads.push_back(attn.data());
        head_out.push_back(matmul(attn, vh));
    }

    Tensor merged = heads == 1 ? head_out[0] : concat_cols(head_out);
    Tensor update = add_rowvec(matmul(merged, b(bp.wo)), b(bp.bo));

    TokenSequence out = seq;
    out.tokens = masked_row_update(seq.tokens, update, live);
    return out;
}

TokenSequence ffn_forward(Binder& b, const TokenSequence& seq, const BlockParams& bp, double ln_eps) {
    Tensor normed = layer_norm(seq.tokens, b(bp.ln2_g), b(bp.ln2_b), ln_eps);
    Tensor hidden = gelu(add_rowvec(matmul(normed, b(bp.w1)), b(bp.b1)));
    Tensor update = add_rowvec(matmul(hidden, b(bp.w2)), b(bp.b2));

    TokenSequence out = seq;
    out.tokens = masked_row_update(seq.tokens, update, seq.row_live());
    return out;
}

Tensor classifier_logits(Binder& b, const TokenSequence& seq, const VitParams& p) {
    Tensor cls = take_row(seq.tokens, 0);
    return add_rowvec(matmul(cls, b(p.head_w)), b(p.head_b));
}

Tensor vit_forward(Binder& b, const Image& img, const VitParams& p, const KeepMasks* masks,
                   AttentionCapture* capture) {
    TokenSequence seq = embed(b, patchify(b.graph(), img, p.patch_size), p);
    const int n_blocks = static_cast<int>(p.blocks.size());
    if (masks) {
        if (masks->blocks_per_group <= 0 ||
            static_cast<int>(masks->per_group.size()) * masks->blocks_per_group != n_blocks) {
            throw std::invalid_argument("vit_forward: keep masks do not tile the block stack");
        }
        for (const auto& m : masks->per_group) {
            if (static_cast<int>(m.size()) != seq.n_patches) {
                throw std::invalid_argument("vit_forward: keep mask length " + std::to_string(m.size()) +
                                            " vs " + std::to_string(seq.n_patches) + " patches");
            }
        }
    }
    for (int blk = 0; blk < n_blocks; ++blk) {
        if (masks && blk % masks->blocks_per_group == 0) {
            const auto& m = masks->per_group[static_cast<std::size_t>(blk / masks->blocks_per_group)];
            for (int i = 0; i < seq.n_patches; ++i) {
                if (!m[static_cast<std::size_t>(i)]) seq.live[static_cast<std::size_t>(i + 1)] = 0;
            }
        }
        AttentionCapture* cap = (capture && capture->block_index == blk) ? capture : nullptr;
        seq = msa_forward(b, seq, p.blocks[static_cast<std::size_t>(blk)], p.heads, p.ln_eps, cap);
        seq = ffn_forward(b, seq, p.blocks[static_cast<std::size_t>(blk)], p.ln_eps);
    }
    return classifier_logits(b, seq, p);
}

}  // namespace tokendrop
