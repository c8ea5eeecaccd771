#pragma once

// The two transformer streams. MotionStream denoises the rasterized
// motion-canvas latent under text/task conditioning and exports per-layer
// feature residuals; VideoStream denoises the video latent under reference,
// audio (face-mask gated), and injected motion-residual guidance.

#include "duet/audio.hpp"
#include "duet/backbone.hpp"
#include "duet/grid.hpp"
#include "duet/motion.hpp"

namespace duet {

// Per-layer feature residuals over the motion token grid. Entry 0 stores the
// first block's full output; entry l>0 stores output_l - output_{l-1}, so the
// partial sums telescope back to every layer's output.
template <class T>
struct ResidualStack {
    int layers = 0, frames = 0, gh = 0, gw = 0, C = 0;
    std::vector<std::vector<T>> delta;  // [layers][frames*gh*gw*C]
    uint64_t step_tag = 0;              // denoising-step id that produced it

    void reset(int L, int F, int H, int W, int C_) {
        layers = L;
        frames = F;
        gh = H;
        gw = W;
        C = C_;
        delta.assign(static_cast<size_t>(L),
                     std::vector<T>(static_cast<size_t>(F) * H * W * C_, T(0)));
    }
    size_t tokens() const { return static_cast<size_t>(frames) * gh * gw; }
};

// Fractional per-token weights over the video frame grid (broadcast over
// channels); 0 outside the face region.
struct FaceMask {
    int frames = 0, gh = 0, gw = 0;
    std::vector<float> w;  // [frames, gh, gw]

    FaceMask() = default;
    FaceMask(int f, int h, int wd, float fill = 0.0f)
        : frames(f), gh(h), gw(wd), w(static_cast<size_t>(f) * h * wd, fill) {}
};

// pixel [0,1] <-> latent [-1,1] value maps used around patchify/unpatchify
inline float pixel_to_latent(float p) { return 2.0f * p - 1.0f; }
inline float latent_to_pixel(float z) { return 0.5f * (z + 1.0f); }

namespace detail {

// positions for [ref | frame] token layout; ref tokens use the disjoint
// remapped plane
inline std::vector<rope::PositionIndex> layout_positions(int frames, int gh, int gw) {
    std::vector<rope::PositionIndex> pos;
    pos.reserve(static_cast<size_t>(gh) * gw * (frames + 1));
    for (int i = 0; i < gh; i++)
        for (int j = 0; j < gw; j++)
            pos.push_back(rope::remap_reference({0, i, j}, gw, gh));
    auto frame_pos = rope::grid_positions(frames, gh, gw);
    pos.insert(pos.end(), frame_pos.begin(), frame_pos.end());
    return pos;
}

}  // namespace detail

// ---------------------------------------------------------------------------

template <class T>
struct MotionStream {
    int C = 0, heads = 0, layers = 0, ps = 0, in_ch = 0, vocab_n = 0;

    Linear<T> patch_embed;
    Embedding<T> text_emb, task_emb;
    TimestepEmbed<T> temb;
    std::vector<DitBlock<T>> blocks;
    FinalHead<T> head;

    struct Cache {
        int frames = 0, gh = 0, gw = 0, ref_tokens = 0, Ttot = 0, n_cond = 0;
        std::vector<rope::PositionIndex> pos;
        std::vector<T> emb_in;  // [Ttot, in_ch] patch rows fed to patch_embed
        std::vector<T> cond;    // [n_cond, C]
        std::vector<int> text_ids;
        int task_id = 0;
        typename TimestepEmbed<T>::Cache tc;
        std::vector<typename DitBlock<T>::Cache> bc;
        typename FinalHead<T>::Cache hc;
    };

    void init(int C_, int heads_, int layers_, int ps_, int vocab_, Rng& rng) {
        C = C_;
        heads = heads_;
        layers = layers_;
        ps = ps_;
        in_ch = 3 * ps * ps;
        vocab_n = vocab_;
        patch_embed.init(in_ch, C, rng);
        text_emb.init(vocab_n, C, rng);
        task_emb.init(2, C, rng);
        temb.init(C, rng);
        blocks.resize(static_cast<size_t>(layers));
        for (auto& b : blocks) b.init(C, heads, /*text=*/true, /*audio=*/false, 0, rng);
        head.init(C, in_ch);
    }

    // z: noised motion latent; ref: reference-image latent on the same grid
    // (1 frame). Returns the vector-field prediction and fills the residual
    // stack from frame-token layer outputs.
    void fwd(const LatentGrid<T>& z, const LatentGrid<T>& ref, T t,
             const motion::TaskConditioning& cond, Cache& c, LatentGrid<T>& pred,
             ResidualStack<T>& stack) const {
        DUET_CHECK(z.C == in_ch, "motion latent channel mismatch");
        DUET_CHECK(ref.frames == 1 && ref.gh == z.gh && ref.gw == z.gw && ref.C == in_ch,
                   "reference latent must be one frame on the motion grid");
        int F = z.frames, gh = z.gh, gw = z.gw;
        int rt = gh * gw;
        int ft = static_cast<int>(z.tokens());
        int Ttot = rt + ft;
        c.frames = F;
        c.gh = gh;
        c.gw = gw;
        c.ref_tokens = rt;
        c.Ttot = Ttot;
        c.pos = detail::layout_positions(F, gh, gw);

        c.emb_in.assign(static_cast<size_t>(Ttot) * in_ch, T(0));
        std::memcpy(c.emb_in.data(), ref.ptr(), sizeof(T) * ref.numel());
        std::memcpy(c.emb_in.data() + static_cast<size_t>(rt) * in_ch, z.ptr(),
                    sizeof(T) * z.numel());
        std::vector<T> x(static_cast<size_t>(Ttot) * C);
        patch_embed.fwd(Ttot, c.emb_in.data(), x.data());

        temb.fwd(t, c.tc);

        c.text_ids = cond.text_ids;
        c.task_id = cond.task_id;
        c.n_cond = static_cast<int>(cond.text_ids.size()) + 1;
        c.cond.assign(static_cast<size_t>(c.n_cond) * C, T(0));
        if (!cond.text_ids.empty()) text_emb.fwd(cond.text_ids, c.cond.data());
        task_emb.fwd({cond.task_id}, c.cond.data() + (static_cast<size_t>(c.n_cond) - 1) * C);

        stack.reset(layers, F, gh, gw, C);
        c.bc.assign(static_cast<size_t>(layers), {});
        std::vector<T> prev_frames(static_cast<size_t>(ft) * C, T(0));
        for (int l = 0; l < layers; l++) {
            blocks[static_cast<size_t>(l)].fwd(x, c.pos, c.tc.out.data(), c.cond.data(), c.n_cond,
                                               nullptr, F, nullptr, rt, gh * gw,
                                               c.bc[static_cast<size_t>(l)]);
            const T* hf = x.data() + static_cast<size_t>(rt) * C;
            T* dl = stack.delta[static_cast<size_t>(l)].data();
            if (l == 0) {
                std::memcpy(dl, hf, sizeof(T) * prev_frames.size());
            } else {
                for (size_t i = 0; i < prev_frames.size(); i++) dl[i] = hf[i] - prev_frames[i];
            }
            std::memcpy(prev_frames.data(), hf, sizeof(T) * prev_frames.size());
        }

        pred = LatentGrid<T>(F, gh, gw, in_ch);
        head.fwd(ft, x.data() + static_cast<size_t>(rt) * C, c.tc.out.data(), c.hc, pred.ptr());
    }

    // dstack: optional per-layer gradients wrt the stack entries (same shapes);
    // dz: optional gradient wrt the noised latent input.
    void bwd(const Cache& c, const LatentGrid<T>& dpred, const ResidualStack<T>* dstack,
             LatentGrid<T>* dz) {
        int rt = c.ref_tokens, Ttot = c.Ttot;
        int ft = Ttot - rt;
        size_t fsz = static_cast<size_t>(ft) * C;
        std::vector<T> d(static_cast<size_t>(Ttot) * C, T(0));
        std::vector<T> dtemb(C, T(0));
        head.bwd(c.hc, dpred.ptr(), d.data() + static_cast<size_t>(rt) * C, dtemb.data());

        std::vector<T> dcond(static_cast<size_t>(c.n_cond) * C, T(0));
        auto add_stack_grad = [&](int l) {
            // dL/dh_l contribution: g_l - g_{l+1} (last layer: just g_l)
            T* df = d.data() + static_cast<size_t>(rt) * C;
            const T* gl = dstack->delta[static_cast<size_t>(l)].data();
            if (l == layers - 1) {
                for (size_t i = 0; i < fsz; i++) df[i] += gl[i];
            } else {
                const T* gn = dstack->delta[static_cast<size_t>(l) + 1].data();
                for (size_t i = 0; i < fsz; i++) df[i] += gl[i] - gn[i];
            }
        };
        if (dstack) add_stack_grad(layers - 1);
        for (int l = layers - 1; l >= 0; l--) {
            blocks[static_cast<size_t>(l)].bwd(c.bc[static_cast<size_t>(l)], c.pos, c.cond.data(),
                                               nullptr, nullptr, d, dtemb.data(), dcond.data(),
                                               nullptr);
            if (dstack && l > 0) add_stack_grad(l - 1);
        }

        if (!c.text_ids.empty()) text_emb.bwd(c.text_ids, dcond.data());
        task_emb.bwd({c.task_id}, dcond.data() + (static_cast<size_t>(c.n_cond) - 1) * C);
        temb.bwd(c.tc, dtemb.data());

        if (dz) {
            std::vector<T> demb(static_cast<size_t>(Ttot) * in_ch, T(0));
            patch_embed.bwd(Ttot, c.emb_in.data(), d.data(), demb.data());
            *dz = LatentGrid<T>(c.frames, c.gh, c.gw, in_ch);
            std::memcpy(dz->ptr(), demb.data() + static_cast<size_t>(rt) * in_ch,
                        sizeof(T) * dz->numel());
        } else {
            patch_embed.bwd(Ttot, c.emb_in.data(), d.data(), nullptr);
        }
    }

    void visit(const std::string& p, const ParamVisitor<T>& fn) {
        patch_embed.visit(p + ".patch_embed", fn);
        text_emb.visit(p + ".text_emb", fn);
        task_emb.visit(p + ".task_emb", fn);
        temb.visit(p + ".temb", fn);
        for (int l = 0; l < layers; l++)
            blocks[static_cast<size_t>(l)].visit(p + ".block" + std::to_string(l), fn);
        head.visit(p + ".head", fn);
    }

    void sync() {
        patch_embed.sync();
        temb.sync();
        for (auto& b : blocks) b.sync();
        head.sync();
    }
};

// ---------------------------------------------------------------------------

template <class T>
struct VideoStream {
    int C = 0, heads = 0, layers = 0, ps = 0, in_ch = 0, audio_dim = 0, motion_C = 0;

    Linear<T> patch_embed;
    audio::AudioEncoder<T> audio_enc;
    TimestepEmbed<T> temb;
    std::vector<DitBlock<T>> blocks;
    std::vector<Linear<T>> inject;  // zero-init motion_C -> C, one per layer
    FinalHead<T> head;

    struct Cache {
        int frames = 0, gh = 0, gw = 0, ref_tokens = 0, Ttot = 0;
        std::vector<rope::PositionIndex> pos;
        std::vector<T> emb_in;
        std::vector<T> mask;  // [Ttot] face-mask weight per token (empty if no audio)
        bool has_stack = false;
        int mgh = 0, mgw = 0;
        std::vector<std::vector<T>> inj_interp;  // [layers][frame_tokens * motion_C]
        typename TimestepEmbed<T>::Cache tc;
        std::vector<typename DitBlock<T>::Cache> bc;
        typename FinalHead<T>::Cache hc;
    };

    void init(int C_, int heads_, int layers_, int ps_, int audio_dim_, int motion_C_, Rng& rng) {
        C = C_;
        heads = heads_;
        layers = layers_;
        ps = ps_;
        in_ch = 3 * ps * ps;
        audio_dim = audio_dim_;
        motion_C = motion_C_;
        patch_embed.init(in_ch, C, rng);
        audio_enc.init(audio_dim, rng);
        temb.init(C, rng);
        blocks.resize(static_cast<size_t>(layers));
        for (auto& b : blocks) b.init(C, heads, /*text=*/false, /*audio=*/true, audio_dim, rng);
        inject.resize(static_cast<size_t>(layers));
        for (auto& j : inject) j.init_zero(motion_C, C);
        head.init(C, in_ch);
    }

    void fwd(const LatentGrid<T>& z, const LatentGrid<T>& ref, T t,
             const audio::FeatureSeq<T>* audio_feat, const FaceMask* fmask,
             const ResidualStack<T>* stack, Cache& c, LatentGrid<T>& pred) const {
        DUET_CHECK(z.C == in_ch, "video latent channel mismatch");
        DUET_CHECK(ref.frames == 1 && ref.gh == z.gh && ref.gw == z.gw && ref.C == in_ch,
                   "reference latent must be one frame on the video grid");
        int F = z.frames, gh = z.gh, gw = z.gw;
        int rt = gh * gw;
        int ft = static_cast<int>(z.tokens());
        int Ttot = rt + ft;
        if (audio_feat) {
            DUET_CHECK(audio_feat->frames == F, "audio feature frame count mismatch");
            DUET_CHECK(audio_feat->dim == audio_dim, "audio feature dim mismatch");
        }
        if (stack) {
            DUET_CHECK(stack->layers == layers, "residual stack layer count mismatch");
            DUET_CHECK(stack->frames == F, "residual stack frame count mismatch");
            DUET_CHECK(stack->C == motion_C, "residual stack channel mismatch");
            DUET_CHECK(stack->gh <= gh && stack->gw <= gw,
                       "motion grid must not exceed video grid");
        }
        c.frames = F;
        c.gh = gh;
        c.gw = gw;
        c.ref_tokens = rt;
        c.Ttot = Ttot;
        c.pos = detail::layout_positions(F, gh, gw);
        c.has_stack = stack != nullptr;
        c.mgh = stack ? stack->gh : 0;
        c.mgw = stack ? stack->gw : 0;

        c.emb_in.assign(static_cast<size_t>(Ttot) * in_ch, T(0));
        std::memcpy(c.emb_in.data(), ref.ptr(), sizeof(T) * ref.numel());
        std::memcpy(c.emb_in.data() + static_cast<size_t>(rt) * in_ch, z.ptr(),
                    sizeof(T) * z.numel());
        std::vector<T> x(static_cast<size_t>(Ttot) * C);
        patch_embed.fwd(Ttot, c.emb_in.data(), x.data());

        temb.fwd(t, c.tc);

        c.mask.clear();
        if (audio_feat) {
            c.mask.assign(static_cast<size_t>(Ttot), T(0));  // ref tokens stay 0
            if (fmask) {
                DUET_CHECK(fmask->frames == F && fmask->gh == gh && fmask->gw == gw,
                           "face mask grid mismatch");
                for (int i = 0; i < ft; i++)
                    c.mask[static_cast<size_t>(rt + i)] = static_cast<T>(fmask->w[static_cast<size_t>(i)]);
            } else {
                for (int i = 0; i < ft; i++) c.mask[static_cast<size_t>(rt + i)] = T(1);
            }
        }

        c.bc.assign(static_cast<size_t>(layers), {});
        c.inj_interp.assign(static_cast<size_t>(layers), {});
        std::vector<T> proj_out(static_cast<size_t>(ft) * C);
        for (int l = 0; l < layers; l++) {
            if (stack) {
                auto& interp = c.inj_interp[static_cast<size_t>(l)];
                interp.assign(static_cast<size_t>(ft) * motion_C, T(0));
                kern::resize_bilinear_fwd(F, stack->gh, stack->gw, gh, gw, motion_C,
                                          stack->delta[static_cast<size_t>(l)].data(),
                                          interp.data());
                inject[static_cast<size_t>(l)].fwd(ft, interp.data(), proj_out.data());
                T* xf = x.data() + static_cast<size_t>(rt) * C;
                for (size_t i = 0; i < proj_out.size(); i++) xf[i] += proj_out[i];
            }
            blocks[static_cast<size_t>(l)].fwd(
                x, c.pos, c.tc.out.data(), nullptr, 0,
                audio_feat ? audio_feat->f.data() : nullptr, F,
                audio_feat ? c.mask.data() : nullptr, rt, gh * gw, c.bc[static_cast<size_t>(l)]);
        }

        pred = LatentGrid<T>(F, gh, gw, in_ch);
        head.fwd(ft, x.data() + static_cast<size_t>(rt) * C, c.tc.out.data(), c.hc, pred.ptr());
    }

    // dstack (optional) accumulates gradients wrt the injected stack entries;
    // daudio_feat (optional, [frames * audio_dim]) accumulates feature grads.
    void bwd(const Cache& c, const LatentGrid<T>& dpred, const T* audio_feat,
             ResidualStack<T>* dstack, T* daudio_feat) {
        int rt = c.ref_tokens, Ttot = c.Ttot, F = c.frames;
        int ft = Ttot - rt;
        std::vector<T> d(static_cast<size_t>(Ttot) * C, T(0));
        std::vector<T> dtemb(C, T(0));
        head.bwd(c.hc, dpred.ptr(), d.data() + static_cast<size_t>(rt) * C, dtemb.data());

        std::vector<T> dinterp(static_cast<size_t>(ft) * motion_C);
        for (int l = layers - 1; l >= 0; l--) {
            blocks[static_cast<size_t>(l)].bwd(c.bc[static_cast<size_t>(l)], c.pos, nullptr,
                                               audio_feat, c.mask.empty() ? nullptr : c.mask.data(),
                                               d, dtemb.data(), nullptr, daudio_feat);
            if (c.has_stack) {
                std::fill(dinterp.begin(), dinterp.end(), T(0));
                inject[static_cast<size_t>(l)].bwd(static_cast<int>(ft),
                                                   c.inj_interp[static_cast<size_t>(l)].data(),
                                                   d.data() + static_cast<size_t>(rt) * C,
                                                   dinterp.data());
                if (dstack)
                    kern::resize_bilinear_bwd(F, c.mgh, c.mgw, c.gh, c.gw, motion_C,
                                              dinterp.data(),
                                              dstack->delta[static_cast<size_t>(l)].data());
            }
        }
        temb.bwd(c.tc, dtemb.data());
        patch_embed.bwd(Ttot, c.emb_in.data(), d.data(), nullptr);
    }

    void visit(const std::string& p, const ParamVisitor<T>& fn) {
        patch_embed.visit(p + ".patch_embed", fn);
        audio_enc.visit(p + ".audio_enc", fn);
        temb.visit(p + ".temb", fn);
        for (int l = 0; l < layers; l++) {
            blocks[static_cast<size_t>(l)].visit(p + ".block" + std::to_string(l), fn);
            inject[static_cast<size_t>(l)].visit(p + ".inject" + std::to_string(l), fn);
        }
        head.visit(p + ".head", fn);
    }

    void sync() {
        patch_embed.sync();
        audio_enc.sync();
        temb.sync();
        for (auto& b : blocks) b.sync();
        for (auto& j : inject) j.sync();
        head.sync();
    }
};

}  // namespace duet
