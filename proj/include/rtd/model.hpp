#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rtd/boundary.hpp"
#include "rtd/checkpoint.hpp"
#include "rtd/decoder.hpp"

namespace rtd {

// Where the MLP projection sits relative to boundary enhancement, and how
// the enhancement is applied. Defaults follow the best-performing setting;
// the alternatives exist as ablation knobs.
enum class ProjectionPlacement { pre_enhance, post_enhance };
enum class EnhancementMode { multiply, concat };

struct ModelConfig {
    std::size_t channels = 16;   // input feature channels
    std::size_t tem_hidden = 128;
    double alpha_r = 2.0;        // boundary score scaling factor
    std::size_t d_pos = 32;      // encoder positional concat width
    DecoderConfig decoder;
    ProjectionPlacement placement = ProjectionPlacement::pre_enhance;
    EnhancementMode enhancement = EnhancementMode::multiply;

    std::size_t encoder_in_dim() const {
        if (placement == ProjectionPlacement::post_enhance) return channels;
        return enhancement == EnhancementMode::multiply ? 2 * channels : channels + 2;
    }
};

// Constant (gradient-free) portion of a window's forward pass: the TEM is
// frozen during main-model training, so everything up to the encoder input
// can be precomputed per window.
struct EncoderInput {
    Tensor matrix;  // T_valid × encoder_in_dim
    std::vector<double> scaled_start;  // kept for post-enhancement mode
    std::vector<double> scaled_end;
    std::size_t valid_steps = 0;
};

// Boundary-attentive proposal generator: frozen boundary predictor,
// MLP memory encoder, query-based decoder, three prediction heads.
class RtdModel {
  public:
    RtdModel(ModelConfig cfg, std::uint64_t init_seed) : cfg_(cfg) {
        cfg_.decoder.validate();
        Rng rng(init_seed);
        tem_ = Tem(store_, cfg_.channels, cfg_.tem_hidden, rng);
        encoder_ = MemoryEncoder(store_, cfg_.encoder_in_dim(), cfg_.d_pos, cfg_.decoder.d_model, rng);
        decoder_ = TransformerDecoder(store_, cfg_.decoder, rng);
        heads_ = PredictionHeads(store_, cfg_.decoder.d_model, rng);
        if (cfg_.placement == ProjectionPlacement::post_enhance) {
            const std::size_t mixed = cfg_.enhancement == EnhancementMode::multiply
                                          ? 2 * cfg_.decoder.d_model
                                          : cfg_.decoder.d_model + 2;
            post_proj_ = Linear(store_, "enc.post_proj", mixed, cfg_.decoder.d_model, rng);
        }
    }

    const ModelConfig& config() const { return cfg_; }
    ParamStore& params() { return store_; }
    const ParamStore& params() const { return store_; }
    Tem& tem() { return tem_; }
    const Tem& tem() const { return tem_; }
    TransformerDecoder& decoder() { return decoder_; }
    std::size_t n_queries() const { return cfg_.decoder.n_queries; }

    // Valid-region feature matrix of a window.
    static Tensor valid_features(const Window& w) {
        Tensor out({w.valid_steps, w.features.cols()});
        for (std::size_t i = 0; i < w.valid_steps; ++i)
            for (std::size_t j = 0; j < w.features.cols(); ++j) out(i, j) = w.features(i, j);
        return out;
    }

    BoundaryScores boundary_scores(const Tensor& features) const { return tem_.predict(features); }

    EncoderInput prepare_encoder_input(const Window& w) const {
        const Tensor feats = valid_features(w);
        const BoundaryScores scaled =
            normalize_and_scale(tem_.predict(feats), cfg_.alpha_r);
        EncoderInput in;
        in.valid_steps = w.valid_steps;
        in.scaled_start = scaled.p_start;
        in.scaled_end = scaled.p_end;
        if (cfg_.placement == ProjectionPlacement::post_enhance) {
            in.matrix = feats;
        } else if (cfg_.enhancement == EnhancementMode::multiply) {
            in.matrix = enhance(feats, scaled, cfg_.alpha_r).values;
        } else {
            in.matrix = concat_scores(feats, scaled);
        }
        return in;
    }

    // Encoder input -> memory (T_valid × d_model) on the tape.
    Var encode(Graph& g, const EncoderInput& in) const {
        Var h = encoder_.forward(g, g.constant(in.matrix));
        if (cfg_.placement == ProjectionPlacement::post_enhance) {
            Tensor ps({in.scaled_start.size()});
            Tensor pe({in.scaled_end.size()});
            for (std::size_t i = 0; i < ps.size(); ++i) {
                ps[i] = in.scaled_start[i];
                pe[i] = in.scaled_end[i];
            }
            Var mixed;
            if (cfg_.enhancement == EnhancementMode::multiply) {
                mixed = g.concat_cols(g.scale_rows(h, g.constant(ps)),
                                      g.scale_rows(h, g.constant(pe)));
            } else {
                mixed = g.concat_cols(g.concat_cols(h, g.reshape(g.constant(ps), {ps.size(), 1})),
                                      g.reshape(g.constant(pe), {pe.size(), 1}));
            }
            h = post_proj_.apply(g, mixed);
        }
        return h;
    }

    Var decode(Graph& g, Var memory, std::vector<LayerAttention>* attn = nullptr) const {
        const std::size_t t_valid = g.value(memory).rows();
        return decoder_.forward(g, memory, sinusoidal_table(t_valid, cfg_.decoder.d_model), attn);
    }

    HeadsOut predict_heads(Graph& g, Var dec_out) const { return heads_.forward(g, dec_out); }

    // Full tape forward from precomputed encoder input.
    HeadsOut forward(Graph& g, const EncoderInput& in,
                     std::vector<LayerAttention>* attn = nullptr) const {
        return predict_heads(g, decode(g, encode(g, in), attn));
    }

    // Value-only staged forward used by inference and phase caching.
    Tensor memory_values(const EncoderInput& in) const {
        Graph g;
        return g.value(encode(g, in));
    }

    Tensor decoder_values(const Tensor& memory, std::vector<LayerAttention>* attn = nullptr) const {
        Graph g;
        return g.value(decode(g, g.constant(memory), attn));
    }

    std::vector<ProposalPrediction> head_values(const Tensor& dec_out) const {
        Graph g;
        HeadsOut h = predict_heads(g, g.constant(dec_out));
        return heads_to_predictions(g, h);
    }

    void save(const std::string& path) const { save_checkpoint(store_, path); }
    std::size_t load(const std::string& path) { return load_checkpoint(store_, path); }

  private:
    static Tensor concat_scores(const Tensor& feats, const BoundaryScores& scaled) {
        Tensor out({feats.rows(), feats.cols() + 2});
        for (std::size_t t = 0; t < feats.rows(); ++t) {
            for (std::size_t j = 0; j < feats.cols(); ++j) out(t, j) = feats(t, j);
            out(t, feats.cols()) = scaled.p_start[t];
            out(t, feats.cols() + 1) = scaled.p_end[t];
        }
        return out;
    }

    ModelConfig cfg_;
    ParamStore store_;
    Tem tem_;
    MemoryEncoder encoder_;
    TransformerDecoder decoder_;
    PredictionHeads heads_;
    Linear post_proj_;
};

}  // namespace rtd
