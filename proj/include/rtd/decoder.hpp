#pragma once

#include <string>
#include <vector>

#include "rtd/boundary.hpp"
#include "rtd/nn.hpp"

namespace rtd {

// Where the memory's temporal positional encoding enters the decoder.
// Query embeddings are always injected at attention (DETR-style); this knob
// only moves the memory-side table.
enum class PosPlacement { none, at_input, at_attention };

struct DecoderConfig {
    std::size_t layers = 6;
    std::size_t heads = 4;
    std::size_t d_model = 64;
    std::size_t d_ffn = 256;
    std::size_t n_queries = 32;
    PosPlacement pos_placement = PosPlacement::at_attention;
    double layer_norm_eps = 1e-5;

    void validate() const {
        if (layers < 1) throw ConfigError("decoder: layers must be >= 1");
        if (heads < 1 || d_model % heads != 0)
            throw ConfigError("decoder: d_model must be divisible by heads");
        if (n_queries < 3) throw ConfigError("decoder: need at least 3 queries (completeness kernel)");
    }
};

// One proposal decoded from one query, in window-normalized coordinates.
struct ProposalPrediction {
    double t_start = 0.0;
    double t_end = 0.0;
    double p_bc = 0.5;
    double p_c = 0.5;
};

// Head-averaged attention maps for one decoder layer.
struct LayerAttention {
    Tensor self_attn;   // N_q×N_q
    Tensor cross_attn;  // N_q×T
};

// Per-query outputs of the three heads, each a length-N_q vector on the tape.
struct HeadsOut {
    Var t_start;
    Var t_end;
    Var p_bc;
    Var p_c;
};

// Stack of post-norm decoder layers over learned proposal queries.
// Per layer: query self-attention (query embeddings added to Q/K inputs),
// cross-attention into memory (memory positions added to keys), then a
// per-query FFN; residual + layer norm around each sub-block.
class TransformerDecoder {
  public:
    TransformerDecoder() = default;
    TransformerDecoder(ParamStore& store, const DecoderConfig& cfg, Rng& rng) : cfg_(cfg) {
        cfg.validate();
        query_embed_ = &store.create("query_embed", {cfg.n_queries, cfg.d_model});
        init_uniform_fan_in(*query_embed_, cfg.d_model, rng);
        layers_.reserve(cfg.layers);
        for (std::size_t l = 0; l < cfg.layers; ++l) {
            const std::string p = "dec.l" + std::to_string(l);
            Layer layer;
            layer.self_attn = MultiHeadAttention(store, p + ".self", cfg.d_model, cfg.heads, rng);
            layer.cross_attn = MultiHeadAttention(store, p + ".cross", cfg.d_model, cfg.heads, rng);
            layer.norm_self = NormAffine(store, p + ".norm1", cfg.d_model);
            layer.norm_cross = NormAffine(store, p + ".norm2", cfg.d_model);
            layer.norm_ffn = NormAffine(store, p + ".norm3", cfg.d_model);
            layer.ffn1 = Linear(store, p + ".ffn1", cfg.d_model, cfg.d_ffn, rng);
            layer.ffn2 = Linear(store, p + ".ffn2", cfg.d_ffn, cfg.d_model, rng);
            layers_.push_back(std::move(layer));
        }
    }

    const DecoderConfig& config() const { return cfg_; }
    Parameter& query_embeddings() { return *query_embed_; }

    // memory: T×d_model on the tape; mem_pos: T×d_model constant table.
    // attn_out, when given, receives one LayerAttention per layer.
    Var forward(Graph& g, Var memory, const Tensor& mem_pos,
                std::vector<LayerAttention>* attn_out = nullptr) const {
        if (g.value(memory).cols() != cfg_.d_model)
            throw ShapeError("decoder: memory dim " + g.value(memory).shape_str() +
                             " does not match d_model");
        Var queries = g.param(*query_embed_);
        Var content = g.constant(Tensor({cfg_.n_queries, cfg_.d_model}));
        Var mem_in = memory;
        Var pos = g.constant(mem_pos);
        if (cfg_.pos_placement == PosPlacement::at_input) mem_in = g.add(memory, pos);
        const bool pos_at_attn = cfg_.pos_placement == PosPlacement::at_attention;
        for (const Layer& layer : layers_) {
            Var q_in = g.add(content, queries);
            auto self_res = layer.self_attn.apply(g, q_in, q_in, content);
            content = layer.norm_self.apply(g, g.add(content, self_res.out), cfg_.layer_norm_eps);

            Var cq_in = g.add(content, queries);
            Var key_in = pos_at_attn ? g.add(mem_in, pos) : mem_in;
            auto cross_res = layer.cross_attn.apply(g, cq_in, key_in, mem_in);
            content = layer.norm_cross.apply(g, g.add(content, cross_res.out), cfg_.layer_norm_eps);

            Var ffn = layer.ffn2.apply(g, g.relu(layer.ffn1.apply(g, content)));
            content = layer.norm_ffn.apply(g, g.add(content, ffn), cfg_.layer_norm_eps);

            if (attn_out)
                attn_out->push_back({g.value(self_res.attn), g.value(cross_res.attn)});
        }
        return content;
    }

  private:
    struct Layer {
        MultiHeadAttention self_attn;
        MultiHeadAttention cross_attn;
        NormAffine norm_self, norm_cross, norm_ffn;
        Linear ffn1, ffn2;
    };

    DecoderConfig cfg_;
    Parameter* query_embed_ = nullptr;
    std::vector<Layer> layers_;
};

// Three-branch prediction head.
//  - boundary: 3-layer FFN -> sigmoid (center, width), converted to a
//    clamped (t_start, t_end) pair;
//  - classification: linear -> sigmoid foreground score;
//  - completeness: temporal convolution across the query axis (kernel 3)
//    then one fully connected layer -> sigmoid.
class PredictionHeads {
  public:
    PredictionHeads() = default;
    PredictionHeads(ParamStore& store, std::size_t d_model, Rng& rng)
        : b1_(store, "head.boundary.l1", d_model, d_model, rng),
          b2_(store, "head.boundary.l2", d_model, d_model, rng),
          b3_(store, "head.boundary.l3", d_model, 2, rng),
          cls_(store, "head.cls.fc", d_model, 1, rng),
          comp_conv_(store, "head.comp.conv", 3, d_model, d_model, rng),
          comp_fc_(store, "head.comp.fc", d_model, 1, rng) {}

    HeadsOut forward(Graph& g, Var dec_out) const {
        Var h = g.relu(b1_.apply(g, dec_out));
        h = g.relu(b2_.apply(g, h));
        Var cw = g.sigmoid(b3_.apply(g, h));
        Var center = g.col(cw, 0);
        Var width = g.col(cw, 1);
        HeadsOut out;
        out.t_start = g.clamp(g.sub(center, g.scale(width, 0.5)), 0.0, 1.0);
        out.t_end = g.clamp(g.add(center, g.scale(width, 0.5)), 0.0, 1.0);
        out.p_bc = g.sigmoid(g.col(cls_.apply(g, dec_out), 0));
        Var comp = g.relu(comp_conv_.apply(g, dec_out));
        out.p_c = g.sigmoid(g.col(comp_fc_.apply(g, comp), 0));
        return out;
    }

  private:
    Linear b1_, b2_, b3_;
    Linear cls_;
    Conv1d comp_conv_;
    Linear comp_fc_;
};

inline std::vector<ProposalPrediction> heads_to_predictions(const Graph& g, const HeadsOut& h) {
    const Tensor& ts = g.value(h.t_start);
    const Tensor& te = g.value(h.t_end);
    const Tensor& bc = g.value(h.p_bc);
    const Tensor& pc = g.value(h.p_c);
    std::vector<ProposalPrediction> out(ts.size());
    for (std::size_t i = 0; i < ts.size(); ++i)
        out[i] = {ts[i], te[i], bc[i], pc[i]};
    return out;
}

}  // namespace rtd
