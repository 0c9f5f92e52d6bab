#pragma once

#include <cstdint>
#include <deque>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "dualclvsa/autodiff.h"
#include "dualclvsa/data.h"

namespace dualclvsa::model {

using ad::Graph;
using ad::Tensor;
using ad::Var;

enum class Variant { LstmS, Clvsa, ClvsaInputFusion, DualClvsa };

const char* variant_name(Variant v);
Variant parse_variant(const std::string& text);

struct ModelConfig {
    Variant variant = Variant::DualClvsa;
    bool use_indicators = false;
    bool use_sentiment = true;
    std::size_t conv_channels = 16;  // kernels per CDT group
    std::size_t conv_width = 3;
    std::size_t cell_width = 4;  // intervals visible to one ConvLSTM step
    std::size_t hidden = 64;
    std::size_t latent = 16;
    std::size_t layers = 2;
    std::size_t attention_heads = 1;
    std::size_t head_hidden = 128;
    std::size_t classes = data::kClassCount;
    // Keep a sampled latent path (without KLD) on the sentiment channel of dual_clvsa.
    bool sentiment_latent = false;

    void validate() const;  // throws ConfigurationError
};

enum class Mode { Train, Eval };

// Named weights with stable addresses.
class ParameterStore {
public:
    Tensor& add(const std::string& name, ad::Shape shape);
    Tensor& get(const std::string& name);
    const Tensor& get(const std::string& name) const;
    bool contains(const std::string& name) const { return index_.count(name) != 0; }

    std::size_t size() const { return tensors_.size(); }
    Tensor& at(std::size_t i) { return tensors_[i]; }
    const Tensor& at(std::size_t i) const { return tensors_[i]; }
    const std::string& name(std::size_t i) const { return names_[i]; }
    std::size_t scalar_count() const;

    void zero_grad();

private:
    std::deque<Tensor> tensors_;
    std::vector<std::string> names_;
    std::unordered_map<std::string, std::size_t> index_;
};

// Uniform(-sqrt(1/fan_in), sqrt(1/fan_in)) from a portable generator.
class Initializer {
public:
    explicit Initializer(std::uint64_t seed);
    void uniform(Tensor& t, std::size_t fan_in);
    double normal();

private:
    std::uint64_t state_;
    std::uint64_t next();
};

// Per-forward binding of weights onto a tape (each weight appears once per graph).
class Binder {
public:
    explicit Binder(Graph& g) : graph_(g) {}
    Graph& graph() { return graph_; }
    Var operator()(Tensor& weight);

private:
    Graph& graph_;
    std::unordered_map<const Tensor*, Var> bound_;
};

// ---- building blocks -------------------------------------------------------

struct Dense {
    Tensor* weight = nullptr;  // [in x out]
    Tensor* bias = nullptr;    // [1 x out]

    static Dense create(ParameterStore& ps, Initializer& init, const std::string& name,
                        std::size_t in, std::size_t out, bool with_bias = true);
    Var operator()(Binder& b, Var x) const;  // x: [rows x in]
};

// Contiguous range of frame rows convolved by one shared kernel bank.
struct FeatureGroup {
    std::string name;
    std::size_t first_row = 0;
    std::size_t rows = 0;
};

std::vector<FeatureGroup> trading_groups(bool use_indicators);
std::vector<FeatureGroup> sentiment_groups(std::size_t first_row);

class CdtConv {
public:
    CdtConv() = default;
    // grouped = false convolves all rows with one dense bank of the same output width.
    CdtConv(ParameterStore& ps, Initializer& init, const std::string& name,
            std::vector<FeatureGroup> groups, std::size_t kernels_per_group, std::size_t width,
            bool grouped = true);

    Var operator()(Binder& b, Var frame) const;  // [features x T] -> [channels x T]
    std::size_t out_channels() const { return out_channels_; }
    std::size_t feature_count() const { return features_; }
    std::vector<Tensor*> kernels() const;
    std::size_t parameter_count() const;

private:
    struct Bank {
        FeatureGroup group;
        Tensor* kernel = nullptr;  // [K x rows x width]
        Tensor* bias = nullptr;    // [K x 1]
    };
    std::vector<Bank> banks_;
    std::size_t width_ = 3;
    std::size_t out_channels_ = 0;
    std::size_t features_ = 0;
};

struct CellState {
    Var h;
    Var c;
};

class ConvLstmCell {
public:
    ConvLstmCell() = default;
    ConvLstmCell(ParameterStore& ps, Initializer& init, const std::string& name,
                 std::size_t in_channels, std::size_t hidden, std::size_t kernel_width);

    // x: [in_channels x width]; state: [hidden x width].
    CellState step(Binder& b, Var x, const CellState& state) const;
    CellState zero_state(Graph& g, std::size_t width) const;
    std::size_t hidden() const { return hidden_; }

    Tensor* input_kernel = nullptr;  // [4H x C x k], gate order i, f, o, g
    Tensor* state_kernel = nullptr;  // [4H x H x k]
    Tensor* bias = nullptr;          // [4H x 1]

private:
    std::size_t hidden_ = 0;
    std::size_t kernel_width_ = 3;
};

class LstmCell {
public:
    LstmCell() = default;
    LstmCell(ParameterStore& ps, Initializer& init, const std::string& name, std::size_t in,
             std::size_t hidden);
    CellState step(Binder& b, Var x, const CellState& state) const;  // x: [1 x in]
    CellState zero_state(Graph& g) const;
    std::size_t hidden() const { return hidden_; }

private:
    Dense input_, recurrent_;
    std::size_t hidden_ = 0;
};

struct AttentionResult {
    Var output;
    Var weights;  // rows sum to one
};

class SelfAttention {
public:
    SelfAttention() = default;
    SelfAttention(ParameterStore& ps, Initializer& init, const std::string& name, std::size_t hidden);
    // states: [T x H]; output = states + softmax(Q K^T / sqrt(H)) V.
    AttentionResult operator()(Binder& b, Var states) const;

    Dense query, key, value;
};

class InterAttention {
public:
    InterAttention() = default;
    InterAttention(ParameterStore& ps, Initializer& init, const std::string& name, std::size_t hidden);
    // encoder: [Te x H], decoder_state: [1 x H] -> context [1 x H].
    AttentionResult operator()(Binder& b, Var encoder_states, Var decoder_state) const;
    // Same, reusing encoder_states * W1 across decoder steps.
    AttentionResult attend(Binder& b, Var encoder_states, Var projected_encoder, Var decoder_state) const;
    Var project_encoder(Binder& b, Var encoder_states) const;

    Dense enc_proj, dec_proj, score;
};

struct LatentState {
    Var mu_q, logvar_q, mu_p, logvar_p, z;  // [T x latent]
};

struct VariationalOutput {
    LatentState latent;
    Var kld;
};

class VariationalPath {
public:
    VariationalPath() = default;
    // Posterior maps start as a copy of the prior maps (zero weight on backward states),
    // so the KL term is exactly zero at initialization.
    VariationalPath(ParameterStore& ps, Initializer& init, const std::string& name,
                    std::size_t hidden, std::size_t latent);

    // h_backward may be empty only in eval mode (prior mean is used then).
    VariationalOutput operator()(Binder& b, Var h_forward, std::optional<Var> h_backward, Mode mode,
                                 std::uint64_t noise_seed) const;

    Dense prior, posterior;
    std::size_t latent = 0;
};

struct ChannelOutput {
    Var decoder_states;  // [T x H]
    Var context;         // [1 x H], inter-attention context of the last decoder step
    Var kld;             // scalar; zero when the channel has no KL term
    Var summary;         // [1 x summary_dim], fed to the classifier
    std::vector<Var> attention;  // every attention weight tensor produced
};

// One convolutional-LSTM sequence-to-sequence channel with attention and an optional
// variational path. Encoder reads the previous day, decoder the current day.
class Seq2SeqChannel {
public:
    Seq2SeqChannel() = default;
    Seq2SeqChannel(ParameterStore& ps, Initializer& init, const std::string& name,
                   std::vector<FeatureGroup> groups, const ModelConfig& cfg, bool latent_path,
                   bool kld_term);

    ChannelOutput operator()(Binder& b, Var prev_frame, Var cur_frame, Mode mode,
                             std::uint64_t noise_seed) const;
    std::size_t summary_size() const;
    const CdtConv& conv() const { return conv_; }

private:
    std::vector<Var> run_stack(Binder& b, const std::vector<ConvLstmCell>& cells, Var features,
                               std::vector<CellState>& states) const;

    CdtConv conv_;
    std::vector<ConvLstmCell> encoder_, decoder_;
    SelfAttention enc_self_, dec_self_;
    InterAttention inter_;
    Dense combine_;
    std::optional<LstmCell> backward_rnn_;
    std::optional<VariationalPath> variational_;
    bool kld_term_ = false;
    std::size_t hidden_ = 0;
    std::size_t cell_width_ = 1;
};

struct ForwardResult {
    Var logits;  // [1 x classes]
    Var kld;     // scalar, trading channel only
    std::vector<ChannelOutput> channels;
    std::vector<Var> attention;
};

class Model {
public:
    Model(const ModelConfig& cfg, std::uint64_t seed);

    ForwardResult forward(Graph& g, const data::AlignedSample& sample,
                          const data::AlignedSample& prev_sample, Mode mode,
                          std::uint64_t noise_seed = 0);

    const ModelConfig& config() const { return cfg_; }
    ParameterStore& parameters() { return params_; }
    const ParameterStore& parameters() const { return params_; }
    std::size_t parameter_count() const { return params_.scalar_count(); }

    // Kernels of the CDT convolution reading the sentiment frame (empty if none).
    std::vector<Tensor*> sentiment_conv_kernels() const;

    // Checkpoint: text header + one block per named tensor (shape, %.17g values).
    void save(std::ostream& out) const;
    void load(std::istream& in);  // throws DataError on name/shape mismatch

private:
    ModelConfig cfg_;
    ParameterStore params_;
    std::vector<Seq2SeqChannel> channels_;
    std::vector<LstmCell> lstm_stack_;
    Dense head_hidden_, head_out_;
    std::size_t trading_features_ = 0;
};

// Softmax probabilities of a logits tensor.
std::vector<double> probabilities(const Tensor& logits);

}  // namespace dualclvsa::model
