#include "dualclvsa/model.h"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>

#include "dualclvsa/csv.h"
#include "dualclvsa/errors.h"

namespace dualclvsa::model {

const char* variant_name(Variant v) {
    switch (v) {
        case Variant::LstmS: return "lstm_s";
        case Variant::Clvsa: return "clvsa";
        case Variant::ClvsaInputFusion: return "clvsa_input_fusion";
        case Variant::DualClvsa: return "dual_clvsa";
    }
    return "dual_clvsa";
}

Variant parse_variant(const std::string& text) {
    if (text == "lstm_s") return Variant::LstmS;
    if (text == "clvsa") return Variant::Clvsa;
    if (text == "clvsa_input_fusion") return Variant::ClvsaInputFusion;
    if (text == "dual_clvsa") return Variant::DualClvsa;
    throw ConfigurationError("unknown model variant '" + text + "'");
}

void ModelConfig::validate() const {
    if ((variant == Variant::DualClvsa || variant == Variant::ClvsaInputFusion) && !use_sentiment) {
        throw ConfigurationError(std::string(variant_name(variant)) + " requires sentiment features");
    }
    if (conv_channels == 0 || conv_width == 0 || cell_width == 0 || hidden == 0 || latent == 0 ||
        layers == 0 || head_hidden == 0) {
        throw ConfigurationError("model sizes must be positive");
    }
    if (conv_width % 2 == 0) throw ConfigurationError("conv_width must be odd");
    if (attention_heads != 1) throw ConfigurationError("only single-head attention is supported");
    if (classes != data::kClassCount) throw ConfigurationError("class count must be 3");
}

// ---- parameters ------------------------------------------------------------

Tensor& ParameterStore::add(const std::string& name, ad::Shape shape) {
    if (contains(name)) throw ContractError("duplicate parameter '" + name + "'");
    index_[name] = tensors_.size();
    names_.push_back(name);
    Tensor& t = tensors_.emplace_back(std::move(shape), 0.0);
    t.requires_grad = true;
    return t;
}

Tensor& ParameterStore::get(const std::string& name) {
    const auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("no parameter '" + name + "'");
    return tensors_[it->second];
}

const Tensor& ParameterStore::get(const std::string& name) const {
    const auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("no parameter '" + name + "'");
    return tensors_[it->second];
}

std::size_t ParameterStore::scalar_count() const {
    std::size_t n = 0;
    for (const auto& t : tensors_) n += t.size();
    return n;
}

void ParameterStore::zero_grad() {
    for (auto& t : tensors_) t.zero_grad();
}

Initializer::Initializer(std::uint64_t seed) : state_(seed) {}

std::uint64_t Initializer::next() {
    // splitmix64
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

void Initializer::uniform(Tensor& t, std::size_t fan_in) {
    const double bound = std::sqrt(1.0 / static_cast<double>(std::max<std::size_t>(fan_in, 1)));
    for (double& v : t.data) {
        const double u = static_cast<double>(next() >> 11) * 0x1.0p-53;
        v = (2.0 * u - 1.0) * bound;
    }
}

double Initializer::normal() {
    const double u1 = 1.0 - static_cast<double>(next() >> 11) * 0x1.0p-53;
    const double u2 = static_cast<double>(next() >> 11) * 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

Var Binder::operator()(Tensor& weight) {
    const auto it = bound_.find(&weight);
    if (it != bound_.end()) return it->second;
    Var v = graph_.param(weight);
    bound_.emplace(&weight, v);
    return v;
}

// ---- blocks ----------------------------------------------------------------

Dense Dense::create(ParameterStore& ps, Initializer& init, const std::string& name, std::size_t in,
                    std::size_t out, bool with_bias) {
    Dense d;
    d.weight = &ps.add(name + ".weight", {in, out});
    init.uniform(*d.weight, in);
    if (with_bias) {
        d.bias = &ps.add(name + ".bias", {1, out});
        init.uniform(*d.bias, in);
    }
    return d;
}

Var Dense::operator()(Binder& b, Var x) const {
    Var y = ad::matmul(x, b(*weight));
    return bias ? ad::add(y, b(*bias)) : y;
}

std::vector<FeatureGroup> trading_groups(bool use_indicators) {
    std::vector<FeatureGroup> g = {{"prices", 0, 4}, {"volume", 4, 1}};
    if (use_indicators) g.push_back({"indicators", 5, data::kIndicatorCount});
    return g;
}

std::vector<FeatureGroup> sentiment_groups(std::size_t first_row) {
    std::vector<FeatureGroup> g = {{"buzz", first_row, 1}};
    for (std::size_t i = 0; i < data::kIndexCount; ++i) {
        g.push_back({data::kIndexNames[i], first_row + 1 + i, 1});
    }
    return g;
}

CdtConv::CdtConv(ParameterStore& ps, Initializer& init, const std::string& name,
                 std::vector<FeatureGroup> groups, std::size_t kernels_per_group, std::size_t width,
                 bool grouped)
    : width_(width) {
    if (groups.empty()) throw ConfigurationError("CDT convolution needs at least one feature group");
    std::size_t expected_row = groups.front().first_row;
    for (const auto& g : groups) {
        if (g.rows == 0 || g.first_row != expected_row) {
            throw ConfigurationError("CDT feature groups must be contiguous and non-empty");
        }
        expected_row += g.rows;
        features_ += g.rows;
    }
    const std::size_t total_kernels = kernels_per_group * groups.size();
    if (!grouped) groups = {FeatureGroup{"all", groups.front().first_row, features_}};
    for (const auto& g : groups) {
        Bank bank;
        bank.group = g;
        const std::size_t k = grouped ? kernels_per_group : total_kernels;
        bank.kernel = &ps.add(name + "." + g.name + ".kernel", {k, g.rows, width});
        init.uniform(*bank.kernel, g.rows * width);
        bank.bias = &ps.add(name + "." + g.name + ".bias", {k, 1});
        init.uniform(*bank.bias, g.rows * width);
        out_channels_ += k;
        banks_.push_back(bank);
    }
}

Var CdtConv::operator()(Binder& b, Var frame) const {
    const ad::Shape& s = frame.shape();
    if (s.size() != 2 || banks_.empty() ||
        s[0] != banks_.back().group.first_row + banks_.back().group.rows) {
        throw ConfigurationError("frame with shape " + ad::shape_to_string(s) +
                                 " does not match the declared feature grouping");
    }
    std::vector<Var> outs;
    outs.reserve(banks_.size());
    for (const Bank& bank : banks_) {
        Var rows = bank.group.rows == s[0] ? frame : ad::slice(frame, 0, bank.group.first_row, bank.group.rows);
        Var y = ad::conv1d(rows, b(*bank.kernel), 1, width_ / 2);
        outs.push_back(ad::add(y, b(*bank.bias)));
    }
    return ad::concat(outs, 0);
}

std::vector<Tensor*> CdtConv::kernels() const {
    std::vector<Tensor*> out;
    for (const Bank& bank : banks_) out.push_back(bank.kernel);
    return out;
}

std::size_t CdtConv::parameter_count() const {
    std::size_t n = 0;
    for (const Bank& bank : banks_) n += bank.kernel->size() + bank.bias->size();
    return n;
}

ConvLstmCell::ConvLstmCell(ParameterStore& ps, Initializer& init, const std::string& name,
                           std::size_t in_channels, std::size_t hidden, std::size_t kernel_width)
    : hidden_(hidden), kernel_width_(kernel_width) {
    input_kernel = &ps.add(name + ".input_kernel", {4 * hidden, in_channels, kernel_width});
    init.uniform(*input_kernel, in_channels * kernel_width);
    state_kernel = &ps.add(name + ".state_kernel", {4 * hidden, hidden, kernel_width});
    init.uniform(*state_kernel, hidden * kernel_width);
    bias = &ps.add(name + ".bias", {4 * hidden, 1});
    init.uniform(*bias, hidden * kernel_width);
    for (std::size_t i = hidden; i < 2 * hidden; ++i) bias->data[i] = 1.0;
}

CellState ConvLstmCell::step(Binder& b, Var x, const CellState& state) const {
    const std::size_t pad = kernel_width_ / 2;
    Var gates = ad::add(ad::add(ad::conv1d(x, b(*input_kernel), 1, pad),
                                ad::conv1d(state.h, b(*state_kernel), 1, pad)),
                        b(*bias));
    const std::size_t H = hidden_;
    Var i = ad::sigmoid(ad::slice(gates, 0, 0, H));
    Var f = ad::sigmoid(ad::slice(gates, 0, H, H));
    Var o = ad::sigmoid(ad::slice(gates, 0, 2 * H, H));
    Var g = ad::tanh(ad::slice(gates, 0, 3 * H, H));
    Var c = ad::add(ad::mul(f, state.c), ad::mul(i, g));
    Var h = ad::mul(o, ad::tanh(c));
    return {h, c};
}

CellState ConvLstmCell::zero_state(Graph& g, std::size_t width) const {
    return {g.constant(Tensor({hidden_, width}, 0.0)), g.constant(Tensor({hidden_, width}, 0.0))};
}

LstmCell::LstmCell(ParameterStore& ps, Initializer& init, const std::string& name, std::size_t in,
                   std::size_t hidden)
    : hidden_(hidden) {
    input_ = Dense::create(ps, init, name + ".input", in, 4 * hidden, true);
    recurrent_ = Dense::create(ps, init, name + ".recurrent", hidden, 4 * hidden, false);
    for (std::size_t i = hidden; i < 2 * hidden; ++i) input_.bias->data[i] = 1.0;
}

CellState LstmCell::step(Binder& b, Var x, const CellState& state) const {
    Var gates = ad::add(input_(b, x), recurrent_(b, state.h));
    const std::size_t H = hidden_;
    Var i = ad::sigmoid(ad::slice(gates, 1, 0, H));
    Var f = ad::sigmoid(ad::slice(gates, 1, H, H));
    Var o = ad::sigmoid(ad::slice(gates, 1, 2 * H, H));
    Var g = ad::tanh(ad::slice(gates, 1, 3 * H, H));
    Var c = ad::add(ad::mul(f, state.c), ad::mul(i, g));
    Var h = ad::mul(o, ad::tanh(c));
    return {h, c};
}

CellState LstmCell::zero_state(Graph& g) const {
    return {g.constant(Tensor({1, hidden_}, 0.0)), g.constant(Tensor({1, hidden_}, 0.0))};
}

SelfAttention::SelfAttention(ParameterStore& ps, Initializer& init, const std::string& name,
                             std::size_t hidden) {
    query = Dense::create(ps, init, name + ".query", hidden, hidden, false);
    key = Dense::create(ps, init, name + ".key", hidden, hidden, false);
    value = Dense::create(ps, init, name + ".value", hidden, hidden, false);
}

AttentionResult SelfAttention::operator()(Binder& b, Var states) const {
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(states.shape()[1]));
    Var q = query(b, states);
    Var k = key(b, states);
    Var v = value(b, states);
    Var weights = ad::softmax(ad::scale(ad::matmul(q, ad::transpose(k)), inv_sqrt), 1);
    return {ad::add(states, ad::matmul(weights, v)), weights};
}

InterAttention::InterAttention(ParameterStore& ps, Initializer& init, const std::string& name,
                               std::size_t hidden) {
    enc_proj = Dense::create(ps, init, name + ".encoder", hidden, hidden, false);
    dec_proj = Dense::create(ps, init, name + ".decoder", hidden, hidden, true);
    score = Dense::create(ps, init, name + ".score", hidden, 1, false);
}

Var InterAttention::project_encoder(Binder& b, Var encoder_states) const {
    return enc_proj(b, encoder_states);
}

AttentionResult InterAttention::attend(Binder& b, Var encoder_states, Var projected_encoder,
                                       Var decoder_state) const {
    Var energy = ad::tanh(ad::add(projected_encoder, dec_proj(b, decoder_state)));
    Var scores = ad::transpose(score(b, energy));  // [1 x Te]
    Var weights = ad::softmax(scores, 1);
    return {ad::matmul(weights, encoder_states), weights};
}

AttentionResult InterAttention::operator()(Binder& b, Var encoder_states, Var decoder_state) const {
    return attend(b, encoder_states, project_encoder(b, encoder_states), decoder_state);
}

VariationalPath::VariationalPath(ParameterStore& ps, Initializer& init, const std::string& name,
                                 std::size_t hidden, std::size_t latent_size)
    : latent(latent_size) {
    prior = Dense::create(ps, init, name + ".prior", hidden, 2 * latent, true);
    posterior = Dense::create(ps, init, name + ".posterior", 2 * hidden, 2 * latent, true);
    std::fill(posterior.weight->data.begin(), posterior.weight->data.end(), 0.0);
    std::copy(prior.weight->data.begin(), prior.weight->data.end(), posterior.weight->data.begin());
    posterior.bias->data = prior.bias->data;
}

VariationalOutput VariationalPath::operator()(Binder& b, Var h_forward, std::optional<Var> h_backward,
                                              Mode mode, std::uint64_t noise_seed) const {
    Graph& g = b.graph();
    const std::size_t L = latent;
    Var p = prior(b, h_forward);
    LatentState s;
    s.mu_p = ad::slice(p, 1, 0, L);
    s.logvar_p = ad::slice(p, 1, L, L);
    if (!h_backward) {
        if (mode == Mode::Train) throw ContractError("variational path needs backward states in training");
        s.mu_q = s.mu_p;
        s.logvar_q = s.logvar_p;
        s.z = s.mu_p;
        return {s, g.constant(Tensor::scalar(0.0))};
    }
    Var q = posterior(b, ad::concat({h_forward, *h_backward}, 1));
    s.mu_q = ad::slice(q, 1, 0, L);
    s.logvar_q = ad::slice(q, 1, L, L);
    Var kld = ad::gaussian_kl(s.mu_q, s.logvar_q, s.mu_p, s.logvar_p);
    if (mode == Mode::Eval) {
        s.z = s.mu_q;
    } else {
        Initializer noise(noise_seed);
        Tensor eps(s.mu_q.shape(), 0.0);
        for (double& e : eps.data) e = noise.normal();
        Var sigma = ad::exp(ad::scale(s.logvar_q, 0.5));
        s.z = ad::add(s.mu_q, ad::mul(sigma, g.constant(std::move(eps))));
    }
    return {s, kld};
}

// ---- channel ---------------------------------------------------------------

Seq2SeqChannel::Seq2SeqChannel(ParameterStore& ps, Initializer& init, const std::string& name,
                               std::vector<FeatureGroup> groups, const ModelConfig& cfg,
                               bool latent_path, bool kld_term)
    : kld_term_(kld_term), hidden_(cfg.hidden), cell_width_(cfg.cell_width) {
    conv_ = CdtConv(ps, init, name + ".cdt", std::move(groups), cfg.conv_channels, cfg.conv_width);
    const std::size_t C = conv_.out_channels();
    for (std::size_t l = 0; l < cfg.layers; ++l) {
        encoder_.emplace_back(ps, init, name + ".encoder" + std::to_string(l), l == 0 ? C : cfg.hidden,
                              cfg.hidden, cfg.conv_width);
    }
    for (std::size_t l = 0; l < cfg.layers; ++l) {
        decoder_.emplace_back(ps, init, name + ".decoder" + std::to_string(l), l == 0 ? C : cfg.hidden,
                              cfg.hidden, cfg.conv_width);
    }
    enc_self_ = SelfAttention(ps, init, name + ".encoder_self_attention", cfg.hidden);
    dec_self_ = SelfAttention(ps, init, name + ".decoder_self_attention", cfg.hidden);
    inter_ = InterAttention(ps, init, name + ".inter_attention", cfg.hidden);
    combine_ = Dense::create(ps, init, name + ".combine", 2 * cfg.hidden, cfg.hidden, true);
    if (latent_path) {
        backward_rnn_.emplace(ps, init, name + ".backward_rnn", C, cfg.hidden);
        variational_.emplace(ps, init, name + ".variational", cfg.hidden, cfg.latent);
    }
}

std::size_t Seq2SeqChannel::summary_size() const {
    return hidden_ + (variational_ ? variational_->latent : 0);
}

std::vector<Var> Seq2SeqChannel::run_stack(Binder& b, const std::vector<ConvLstmCell>& cells,
                                           Var features, std::vector<CellState>& states) const {
    Graph& g = b.graph();
    const std::size_t C = features.shape()[0];
    const std::size_t T = features.shape()[1];
    const std::size_t w = cell_width_;
    Var padded = w > 1 ? ad::concat({g.constant(Tensor({C, w - 1}, 0.0)), features}, 1) : features;
    std::vector<Var> rows;
    rows.reserve(T);
    for (std::size_t t = 0; t < T; ++t) {
        Var x = ad::slice(padded, 1, t, w);
        for (std::size_t l = 0; l < cells.size(); ++l) {
            states[l] = cells[l].step(b, x, states[l]);
            // Layers above the first add their input back (residual stacking).
            x = l == 0 ? states[l].h : ad::add(states[l].h, x);
        }
        // Read out the column of the newest interval in the window.
        rows.push_back(ad::transpose(ad::slice(x, 1, w - 1, 1)));
    }
    return rows;
}

ChannelOutput Seq2SeqChannel::operator()(Binder& b, Var prev_frame, Var cur_frame, Mode mode,
                                         std::uint64_t noise_seed) const {
    Graph& g = b.graph();
    ChannelOutput out;
    Var enc_features = conv_(b, prev_frame);
    Var dec_features = conv_(b, cur_frame);
    const std::size_t T = dec_features.shape()[1];

    std::vector<CellState> states;
    for (const auto& cell : encoder_) states.push_back(cell.zero_state(g, cell_width_));
    Var enc = ad::concat(run_stack(b, encoder_, enc_features, states), 0);
    AttentionResult enc_att = enc_self_(b, enc);
    // The decoder starts from the encoder's final state.
    Var dec = ad::concat(run_stack(b, decoder_, dec_features, states), 0);
    AttentionResult dec_att = dec_self_(b, dec);
    out.attention = {enc_att.weights, dec_att.weights};

    Var projected = inter_.project_encoder(b, enc_att.output);
    std::vector<Var> contexts;
    contexts.reserve(T);
    for (std::size_t t = 0; t < T; ++t) {
        AttentionResult r = inter_.attend(b, enc_att.output, projected, ad::slice(dec_att.output, 0, t, 1));
        contexts.push_back(r.output);
        out.attention.push_back(r.weights);
    }
    out.context = contexts.back();
    out.decoder_states =
        ad::tanh(combine_(b, ad::concat({dec_att.output, ad::concat(contexts, 0)}, 1)));
    Var last = ad::slice(out.decoder_states, 0, T - 1, 1);

    if (!variational_) {
        out.kld = g.constant(Tensor::scalar(0.0));
        out.summary = last;
        return out;
    }
    // Posterior RNN reads the current day backwards.
    Var columns = ad::transpose(dec_features);  // [T x C]
    std::vector<Var> backward(T);
    CellState s = backward_rnn_->zero_state(g);
    for (std::size_t t = T; t-- > 0;) {
        s = backward_rnn_->step(b, ad::slice(columns, 0, t, 1), s);
        backward[t] = s.h;
    }
    VariationalOutput v =
        (*variational_)(b, out.decoder_states, ad::concat(backward, 0), mode, noise_seed);
    out.kld = kld_term_ ? v.kld : g.constant(Tensor::scalar(0.0));
    out.summary = ad::concat({last, ad::slice(v.latent.z, 0, T - 1, 1)}, 1);
    return out;
}

// ---- model -----------------------------------------------------------------

Model::Model(const ModelConfig& cfg, std::uint64_t seed)
    : cfg_(cfg), trading_features_(data::trading_feature_count(cfg.use_indicators)) {
    cfg_.validate();
    Initializer init(seed);
    std::size_t summary = 0;
    switch (cfg_.variant) {
        case Variant::LstmS: {
            const std::size_t in = trading_features_ + (cfg_.use_sentiment ? data::kSentimentFeatures : 0);
            for (std::size_t l = 0; l < cfg_.layers; ++l) {
                lstm_stack_.emplace_back(params_, init, "lstm" + std::to_string(l),
                                         l == 0 ? in : cfg_.hidden, cfg_.hidden);
            }
            summary = cfg_.hidden;
            break;
        }
        case Variant::Clvsa:
            channels_.emplace_back(params_, init, "trading", trading_groups(cfg_.use_indicators), cfg_,
                                   true, true);
            break;
        case Variant::ClvsaInputFusion: {
            auto groups = trading_groups(cfg_.use_indicators);
            for (const auto& g : sentiment_groups(trading_features_)) groups.push_back(g);
            channels_.emplace_back(params_, init, "fused", groups, cfg_, true, true);
            break;
        }
        case Variant::DualClvsa:
            channels_.emplace_back(params_, init, "trading", trading_groups(cfg_.use_indicators), cfg_,
                                   true, true);
            channels_.emplace_back(params_, init, "sentiment", sentiment_groups(0), cfg_,
                                   cfg_.sentiment_latent, false);
            break;
    }
    for (const auto& c : channels_) summary += c.summary_size();
    head_hidden_ = Dense::create(params_, init, "head.hidden", summary, cfg_.head_hidden, true);
    head_out_ = Dense::create(params_, init, "head.out", cfg_.head_hidden, cfg_.classes, true);
}

ForwardResult Model::forward(Graph& g, const data::AlignedSample& sample,
                             const data::AlignedSample& prev_sample, Mode mode,
                             std::uint64_t noise_seed) {
    if (sample.trading_frame.shape[0] != trading_features_ ||
        prev_sample.trading_frame.shape[0] != trading_features_) {
        throw ConfigurationError("sample has " + std::to_string(sample.trading_frame.shape[0]) +
                                 " trading features, model expects " +
                                 std::to_string(trading_features_));
    }
    Binder b(g);
    ForwardResult r;
    Var summary;
    const auto frame = [&](const data::AlignedSample& s, bool with_sentiment) {
        Var trading = g.constant(s.trading_frame);
        if (!with_sentiment) return trading;
        return ad::concat({trading, g.constant(s.sentiment_frame)}, 0);
    };

    switch (cfg_.variant) {
        case Variant::LstmS: {
            Var seq = ad::transpose(ad::concat(
                {frame(prev_sample, cfg_.use_sentiment), frame(sample, cfg_.use_sentiment)}, 1));
            std::vector<CellState> states;
            for (const auto& cell : lstm_stack_) states.push_back(cell.zero_state(g));
            const std::size_t steps = seq.shape()[0];
            for (std::size_t t = 0; t < steps; ++t) {
                Var x = ad::slice(seq, 0, t, 1);
                for (std::size_t l = 0; l < lstm_stack_.size(); ++l) {
                    states[l] = lstm_stack_[l].step(b, x, states[l]);
                    x = states[l].h;
                }
            }
            summary = states.back().h;
            r.kld = g.constant(Tensor::scalar(0.0));
            break;
        }
        case Variant::Clvsa:
            r.channels.push_back(
                channels_[0](b, frame(prev_sample, false), frame(sample, false), mode, noise_seed));
            break;
        case Variant::ClvsaInputFusion:
            r.channels.push_back(
                channels_[0](b, frame(prev_sample, true), frame(sample, true), mode, noise_seed));
            break;
        case Variant::DualClvsa:
            r.channels.push_back(
                channels_[0](b, frame(prev_sample, false), frame(sample, false), mode, noise_seed));
            r.channels.push_back(channels_[1](b, g.constant(prev_sample.sentiment_frame),
                                              g.constant(sample.sentiment_frame), mode,
                                              noise_seed + 1));
            break;
    }
    if (!r.channels.empty()) {
        std::vector<Var> parts;
        for (const auto& c : r.channels) {
            parts.push_back(c.summary);
            r.attention.insert(r.attention.end(), c.attention.begin(), c.attention.end());
        }
        summary = ad::concat(parts, 1);
        r.kld = r.channels.front().kld;
    }
    r.logits = head_out_(b, ad::relu(head_hidden_(b, summary)));
    return r;
}

std::vector<Tensor*> Model::sentiment_conv_kernels() const {
    if (cfg_.variant == Variant::DualClvsa) return channels_[1].conv().kernels();
    return {};
}

void Model::save(std::ostream& out) const {
    out << "dualclvsa-checkpoint 1\n";
    out << "variant " << variant_name(cfg_.variant) << '\n';
    out << "tensors " << params_.size() << '\n';
    for (std::size_t i = 0; i < params_.size(); ++i) {
        const Tensor& t = params_.at(i);
        out << "tensor " << params_.name(i) << ' ' << t.shape.size();
        for (std::size_t d : t.shape) out << ' ' << d;
        out << '\n';
        for (std::size_t k = 0; k < t.data.size(); ++k) {
            out << (k ? " " : "") << format_double(t.data[k], 17);
        }
        out << '\n';
    }
}

void Model::load(std::istream& in) {
    std::string line, word;
    if (!std::getline(in, line) || line != "dualclvsa-checkpoint 1") {
        throw DataError("checkpoint: unsupported header");
    }
    std::getline(in, line);
    if (line != std::string("variant ") + variant_name(cfg_.variant)) {
        throw DataError("checkpoint: variant mismatch ('" + line + "')");
    }
    std::size_t count = 0;
    in >> word >> count;
    if (word != "tensors" || count != params_.size()) throw DataError("checkpoint: tensor count mismatch");
    for (std::size_t i = 0; i < count; ++i) {
        std::string name;
        std::size_t rank = 0;
        in >> word >> name >> rank;
        if (word != "tensor" || name != params_.name(i)) {
            throw DataError("checkpoint: expected tensor '" + params_.name(i) + "', found '" + name + "'");
        }
        ad::Shape shape(rank);
        for (auto& d : shape) in >> d;
        Tensor& t = params_.at(i);
        if (shape != t.shape) throw DataError("checkpoint: shape mismatch for '" + name + "'");
        for (double& v : t.data) {
            if (!(in >> v)) throw DataError("checkpoint: truncated values for '" + name + "'");
        }
    }
}

std::vector<double> probabilities(const Tensor& logits) {
    const double mx = *std::max_element(logits.data.begin(), logits.data.end());
    std::vector<double> p(logits.data.size());
    double total = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) total += (p[i] = std::exp(logits.data[i] - mx));
    for (double& v : p) v /= total;
    return p;
}

}  // namespace dualclvsa::model
