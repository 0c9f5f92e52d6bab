#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <vector>

#include "dualclvsa/autodiff.h"
#include "dualclvsa/calendar.h"
#include "dualclvsa/data.h"
#include "dualclvsa/model.h"

namespace dualclvsa::train {

struct TrainConfig {
    std::size_t epochs = 20;
    std::size_t batch_size = 16;
    double learning_rate = 1e-3;
    double kld_weight = 0.1;        // beta
    double warmup_fraction = 0.1;   // share of optimizer steps over which beta ramps up from 0
    std::size_t train_months = 12;
    std::size_t test_months = 2;
    std::size_t step_months = 2;
    std::uint64_t seed = 42;
    double clip_norm = 5.0;
    bool warm_start = false;
    std::size_t jobs = 1;  // folds trained concurrently (cold restart only)

    void validate() const;  // throws ConfigurationError
};

// A current-day sample paired with the preceding day that feeds the encoder.
struct Example {
    const data::AlignedSample* prev = nullptr;
    const data::AlignedSample* cur = nullptr;
};

// Pairs every sample after the first with its predecessor.
std::vector<Example> make_examples(std::span<const data::AlignedSample> samples);

// cross_entropy(logits, label) + beta * kld; the KL term is left out entirely when beta == 0.
ad::Var loss(ad::Var logits, std::size_t label, ad::Var kld, double beta);

// Beta after `step` optimizer steps with a linear ramp over `warmup_steps`.
double warmup_beta(double beta, std::size_t step, std::size_t warmup_steps);

// Scales every gradient so the global L2 norm is at most max_norm; returns the norm before clipping.
double clip_gradients(model::ParameterStore& params, double max_norm);

class Adam {
public:
    explicit Adam(double learning_rate, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
    void step(model::ParameterStore& params);
    std::size_t steps() const { return t_; }

private:
    double lr_, b1_, b2_, eps_;
    std::size_t t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

struct TrainResult {
    std::vector<double> epoch_loss;  // mean total loss per epoch
    std::size_t steps = 0;
};

// Mini-batch Adam on the given examples. Throws NumericError on a non-finite loss.
TrainResult train_fold(model::Model& model, std::span<const Example> examples, const TrainConfig& cfg);

struct Prediction {
    Timestamp timestamp = 0;
    std::array<double, data::kClassCount> scores{};  // softmax probabilities: down, flat, up
    data::Movement label = data::Movement::Flat;

    data::Movement predicted() const;
};

Prediction predict(model::Model& model, const Example& example);
std::vector<Prediction> predict_all(model::Model& model, std::span<const Example> examples);
double accuracy(std::span<const Prediction> predictions);

// Macro average precision over the classes that have at least one positive.
double mean_average_precision(std::span<const Prediction> predictions);

struct FoldResult {
    std::size_t fold = 0;
    Timestamp train_start = 0;
    Timestamp test_start = 0;
    Timestamp test_end = 0;  // exclusive
    std::size_t train_count = 0;
    Timestamp last_train_timestamp = 0;
    Timestamp last_train_label_timestamp = 0;
    std::vector<Prediction> predictions;
    std::vector<double> epoch_loss;
    double map = 0.0;
    double accuracy = 0.0;
};

struct FoldWindow {
    std::int64_t train_month = 0;  // months since 1970-01
    std::int64_t test_month = 0;
    std::int64_t end_month = 0;    // exclusive
};

// Rolling windows whose test span lies entirely inside [first_month, last_month].
std::vector<FoldWindow> fold_windows(std::int64_t first_month, std::int64_t last_month,
                                     const TrainConfig& cfg);

// Called once per finished fold with its trained model (serialized across worker threads).
using FoldCallback = std::function<void(const FoldResult&, const model::Model&)>;

std::vector<FoldResult> walk_forward(std::span<const data::AlignedSample> samples,
                                     const model::ModelConfig& model_cfg, const TrainConfig& cfg,
                                     const FoldCallback& on_fold = {});

void write_predictions_csv(std::ostream& out, std::span<const FoldResult> folds);
std::vector<Prediction> read_predictions_csv(std::istream& in);
void write_training_log_csv(std::ostream& out, std::span<const FoldResult> folds);

}  // namespace dualclvsa::train
