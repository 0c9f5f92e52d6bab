#include "dualclvsa/trainer.h"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <istream>
#include <mutex>
#include <numeric>
#include <ostream>
#include <random>
#include <thread>

#include "dualclvsa/csv.h"
#include "dualclvsa/errors.h"

namespace dualclvsa::train {

namespace {

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
    std::uint64_t z = a ^ (b + 0x9E3779B97F4A7C15ULL + (a << 6) + (a >> 2));
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

void shuffle(std::vector<std::size_t>& order, std::uint64_t seed) {
    std::mt19937_64 engine(seed);
    for (std::size_t i = order.size(); i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(engine() % i);
        std::swap(order[i - 1], order[j]);
    }
}

}  // namespace

void TrainConfig::validate() const {
    if (epochs == 0) throw ConfigurationError("epochs must be positive");
    if (batch_size == 0) throw ConfigurationError("batch size must be positive");
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
        throw ConfigurationError("learning rate must be non-negative");
    }
    if (!(kld_weight >= 0.0)) throw ConfigurationError("kld weight must be non-negative");
    if (!(warmup_fraction >= 0.0 && warmup_fraction <= 1.0)) {
        throw ConfigurationError("warm-up fraction must lie in [0, 1]");
    }
    if (train_months == 0 || test_months == 0 || step_months == 0) {
        throw ConfigurationError("walk-forward windows must be positive");
    }
    if (!(clip_norm > 0.0)) throw ConfigurationError("clip norm must be positive");
    if (jobs == 0) throw ConfigurationError("jobs must be positive");
}

std::vector<Example> make_examples(std::span<const data::AlignedSample> samples) {
    std::vector<Example> out;
    for (std::size_t i = 1; i < samples.size(); ++i) out.push_back({&samples[i - 1], &samples[i]});
    return out;
}

ad::Var loss(ad::Var logits, std::size_t label, ad::Var kld, double beta) {
    ad::Var ce = ad::cross_entropy(logits, label);
    if (beta == 0.0) return ce;
    return ad::add(ce, ad::scale(kld, beta));
}

double warmup_beta(double beta, std::size_t step, std::size_t warmup_steps) {
    if (warmup_steps == 0 || step >= warmup_steps) return beta;
    return beta * static_cast<double>(step) / static_cast<double>(warmup_steps);
}

double clip_gradients(model::ParameterStore& params, double max_norm) {
    double sq = 0.0;
    for (std::size_t i = 0; i < params.size(); ++i) {
        for (double g : params.at(i).grad) sq += g * g;
    }
    const double norm = std::sqrt(sq);
    if (norm > max_norm) {
        const double factor = max_norm / norm;
        for (std::size_t i = 0; i < params.size(); ++i) {
            for (double& g : params.at(i).grad) g *= factor;
        }
    }
    return norm;
}

Adam::Adam(double learning_rate, double beta1, double beta2, double eps)
    : lr_(learning_rate), b1_(beta1), b2_(beta2), eps_(eps) {}

void Adam::step(model::ParameterStore& params) {
    if (m_.empty()) {
        for (std::size_t i = 0; i < params.size(); ++i) {
            m_.emplace_back(params.at(i).size(), 0.0);
            v_.emplace_back(params.at(i).size(), 0.0);
        }
    }
    ++t_;
    if (lr_ == 0.0) return;
    const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
        ad::Tensor& w = params.at(i);
        if (w.grad.empty()) continue;
        auto& m = m_[i];
        auto& v = v_[i];
        for (std::size_t k = 0; k < w.data.size(); ++k) {
            const double g = w.grad[k];
            m[k] = b1_ * m[k] + (1.0 - b1_) * g;
            v[k] = b2_ * v[k] + (1.0 - b2_) * g * g;
            w.data[k] -= lr_ * (m[k] / c1) / (std::sqrt(v[k] / c2) + eps_);
        }
    }
}

TrainResult train_fold(model::Model& model, std::span<const Example> examples, const TrainConfig& cfg) {
    cfg.validate();
    if (examples.size() < 2) throw ContractError("training needs at least 2 samples");
    auto& params = model.parameters();
    const std::size_t batches = (examples.size() + cfg.batch_size - 1) / cfg.batch_size;
    const std::size_t total_steps = batches * cfg.epochs;
    const auto warmup_steps = static_cast<std::size_t>(
        std::ceil(cfg.warmup_fraction * static_cast<double>(total_steps)));

    Adam adam(cfg.learning_rate);
    TrainResult result;
    std::vector<std::size_t> order(examples.size());
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        shuffle(order, mix(cfg.seed, epoch));
        double epoch_total = 0.0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            const double inv = 1.0 / static_cast<double>(end - start);
            const double beta = warmup_beta(cfg.kld_weight, result.steps, warmup_steps);
            params.zero_grad();
            for (std::size_t k = start; k < end; ++k) {
                const Example& ex = examples[order[k]];
                ad::Graph g;
                const auto noise = mix(mix(cfg.seed, result.steps), k);
                model::ForwardResult r = model.forward(g, *ex.cur, *ex.prev, model::Mode::Train, noise);
                ad::Var l = loss(r.logits, static_cast<std::size_t>(ex.cur->label), r.kld, beta);
                const double value = l.value().data[0];
                if (!std::isfinite(value)) {
                    const auto bad = g.first_non_finite();
                    throw NumericError("non-finite loss at epoch " + std::to_string(epoch) +
                                       "; first non-finite value produced by op '" +
                                       (bad ? bad->second : std::string("unknown")) + "' (node " +
                                       (bad ? std::to_string(bad->first) : std::string("?")) + ")");
                }
                epoch_total += value;
                g.backward(ad::scale(l, inv));
            }
            clip_gradients(params, cfg.clip_norm);
            adam.step(params);
            ++result.steps;
        }
        result.epoch_loss.push_back(epoch_total / static_cast<double>(examples.size()));
    }
    return result;
}

data::Movement Prediction::predicted() const {
    const auto it = std::max_element(scores.begin(), scores.end());
    return static_cast<data::Movement>(it - scores.begin());
}

Prediction predict(model::Model& model, const Example& example) {
    ad::Graph g;
    model::ForwardResult r = model.forward(g, *example.cur, *example.prev, model::Mode::Eval);
    const auto p = model::probabilities(r.logits.value());
    Prediction out;
    out.timestamp = example.cur->timestamp;
    out.label = example.cur->label;
    std::copy(p.begin(), p.end(), out.scores.begin());
    return out;
}

std::vector<Prediction> predict_all(model::Model& model, std::span<const Example> examples) {
    std::vector<Prediction> out;
    out.reserve(examples.size());
    for (const auto& ex : examples) out.push_back(predict(model, ex));
    return out;
}

double accuracy(std::span<const Prediction> predictions) {
    if (predictions.empty()) throw UndefinedMetricError("accuracy of an empty prediction set");
    std::size_t hits = 0;
    for (const auto& p : predictions) hits += p.predicted() == p.label ? 1 : 0;
    return static_cast<double>(hits) / static_cast<double>(predictions.size());
}

double mean_average_precision(std::span<const Prediction> predictions) {
    if (predictions.empty()) throw ContractError("MAP of an empty prediction set");
    double total = 0.0;
    std::size_t classes = 0;
    std::vector<std::size_t> order(predictions.size());
    for (std::size_t c = 0; c < data::kClassCount; ++c) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            return predictions[a].scores[c] > predictions[b].scores[c];
        });
        std::size_t hits = 0;
        double precision_sum = 0.0;
        for (std::size_t k = 0; k < order.size(); ++k) {
            if (static_cast<std::size_t>(predictions[order[k]].label) != c) continue;
            ++hits;
            precision_sum += static_cast<double>(hits) / static_cast<double>(k + 1);
        }
        if (hits == 0) continue;
        total += precision_sum / static_cast<double>(hits);
        ++classes;
    }
    return total / static_cast<double>(classes);
}

std::vector<FoldWindow> fold_windows(std::int64_t first_month, std::int64_t last_month,
                                     const TrainConfig& cfg) {
    const auto train = static_cast<std::int64_t>(cfg.train_months);
    const auto test = static_cast<std::int64_t>(cfg.test_months);
    const auto step = static_cast<std::int64_t>(cfg.step_months);
    const std::int64_t span = last_month - first_month + 1;
    if (span < train + test) {
        throw ConfigurationError("data spans " + std::to_string(span) + " months, walk-forward needs " +
                                 std::to_string(train + test));
    }
    std::vector<FoldWindow> out;
    for (std::int64_t t = first_month; t + train + test <= last_month + 1; t += step) {
        out.push_back({t, t + train, t + train + test});
    }
    return out;
}

std::vector<FoldResult> walk_forward(std::span<const data::AlignedSample> samples,
                                     const model::ModelConfig& model_cfg, const TrainConfig& cfg,
                                     const FoldCallback& on_fold) {
    cfg.validate();
    model_cfg.validate();
    if (samples.size() < 2) throw ConfigurationError("walk-forward needs at least 2 samples");
    for (std::size_t i = 1; i < samples.size(); ++i) {
        if (samples[i].timestamp <= samples[i - 1].timestamp) {
            throw ContractError("walk-forward samples must be strictly time-ordered");
        }
    }
    const auto windows =
        fold_windows(month_index(samples.front().timestamp), month_index(samples.back().timestamp), cfg);
    const auto examples = make_examples(samples);

    std::vector<FoldResult> results(windows.size());
    std::mutex callback_mutex;

    const auto run_fold = [&](std::size_t f, model::Model& model) {
        const FoldWindow& w = windows[f];
        FoldResult& r = results[f];
        r.fold = f;
        r.train_start = month_start(w.train_month);
        r.test_start = month_start(w.test_month);
        r.test_end = month_start(w.end_month);
        std::vector<Example> train, test;
        for (const auto& ex : examples) {
            const Timestamp ts = ex.cur->timestamp;
            if (ts >= r.train_start && ts < r.test_start) {
                // Drop samples whose label is only known inside the test window.
                if (ex.cur->label_timestamp >= r.test_start) continue;
                train.push_back(ex);
                r.last_train_timestamp = std::max(r.last_train_timestamp, ts);
                r.last_train_label_timestamp =
                    std::max(r.last_train_label_timestamp, ex.cur->label_timestamp);
            } else if (ts >= r.test_start && ts < r.test_end) {
                test.push_back(ex);
            }
        }
        r.train_count = train.size();
        if (train.size() < 2 || test.empty()) {
            throw DatasetError("fold " + std::to_string(f) + " has " + std::to_string(train.size()) +
                               " training and " + std::to_string(test.size()) + " test samples");
        }
        TrainConfig fold_cfg = cfg;
        fold_cfg.seed = mix(cfg.seed, f);
        r.epoch_loss = train_fold(model, train, fold_cfg).epoch_loss;
        r.predictions = predict_all(model, test);
        r.map = mean_average_precision(r.predictions);
        r.accuracy = accuracy(r.predictions);
        if (on_fold) {
            std::lock_guard lock(callback_mutex);
            on_fold(r, model);
        }
    };

    if (cfg.warm_start) {
        model::Model model(model_cfg, cfg.seed);
        for (std::size_t f = 0; f < windows.size(); ++f) run_fold(f, model);
        return results;
    }

    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    const auto worker = [&] {
        for (std::size_t f = next++; f < windows.size(); f = next++) {
            try {
                model::Model model(model_cfg, mix(cfg.seed, f));
                run_fold(f, model);
            } catch (...) {
                std::lock_guard lock(failure_mutex);
                if (!failure) failure = std::current_exception();
                next = windows.size();
            }
        }
    };
    const std::size_t threads = std::min(cfg.jobs, windows.size());
    if (threads <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t i = 0; i < threads; ++i) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    if (failure) std::rethrow_exception(failure);
    return results;
}

void write_predictions_csv(std::ostream& out, std::span<const FoldResult> folds) {
    out << "timestamp,score_down,score_flat,score_up,label\n";
    for (const auto& f : folds) {
        for (const auto& p : f.predictions) {
            out << format_iso8601(p.timestamp);
            for (double s : p.scores) out << ',' << format_double(s, 17);
            out << ',' << data::movement_name(p.label) << '\n';
        }
    }
}

std::vector<Prediction> read_predictions_csv(std::istream& in) {
    const CsvTable t = read_csv(in, "predictions CSV");
    expect_header(t, {"timestamp", "score_down", "score_flat", "score_up", "label"}, "predictions CSV");
    std::vector<Prediction> out;
    for (const auto& row : t.rows) {
        Prediction p;
        p.timestamp = parse_iso8601(row[0]);
        for (std::size_t c = 0; c < data::kClassCount; ++c) {
            p.scores[c] = parse_double(row[1 + c], "predictions CSV");
        }
        p.label = data::parse_movement(row[4]);
        if (!out.empty() && p.timestamp <= out.back().timestamp) {
            throw DataError("predictions CSV: timestamps not strictly increasing at " + row[0]);
        }
        out.push_back(p);
    }
    return out;
}

void write_training_log_csv(std::ostream& out, std::span<const FoldResult> folds) {
    out << "fold,epoch,loss\n";
    for (const auto& f : folds) {
        for (std::size_t e = 0; e < f.epoch_loss.size(); ++e) {
            out << f.fold << ',' << e << ',' << format_double(f.epoch_loss[e]) << '\n';
        }
    }
}

}  // namespace dualclvsa::train
