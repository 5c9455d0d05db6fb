#pragma once

// Adam, early stopping on a validation score, and the multi-restart
// selection loop shared by the detector and classifier trainers.

#include <cmath>
#include <functional>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "klp/common.hpp"
#include "klp/tensor.hpp"

namespace klp {

class Adam {
public:
    explicit Adam(std::vector<Tensor> params, double lr, double beta1 = 0.9, double beta2 = 0.999,
                  double epsilon = 1e-8)
        : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), epsilon_(epsilon) {
        m_.reserve(params_.size());
        v_.reserve(params_.size());
        for (const Tensor& p : params_) {
            if (!p.requires_grad()) {
                throw std::invalid_argument("Adam: parameter without requires_grad");
            }
            m_.emplace_back(p.size(), 0.0);
            v_.emplace_back(p.size(), 0.0);
        }
    }

    void zero_grad() {
        for (Tensor& p : params_) p.zero_grad();
    }

    // One bias-corrected update from the gradients currently stored on the
    // parameters. Gradients are left in place; callers zero them per batch.
    void step() {
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
        for (std::size_t i = 0; i < params_.size(); ++i) {
            Tensor& p = params_[i];
            if (p.grad().size() != p.size()) {
                throw std::logic_error("Adam: parameter " + std::to_string(i) + " has no gradient");
            }
            auto& m = m_[i];
            auto& v = v_[i];
            auto& data = p.data();
            const auto& g = p.grad();
            for (std::size_t j = 0; j < data.size(); ++j) {
                m[j] = beta1_ * m[j] + (1.0 - beta1_) * g[j];
                v[j] = beta2_ * v[j] + (1.0 - beta2_) * g[j] * g[j];
                const double mhat = m[j] / bc1;
                const double vhat = v[j] / bc2;
                data[j] -= lr_ * mhat / (std::sqrt(vhat) + epsilon_);
            }
        }
    }

    std::size_t step_count() const { return t_; }
    double lr() const { return lr_; }
    const std::vector<Tensor>& params() const { return params_; }

private:
    std::vector<Tensor> params_;
    double lr_, beta1_, beta2_, epsilon_;
    std::size_t t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

// Tracks the best validation score seen so far and asks for a stop after
// exactly `patience` consecutive epochs without strict improvement. The
// snapshot is a caller-supplied serialization of model state; the monitor
// only holds it.
class EarlyStopMonitor {
public:
    enum class Direction { maximize, minimize };

    explicit EarlyStopMonitor(int patience, Direction direction = Direction::maximize)
        : patience_(patience), direction_(direction) {
        if (patience < 1) throw std::invalid_argument("EarlyStopMonitor: patience must be >= 1");
    }

    // Returns true when training should stop. snapshot() is invoked only on
    // strict improvement.
    bool update(double score, const std::function<std::vector<double>()>& snapshot) {
        const bool improved = !has_best_ || (direction_ == Direction::maximize ? score > best_score_
                                                                               : score < best_score_);
        if (improved) {
            best_score_ = score;
            has_best_ = true;
            stale_epochs_ = 0;
            best_snapshot_ = snapshot();
        } else {
            ++stale_epochs_;
        }
        return stale_epochs_ >= patience_;
    }

    bool has_best() const { return has_best_; }
    double best_score() const {
        if (!has_best_) throw std::logic_error("EarlyStopMonitor: no epoch recorded");
        return best_score_;
    }
    const std::vector<double>& best_snapshot() const {
        if (!has_best_) throw std::logic_error("EarlyStopMonitor: no epoch recorded");
        return best_snapshot_;
    }
    int epochs_since_improvement() const { return stale_epochs_; }

private:
    int patience_;
    Direction direction_;
    bool has_best_ = false;
    double best_score_ = 0.0;
    int stale_epochs_ = 0;
    std::vector<double> best_snapshot_;
};

// Flat parameter snapshot helpers used with EarlyStopMonitor.
inline std::vector<double> flatten_params(const std::vector<Tensor>& params) {
    std::vector<double> out;
    std::size_t total = 0;
    for (const Tensor& p : params) total += p.size();
    out.reserve(total);
    for (const Tensor& p : params) out.insert(out.end(), p.data().begin(), p.data().end());
    return out;
}

inline void restore_params(std::vector<Tensor>& params, const std::vector<double>& flat) {
    std::size_t off = 0;
    for (Tensor& p : params) {
        if (off + p.size() > flat.size()) {
            throw std::invalid_argument("restore_params: snapshot shorter than parameters");
        }
        std::copy(flat.begin() + off, flat.begin() + off + p.size(), p.data().begin());
        off += p.size();
    }
    if (off != flat.size()) {
        throw std::invalid_argument("restore_params: snapshot longer than parameters");
    }
}

template <typename Model>
struct RestartResult {
    Model model;
    double score = 0.0;
    std::size_t seed_index = 0;
};

// Runs train_fn once per seed and keeps the restart with the best validation
// score; ties go to the lowest seed index. A restart that throws is reported
// through on_error and skipped. All restarts failing is an error.
template <typename TrainFn, typename ErrorFn>
auto multi_restart_train(TrainFn&& train_fn, const std::vector<std::uint64_t>& seeds,
                         ErrorFn&& on_error)
    -> RestartResult<decltype(train_fn(std::uint64_t{}).first)> {
    if (seeds.empty()) throw std::invalid_argument("multi_restart_train: needs at least one seed");
    using Model = decltype(train_fn(std::uint64_t{}).first);
    std::optional<RestartResult<Model>> best;
    for (std::size_t i = 0; i < seeds.size(); ++i) {
        try {
            auto [model, score] = train_fn(seeds[i]);
            if (!best || score > best->score) {
                best = RestartResult<Model>{std::move(model), score, i};
            }
        } catch (const std::exception& e) {
            on_error(i, seeds[i], e.what());
        }
    }
    if (!best) throw std::runtime_error("multi_restart_train: every restart failed");
    return std::move(*best);
}

// One row of the per-epoch training log. val_accuracy holds whatever metric
// the trainer stops on (mean IoU for detection, balanced accuracy for
// classification). seconds is wall clock and deliberately lives only here,
// never in report.json, which must be byte-stable across reruns.
struct EpochLogRow {
    int epoch = 0;
    std::string phase;
    double loss = 0.0;
    double val_accuracy = 0.0;
    double seconds = 0.0;
};

inline void write_epoch_log(std::ostream& out, const std::vector<EpochLogRow>& rows) {
    out << "epoch,phase,loss,val_accuracy,seconds\n";
    for (const EpochLogRow& r : rows) {
        out << r.epoch << "," << r.phase << "," << format_double(r.loss) << ","
            << format_double(r.val_accuracy) << "," << format_double(r.seconds) << "\n";
    }
}

}  // namespace klp
