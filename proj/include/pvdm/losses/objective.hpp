#pragma once

#include <cmath>
#include <deque>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "pvdm/errors.hpp"
#include "pvdm/losses/adversarial.hpp"
#include "pvdm/losses/perceptual.hpp"

namespace pvdm::losses {

enum class GanStartRule { step, plateau };

struct LossConfig {
    double lambda1 = 1.0;          // perceptual weight
    double lambda2_before = 0.0;   // adversarial weight before the switch
    double lambda2_after = 0.25;   // adversarial weight after the switch
    GanStartRule gan_start_rule = GanStartRule::step;
    int64_t gan_start_step = 2000;
    // plateau rule: relative improvement of the windowed mean below `plateau_tol`
    int plateau_window = 100;
    double plateau_tol = 0.01;
    std::vector<int64_t> perceptual_channels = {8, 16, 32};
    std::vector<int64_t> disc_channels = {16, 32, 64};

    void validate() const {
        if (lambda1 < 0 || lambda2_before < 0 || lambda2_after < 0) throw ConfigError("loss weights must be >= 0");
        if (gan_start_step < 0) throw ConfigError("gan_start_step must be >= 0");
        if (plateau_window <= 0 || plateau_tol < 0) throw ConfigError("invalid plateau detector settings");
        if (perceptual_channels.empty()) throw ConfigError("perceptual extractor needs at least one stage");
        if (disc_channels.size() < 2) throw ConfigError("discriminator needs at least two stages");
    }
};

inline const char* to_string(GanStartRule r) { return r == GanStartRule::step ? "step" : "plateau"; }

inline GanStartRule parse_gan_start_rule(const std::string& s) {
    if (s == "step") return GanStartRule::step;
    if (s == "plateau") return GanStartRule::plateau;
    throw ConfigError("unknown gan_start_rule '" + s + "'");
}

/// Decides when the adversarial term switches on. Once fired it stays on.
class GanSwitch {
public:
    explicit GanSwitch(const LossConfig& cfg) : cfg_(cfg) {}

    bool active() const { return fired_at_.has_value(); }
    std::optional<int64_t> fired_at() const { return fired_at_; }
    void force(int64_t step) { fired_at_ = step; }

    double lambda2() const { return active() ? cfg_.lambda2_after : cfg_.lambda2_before; }

    /// Feeds the reconstruction objective (pixel + lambda1 * perceptual) of
    /// `step`; returns true on the step the switch fires.
    bool observe(int64_t step, double recon_objective) {
        if (active()) return false;
        bool fire = false;
        if (cfg_.gan_start_rule == GanStartRule::step) {
            fire = step >= cfg_.gan_start_step;
        } else {
            const auto w = static_cast<size_t>(cfg_.plateau_window);
            history_.push_back(recon_objective);
            if (history_.size() > 2 * w) history_.pop_front();
            if (history_.size() == 2 * w) {
                double older = 0, newer = 0;
                for (size_t i = 0; i < w; ++i) older += history_[i];
                for (size_t i = w; i < 2 * w; ++i) newer += history_[i];
                fire = (older - newer) <= cfg_.plateau_tol * std::abs(older);
            }
        }
        if (fire) fired_at_ = step;
        return fire;
    }

private:
    LossConfig cfg_;
    std::deque<double> history_;
    std::optional<int64_t> fired_at_;
};

template <typename T>
struct AeLossTerms {
    Var<T> total;
    double pixel = 0;
    double perceptual = 0;
    double generator = 0;  // adversarial + feature matching, 0 when inactive
    double lambda2 = 0;
};

/// Mean absolute difference over every element.
template <typename T>
Var<T> pixel_loss(const Var<T>& x, const Var<T>& y) {
    return mean_abs_diff(x, y);
}

inline double weighted_objective(double pixel, double perceptual, double generator, double lambda1, double lambda2) {
    return pixel + lambda1 * perceptual + lambda2 * generator;
}

/// L_pixel + lambda1 * L_perc + lambda2 * L_gen. The generator term is only
/// built when lambda2 > 0.
template <typename T>
AeLossTerms<T> ae_total_loss(const Var<T>& x, const Var<T>& recon, double lambda1, double lambda2,
                             const PerceptualExtractor<T>& extractor, const Discriminator<T>* disc) {
    AeLossTerms<T> out;
    out.lambda2 = lambda2;
    Var<T> pix = pixel_loss(recon, x);
    out.pixel = static_cast<double>(pix.item());
    out.total = pix;
    if (lambda1 > 0) {
        Var<T> perc = perceptual_loss(x, recon, extractor);
        out.perceptual = static_cast<double>(perc.item());
        out.total = add(out.total, scale(perc, static_cast<T>(lambda1)));
    }
    if (lambda2 > 0) {
        if (!disc) throw std::invalid_argument("ae_total_loss: adversarial weight set without a discriminator");
        auto g = generator_loss(*disc, x, recon);
        out.generator = static_cast<double>(g.total.item());
        out.total = add(out.total, scale(g.total, static_cast<T>(lambda2)));
    }
    return out;
}

struct EarlyStopDecision {
    bool stop = false;
    bool improved = false;
    int64_t best_step = -1;
    double best_value = std::numeric_limits<double>::infinity();
    int non_improving = 0;
};

/// Tracks the best (minimum) R-FVD; equal values keep the earlier
/// checkpoint. Signals stop after `patience` consecutive non-improving
/// evaluations.
class EarlyStopMonitor {
public:
    explicit EarlyStopMonitor(int patience = 3) : patience_(patience) {
        if (patience <= 0) throw ConfigError("early-stop patience must be positive");
    }

    EarlyStopDecision observe(int64_t step, double value) {
        state_.improved = value < state_.best_value;
        if (state_.improved) {
            state_.best_value = value;
            state_.best_step = step;
            state_.non_improving = 0;
        } else {
            ++state_.non_improving;
        }
        state_.stop = state_.non_improving >= patience_;
        return state_;
    }

    const EarlyStopDecision& state() const { return state_; }
    void restore(const EarlyStopDecision& s) { state_ = s; }

private:
    int patience_;
    EarlyStopDecision state_;
};

/// Replays a whole history; history entries are (step, r_fvd).
inline EarlyStopDecision early_stop_monitor(const std::vector<std::pair<int64_t, double>>& history, int patience = 3) {
    EarlyStopMonitor m(patience);
    EarlyStopDecision d;
    for (const auto& [step, v] : history) {
        d = m.observe(step, v);
        if (d.stop) break;
    }
    return d;
}

}  // namespace pvdm::losses
