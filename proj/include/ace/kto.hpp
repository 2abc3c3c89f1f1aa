#pragma once

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "ace/errors.hpp"
#include "ace/util.hpp"

namespace ace {

/// Scalar view of one preference sample: policy and reference log-probs of the
/// generated response, its token length, and its execution-derived label.
struct PreferenceSample {
    double logp_policy = 0.0;
    double logp_ref = 0.0;
    long long length = 0;
    bool desirable = false;

    void validate() const {
        if (!std::isfinite(logp_policy) || !std::isfinite(logp_ref)) {
            throw ValidationError("non-finite log-probability");
        }
        if (length < 0) throw ValidationError("negative token length");
    }
};

struct ObjectiveConfig {
    double lambda_len = 0.001;  // length-penalty coefficient
    double w_des = 1.0;
    double w_undes = 1.0;
    double beta = 0.1;
    double z_ref = 0.0;  // reference point; hook for trainers that supply a KL estimate

    void validate() const {
        if (lambda_len < 0) throw ValidationError("lambda_len must be >= 0");
        if (w_des <= 0 || w_undes <= 0) throw ValidationError("class weights must be > 0");
        if (beta <= 0) throw ValidationError("beta must be > 0");
        if (!std::isfinite(z_ref)) throw ValidationError("z_ref must be finite");
    }
};

inline void to_json(json& j, const ObjectiveConfig& c) {
    j = json{{"lambda_len", c.lambda_len},
             {"w_des", c.w_des},
             {"w_undes", c.w_undes},
             {"beta", c.beta},
             {"z_ref", c.z_ref}};
}

inline void from_json(const json& j, ObjectiveConfig& c) {
    ObjectiveConfig defaults;
    c.lambda_len = j.value("lambda_len", defaults.lambda_len);
    c.w_des = j.value("w_des", defaults.w_des);
    c.w_undes = j.value("w_undes", defaults.w_undes);
    c.beta = j.value("beta", defaults.beta);
    c.z_ref = j.value("z_ref", defaults.z_ref);
    c.validate();
}

inline double sigmoid(double x) {
    if (x >= 0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    double e = std::exp(x);
    return e / (1.0 + e);
}

/// log pi_theta(x|p) - log pi_ref(x|p)
inline double log_ratio(const PreferenceSample& s) {
    s.validate();
    return s.logp_policy - s.logp_ref;
}

/// Length-penalized log-ratio: log_ratio - lambda * length.
inline double penalized_ratio(const PreferenceSample& s, const ObjectiveConfig& cfg) {
    return log_ratio(s) - cfg.lambda_len * static_cast<double>(s.length);
}

struct BatchLoss {
    double loss = 0.0;
    std::vector<double> per_sample;
};

/// Weighted KTO objective over the batch. Inner losses are the logistic value
/// functions 1 - sigmoid(+-beta * (penalized_ratio - z_ref)); each class
/// contributes its arithmetic mean, weighted, and a class absent from the
/// batch contributes nothing.
inline BatchLoss batch_loss(const std::vector<PreferenceSample>& samples,
                            const ObjectiveConfig& cfg) {
    cfg.validate();
    if (samples.empty()) throw EmptyBatchError("batch_loss over empty batch");
    BatchLoss out;
    out.per_sample.reserve(samples.size());
    double sum_des = 0.0, sum_undes = 0.0;
    size_t n_des = 0, n_undes = 0;
    for (const auto& s : samples) {
        double centered = penalized_ratio(s, cfg) - cfg.z_ref;
        double inner;
        if (s.desirable) {
            inner = 1.0 - sigmoid(cfg.beta * centered);
            sum_des += inner;
            ++n_des;
        } else {
            inner = 1.0 - sigmoid(-cfg.beta * centered);
            sum_undes += inner;
            ++n_undes;
        }
        out.per_sample.push_back(inner);
    }
    if (n_des > 0) out.loss += cfg.w_des * (sum_des / static_cast<double>(n_des));
    if (n_undes > 0) out.loss += cfg.w_undes * (sum_undes / static_cast<double>(n_undes));
    return out;
}

/// Analytic d(batch loss)/d(logp_policy) per sample. Negative for desirable
/// samples, positive for undesirable ones.
inline std::vector<double> grad_wrt_logp(const std::vector<PreferenceSample>& samples,
                                         const ObjectiveConfig& cfg) {
    cfg.validate();
    if (samples.empty()) throw EmptyBatchError("grad_wrt_logp over empty batch");
    size_t n_des = 0, n_undes = 0;
    for (const auto& s : samples) (s.desirable ? n_des : n_undes)++;
    std::vector<double> grads;
    grads.reserve(samples.size());
    for (const auto& s : samples) {
        double centered = penalized_ratio(s, cfg) - cfg.z_ref;
        if (s.desirable) {
            double sig = sigmoid(cfg.beta * centered);
            grads.push_back(-cfg.w_des * cfg.beta * sig * (1.0 - sig) /
                            static_cast<double>(n_des));
        } else {
            double sig = sigmoid(-cfg.beta * centered);
            grads.push_back(cfg.w_undes * cfg.beta * sig * (1.0 - sig) /
                            static_cast<double>(n_undes));
        }
    }
    return grads;
}

/// Reads a KTO dataset whose records carry logp_policy/logp_ref fields
/// (added by an external scorer, or synthesized for desk runs).
inline std::vector<PreferenceSample> load_augmented_dataset(const std::filesystem::path& path) {
    std::vector<PreferenceSample> out;
    for (const auto& j : read_jsonl(path)) {
        PreferenceSample s;
        if (!j.contains("logp_policy") || !j.contains("logp_ref")) {
            throw ParseError(path.string() + ": record missing logp_policy/logp_ref " +
                             "(augment the dataset with a scorer or use --synthesize-seed)");
        }
        s.logp_policy = j.at("logp_policy").get<double>();
        s.logp_ref = j.at("logp_ref").get<double>();
        s.length = j.contains("length") ? j.at("length").get<long long>()
                                        : j.value("token_length", 0ll);
        s.desirable = j.at("label").get<bool>();
        s.validate();
        out.push_back(s);
    }
    return out;
}

}  // namespace ace
