#pragma once

#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "mfdon/tensor.hpp"

namespace mfdon {

/// Input-function samples on sensors plus output values on query points, at
/// one fidelity. Sensors and queries are shared across samples.
struct FidelityDataset {
    std::string fidelity;  // "low" or "high"
    Tensor sensors;        // M x sensor_dim
    Tensor inputs;         // N x M
    Tensor queries;        // P x query_dim
    Tensor outputs;        // N x P x C
    std::map<std::string, std::vector<double>> sample_meta;  // per-sample scalars, e.g. "a"
    // Additional per-sample rows keyed by name, e.g. "lf_inputs" (u at the
    // low-fidelity sensors, needed to drive the probe net for high-fidelity
    // samples) or "ic_values" (initial-condition values at the IC points).
    std::map<std::string, Tensor> extra;

    std::size_t num_samples() const { return inputs.rank() == 2 ? inputs.rows() : 0; }
    std::size_t num_sensors() const { return sensors.rank() == 2 ? sensors.rows() : 0; }
    std::size_t num_queries() const { return queries.rank() == 2 ? queries.rows() : 0; }
    std::size_t components() const { return outputs.rank() == 3 ? outputs.shape()[2] : 1; }
    std::size_t query_dim() const { return queries.rank() == 2 ? queries.cols() : 0; }

    const double* output_row(std::size_t sample) const {
        return outputs.data() + sample * num_queries() * components();
    }

    void validate() const {
        if (inputs.rank() != 2 || sensors.rank() != 2 || queries.rank() != 2 || outputs.rank() != 3)
            throw std::invalid_argument("FidelityDataset: unexpected tensor ranks");
        if (inputs.cols() != sensors.rows())
            throw std::invalid_argument("FidelityDataset: input width differs from sensor count");
        if (outputs.shape()[0] != inputs.rows() || outputs.shape()[1] != queries.rows())
            throw std::invalid_argument("FidelityDataset: output shape disagrees with samples/queries");
        for (const auto& [key, v] : sample_meta)
            if (v.size() != inputs.rows())
                throw std::invalid_argument("FidelityDataset: metadata '" + key + "' length mismatch");
        for (const auto& [key, t] : extra)
            if (t.rank() != 2 || t.rows() != inputs.rows())
                throw std::invalid_argument("FidelityDataset: extra '" + key + "' row mismatch");
    }

    const Tensor* extra_or_null(const std::string& key) const {
        auto it = extra.find(key);
        return it == extra.end() ? nullptr : &it->second;
    }

    /// u at the low-fidelity sensors; falls back to `inputs` when absent.
    const Tensor& lf_sensor_inputs() const {
        const Tensor* t = extra_or_null("lf_inputs");
        return t ? *t : inputs;
    }
};

}  // namespace mfdon
