#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "mfdon/losses.hpp"

namespace mfdon::optimize {

struct ExpDecaySchedule {
    double initial = 1e-3;
    double decay_steps = 1000;
    double decay_rate = 0.9;
    bool staircase = false;

    void validate() const;
};

/// initial * rate^(step / decay_steps); integer exponent when staircase.
double lr_at(const ExpDecaySchedule& s, std::size_t step);

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

/// Name <-> flat-offset bookkeeping for one trainable parameter set.
struct ParamLayout {
    struct Entry {
        std::string name;
        std::size_t offset = 0;
        std::size_t size = 0;
    };
    std::vector<Entry> entries;
    std::size_t total = 0;

    const Entry* find(const std::string& name) const;
    std::string name_at(std::size_t flat_index) const;
};

/// Named views into the tensors of a parameter struct.
struct ParamRefs {
    std::vector<std::pair<std::string, Tensor*>> items;

    ParamLayout layout() const;
    std::vector<double> flatten() const;
    void scatter(const std::vector<double>& flat);
};

ParamRefs collect_refs(multifidelity::CompositeParams& p);
ParamRefs collect_refs(deeponet::ModifiedDeepONetParams& p, const std::string& prefix);
ParamRefs collect_refs_noncomposite(multifidelity::CompositeParams& p);

struct AdamState {
    std::size_t step = 0;
    std::vector<double> m, v;

    void init(std::size_t n) {
        step = 0;
        m.assign(n, 0.0);
        v.assign(n, 0.0);
    }
};

/// Standard bias-corrected update; throws on non-finite gradients, naming the
/// parameter via the layout.
void adam_step(std::vector<double>& params, const std::vector<double>& grads, AdamState& state,
               double lr, const AdamConfig& cfg, const ParamLayout* layout = nullptr);

enum class ModelKind { SfData, MfData, SfPi, MfPi, NonComposite };

ModelKind model_kind_from_string(const std::string& s);
std::string to_string(ModelKind k);

struct BatchSpec {
    std::size_t lf = 0;           // samples per step from the low-fidelity set (0 = all)
    std::size_t hf = 0;           // samples per step from the high-fidelity/physics set
    std::size_t collocation = 0;  // interior points per step (0 = all)
};

struct TrainSetup {
    ModelKind kind = ModelKind::MfData;
    multifidelity::CompositeParams composite;  // MF kinds; NonComposite uses nonlinear+linear
    deeponet::ModifiedDeepONetParams sf;       // SF kinds
    multifidelity::ProbeGrid probes;
    FidelityDataset lf_data;  // low-fidelity term (MfData, MfPi)
    FidelityDataset hf_data;  // data targets or physics samples
    Tensor oracle_probes;     // NonComposite: N x (Q*C) exact low-fidelity probe rows
    Tensor oracle_lf_rows;    // NonComposite: N x (P*C) exact values at the query points
    losses::ResidualSpec residual;
    losses::CollocationSet colloc;
    losses::LossWeights lambda;
    ExpDecaySchedule schedule;
    AdamConfig adam;
    std::size_t steps = 0;
    BatchSpec batch;
    std::uint64_t seed = 0;
    bool probe_gradient = true;
    std::size_t checkpoint_every = 0;
    std::function<void(std::size_t)> on_checkpoint;  // called with params scattered back
};

struct StepRecord {
    std::size_t step = 0;
    double total = 0, hf_or_physics = 0, lf = 0, ic = 0, bc = 0, reg_nl = 0, reg_lf = 0, lr = 0;
};

struct TrainReport {
    std::vector<StepRecord> history;
    double wall_seconds = 0.0;
    std::uint64_t seed = 0;
    std::size_t steps = 0;
};

/// Runs the configured number of Adam steps on the selected loss; the trained
/// parameters are written back into `setup.composite` / `setup.sf`.
/// Throws with the step index and breakdown if the loss goes non-finite.
TrainReport train(TrainSetup& setup);

}  // namespace mfdon::optimize
