// Copyright (c) 2026 astain contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "astain/dataset.hpp"
#include "astain/model.hpp"
#include "astain/stain.hpp"

namespace astain {

struct TrainingConfig {
    int batch_size = 64;
    double base_lr = 0.01;
    double lr_decay = 0.9;
    int lr_decay_interval = 5000;
    double weight_decay = 0.0005;
    double momentum = 0.9;
    int total_iterations = 40000;

    // adversarial pass
    double lambda_d = 0.0025;
    double alpha_max = 1.0;
    int cycle_length = 2000;
    double warmup_fraction = 0.25;

    bool color_augmentation = false;
    bool stain_normalization = false;
    bool dann = false;
    // when false, the Eq.2 and Eq.3 gradients come from separate forward
    // passes (the second one after theta_D was updated)
    bool shared_domain_forward = true;

    SpatialAugmentConfig spatial;  // rotation + mirroring always on
    ColorAugmentConfig color;
    StainModel reference = default_reference_stain();

    double hard_negative_ratio = 0.5;      // fraction of negatives drawn from the mined pool
    int random_negatives_per_image = 50;
    double negative_min_distance = 15.0;   // random negatives stay this far from annotations

    uint64_t seed = 1;
    std::string checkpoint_path;  // saved after the last iteration when set
    std::string log_path;         // CSV: iteration,L_M,L_D,alpha,lr

    void validate(int num_train_domains) const;
};

// cyclic schedule: zero during the warmup fraction of each cycle, then a
// linear ramp to alpha_max
double alpha_at(long iteration, const TrainingConfig& config);

// seeds derived from the config seed for the individual random streams
uint64_t model_seed(uint64_t config_seed);
uint64_t branch_seed(uint64_t config_seed);
uint64_t reinit_seed(uint64_t config_seed, long cycle_index);

// `count` draws without replacement, selection probability proportional to
// the remaining weights; returns the chosen indices in draw order
std::vector<size_t> weighted_sample_without_replacement(std::vector<double> weights, int count, Rng& rng);

struct TrainStepReport {
    long iteration = 0;
    double loss_m = 0.0;
    std::optional<double> loss_d;
    double alpha = 0.0;
    double lr = 0.0;
};

struct Batch {
    Tensor input;             // [B, 3, 63, 63]
    std::vector<int> labels;  // class labels or domain labels
};

struct MinedCenter {
    std::string case_id;
    int image_index = 0;
    int row = 0;
    int col = 0;
};

// Training patch source over the train split: positives at annotation
// centers, negatives at random centers away from annotations, plus an
// optional mined hard-negative pool mixed in at hard_negative_ratio.
class PatchPool {
public:
    PatchPool(const Dataset& dataset, const TrainingConfig& config);

    void add_mined(const std::vector<MinedCenter>& centers);

    // size/2 positives and size/2 negatives, spatially augmented (color
    // augmented when enabled)
    Batch class_balanced_batch(int size, Rng& rng) const;
    // size/D random patches from every training domain, class-agnostic
    Batch domain_balanced_batch(int size, Rng& rng) const;

    int num_domains() const { return num_domains_; }
    size_t num_positives() const { return positives_.size(); }
    size_t num_random_negatives() const { return random_negatives_.size(); }
    size_t num_mined() const { return mined_.size(); }

private:
    struct Entry {
        int case_index;
        int image_index;
        int row;
        int col;
        int domain;
    };

    RgbImage extract(const Entry& e, Rng& rng) const;

    const Dataset* dataset_;
    const TrainingConfig* config_;
    std::vector<Entry> positives_;
    std::vector<Entry> random_negatives_;
    std::vector<Entry> mined_;
    std::map<int, std::vector<std::pair<int, int>>> images_by_domain_;  // domain -> (case, image)
    int num_domains_ = 0;
};

// Eq. 1: theta_M <- theta_M - lr * dL_M/dtheta_M (SGD with momentum and
// weight decay, lr from the decay schedule at state.iteration)
TrainStepReport train_step_baseline(MitosisClassifier& model, const Batch& batch, OptimizerState& state);

// Eq. 1 on the class batch, then on the domain batch: Eq. 2
// theta_D <- theta_D - lambda_D * dL_D/dtheta_D and Eq. 3
// theta_M <- theta_M + alpha * lambda_D * dL_D/dtheta_M, both gradients taken
// before either update is applied (when shared_domain_forward).
TrainStepReport train_step_dann(MitosisClassifier& model, DomainBranch& branch, const Batch& class_batch,
                                const Batch& domain_batch, long iteration, OptimizerState& state,
                                const TrainingConfig& config);

struct TrainResult {
    MitosisClassifier model;
    std::optional<DomainBranch> branch;
    std::vector<TrainStepReport> log;
};

TrainResult run_training(const TrainingConfig& config, const Dataset& dataset,
                         const std::vector<MinedCenter>& mined = {});

void write_training_log(const std::vector<TrainStepReport>& log, const std::string& path);

// Probability-proportional sampling (without replacement) from the dense
// probability maps of the train split, with cells inside exclusion_radius of
// any annotation zeroed out.
std::vector<PatchSample> mine_hard_negatives(const MitosisClassifier& model, const Dataset& dataset, int count,
                                             double exclusion_radius, Rng& rng);

void write_mined_csv(const std::vector<PatchSample>& samples, const std::string& path);
std::vector<MinedCenter> read_mined_csv(const std::string& path);

// in-place staining normalization of one split; returns the number of images
// skipped because estimation failed
int normalize_split(Dataset& dataset, Split split, const StainModel& reference);

// Labeled patch sampling for feature export: per domain, up to half the
// patches are positives at annotation centers, the rest random negatives
// away from annotations. Plain crops, no augmentation.
std::vector<PatchSample> sample_labeled_patches(const Dataset& dataset, Split split, int per_domain, uint64_t seed);

}  // namespace astain
