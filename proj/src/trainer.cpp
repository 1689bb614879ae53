// Copyright (c) 2026 astain contributors
// SPDX-License-Identifier: Apache-2.0

#include "astain/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "astain/checkpoint.hpp"
#include "astain/detect.hpp"

namespace astain {

namespace {

constexpr uint64_t kSaltModel = 0x4d4f44;     // sub-seed salts
constexpr uint64_t kSaltBranch = 0x425243;
constexpr uint64_t kSaltReinit = 0x52494e;
constexpr uint64_t kSaltClassBatch = 0x434c53;
constexpr uint64_t kSaltDomainBatch = 0x444f4d;
constexpr uint64_t kSaltNegatives = 0x4e4547;

bool context_fits(const RgbImage& img, int row, int col) {
    return row >= kContextMargin && row <= img.height - 1 - kContextMargin && col >= kContextMargin &&
           col <= img.width - 1 - kContextMargin;
}

}  // namespace

void TrainingConfig::validate(int num_train_domains) const {
    if (batch_size < 2 || batch_size % 2 != 0)
        throw ValueError("batch size must be even and at least 2, got " + std::to_string(batch_size));
    if (base_lr <= 0.0) throw ValueError("learning rate must be positive");
    if (momentum < 0.0 || momentum >= 1.0) throw ValueError("momentum must lie in [0, 1)");
    if (weight_decay < 0.0) throw ValueError("weight decay must be non-negative");
    if (total_iterations < 0) throw ValueError("iteration count must be non-negative");
    if (alpha_max < 0.0 || alpha_max > 1.0) throw ValueError("alpha_max must lie in [0, 1]");
    if (warmup_fraction <= 0.0 || warmup_fraction >= 1.0) throw ValueError("warmup fraction must lie in (0, 1)");
    if (cycle_length < 1) throw ValueError("cycle length must be positive");
    if (hard_negative_ratio < 0.0 || hard_negative_ratio > 1.0)
        throw ValueError("hard negative ratio must lie in [0, 1]");
    color.validate();
    if (dann) {
        if (num_train_domains < 2)
            throw ValueError("domain-adversarial training needs at least 2 training domains, found " +
                             std::to_string(num_train_domains));
        if (batch_size % num_train_domains != 0)
            throw ValueError("batch size " + std::to_string(batch_size) + " is not divisible by the " +
                             std::to_string(num_train_domains) + " training domains");
    }
}

double alpha_at(long iteration, const TrainingConfig& config) {
    if (iteration < 0) throw ValueError("alpha_at: iteration must be non-negative");
    const double p = static_cast<double>(iteration % config.cycle_length) / static_cast<double>(config.cycle_length);
    if (p < config.warmup_fraction) return 0.0;
    return config.alpha_max * (p - config.warmup_fraction) / (1.0 - config.warmup_fraction);
}

uint64_t model_seed(uint64_t config_seed) { return mix_seed(config_seed, kSaltModel); }
uint64_t branch_seed(uint64_t config_seed) { return mix_seed(config_seed, kSaltBranch); }
uint64_t reinit_seed(uint64_t config_seed, long cycle_index) {
    return mix_seed(config_seed, kSaltReinit, static_cast<uint64_t>(cycle_index));
}

std::vector<size_t> weighted_sample_without_replacement(std::vector<double> weights, int count, Rng& rng) {
    double total = 0.0;
    int nonzero = 0;
    for (double w : weights) {
        if (w < 0.0) throw ValueError("sampling weights must be non-negative");
        total += w;
        if (w > 0.0) ++nonzero;
    }
    if (total <= 0.0) throw TrainingError("hard-negative mining: all probability mass excluded, nothing to sample");
    if (count > nonzero)
        throw TrainingError("hard-negative mining: requested " + std::to_string(count) + " samples but only " +
                            std::to_string(nonzero) + " candidate locations exist");
    std::vector<size_t> picks;
    picks.reserve(static_cast<size_t>(count));
    for (int k = 0; k < count; ++k) {
        const double target = rng.uniform() * total;
        double acc = 0.0;
        size_t pick = weights.size();
        for (size_t i = 0; i < weights.size(); ++i) {
            if (weights[i] <= 0.0) continue;
            acc += weights[i];
            if (target < acc) {
                pick = i;
                break;
            }
        }
        if (pick == weights.size()) {  // fp slack: fall back to the last nonzero weight
            for (size_t i = weights.size(); i-- > 0;)
                if (weights[i] > 0.0) {
                    pick = i;
                    break;
                }
        }
        picks.push_back(pick);
        total -= weights[pick];
        weights[pick] = 0.0;
    }
    return picks;
}

PatchPool::PatchPool(const Dataset& dataset, const TrainingConfig& config) : dataset_(&dataset), config_(&config) {
    Rng neg_rng(mix_seed(config.seed, kSaltNegatives));
    int max_domain = -1;
    for (int ci = 0; ci < static_cast<int>(dataset.cases.size()); ++ci) {
        const CaseRecord& rec = dataset.cases[static_cast<size_t>(ci)];
        if (rec.split != Split::Train) continue;
        max_domain = std::max(max_domain, rec.domain);
        for (int ii = 0; ii < static_cast<int>(rec.images.size()); ++ii) {
            const AnnotatedImage& ai = rec.images[static_cast<size_t>(ii)];
            images_by_domain_[rec.domain].emplace_back(ci, ii);
            for (const auto& c : ai.annotations) positives_.push_back({ci, ii, c[0], c[1], rec.domain});

            const int lo_r = kPatchMargin, hi_r = ai.image.height - 1 - kPatchMargin;
            const int lo_c = kPatchMargin, hi_c = ai.image.width - 1 - kPatchMargin;
            if (hi_r < lo_r || hi_c < lo_c) continue;
            for (int k = 0; k < config.random_negatives_per_image; ++k) {
                for (int tries = 0; tries < 100; ++tries) {
                    const int r = neg_rng.uniform_int(lo_r, hi_r);
                    const int c = neg_rng.uniform_int(lo_c, hi_c);
                    bool clear = true;
                    for (const auto& a : ai.annotations) {
                        const double dr = r - a[0], dc = c - a[1];
                        if (dr * dr + dc * dc < config.negative_min_distance * config.negative_min_distance) {
                            clear = false;
                            break;
                        }
                    }
                    if (clear) {
                        random_negatives_.push_back({ci, ii, r, c, rec.domain});
                        break;
                    }
                }
            }
        }
    }
    num_domains_ = static_cast<int>(images_by_domain_.size());
    if (num_domains_ > 0 && max_domain + 1 != num_domains_)
        throw TrainingError("training-split domain indices are not dense in [0, D)");
}

void PatchPool::add_mined(const std::vector<MinedCenter>& centers) {
    for (const auto& m : centers) {
        int ci = -1;
        for (int i = 0; i < static_cast<int>(dataset_->cases.size()); ++i)
            if (dataset_->cases[static_cast<size_t>(i)].case_id == m.case_id) {
                ci = i;
                break;
            }
        if (ci < 0) throw DatasetError("mined center refers to unknown case '" + m.case_id + "'");
        const CaseRecord& rec = dataset_->cases[static_cast<size_t>(ci)];
        if (m.image_index < 0 || m.image_index >= static_cast<int>(rec.images.size()))
            throw DatasetError("mined center refers to image " + std::to_string(m.image_index) + " of case '" +
                               m.case_id + "', which has " + std::to_string(rec.images.size()) + " images");
        mined_.push_back({ci, m.image_index, m.row, m.col, rec.domain});
    }
}

RgbImage PatchPool::extract(const Entry& e, Rng& rng) const {
    const AnnotatedImage& ai = dataset_->cases[static_cast<size_t>(e.case_index)].images[static_cast<size_t>(e.image_index)];
    RgbImage patch = context_fits(ai.image, e.row, e.col)
                         ? extract_patch(ai.image, e.row, e.col, config_->spatial, rng)
                         : crop_patch(ai.image, e.row, e.col);
    if (config_->color_augmentation) patch = color_augment(patch, config_->color, rng);
    return patch;
}

Batch PatchPool::class_balanced_batch(int size, Rng& rng) const {
    if (size < 2 || size % 2 != 0) throw ValueError("class-balanced batch size must be even");
    if (positives_.empty()) throw TrainingError("training set has no positive patches");
    if (random_negatives_.empty() && mined_.empty()) throw TrainingError("training set has no negative patches");

    const int half = size / 2;
    std::vector<RgbImage> patches;
    Batch batch;
    for (int k = 0; k < half; ++k) {
        const Entry& e = positives_[static_cast<size_t>(rng.uniform_int(0, static_cast<int>(positives_.size()) - 1))];
        patches.push_back(extract(e, rng));
        batch.labels.push_back(1);
    }
    for (int k = 0; k < half; ++k) {
        const bool from_mined = !mined_.empty() && (random_negatives_.empty() || rng.uniform() < config_->hard_negative_ratio);
        const auto& pool = from_mined ? mined_ : random_negatives_;
        const Entry& e = pool[static_cast<size_t>(rng.uniform_int(0, static_cast<int>(pool.size()) - 1))];
        patches.push_back(extract(e, rng));
        batch.labels.push_back(0);
    }
    std::vector<const RgbImage*> ptrs;
    for (const auto& p : patches) ptrs.push_back(&p);
    batch.input = patches_to_tensor(ptrs);
    return batch;
}

Batch PatchPool::domain_balanced_batch(int size, Rng& rng) const {
    if (num_domains_ < 1) throw TrainingError("training set has no domains");
    if (size % num_domains_ != 0)
        throw ValueError("batch size " + std::to_string(size) + " is not divisible by " + std::to_string(num_domains_) +
                         " domains");
    const int per_domain = size / num_domains_;
    std::vector<RgbImage> patches;
    Batch batch;
    for (int d = 0; d < num_domains_; ++d) {
        const auto it = images_by_domain_.find(d);
        if (it == images_by_domain_.end() || it->second.empty())
            throw TrainingError("domain " + std::to_string(d) + " has no training images");
        for (int k = 0; k < per_domain; ++k) {
            const auto [ci, ii] = it->second[static_cast<size_t>(rng.uniform_int(0, static_cast<int>(it->second.size()) - 1))];
            const AnnotatedImage& ai = dataset_->cases[static_cast<size_t>(ci)].images[static_cast<size_t>(ii)];
            const int margin = (ai.image.height > 2 * kContextMargin && ai.image.width > 2 * kContextMargin)
                                   ? kContextMargin
                                   : kPatchMargin;
            if (ai.image.height - 1 - margin < margin || ai.image.width - 1 - margin < margin)
                throw TrainingError("image in domain " + std::to_string(d) + " is too small for patch sampling");
            Entry e{ci, ii, rng.uniform_int(margin, ai.image.height - 1 - margin),
                    rng.uniform_int(margin, ai.image.width - 1 - margin), d};
            patches.push_back(extract(e, rng));
            batch.labels.push_back(d);
        }
    }
    std::vector<const RgbImage*> ptrs;
    for (const auto& p : patches) ptrs.push_back(&p);
    batch.input = patches_to_tensor(ptrs);
    return batch;
}

TrainStepReport train_step_baseline(MitosisClassifier& model, const Batch& batch, OptimizerState& state) {
    model.forward(batch.input, Mode::Train);
    const auto ce = ops::softmax_cross_entropy(model.logits(), batch.labels);
    if (!std::isfinite(ce.loss))
        throw TrainingError("non-finite class loss at iteration " + std::to_string(state.iteration));
    model.backward(ops::softmax_cross_entropy_backward(ce.probabilities, batch.labels));
    const auto params = model.parameters();
    sgd_step(params, state);

    TrainStepReport rep;
    rep.iteration = state.iteration;
    rep.loss_m = ce.loss;
    rep.lr = state.lr_at(state.iteration);
    return rep;
}

TrainStepReport train_step_dann(MitosisClassifier& model, DomainBranch& branch, const Batch& class_batch,
                                const Batch& domain_batch, long iteration, OptimizerState& state,
                                const TrainingConfig& config) {
    TrainStepReport rep = train_step_baseline(model, class_batch, state);

    const double alpha = alpha_at(iteration, config);
    const auto model_params = model.parameters();
    const auto branch_params = branch.parameters();

    ForwardTrace trace = model.forward(domain_batch.input, Mode::Train);
    branch.forward(trace, Mode::Train);
    const auto ce_d = ops::softmax_cross_entropy(branch.logits(), domain_batch.labels);
    if (!std::isfinite(ce_d.loss))
        throw TrainingError("non-finite domain loss at iteration " + std::to_string(iteration));
    const Tensor dlogits = ops::softmax_cross_entropy_backward(ce_d.probabilities, domain_batch.labels);

    if (config.shared_domain_forward) {
        // both gradients from one pass, updates applied afterwards in order
        const auto tap_grads = branch.backward(dlogits);
        model.backward_from_taps(tap_grads.tap2, tap_grads.tap4);
        apply_plain_update(branch_params, -config.lambda_d);          // Eq. 2
        apply_plain_update(model_params, alpha * config.lambda_d);    // Eq. 3
    } else {
        branch.backward(dlogits);
        model.zero_grads();  // discard the tap gradients implied by this pass
        apply_plain_update(branch_params, -config.lambda_d);          // Eq. 2

        ForwardTrace trace2 = model.forward(domain_batch.input, Mode::Train);
        branch.forward(trace2, Mode::Train);
        const auto ce2 = ops::softmax_cross_entropy(branch.logits(), domain_batch.labels);
        const auto tap_grads = branch.backward(ops::softmax_cross_entropy_backward(ce2.probabilities, domain_batch.labels));
        branch.zero_grads();
        model.backward_from_taps(tap_grads.tap2, tap_grads.tap4);
        apply_plain_update(model_params, alpha * config.lambda_d);    // Eq. 3
    }

    rep.loss_d = ce_d.loss;
    rep.alpha = alpha;
    return rep;
}

TrainResult run_training(const TrainingConfig& config, const Dataset& dataset, const std::vector<MinedCenter>& mined) {
    const Dataset* active = &dataset;
    Dataset normalized;
    if (config.stain_normalization) {
        normalized = dataset;
        const int failures = normalize_split(normalized, Split::Train, config.reference);
        if (failures > 0) ASTAIN_LOG_INFO("staining normalization skipped %d training image(s)", failures);
        active = &normalized;
    }

    const int train_domains = active->num_domains(Split::Train);
    config.validate(train_domains);
    if (active->split_cases(Split::Train).empty()) throw TrainingError("dataset has no training split");

    PatchPool pool(*active, config);
    pool.add_mined(mined);

    TrainResult result{MitosisClassifier(model_seed(config.seed)), std::nullopt, {}};
    if (config.dann) result.branch.emplace(train_domains, branch_seed(config.seed));

    OptimizerState state;
    state.learning_rate = config.base_lr;
    state.momentum = config.momentum;
    state.weight_decay = config.weight_decay;
    state.lr_decay = config.lr_decay;
    state.lr_decay_interval = config.lr_decay_interval;

    Rng class_rng(mix_seed(config.seed, kSaltClassBatch));
    Rng domain_rng(mix_seed(config.seed, kSaltDomainBatch));

    for (long i = 0; i < config.total_iterations; ++i) {
        state.iteration = i;
        if (config.dann && i % config.cycle_length == 0)
            result.branch->reinit(reinit_seed(config.seed, i / config.cycle_length));

        const Batch class_batch = pool.class_balanced_batch(config.batch_size, class_rng);
        TrainStepReport rep;
        if (config.dann) {
            const Batch domain_batch = pool.domain_balanced_batch(config.batch_size, domain_rng);
            rep = train_step_dann(result.model, *result.branch, class_batch, domain_batch, i, state, config);
        } else {
            rep = train_step_baseline(result.model, class_batch, state);
        }
        result.log.push_back(rep);
        if (rep.iteration % 200 == 0)
            ASTAIN_LOG_DEBUG("iteration %ld: L_M=%.4f%s", rep.iteration, rep.loss_m,
                             rep.loss_d ? (" L_D=" + std::to_string(*rep.loss_d)).c_str() : "");
    }

    if (!config.checkpoint_path.empty())
        save_checkpoint(result.model, result.branch ? &*result.branch : nullptr, config.checkpoint_path);
    if (!config.log_path.empty()) write_training_log(result.log, config.log_path);
    return result;
}

void write_training_log(const std::vector<TrainStepReport>& log, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw DatasetError("cannot open '" + path + "' for writing");
    os << "iteration,L_M,L_D,alpha,lr\n";
    char buf[128];
    for (const auto& rep : log) {
        if (rep.loss_d)
            std::snprintf(buf, sizeof buf, "%ld,%.10g,%.10g,%.10g,%.10g\n", rep.iteration, rep.loss_m, *rep.loss_d,
                          rep.alpha, rep.lr);
        else
            std::snprintf(buf, sizeof buf, "%ld,%.10g,,,%.10g\n", rep.iteration, rep.loss_m, rep.lr);
        os << buf;
    }
    if (!os) throw DatasetError("write to '" + path + "' failed");
}

std::vector<PatchSample> mine_hard_negatives(const MitosisClassifier& model, const Dataset& dataset, int count,
                                             double exclusion_radius, Rng& rng) {
    if (count < 1) throw ValueError("hard-negative count must be at least 1");

    struct Cell {
        int case_index, image_index, row, col;
    };
    std::vector<Cell> cells;
    std::vector<double> weights;
    for (int ci = 0; ci < static_cast<int>(dataset.cases.size()); ++ci) {
        const CaseRecord& rec = dataset.cases[static_cast<size_t>(ci)];
        if (rec.split != Split::Train) continue;
        for (int ii = 0; ii < static_cast<int>(rec.images.size()); ++ii) {
            const AnnotatedImage& ai = rec.images[static_cast<size_t>(ii)];
            const ProbabilityMap map = dense_inference(model, ai.image);
            for (int i = 0; i < map.rows; ++i) {
                for (int j = 0; j < map.cols; ++j) {
                    const auto [pr, pc] = map.pixel_of(i, j);
                    bool excluded = false;
                    for (const auto& a : ai.annotations) {
                        const double dr = pr - a[0], dc = pc - a[1];
                        if (dr * dr + dc * dc <= exclusion_radius * exclusion_radius) {
                            excluded = true;
                            break;
                        }
                    }
                    if (excluded) continue;
                    const double w = map.at(i, j);
                    if (w <= 0.0) continue;
                    cells.push_back({ci, ii, pr, pc});
                    weights.push_back(w);
                }
            }
        }
    }

    std::vector<PatchSample> out;
    for (size_t pick : weighted_sample_without_replacement(std::move(weights), count, rng)) {
        const Cell& cell = cells[pick];
        const CaseRecord& rec = dataset.cases[static_cast<size_t>(cell.case_index)];
        PatchSample s;
        s.patch = crop_patch(rec.images[static_cast<size_t>(cell.image_index)].image, cell.row, cell.col);
        s.y = 0;
        s.d = rec.domain;
        s.case_id = rec.case_id;
        s.image_index = cell.image_index;
        s.row = cell.row;
        s.col = cell.col;
        out.push_back(std::move(s));
    }
    return out;
}

void write_mined_csv(const std::vector<PatchSample>& samples, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw DatasetError("cannot open '" + path + "' for writing");
    os << "case,image,row,col\n";
    for (const auto& s : samples) os << s.case_id << "," << s.image_index << "," << s.row << "," << s.col << "\n";
    if (!os) throw DatasetError("write to '" + path + "' failed");
}

std::vector<MinedCenter> read_mined_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw DatasetError("cannot open '" + path + "'");
    std::vector<MinedCenter> out;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (lineno == 1 || line.empty()) continue;  // header
        MinedCenter m;
        size_t p0 = line.find(',');
        size_t p1 = p0 == std::string::npos ? std::string::npos : line.find(',', p0 + 1);
        size_t p2 = p1 == std::string::npos ? std::string::npos : line.find(',', p1 + 1);
        if (p2 == std::string::npos)
            throw DatasetError(path + ":" + std::to_string(lineno) + ": expected 'case,image,row,col'");
        try {
            m.case_id = line.substr(0, p0);
            m.image_index = std::stoi(line.substr(p0 + 1, p1 - p0 - 1));
            m.row = std::stoi(line.substr(p1 + 1, p2 - p1 - 1));
            m.col = std::stoi(line.substr(p2 + 1));
        } catch (const std::exception&) {
            throw DatasetError(path + ":" + std::to_string(lineno) + ": expected 'case,image,row,col'");
        }
        out.push_back(std::move(m));
    }
    return out;
}

std::vector<PatchSample> sample_labeled_patches(const Dataset& dataset, Split split, int per_domain, uint64_t seed) {
    if (per_domain < 1) throw ValueError("per-domain patch count must be at least 1");
    Rng rng(seed);

    struct Source {
        int case_index, image_index;
    };
    std::map<int, std::vector<Source>> images_by_domain;
    for (int ci = 0; ci < static_cast<int>(dataset.cases.size()); ++ci) {
        const CaseRecord& rec = dataset.cases[static_cast<size_t>(ci)];
        if (rec.split != split) continue;
        for (int ii = 0; ii < static_cast<int>(rec.images.size()); ++ii) images_by_domain[rec.domain].push_back({ci, ii});
    }
    if (images_by_domain.empty()) throw DatasetError("split '" + to_string(split) + "' has no images");

    std::vector<PatchSample> out;
    for (const auto& [domain, sources] : images_by_domain) {
        struct Center {
            int case_index, image_index, row, col;
        };
        std::vector<Center> positives;
        for (const Source& src : sources) {
            const CaseRecord& rec = dataset.cases[static_cast<size_t>(src.case_index)];
            for (const auto& a : rec.images[static_cast<size_t>(src.image_index)].annotations)
                positives.push_back({src.case_index, src.image_index, a[0], a[1]});
        }
        // partial Fisher-Yates for a random positive subset
        const int pos_take = std::min<int>(per_domain / 2, static_cast<int>(positives.size()));
        for (int k = 0; k < pos_take; ++k) {
            const int j = rng.uniform_int(k, static_cast<int>(positives.size()) - 1);
            std::swap(positives[static_cast<size_t>(k)], positives[static_cast<size_t>(j)]);
        }
        for (int k = 0; k < pos_take; ++k) {
            const Center& c = positives[static_cast<size_t>(k)];
            const CaseRecord& rec = dataset.cases[static_cast<size_t>(c.case_index)];
            PatchSample s;
            s.patch = crop_patch(rec.images[static_cast<size_t>(c.image_index)].image, c.row, c.col);
            s.y = 1;
            s.d = domain;
            s.case_id = rec.case_id;
            s.image_index = c.image_index;
            s.row = c.row;
            s.col = c.col;
            out.push_back(std::move(s));
        }

        const int neg_take = per_domain - pos_take;
        for (int k = 0; k < neg_take; ++k) {
            for (int tries = 0; tries < 200; ++tries) {
                const Source& src = sources[static_cast<size_t>(rng.uniform_int(0, static_cast<int>(sources.size()) - 1))];
                const CaseRecord& rec = dataset.cases[static_cast<size_t>(src.case_index)];
                const AnnotatedImage& ai = rec.images[static_cast<size_t>(src.image_index)];
                if (ai.image.height < kPatchSize || ai.image.width < kPatchSize) continue;
                const int r = rng.uniform_int(kPatchMargin, ai.image.height - 1 - kPatchMargin);
                const int c = rng.uniform_int(kPatchMargin, ai.image.width - 1 - kPatchMargin);
                bool clear = true;
                for (const auto& a : ai.annotations) {
                    const double dr = r - a[0], dc = c - a[1];
                    if (dr * dr + dc * dc < 15.0 * 15.0) {
                        clear = false;
                        break;
                    }
                }
                if (!clear) continue;
                PatchSample s;
                s.patch = crop_patch(ai.image, r, c);
                s.y = 0;
                s.d = domain;
                s.case_id = rec.case_id;
                s.image_index = src.image_index;
                s.row = r;
                s.col = c;
                out.push_back(std::move(s));
                break;
            }
        }
    }
    return out;
}

int normalize_split(Dataset& dataset, Split split, const StainModel& reference) {
    int failures = 0;
    for (auto& rec : dataset.cases) {
        if (rec.split != split) continue;
        for (auto& ai : rec.images) {
            try {
                ai.image = normalize_image(ai.image, reference);
            } catch (const Error& e) {
                ++failures;
                ASTAIN_LOG_INFO("staining normalization skipped '%s': %s", ai.image_path.c_str(), e.what());
            }
        }
    }
    return failures;
}

}  // namespace astain
