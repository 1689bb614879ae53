// Copyright (c) 2026 astain contributors
// SPDX-License-Identifier: Apache-2.0

#include "astain/detect.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <deque>
#include <fstream>
#include <set>

namespace astain {

Tensor patches_to_tensor(const std::vector<const RgbImage*>& patches) {
    const int B = static_cast<int>(patches.size());
    if (B == 0) throw ValueError("patches_to_tensor: empty batch");
    Tensor t({B, 3, kPatchSize, kPatchSize});
    for (int b = 0; b < B; ++b) {
        const RgbImage& p = *patches[static_cast<size_t>(b)];
        if (p.height != kPatchSize || p.width != kPatchSize)
            throw ShapeError("patch must be 63x63, got " + std::to_string(p.height) + "x" + std::to_string(p.width));
        for (int ch = 0; ch < 3; ++ch)
            for (int r = 0; r < kPatchSize; ++r)
                for (int c = 0; c < kPatchSize; ++c) t(b, ch, r, c) = p.at(r, c, ch) / 255.0;
    }
    return t;
}

Tensor image_to_tensor(const RgbImage& image) {
    Tensor t({1, 3, image.height, image.width});
    for (int ch = 0; ch < 3; ++ch)
        for (int r = 0; r < image.height; ++r)
            for (int c = 0; c < image.width; ++c) t(0, ch, r, c) = image.at(r, c, ch) / 255.0;
    return t;
}

namespace {

Tensor crop_to_even(const Tensor& x) {
    const int B = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
    const int EH = H - (H % 2), EW = W - (W % 2);
    if (EH == H && EW == W) return x;
    Tensor out({B, C, EH, EW});
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c)
            for (int r = 0; r < EH; ++r)
                std::memcpy(out.data() + ((static_cast<int64_t>(b) * C + c) * EH + r) * EW,
                            x.data() + ((static_cast<int64_t>(b) * C + c) * H + r) * W,
                            sizeof(double) * static_cast<size_t>(EW));
    return out;
}

Tensor run_conv_stack(const MitosisClassifier& model, Tensor x) {
    for (const ConvBlock* blk : {&model.block1, &model.block2, &model.block3, &model.block4}) {
        x = ops::conv2d(x, blk->conv.weight.value, blk->conv.bias.value);
        x = ops::batchnorm_infer(x, blk->bn.gamma.value, blk->bn.beta.value, blk->bn.state);
        x = ops::relu(x);
        x = crop_to_even(x);
        x = ops::maxpool2x2(x).output;
    }
    return x;
}

}  // namespace

ProbabilityMap dense_inference(const MitosisClassifier& model, const RgbImage& image) {
    if (image.height < kPatchSize || image.width < kPatchSize)
        throw ShapeError("dense inference needs at least a 63x63 image, got " + std::to_string(image.height) + "x" +
                         std::to_string(image.width));

    const Tensor grid = run_conv_stack(model, image_to_tensor(image));  // [1, 16, gh, gw]
    const int gh = grid.shape[2], gw = grid.shape[3];

    ProbabilityMap map;
    map.rows = gh - 1;
    map.cols = gw - 1;
    map.stride = 16;
    map.offset = kPatchMargin;
    map.values.assign(static_cast<size_t>(map.rows) * map.cols, 0.0);

    // fc head per 2x2 window, gathered in the patch flatten order (c, u, v)
    const int F = MitosisClassifier::kFeatureWidth;
    const Tensor& w1 = model.fc1.weight.value;
    const Tensor& b1 = model.fc1.bias.value;
    const Tensor& w2 = model.fc2.weight.value;
    const Tensor& b2 = model.fc2.bias.value;
    const ops::BatchNormState& st = model.bn_fc.state;
    if (!st.initialized) throw ValueError("batchnorm: infer mode requested before running statistics were initialized");

#pragma omp parallel for collapse(2) schedule(static)
    for (int i = 0; i < map.rows; ++i) {
        for (int j = 0; j < map.cols; ++j) {
            double feat[MitosisClassifier::kFeatureWidth];
            int n = 0;
            for (int c = 0; c < 16; ++c)
                for (int u = 0; u < 2; ++u)
                    for (int v = 0; v < 2; ++v) feat[n++] = grid(0, c, i + u, j + v);

            double hidden[MitosisClassifier::kFeatureWidth];
            for (int m = 0; m < F; ++m) {
                double acc = b1(m);
                const double* wr = w1.data() + static_cast<int64_t>(m) * F;
                for (int k = 0; k < F; ++k) acc += feat[k] * wr[k];
                // infer-mode batchnorm, same expression as the kernel
                const double inv_std = 1.0 / std::sqrt(st.running_var(m) + ops::kBatchNormEps);
                const double xh = (acc - st.running_mean(m)) * inv_std;
                const double bn = xh * model.bn_fc.gamma.value(m) + model.bn_fc.beta.value(m);
                hidden[m] = bn > 0.0 ? bn : 0.0;
            }
            double logit[2];
            for (int m = 0; m < 2; ++m) {
                double acc = b2(m);
                const double* wr = w2.data() + static_cast<int64_t>(m) * F;
                for (int k = 0; k < F; ++k) acc += hidden[k] * wr[k];
                logit[m] = acc;
            }
            const double mx = std::max(logit[0], logit[1]);
            const double e0 = std::exp(logit[0] - mx), e1 = std::exp(logit[1] - mx);
            map.at(i, j) = e1 / (e0 + e1);
        }
    }
    return map;
}

std::vector<Detection> local_maxima(const ProbabilityMap& map, double threshold) {
    if (threshold < 0.0 || threshold > 1.0) throw ValueError("local_maxima: threshold must lie in [0, 1]");
    std::vector<Detection> out;
    std::vector<char> visited(static_cast<size_t>(map.rows) * map.cols, 0);
    const int dr8[] = {-1, -1, -1, 0, 0, 1, 1, 1};
    const int dc8[] = {-1, 0, 1, -1, 1, -1, 0, 1};

    for (int i = 0; i < map.rows; ++i) {
        for (int j = 0; j < map.cols; ++j) {
            const size_t idx = static_cast<size_t>(i) * map.cols + j;
            if (visited[idx]) continue;
            const double v = map.at(i, j);
            if (v < threshold) continue;

            // flood the equal-value plateau; (i, j) is its row-major-first cell
            bool is_max = true;
            std::deque<std::pair<int, int>> queue{{i, j}};
            visited[idx] = 1;
            while (!queue.empty()) {
                const auto [r, c] = queue.front();
                queue.pop_front();
                for (int k = 0; k < 8; ++k) {
                    const int nr = r + dr8[k], nc = c + dc8[k];
                    if (nr < 0 || nr >= map.rows || nc < 0 || nc >= map.cols) continue;
                    const double nv = map.at(nr, nc);
                    if (nv > v) is_max = false;
                    if (nv == v && !visited[static_cast<size_t>(nr) * map.cols + nc]) {
                        visited[static_cast<size_t>(nr) * map.cols + nc] = 1;
                        queue.emplace_back(nr, nc);
                    }
                }
            }
            if (is_max) {
                const auto [pr, pc] = map.pixel_of(i, j);
                out.push_back({pr, pc, v});
            }
        }
    }
    return out;
}

F1Report finalize_counts(long tp, long fp, long fn) {
    F1Report r;
    r.true_positives = tp;
    r.false_positives = fp;
    r.false_negatives = fn;
    r.precision = (tp + fp) > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
    r.recall = (tp + fn) > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
    r.f1 = (r.precision + r.recall) > 0.0 ? 2.0 * r.precision * r.recall / (r.precision + r.recall) : 0.0;
    return r;
}

F1Report match_detections(std::vector<Detection> detections, const std::vector<std::array<int, 2>>& ground_truth,
                          double radius) {
    if (radius <= 0.0) throw ValueError("match_detections: radius must be positive");
    std::stable_sort(detections.begin(), detections.end(), [](const Detection& a, const Detection& b) {
        if (a.score != b.score) return a.score > b.score;
        if (a.row != b.row) return a.row < b.row;
        return a.col < b.col;
    });
    std::vector<char> claimed(ground_truth.size(), 0);
    long tp = 0;
    const double r2 = radius * radius;
    for (const Detection& det : detections) {
        int best = -1;
        double best_d2 = 0.0;
        for (size_t g = 0; g < ground_truth.size(); ++g) {
            if (claimed[g]) continue;
            const double dr = det.row - ground_truth[g][0];
            const double dc = det.col - ground_truth[g][1];
            const double d2 = dr * dr + dc * dc;
            if (d2 > r2) continue;
            // distance ties break on ground-truth coordinates, which keeps the
            // outcome independent of the ground-truth list order
            if (best < 0 || d2 < best_d2 ||
                (d2 == best_d2 && std::make_pair(ground_truth[g][0], ground_truth[g][1]) <
                                      std::make_pair(ground_truth[static_cast<size_t>(best)][0],
                                                     ground_truth[static_cast<size_t>(best)][1]))) {
                best = static_cast<int>(g);
                best_d2 = d2;
            }
        }
        if (best >= 0) {
            claimed[static_cast<size_t>(best)] = 1;
            ++tp;
        }
    }
    return finalize_counts(tp, static_cast<long>(detections.size()) - tp, static_cast<long>(ground_truth.size()) - tp);
}

OperatingPoint select_threshold(const std::vector<std::vector<Detection>>& detections_per_image,
                                const std::vector<std::vector<std::array<int, 2>>>& gt_per_image, double radius) {
    std::set<double> candidates;
    long total_gt = 0;
    for (const auto& dets : detections_per_image)
        for (const auto& d : dets) candidates.insert(d.score);
    for (const auto& gt : gt_per_image) total_gt += static_cast<long>(gt.size());

    if (candidates.empty()) {
        OperatingPoint op;
        op.threshold = 1.0;
        op.f1 = finalize_counts(0, 0, total_gt).f1;
        op.no_detections = true;
        ASTAIN_LOG_INFO("operating-point selection found no detections at any threshold, returning 1.0");
        return op;
    }

    auto pooled_f1 = [&](double t) {
        long tp = 0, fp = 0, fn = 0;
        for (size_t i = 0; i < detections_per_image.size(); ++i) {
            std::vector<Detection> kept;
            for (const auto& d : detections_per_image[i])
                if (d.score >= t) kept.push_back(d);
            const F1Report r = match_detections(std::move(kept), gt_per_image[i], radius);
            tp += r.true_positives;
            fp += r.false_positives;
            fn += r.false_negatives;
        }
        return finalize_counts(tp, fp, fn).f1;
    };

    OperatingPoint best;
    double best_f1 = -1.0;
    for (double t : candidates) {
        const double f1 = pooled_f1(t);
        if (f1 > best_f1 || (f1 == best_f1 && t > best.threshold)) {
            best_f1 = f1;
            best.threshold = t;
        }
    }
    best.f1 = best_f1;
    return best;
}

OperatingPoint select_operating_point(const MitosisClassifier& model, const Dataset& dataset, Split split,
                                      double radius) {
    std::vector<std::vector<Detection>> dets;
    std::vector<std::vector<std::array<int, 2>>> gts;
    long total_gt = 0;
    for (const CaseRecord* rec : dataset.split_cases(split)) {
        for (const AnnotatedImage& ai : rec->images) {
            dets.push_back(local_maxima(dense_inference(model, ai.image), 0.0));
            gts.push_back(ai.annotations);
            total_gt += static_cast<long>(ai.annotations.size());
        }
    }
    if (total_gt == 0)
        throw ValueError("operating-point selection needs at least one annotated mitosis in the " + to_string(split) +
                         " split");
    return select_threshold(dets, gts, radius);
}

F1Report evaluate(const MitosisClassifier& model, const Dataset& dataset, Split split, double threshold,
                  double radius) {
    long tp = 0, fp = 0, fn = 0;
    for (const CaseRecord* rec : dataset.split_cases(split)) {
        for (const AnnotatedImage& ai : rec->images) {
            const auto dets = local_maxima(dense_inference(model, ai.image), threshold);
            const F1Report r = match_detections(dets, ai.annotations, radius);
            tp += r.true_positives;
            fp += r.false_positives;
            fn += r.false_negatives;
        }
    }
    return finalize_counts(tp, fp, fn);
}

void write_probability_map(const ProbabilityMap& map, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DatasetError("cannot open '" + path + "' for writing");
    os << "PMAP v1\n" << map.rows << " " << map.cols << " " << map.stride << " " << map.offset << "\n";
    for (double v : map.values) {
        const float f = static_cast<float>(v);
        uint32_t bits;
        std::memcpy(&bits, &f, 4);
        unsigned char b[4];
        for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xff);
        os.write(reinterpret_cast<const char*>(b), 4);
    }
    if (!os) throw DatasetError("write to '" + path + "' failed");
}

ProbabilityMap read_probability_map(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DatasetError("cannot open '" + path + "'");
    std::string header;
    std::getline(is, header);
    if (header != "PMAP v1") throw DatasetError("'" + path + "' is not a PMAP v1 file");
    ProbabilityMap map;
    is >> map.rows >> map.cols >> map.stride >> map.offset;
    is.get();  // newline after the header integers
    if (!is || map.rows <= 0 || map.cols <= 0) throw DatasetError("'" + path + "': malformed PMAP header");
    map.values.resize(static_cast<size_t>(map.rows) * map.cols);
    for (double& v : map.values) {
        unsigned char b[4];
        is.read(reinterpret_cast<char*>(b), 4);
        if (is.gcount() != 4) throw DatasetError("'" + path + "': truncated PMAP payload");
        uint32_t bits = 0;
        for (int i = 0; i < 4; ++i) bits |= static_cast<uint32_t>(b[i]) << (8 * i);
        float f;
        std::memcpy(&f, &bits, 4);
        v = f;
    }
    return map;
}

FeatureTable compute_features(MitosisClassifier& model, const std::vector<PatchSample>& patches) {
    FeatureTable table;
    const int chunk = 64;
    for (size_t start = 0; start < patches.size(); start += chunk) {
        const size_t end = std::min(patches.size(), start + chunk);
        std::vector<const RgbImage*> imgs;
        for (size_t i = start; i < end; ++i) imgs.push_back(&patches[i].patch);
        const Tensor batch = patches_to_tensor(imgs);
        const ForwardTrace trace = model.forward(batch, Mode::Infer);
        for (size_t i = start; i < end; ++i) {
            std::array<double, MitosisClassifier::kFeatureWidth> row{};
            const int b = static_cast<int>(i - start);
            int n = 0;
            for (int c = 0; c < 16; ++c)
                for (int u = 0; u < 2; ++u)
                    for (int v = 0; v < 2; ++v) row[static_cast<size_t>(n++)] = trace.tap4(b, c, u, v);
            table.features.push_back(row);
            table.y.push_back(patches[i].y);
            table.d.push_back(patches[i].d);
            table.case_ids.push_back(patches[i].case_id);
            table.image_indices.push_back(patches[i].image_index);
        }
    }
    return table;
}

void write_feature_csv(const FeatureTable& table, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw DatasetError("cannot open '" + path + "' for writing");
    os << "case,image,y,d";
    for (int k = 0; k < MitosisClassifier::kFeatureWidth; ++k) os << ",f" << k;
    os << "\n";
    char buf[32];
    for (size_t i = 0; i < table.size(); ++i) {
        os << table.case_ids[i] << "," << table.image_indices[i] << "," << table.y[i] << "," << table.d[i];
        for (int k = 0; k < MitosisClassifier::kFeatureWidth; ++k) {
            std::snprintf(buf, sizeof buf, "%.17g", table.features[i][static_cast<size_t>(k)]);
            os << "," << buf;
        }
        os << "\n";
    }
    if (!os) throw DatasetError("write to '" + path + "' failed");
}

double domain_probe(const FeatureTable& train, const FeatureTable& test) {
    if (train.size() == 0 || test.size() == 0) throw ValueError("domain probe needs non-empty feature tables");
    std::set<int> train_domains(train.d.begin(), train.d.end());
    std::set<int> test_domains(test.d.begin(), test.d.end());
    if (train_domains.size() < 2 || test_domains.size() < 2)
        throw ValueError("domain probe needs at least 2 domains in both splits");

    const int F = MitosisClassifier::kFeatureWidth;
    int num_domains = 0;
    for (int d : train.d) num_domains = std::max(num_domains, d + 1);
    for (int d : test.d) num_domains = std::max(num_domains, d + 1);

    // z-score with train statistics
    std::vector<double> mu(static_cast<size_t>(F), 0.0), sd(static_cast<size_t>(F), 0.0);
    for (const auto& row : train.features)
        for (int k = 0; k < F; ++k) mu[static_cast<size_t>(k)] += row[static_cast<size_t>(k)];
    for (double& m : mu) m /= static_cast<double>(train.size());
    for (const auto& row : train.features)
        for (int k = 0; k < F; ++k) {
            const double dval = row[static_cast<size_t>(k)] - mu[static_cast<size_t>(k)];
            sd[static_cast<size_t>(k)] += dval * dval;
        }
    for (double& s : sd) s = std::sqrt(s / static_cast<double>(train.size()));
    for (double& s : sd)
        if (s < 1e-12) s = 1.0;

    auto standardized = [&](const FeatureTable& t) {
        std::vector<double> out(t.size() * static_cast<size_t>(F));
        for (size_t i = 0; i < t.size(); ++i)
            for (int k = 0; k < F; ++k)
                out[i * static_cast<size_t>(F) + static_cast<size_t>(k)] =
                    (t.features[i][static_cast<size_t>(k)] - mu[static_cast<size_t>(k)]) / sd[static_cast<size_t>(k)];
        return out;
    };
    const std::vector<double> xtr = standardized(train);
    const std::vector<double> xte = standardized(test);

    const int n = static_cast<int>(train.size());
    std::vector<double> w(static_cast<size_t>(num_domains) * F, 0.0), b(static_cast<size_t>(num_domains), 0.0);
    std::vector<double> vw(w.size(), 0.0), vb(b.size(), 0.0);
    const double lr = 0.01, mom = 0.9;

    std::vector<double> logits(static_cast<size_t>(num_domains));
    std::vector<double> gw(w.size()), gb(b.size());
    for (int epoch = 0; epoch < 200; ++epoch) {
        std::fill(gw.begin(), gw.end(), 0.0);
        std::fill(gb.begin(), gb.end(), 0.0);
        for (int i = 0; i < n; ++i) {
            const double* x = xtr.data() + static_cast<size_t>(i) * F;
            double mx = -1e300;
            for (int k = 0; k < num_domains; ++k) {
                double acc = b[static_cast<size_t>(k)];
                const double* wr = w.data() + static_cast<size_t>(k) * F;
                for (int f = 0; f < F; ++f) acc += wr[f] * x[f];
                logits[static_cast<size_t>(k)] = acc;
                mx = std::max(mx, acc);
            }
            double s = 0.0;
            for (int k = 0; k < num_domains; ++k) s += std::exp(logits[static_cast<size_t>(k)] - mx);
            for (int k = 0; k < num_domains; ++k) {
                const double p = std::exp(logits[static_cast<size_t>(k)] - mx) / s;
                const double g = (p - (k == train.d[static_cast<size_t>(i)] ? 1.0 : 0.0)) / n;
                gb[static_cast<size_t>(k)] += g;
                double* gwr = gw.data() + static_cast<size_t>(k) * F;
                for (int f = 0; f < F; ++f) gwr[f] += g * x[f];
            }
        }
        for (size_t i = 0; i < w.size(); ++i) {
            vw[i] = mom * vw[i] + gw[i];
            w[i] -= lr * vw[i];
        }
        for (size_t i = 0; i < b.size(); ++i) {
            vb[i] = mom * vb[i] + gb[i];
            b[i] -= lr * vb[i];
        }
    }

    long correct = 0;
    for (size_t i = 0; i < test.size(); ++i) {
        const double* x = xte.data() + i * static_cast<size_t>(F);
        int arg = 0;
        double best = -1e300;
        for (int k = 0; k < num_domains; ++k) {
            double acc = b[static_cast<size_t>(k)];
            const double* wr = w.data() + static_cast<size_t>(k) * F;
            for (int f = 0; f < F; ++f) acc += wr[f] * x[f];
            if (acc > best) {
                best = acc;
                arg = k;
            }
        }
        if (arg == test.d[i]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(test.size());
}

}  // namespace astain
