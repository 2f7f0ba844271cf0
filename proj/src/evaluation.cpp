#include "attnfuse/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "attnfuse/errors.hpp"
#include "attnfuse/io.hpp"

namespace attnfuse {

void ConfusionMatrix::merge(const ConfusionMatrix& o) {
    if (num_classes != o.num_classes)
        throw std::invalid_argument("ConfusionMatrix::merge: class count mismatch");
    for (std::size_t i = 0; i < counts.size(); ++i) counts[i] += o.counts[i];
}

std::int64_t ConfusionMatrix::total() const {
    std::int64_t t = 0;
    for (std::int64_t c : counts) t += c;
    return t;
}

SegMask pseudo_labels(const Tensor3& attn) {
    SegMask mask(attn.height, attn.width);
    const std::size_t hw = attn.plane();
    for (std::size_t i = 0; i < hw; ++i) {
        int best = 0;
        double best_v = attn.data[i];
        for (int c = 1; c < attn.channels; ++c) {
            const double v = attn.channel(c)[i];
            if (v > best_v) {
                best_v = v;
                best = c;
            }
        }
        mask.ids[i] = best;
    }
    return mask;
}

ConfusionMatrix confusion(const SegMask& pred, const SegMask& gt, int k) {
    if (pred.height != gt.height || pred.width != gt.width) {
        throw std::invalid_argument("confusion: mask size mismatch " +
                                    std::to_string(pred.height) + "x" +
                                    std::to_string(pred.width) + " vs " +
                                    std::to_string(gt.height) + "x" + std::to_string(gt.width));
    }
    ConfusionMatrix cm(k + 1);
    for (std::size_t i = 0; i < gt.ids.size(); ++i) cm.at(gt.ids[i], pred.ids[i]) += 1;
    return cm;
}

double miou(const ConfusionMatrix& cm) {
    const int n = cm.num_classes;
    double sum = 0.0;
    int used = 0;
    for (int c = 0; c < n; ++c) {
        std::int64_t row = 0, col = 0;
        for (int j = 0; j < n; ++j) {
            row += cm.at(c, j);
            col += cm.at(j, c);
        }
        const std::int64_t inter = cm.at(c, c);
        const std::int64_t uni = row + col - inter;
        if (uni == 0) continue; // class absent from both pred and gt
        sum += static_cast<double>(inter) / static_cast<double>(uni);
        ++used;
    }
    return used == 0 ? 0.0 : 100.0 * sum / used;
}

double miou(const SegMask& pred, const SegMask& gt, int k) {
    return miou(confusion(pred, gt, k));
}

double evaluate_model(const BackboneParams& params, const std::vector<Sample>& split,
                      int threads) {
    if (split.empty()) return 0.0;
    if (threads <= 0) threads = default_thread_count();
    const int k = params.num_classes();
    std::vector<ConfusionMatrix> parts(split.size(), ConfusionMatrix(k + 1));
    parallel_for(static_cast<int>(split.size()), threads, [&](int i) {
        const SegMask pred = pseudo_labels(forward(params, split[i].image).attn);
        parts[i] = confusion(pred, split[i].mask, k);
    });
    ConfusionMatrix merged(k + 1);
    for (const auto& cm : parts) merged.merge(cm);
    return miou(merged);
}

std::vector<double> per_image_miou(const BackboneParams& params,
                                   const std::vector<Sample>& split, int threads) {
    if (threads <= 0) threads = default_thread_count();
    const int k = params.num_classes();
    std::vector<double> out(split.size(), 0.0);
    parallel_for(static_cast<int>(split.size()), threads, [&](int i) {
        const SegMask pred = pseudo_labels(forward(params, split[i].image).attn);
        out[i] = miou(pred, split[i].mask, k);
    });
    return out;
}

double AblationReport::median(const std::string& condition) const {
    const auto it = std::find(conditions.begin(), conditions.end(), condition);
    if (it == conditions.end())
        throw std::invalid_argument("no ablation condition '" + condition + "'");
    std::vector<double> v = miou[static_cast<std::size_t>(it - conditions.begin())];
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

namespace {

struct Condition {
    std::string name;
    std::vector<double> scales;
    bool reactivation = true;
    bool pretrained_only = false;
};

std::vector<Condition> ablation_conditions() {
    return {
        {"pretrained", {}, true, true},
        {"single-0.5", {0.5}, true, false},
        {"single-1", {1.0}, true, false},
        {"single-1.5", {1.5}, true, false},
        {"single-2", {2.0}, true, false},
        {"fusion-small", {0.5, 1.0}, true, false},
        {"fusion-large-1", {1.0, 1.5}, true, false},
        {"fusion-large-2", {1.0, 2.0}, true, false},
        {"fusion-full", {0.5, 1.0, 1.5, 2.0}, true, false},
        {"no-reactivation", {0.5, 1.0, 1.5, 2.0}, false, false},
    };
}

} // namespace

AblationReport run_ablation_suite(const DatasetManifest& dataset, const TrainConfig& base,
                                  const std::vector<std::uint64_t>& seeds) {
    if (seeds.size() < 3) throw ConfigError("run_ablation_suite: need at least 3 seeds");
    const std::vector<Sample> train = load_split(dataset, "train");
    const std::vector<Sample> val = load_split(dataset, "val");
    if (train.empty() || val.empty())
        throw DataError("run_ablation_suite: dataset needs non-empty train and val splits");

    const auto conditions = ablation_conditions();
    AblationReport report;
    for (const auto& c : conditions) report.conditions.push_back(c.name);
    report.seeds = seeds;
    report.miou.assign(conditions.size(), std::vector<double>(seeds.size(), 0.0));
    char hash[20];
    std::snprintf(hash, sizeof(hash), "%016llx",
                  static_cast<unsigned long long>(fnv1a(base.canonical_text())));
    report.config_hash = hash;

    // One pretraining run per seed, shared by every condition of that seed.
    std::vector<BackboneParams> pretrained(seeds.size());
    parallel_for(static_cast<int>(seeds.size()), default_thread_count(), [&](int si) {
        Hyperparams hp = base.pretrain_hp();
        hp.seed = seeds[si];
        pretrained[si] = pretrain(train, hp);
    });

    struct Job {
        int condition;
        int seed_idx;
    };
    std::vector<Job> jobs;
    for (int ci = 0; ci < static_cast<int>(conditions.size()); ++ci)
        for (int si = 0; si < static_cast<int>(seeds.size()); ++si) jobs.push_back({ci, si});

    parallel_for(static_cast<int>(jobs.size()), default_thread_count(), [&](int j) {
        const Condition& cond = conditions[jobs[j].condition];
        const int si = jobs[j].seed_idx;
        if (cond.pretrained_only) {
            report.miou[jobs[j].condition][si] = evaluate_model(pretrained[si], val, 1);
            return;
        }
        Hyperparams hp = base.selftrain_hp();
        hp.seed = seeds[si];
        hp.scales = cond.scales;
        SelfTrainOptions opts;
        opts.reactivation = cond.reactivation;
        opts.threads = 1; // jobs are the parallel unit
        const BackboneParams student = self_train(pretrained[si], train, hp, opts);
        report.miou[jobs[j].condition][si] = evaluate_model(student, val, 1);
    });
    return report;
}

std::string ablation_csv(const AblationReport& report) {
    std::string csv = "condition,seed,miou\r\n";
    for (std::size_t ci = 0; ci < report.conditions.size(); ++ci) {
        for (std::size_t si = 0; si < report.seeds.size(); ++si) {
            csv += report.conditions[ci] + "," + std::to_string(report.seeds[si]) + "," +
                   fmt_double(report.miou[ci][si]) + "\r\n";
        }
    }
    return csv;
}

std::string ablation_summary(const AblationReport& report) {
    std::string out = "config_hash " + report.config_hash + "\n";
    out += "condition          per-seed mIoU (%)            median\n";
    for (std::size_t ci = 0; ci < report.conditions.size(); ++ci) {
        char line[160];
        std::string per_seed;
        for (double v : report.miou[ci]) {
            char cell[24];
            std::snprintf(cell, sizeof(cell), "%8.3f", v);
            per_seed += cell;
        }
        std::snprintf(line, sizeof(line), "%-18s %s %10.3f\n", report.conditions[ci].c_str(),
                      per_seed.c_str(), report.median(report.conditions[ci]));
        out += line;
    }
    return out;
}

} // namespace attnfuse
