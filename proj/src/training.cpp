#include "attnfuse/training.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "attnfuse/errors.hpp"
#include "attnfuse/geometry.hpp"
#include "attnfuse/io.hpp"
#include "attnfuse/losses.hpp"

namespace attnfuse {

namespace {

constexpr std::uint64_t kSamplerSeedMix = 0x9e3779b97f4a7c15ull;
constexpr std::uint64_t kAugSeedMix = 0xbf58476d1ce4e5b9ull;

std::vector<double> parse_scales(const std::string& value, const std::string& what) {
    std::vector<double> scales;
    std::stringstream ss(value);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            const double s = std::stod(item, &used);
            while (used < item.size() && std::isspace(static_cast<unsigned char>(item[used])))
                ++used;
            if (used != item.size()) throw std::invalid_argument(item);
            scales.push_back(s);
        } catch (const std::exception&) {
            throw ConfigError(what + ": bad scale entry '" + item + "'");
        }
    }
    if (scales.empty()) throw ConfigError(what + ": scales must be non-empty");
    return scales;
}

double parse_double(const std::string& value, const std::string& key, const std::string& what) {
    try {
        std::size_t used = 0;
        const double v = std::stod(value, &used);
        if (used != value.size()) throw std::invalid_argument(value);
        return v;
    } catch (const std::exception&) {
        throw ConfigError(what + ": bad numeric value for '" + key + "': " + value);
    }
}

std::int64_t parse_int(const std::string& value, const std::string& key,
                       const std::string& what) {
    try {
        std::size_t used = 0;
        const std::int64_t v = std::stoll(value, &used);
        if (used != value.size()) throw std::invalid_argument(value);
        return v;
    } catch (const std::exception&) {
        throw ConfigError(what + ": bad integer value for '" + key + "': " + value);
    }
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

} // namespace

Hyperparams TrainConfig::pretrain_hp() const {
    Hyperparams hp;
    hp.alpha = alpha;
    hp.thr = thr;
    hp.scales = scales;
    hp.learning_rate = lr;
    hp.momentum = momentum;
    hp.weight_decay = weight_decay;
    hp.iterations = iters_pretrain;
    hp.batch_size = batch;
    hp.seed = seed;
    return hp;
}

Hyperparams TrainConfig::selftrain_hp() const {
    Hyperparams hp = pretrain_hp();
    hp.iterations = iters_selftrain;
    return hp;
}

std::string TrainConfig::canonical_text() const {
    std::string s;
    s += "alpha = " + fmt_double(alpha) + "\n";
    s += "thr = " + fmt_double(thr) + "\n";
    s += "scales = ";
    for (std::size_t i = 0; i < scales.size(); ++i)
        s += (i ? "," : "") + fmt_double(scales[i]);
    s += "\n";
    s += "lr = " + fmt_double(lr) + "\n";
    s += "momentum = " + fmt_double(momentum) + "\n";
    s += "weight_decay = " + fmt_double(weight_decay) + "\n";
    s += "iters_pretrain = " + std::to_string(iters_pretrain) + "\n";
    s += "iters_selftrain = " + std::to_string(iters_selftrain) + "\n";
    s += "batch = " + std::to_string(batch) + "\n";
    s += "seed = " + std::to_string(seed) + "\n";
    s += "data_root = " + data_root + "\n";
    s += "out_dir = " + out_dir + "\n";
    return s;
}

TrainConfig parse_config(const std::string& text, const std::string& what) {
    TrainConfig cfg;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string where = what + ":" + std::to_string(lineno);
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError(where + ": expected 'key = value'");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key == "alpha") cfg.alpha = parse_double(value, key, where);
        else if (key == "thr") cfg.thr = parse_double(value, key, where);
        else if (key == "scales") cfg.scales = parse_scales(value, where);
        else if (key == "lr") cfg.lr = parse_double(value, key, where);
        else if (key == "momentum") cfg.momentum = parse_double(value, key, where);
        else if (key == "weight_decay") cfg.weight_decay = parse_double(value, key, where);
        else if (key == "iters_pretrain")
            cfg.iters_pretrain = static_cast<int>(parse_int(value, key, where));
        else if (key == "iters_selftrain")
            cfg.iters_selftrain = static_cast<int>(parse_int(value, key, where));
        else if (key == "batch") cfg.batch = static_cast<int>(parse_int(value, key, where));
        else if (key == "seed")
            cfg.seed = static_cast<std::uint64_t>(parse_int(value, key, where));
        else if (key == "data_root") cfg.data_root = value;
        else if (key == "out_dir") cfg.out_dir = value;
        else throw ConfigError(where + ": unknown key '" + key + "'");
    }
    cfg.pretrain_hp().validate();
    if (cfg.iters_pretrain < 0 || cfg.iters_selftrain < 0)
        throw ConfigError(what + ": iteration counts must be >= 0");
    return cfg;
}

TrainConfig load_config(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ConfigError("cannot open config: " + path.string());
    std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return parse_config(text, path.string());
}

std::string loss_log_csv(const std::vector<LossRecord>& log) {
    std::string csv = "iteration,cls,mac,total\r\n";
    for (const auto& r : log) {
        csv += std::to_string(r.iteration) + "," + fmt_double(r.cls) + "," + fmt_double(r.mac) +
               "," + fmt_double(r.total) + "\r\n";
    }
    return csv;
}

namespace {

int next_index(TrainState& state, int n) {
    if (state.cursor >= state.perm.size()) {
        if (state.perm.size() != static_cast<std::size_t>(n)) {
            state.perm.resize(n);
            for (int i = 0; i < n; ++i) state.perm[i] = i;
        }
        std::shuffle(state.perm.begin(), state.perm.end(), state.rng);
        state.cursor = 0;
    }
    return state.perm[state.cursor++];
}

struct MemberResult {
    Gradients grads;
    double cls = 0.0;
    double mac = 0.0;
};

void check_finite_loss(double total, const char* phase, std::int64_t iteration) {
    if (!std::isfinite(total)) {
        throw NumericalError(std::string(phase) + ": non-finite loss at iteration " +
                             std::to_string(iteration));
    }
}

} // namespace

BackboneParams pretrain(const std::vector<Sample>& data, const Hyperparams& hp,
                        std::vector<LossRecord>* log) {
    if (data.empty()) throw DataError("pretrain: dataset is empty");
    const int k = data.front().labels.k();
    BackboneParams student = init_backbone(hp.seed, k);
    TrainState state;
    state.rng.seed(hp.seed ^ kSamplerSeedMix);
    const int threads = default_thread_count();

    for (int it = 0; it < hp.iterations; ++it) {
        std::vector<int> batch(hp.batch_size);
        for (int& idx : batch) idx = next_index(state, static_cast<int>(data.size()));

        std::vector<MemberResult> results(batch.size());
        parallel_for(static_cast<int>(batch.size()), threads, [&](int m) {
            const Sample& sample = data[batch[m]];
            ForwardCache cache;
            const ForwardResult fwd = forward(student, sample.image, &cache);
            const ClsLossResult cls = classification_loss(fwd.pred.logits, sample.labels);
            const Tensor3 zero_attn(fwd.attn.channels, fwd.attn.height, fwd.attn.width);
            results[m].grads = backward(student, cache, zero_attn, cls.grad_logits);
            results[m].cls = cls.value;
        });

        Gradients total = std::move(results[0].grads);
        double cls_sum = results[0].cls;
        for (std::size_t m = 1; m < results.size(); ++m) {
            total.add(results[m].grads);
            cls_sum += results[m].cls;
        }
        total.scale_by(1.0 / static_cast<double>(batch.size()));
        const double cls_mean = cls_sum / static_cast<double>(batch.size());
        check_finite_loss(cls_mean, "pretrain", it);
        sgd_step(student, total, hp);
        if (log) log->push_back({it, cls_mean, 0.0, cls_mean});
    }
    return student;
}

SelfTrainRun self_train_begin(const BackboneParams& pretrained, const Hyperparams& hp) {
    SelfTrainRun run;
    run.state.teacher = pretrained;
    run.state.student = pretrained;
    for (auto& buf : run.state.student.momentum) { // fresh optimizer for the new phase
        std::fill(buf.w.begin(), buf.w.end(), 0.0);
        std::fill(buf.b.begin(), buf.b.end(), 0.0);
    }
    run.state.rng.seed(hp.seed ^ kAugSeedMix);
    return run;
}

void self_train_step(SelfTrainRun& run, const std::vector<Sample>& data, const Hyperparams& hp,
                     const SelfTrainOptions& opts) {
    if (data.empty()) throw DataError("self_train: dataset is empty");
    TrainState& state = run.state;
    const int threads = opts.threads > 0 ? opts.threads : default_thread_count();
    const bool need_targets = hp.alpha > 0.0 || opts.target_observer != nullptr;

    struct Draw {
        int index;
        bool flip;
        double rescale;
    };
    std::vector<Draw> draws(hp.batch_size);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    for (auto& d : draws) {
        d.index = next_index(state, static_cast<int>(data.size()));
        d.flip = uni(state.rng) < 0.5;
        d.rescale = 0.75 + 0.5 * uni(state.rng);
    }

    if (need_targets) {
        std::vector<int> missing;
        for (const auto& d : draws) {
            if (!run.target_cache.count(d.index) &&
                std::find(missing.begin(), missing.end(), d.index) == missing.end())
                missing.push_back(d.index);
        }
        std::vector<Tensor3> fresh(missing.size());
        parallel_for(static_cast<int>(missing.size()), threads, [&](int i) {
            const Sample& sample = data[missing[i]];
            if (opts.reactivation) {
                fresh[i] = make_teacher_target(state.teacher, sample.image, sample.labels, hp).maps;
            } else {
                fresh[i] = denoise(teacher_fused_maps(state.teacher, sample.image, hp),
                                   sample.labels);
            }
        });
        for (std::size_t i = 0; i < missing.size(); ++i)
            run.target_cache.emplace(missing[i], std::move(fresh[i]));
    }

    std::vector<MemberResult> results(draws.size());
    parallel_for(static_cast<int>(draws.size()), threads, [&](int m) {
        const Draw& d = draws[m];
        const Sample& sample = data[d.index];

        Tensor3 view = d.flip ? hflip(sample.image) : sample.image;
        const int vh = scaled_size(d.rescale, sample.image.height);
        const int vw = scaled_size(d.rescale, sample.image.width);
        view = bilinear_resize(view, vh, vw);

        ForwardCache cache;
        const ForwardResult fwd = forward(state.student, view, &cache);
        const ClsLossResult cls = classification_loss(fwd.pred.logits, sample.labels);
        results[m].cls = cls.value;

        if (need_targets) {
            const Tensor3& base = run.target_cache.at(d.index);
            if (opts.target_observer && opts.reactivation)
                opts.target_observer(FusedTarget{base}, sample.labels);
            Tensor3 target = d.flip ? hflip(base) : base;
            target = bilinear_resize(target, vh, vw);
            const MacLossResult mac = mac_loss(target, fwd.attn);
            results[m].mac = mac.value;
            if (hp.alpha > 0.0) {
                results[m].grads = backward(state.student, cache,
                                            scale(mac.grad_attn, hp.alpha), cls.grad_logits);
                return;
            }
        }
        const Tensor3 zero_attn(fwd.attn.channels, fwd.attn.height, fwd.attn.width);
        results[m].grads = backward(state.student, cache, zero_attn, cls.grad_logits);
    });

    Gradients total = std::move(results[0].grads);
    double cls_sum = results[0].cls, mac_sum = results[0].mac;
    for (std::size_t m = 1; m < results.size(); ++m) {
        total.add(results[m].grads);
        cls_sum += results[m].cls;
        mac_sum += results[m].mac;
    }
    total.scale_by(1.0 / static_cast<double>(draws.size()));
    const double cls_mean = cls_sum / static_cast<double>(draws.size());
    const double mac_mean = mac_sum / static_cast<double>(draws.size());
    const double loss = total_loss(cls_mean, mac_mean, hp.alpha);
    check_finite_loss(loss, "self_train", state.iteration);
    sgd_step(state.student, total, hp);
    if (opts.log)
        opts.log->push_back({static_cast<int>(state.iteration), cls_mean, mac_mean, loss});
    state.loss_sum += loss;
    state.loss_count += 1;
    state.iteration += 1;
}

BackboneParams self_train(const BackboneParams& pretrained, const std::vector<Sample>& data,
                          const Hyperparams& hp, const SelfTrainOptions& opts) {
    SelfTrainRun run = self_train_begin(pretrained, hp);
    for (int it = 0; it < hp.iterations; ++it) self_train_step(run, data, hp, opts);
    return run.state.student;
}

// --- train-state checkpointing ----------------------------------------------

namespace {

constexpr char kStateMagic[] = "TSCK1";

std::string hex_bits(double v) {
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(std::bit_cast<std::uint64_t>(v)));
    return buf;
}

double bits_hex(const std::string& s, const std::string& what) {
    if (s.size() != 16) throw DataError(what + ": bad double bit pattern");
    std::uint64_t bits = 0;
    for (char c : s) {
        int d;
        if (c >= '0' && c <= '9') d = c - '0';
        else if (c >= 'a' && c <= 'f') d = c - 'a' + 10;
        else throw DataError(what + ": bad double bit pattern");
        bits = (bits << 4) | static_cast<std::uint64_t>(d);
    }
    return std::bit_cast<double>(bits);
}

std::string expect_field(std::istream& in, const std::string& key, const std::string& what) {
    std::string line;
    if (!std::getline(in, line)) throw DataError(what + ": truncated state header");
    const auto tab = line.find('\t');
    if (tab == std::string::npos || line.substr(0, tab) != key)
        throw DataError(what + ": expected field '" + key + "'");
    return line.substr(tab + 1);
}

} // namespace

void save_train_state(const std::filesystem::path& path, const TrainState& state) {
    std::ostringstream rng_text;
    rng_text << state.rng;
    const std::string student_blob = serialize_params(state.student);
    const std::string teacher_blob = serialize_params(state.teacher);

    std::string out;
    out += std::string(kStateMagic) + "\n";
    out += "iteration\t" + std::to_string(state.iteration) + "\n";
    out += "loss_sum\t" + hex_bits(state.loss_sum) + "\n";
    out += "loss_count\t" + std::to_string(state.loss_count) + "\n";
    out += "cursor\t" + std::to_string(state.cursor) + "\n";
    out += "perm\t";
    for (std::size_t i = 0; i < state.perm.size(); ++i)
        out += (i ? "," : "") + std::to_string(state.perm[i]);
    out += "\n";
    out += "rng\t" + rng_text.str() + "\n";
    out += "student\t" + std::to_string(student_blob.size()) + "\n";
    out += "teacher\t" + std::to_string(teacher_blob.size()) + "\n";
    out += student_blob;
    out += teacher_blob;
    write_text_file(path, out);
}

TrainState load_train_state(const std::filesystem::path& path) {
    const std::string buf = read_text_file(path);
    const std::string what = path.string();
    std::istringstream in(buf);
    std::string magic;
    if (!std::getline(in, magic) || magic != kStateMagic)
        throw DataError(what + ": bad train-state magic");

    TrainState state;
    state.iteration = std::stoll(expect_field(in, "iteration", what));
    state.loss_sum = bits_hex(expect_field(in, "loss_sum", what), what);
    state.loss_count = std::stoll(expect_field(in, "loss_count", what));
    state.cursor = static_cast<std::size_t>(std::stoull(expect_field(in, "cursor", what)));
    const std::string perm = expect_field(in, "perm", what);
    if (!perm.empty()) {
        std::stringstream ps(perm);
        std::string item;
        while (std::getline(ps, item, ',')) state.perm.push_back(std::stoi(item));
    }
    std::istringstream rng_text(expect_field(in, "rng", what));
    rng_text >> state.rng;
    if (rng_text.fail()) throw DataError(what + ": bad rng state");
    const auto student_len = std::stoull(expect_field(in, "student", what));
    const auto teacher_len = std::stoull(expect_field(in, "teacher", what));

    const std::size_t blob_start = static_cast<std::size_t>(in.tellg());
    if (blob_start == static_cast<std::size_t>(-1) ||
        blob_start + student_len + teacher_len != buf.size())
        throw DataError(what + ": truncated train-state blobs");
    state.student = deserialize_params(buf.substr(blob_start, student_len), what);
    state.teacher = deserialize_params(buf.substr(blob_start + student_len, teacher_len), what);
    if (state.cursor > state.perm.size()) throw DataError(what + ": cursor out of range");
    return state;
}

} // namespace attnfuse
