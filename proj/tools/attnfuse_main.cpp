// Command-line pipeline: dataset generation, classification pretraining,
// frozen-teacher self-training, pseudo-label evaluation, map fusion dumps,
// and the scale/fusion/reactivation ablation suite. File in, file out.

#include <cstdio>
#include <exception>
#include <filesystem>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "attnfuse/backbone.hpp"
#include "attnfuse/data_synth.hpp"
#include "attnfuse/errors.hpp"
#include "attnfuse/evaluation.hpp"
#include "attnfuse/fusion.hpp"
#include "attnfuse/io.hpp"
#include "attnfuse/training.hpp"

namespace fs = std::filesystem;
using namespace attnfuse;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumerical = 3;

struct CommonArgs {
    std::string config_path;
    std::string out_override;
};

TrainConfig load(const CommonArgs& args) {
    TrainConfig cfg = load_config(args.config_path);
    if (!args.out_override.empty()) cfg.out_dir = args.out_override;
    return cfg;
}

fs::path ensure_out_dir(const TrainConfig& cfg) {
    std::error_code ec;
    fs::create_directories(cfg.out_dir, ec);
    if (ec) throw DataError("cannot create out_dir " + cfg.out_dir + ": " + ec.message());
    return cfg.out_dir;
}

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "experiment config file")->required();
    cmd->add_option("--out", args.out_override, "override the config's out_dir");
}

int run_gen_data(const CommonArgs& args, int n_train, int n_val) {
    const TrainConfig cfg = load(args);
    generate_dataset(cfg.data_root, cfg.seed, n_train, n_val);
    std::fprintf(stderr, "wrote %d train / %d val samples under %s\n", n_train, n_val,
                 cfg.data_root.c_str());
    return 0;
}

int run_pretrain(const CommonArgs& args) {
    const TrainConfig cfg = load(args);
    const fs::path out = ensure_out_dir(cfg);
    const auto manifest = read_manifest(cfg.data_root);
    const auto train = load_split(manifest, "train");
    std::vector<LossRecord> log;
    const BackboneParams params = pretrain(train, cfg.pretrain_hp(), &log);
    save_checkpoint(out / "pretrained.ckpt", params);
    write_text_file(out / "pretrain_loss.csv", loss_log_csv(log));
    std::fprintf(stderr, "pretrained checkpoint: %s\n", (out / "pretrained.ckpt").c_str());
    return 0;
}

int run_selftrain(const CommonArgs& args, const std::string& from) {
    const TrainConfig cfg = load(args);
    const fs::path out = ensure_out_dir(cfg);
    const auto manifest = read_manifest(cfg.data_root);
    const auto train = load_split(manifest, "train");
    const BackboneParams pre = load_checkpoint(from);
    std::vector<LossRecord> log;
    SelfTrainOptions opts;
    opts.log = &log;
    const BackboneParams student = self_train(pre, train, cfg.selftrain_hp(), opts);
    save_checkpoint(out / "selftrained.ckpt", student);
    write_text_file(out / "selftrain_loss.csv", loss_log_csv(log));
    std::fprintf(stderr, "self-trained checkpoint: %s\n", (out / "selftrained.ckpt").c_str());
    return 0;
}

int run_eval(const CommonArgs& args, const std::string& ckpt) {
    const TrainConfig cfg = load(args);
    const fs::path out = ensure_out_dir(cfg);
    const auto manifest = read_manifest(cfg.data_root);
    const auto val = load_split(manifest, "val");
    const BackboneParams params = load_checkpoint(ckpt);

    const std::vector<double> per_image = per_image_miou(params, val);
    const int k = params.num_classes();
    ConfusionMatrix merged(k + 1);
    std::string csv = "image,miou\r\n";
    const fs::path heat_dir = out / "heatmaps";
    std::error_code ec;
    fs::create_directories(heat_dir, ec);
    if (ec) throw DataError("cannot create " + heat_dir.string() + ": " + ec.message());
    for (std::size_t i = 0; i < val.size(); ++i) {
        const ForwardResult fwd = forward(params, val[i].image);
        merged.merge(confusion(pseudo_labels(fwd.attn), val[i].mask, k));
        csv += "val/" + std::to_string(i) + "," + fmt_double(per_image[i]) + "\r\n";
        write_channel_heatmaps(heat_dir, std::to_string(i), fwd.attn);
    }
    csv += "ALL," + fmt_double(miou(merged)) + "\r\n";
    write_text_file(out / "miou.csv", csv);
    std::fprintf(stderr, "val mIoU %.3f%% over %zu images\n", miou(merged), val.size());
    return 0;
}

int run_fuse(const CommonArgs& args, const std::string& ckpt, const std::string& image_path) {
    const TrainConfig cfg = load(args);
    const fs::path out = ensure_out_dir(cfg);
    const BackboneParams params = load_checkpoint(ckpt);
    const Tensor3 image = read_smt1(image_path);
    if (image.channels != 3) throw DataError(image_path + ": image must have 3 channels");

    // Labels come from the sibling mask when present, otherwise every class
    // is treated as present (denoising is a no-op).
    LabelVector y(std::vector<std::uint8_t>(params.num_classes(), 1));
    std::string mask_path = image_path;
    const std::string img_tag = ".img.smt1";
    if (const auto pos = mask_path.rfind(img_tag); pos != std::string::npos) {
        mask_path.replace(pos, img_tag.size(), ".msk.smt1");
        if (fs::exists(mask_path))
            y = labels_from_mask(read_mask_smt1(mask_path, params.num_classes()),
                                 params.num_classes());
    }

    const fs::path dir = out / "fuse";
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw DataError("cannot create " + dir.string() + ": " + ec.message());

    const Tensor3 fused = teacher_fused_maps(params, image, cfg.selftrain_hp());
    const Tensor3 denoised = denoise(fused, y);
    const FusedTarget reactivated = reactivate(denoised, cfg.thr);
    write_smt1(dir / "fused.smt1", fused);
    write_smt1(dir / "denoised.smt1", denoised);
    write_smt1(dir / "reactivated.smt1", reactivated.maps);
    write_channel_heatmaps(dir, "fused", fused);
    write_channel_heatmaps(dir, "denoised", denoised);
    write_channel_heatmaps(dir, "reactivated", reactivated.maps);
    std::fprintf(stderr, "fused maps written under %s\n", dir.c_str());
    return 0;
}

int run_ablate(const CommonArgs& args, const std::string& seeds_arg) {
    const TrainConfig cfg = load(args);
    const fs::path out = ensure_out_dir(cfg);
    std::vector<std::uint64_t> seeds;
    std::stringstream ss(seeds_arg);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            seeds.push_back(std::stoull(item));
        } catch (const std::exception&) {
            throw ConfigError("bad seed '" + item + "' in --seeds");
        }
    }
    const auto manifest = read_manifest(cfg.data_root);
    const AblationReport report = run_ablation_suite(manifest, cfg, seeds);
    write_text_file(out / "ablation.csv", ablation_csv(report));
    write_text_file(out / "ablation_summary.txt", ablation_summary(report));
    std::fprintf(stderr, "%s", ablation_summary(report).c_str());
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"multi-scale attention fusion self-training pipeline"};
    app.require_subcommand(1);

    CommonArgs gen_args, pre_args, self_args, eval_args, fuse_args, ablate_args;
    int n_train = 200, n_val = 50;
    std::string from_ckpt, eval_ckpt, fuse_ckpt, fuse_image, seeds = "1,2,3";

    auto* gen = app.add_subcommand("gen-data", "generate the synthetic dataset");
    add_common(gen, gen_args);
    gen->add_option("--n-train", n_train, "training sample count");
    gen->add_option("--n-val", n_val, "validation sample count");

    auto* pre = app.add_subcommand("pretrain", "classification pretraining");
    add_common(pre, pre_args);

    auto* self = app.add_subcommand("selftrain", "frozen-teacher self-training");
    add_common(self, self_args);
    self->add_option("--from", from_ckpt, "pretrained checkpoint")->required();

    auto* eval = app.add_subcommand("eval", "pseudo-label mIoU on the val split");
    add_common(eval, eval_args);
    eval->add_option("--ckpt", eval_ckpt, "checkpoint to evaluate")->required();

    auto* fuse = app.add_subcommand("fuse", "dump fused/denoised/reactivated maps");
    add_common(fuse, fuse_args);
    fuse->add_option("--ckpt", fuse_ckpt, "teacher checkpoint")->required();
    fuse->add_option("--image", fuse_image, "input image (SMT1)")->required();

    auto* ablate = app.add_subcommand("ablate", "scale/fusion/reactivation ablations");
    add_common(ablate, ablate_args);
    ablate->add_option("--seeds", seeds, "comma-separated seed list");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitUsage;
    }

    try {
        if (gen->parsed()) return run_gen_data(gen_args, n_train, n_val);
        if (pre->parsed()) return run_pretrain(pre_args);
        if (self->parsed()) return run_selftrain(self_args, from_ckpt);
        if (eval->parsed()) return run_eval(eval_args, eval_ckpt);
        if (fuse->parsed()) return run_fuse(fuse_args, fuse_ckpt, fuse_image);
        if (ablate->parsed()) return run_ablate(ablate_args, seeds);
    } catch (const NumericalError& e) {
        std::fprintf(stderr, "numerical error: %s\n", e.what());
        return kExitNumerical;
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return kExitData;
    } catch (const DataError& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return kExitData;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitData;
    }
    return kExitUsage;
}
