#include <CLI11.hpp>

#include <iostream>

#include "defront/cli_commands.hpp"
#include "defront/errors.hpp"

using namespace defront;

int main(int argc, char** argv) {
    CLI::App app{"face defrontalization toolkit"};
    app.require_subcommand(1);

    std::string config_path;
    std::int64_t seed_override = -1;
    int workers_override = -1;
    std::string device_override, out_override;
    app.add_option("--config", config_path, "experiment config JSON")->required();
    app.add_option("--seed", seed_override, "override config seed");
    app.add_option("--workers", workers_override, "cap data-loader parallelism");
    app.add_option("--device", device_override, "compute device (cpu)");
    app.add_option("--out", out_override, "override output directory");

    auto* synth = app.add_subcommand("synth", "render a synthetic dataset");

    std::string align_list;
    std::string align_subdir = "aligned";
    bool align_detect = false;
    std::string align_mapping;
    auto* align = app.add_subcommand("align", "align a list of images to 112x112");
    align->add_option("--list", align_list, "train/eval image list (jsonl)")->required();
    align->add_option("--subdir", align_subdir, "output subdirectory name");
    align->add_flag("--detect", align_detect,
                    "fetch landmarks from DETECTOR_ENDPOINT instead of the list");
    align->add_option("--point-mapping", align_mapping, "dense->semantic landmark mapping JSON");

    std::string cal_errors;
    auto* calibrate = app.add_subcommand("calibrate", "calibrate the augmentation threshold");
    calibrate->add_option("--errors", cal_errors, "alignment-error cache (jsonl)")->required();

    std::string td_pairs;
    auto* train_defront = app.add_subcommand("train-defront", "pretrain flows and train the GAN");
    train_defront->add_option("--pairs", td_pairs, "frontal-profile pair manifest")->required();

    std::string df_ckpt, df_list;
    int df_max = 8;
    auto* defrontalize = app.add_subcommand("defrontalize", "dump qualitative defrontalizations");
    defrontalize->add_option("--checkpoint", df_ckpt, "defrontalization checkpoint")->required();
    defrontalize->add_option("--list", df_list, "aligned image list")->required();
    defrontalize->add_option("--max-images", df_max, "how many inputs to dump");

    std::string te_list, te_errors, te_defront, te_forbidden;
    auto* train_embed = app.add_subcommand("train-embed", "train the embedding backbone");
    train_embed->add_option("--list", te_list, "aligned train list")->required();
    train_embed->add_option("--errors", te_errors, "alignment-error cache")->required();
    train_embed->add_option("--defront", te_defront, "defrontalization checkpoint (omit for baseline)");
    train_embed->add_option("--forbid-pairs", te_forbidden, "test-pair file whose images must stay unseen");

    std::string ev_backbone, ev_pairs, ev_gallery, ev_list, ev_pose;
    auto* eval = app.add_subcommand("eval", "verification / identification reports");
    eval->add_option("--backbone", ev_backbone, "backbone checkpoint")->required();
    eval->add_option("--pairs", ev_pairs, "test pairs file");
    eval->add_option("--gallery", ev_gallery, "gallery jsonl");
    eval->add_option("--eval-list", ev_list, "eval image list with landmarks")->required();
    eval->add_option("--pose-annotations", ev_pose, "pose annotation jsonl for pair stats");

    std::string be_backbone, be_defront;
    auto* bench = app.add_subcommand("bench", "inference latency benchmark");
    bench->add_option("--backbone", be_backbone, "backbone checkpoint")->required();
    bench->add_option("--defront", be_defront, "defrontalization checkpoint")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        ExperimentConfig cfg = load_experiment_config(config_path);
        if (seed_override >= 0) cfg.seed = static_cast<std::uint64_t>(seed_override);
        if (workers_override > 0) cfg.workers = workers_override;
        if (!device_override.empty()) {
            if (device_override != "cpu") throw ConfigInvalid("only --device cpu is supported");
            cfg.device = device_override;
        }
        if (!out_override.empty()) cfg.out_dir = out_override;
        // re-propagate the effective seed
        cfg.defront_train.seed = cfg.seed;
        cfg.embed_train.seed = cfg.seed;
        cfg.embed_train.policy.rng_seed = cfg.seed;

        if (synth->parsed()) return cli::cmd_synth(cfg);
        if (align->parsed())
            return cli::cmd_align(cfg, align_list, align_subdir, align_detect, align_mapping);
        if (calibrate->parsed()) return cli::cmd_calibrate(cfg, cal_errors);
        if (train_defront->parsed()) return cli::cmd_train_defront(cfg, td_pairs);
        if (defrontalize->parsed()) return cli::cmd_defrontalize(cfg, df_ckpt, df_list, df_max);
        if (train_embed->parsed())
            return cli::cmd_train_embed(cfg, te_list, te_errors, te_defront, te_forbidden);
        if (eval->parsed()) return cli::cmd_eval(cfg, ev_backbone, ev_pairs, ev_gallery, ev_list, ev_pose);
        if (bench->parsed()) return cli::cmd_bench(cfg, be_backbone, be_defront);
        std::cerr << "no subcommand\n";
        return 2;
    } catch (const ConfigInvalid& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const InputMissing& e) {
        std::cerr << "input error: " << e.what() << "\n";
        return 3;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "unexpected error: " << e.what() << "\n";
        return 1;
    }
}
