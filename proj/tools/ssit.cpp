// Command-line front end: dataset synthesis, saliency maps, pretraining,
// evaluation and visualization. Exit codes: 0 ok, 1 usage/config error,
// 2 data error, 3 numerical failure.
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ssit/config.hpp"
#include "ssit/eval.hpp"
#include "ssit/pretrain.hpp"
#include "ssit/saliency.hpp"
#include "ssit/synth.hpp"

namespace fs = std::filesystem;
using namespace ssit;

namespace {

struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

SaliencyMap compute_saliency(const Image& img, const std::string& backend) {
  if (backend == "fine") return fine_grained_saliency(img);
  if (backend == "spectral") return spectral_residual_saliency(img);
  throw std::invalid_argument("unknown saliency backend: " + backend);
}

Image load_or_throw(const std::string& path) {
  try {
    return load_image(path);
  } catch (const std::exception& e) {
    throw DataError(std::string(e.what()));
  }
}

Dataset load_dataset_or_throw(const std::string& dir) {
  try {
    return load_dataset(dir);
  } catch (const std::exception& e) {
    throw DataError(std::string(e.what()));
  }
}

Image map_to_image(const std::vector<float>& values, size_t h, size_t w) {
  Image out(h, w, 1);
  float hi = 0.0f;
  for (float v : values) hi = std::max(hi, v);
  if (hi <= 0.0f) hi = 1.0f;
  for (size_t i = 0; i < values.size(); ++i)
    out.pixels[i] = std::max(0.0f, values[i] / hi);
  return out;
}

int cmd_synth(const std::string& out_dir, int grades, size_t n_train,
              size_t n_val, size_t n_test, size_t size, uint64_t seed) {
  SynthConfig cfg;
  cfg.grades = grades;
  cfg.n_train = n_train;
  cfg.n_val = n_val;
  cfg.n_test = n_test;
  cfg.image_size = size;
  cfg.seed = seed;
  Dataset data = make_synthetic_dataset(cfg);
  write_dataset(data, out_dir);
  std::cout << "wrote " << (n_train + n_val + n_test) << " images to "
            << out_dir << "\n";
  return 0;
}

int cmd_saliency(const std::vector<std::string>& inputs,
                 const std::string& backend, const std::string& out_dir) {
  SaliencyCache cache(out_dir);
  int failures = 0;
  for (const auto& path : inputs) {
    try {
      Image img = load_or_throw(path);
      bool hit = false;
      cache.get_or_compute(
          img, backend, "default",
          [&](const Image& i) { return compute_saliency(i, backend); }, &hit);
      std::cout << path << " " << (hit ? "cached" : "computed") << "\n";
    } catch (const std::exception& e) {
      std::cerr << path << " failed: " << e.what() << "\n";
      ++failures;
    }
  }
  return failures == 0 ? 0 : 2;
}

int cmd_pretrain(const std::string& config_path, const std::string& resume) {
  RunConfig cfg = RunConfig::load(config_path);
  if (cfg.data_dir.empty())
    throw std::invalid_argument("config: data_dir is required for pretrain");
  Dataset data = load_dataset_or_throw(cfg.data_dir);
  if (data.train.empty()) throw DataError("pretrain: empty train split");

  fs::create_directories(cfg.out_dir);
  cfg.save((fs::path(cfg.out_dir) / "config.json").string());

  std::vector<Image> images;
  images.reserve(data.train.size());
  for (auto& s : data.train) images.push_back(std::move(s.image));

  std::string cache_dir = cfg.saliency_cache_dir.empty()
                              ? (fs::path(cfg.out_dir) / "saliency").string()
                              : cfg.saliency_cache_dir;
  SaliencyCache cache(cache_dir);
  std::vector<SaliencyMap> maps;
  maps.reserve(images.size());
  for (const auto& img : images)
    maps.push_back(cache.get_or_compute(img, cfg.saliency_backend, "default",
                                        [&](const Image& i) {
                                          return compute_saliency(
                                              i, cfg.saliency_backend);
                                        }));

  ScheduleConfig sched = cfg.sched;
  sched.steps_per_epoch = images.size() / sched.batch_size;
  if (sched.steps_per_epoch == 0)
    throw DataError("pretrain: fewer train images than one batch");

  TrainState state = resume.empty()
                         ? init_train_state(cfg.vit, cfg.heads, sched, cfg.seed)
                         : load_checkpoint(resume);
  if (!resume.empty())
    std::cout << "resumed from " << resume << " at epoch " << state.epoch
              << "\n";

  std::ofstream metrics(fs::path(cfg.out_dir) / "metrics.log",
                        resume.empty() ? std::ios::trunc : std::ios::app);
  auto on_step = [&](const StepMetrics& m) {
    char line[256];
    std::snprintf(line, sizeof(line),
                  "step %zu lr %.6g alpha %.6g L_cl %.6g L_seg %.6g L %.6g",
                  m.step, m.lr, m.alpha, m.loss_cl, m.loss_seg, m.loss);
    std::cout << line << "\n";
    metrics << line << "\n";
  };
  auto on_epoch = [&](const TrainState& s) {
    if (s.epoch % cfg.checkpoint_every_epochs == 0 ||
        s.epoch == s.sched.total_epochs) {
      const std::string path =
          (fs::path(cfg.out_dir) /
           ("checkpoint_epoch" + std::to_string(s.epoch) + ".ssck"))
              .string();
      save_checkpoint(s, path);
      std::cout << "saved " << path << "\n";
    }
  };

  try {
    run_pretraining(state, images, maps, cfg.query_spec(), cfg.key_spec(),
                    on_step, on_epoch);
  } catch (const std::exception& e) {
    if (std::string(e.what()).find("non-finite") != std::string::npos)
      throw NumericalError(e.what());
    throw;
  }
  save_checkpoint(state, (fs::path(cfg.out_dir) / "final.ssck").string());
  std::cout << "saved " << (fs::path(cfg.out_dir) / "final.ssck").string()
            << "\n";
  return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& protocol,
             const std::string& data_dir, size_t epochs, double lr, size_t k,
             uint64_t seed, const std::string& report) {
  TrainState state = load_checkpoint(ckpt);
  Dataset data = load_dataset_or_throw(data_dir);
  double kappa = 0.0;
  if (protocol == "knn") {
    kappa = knn_eval(state.query.backbone, data, k);
  } else if (protocol == "linear") {
    kappa = linear_probe(state.query.backbone, data, epochs, lr, seed)
                .test_kappa;
  } else if (protocol == "finetune") {
    kappa = fine_tune(state.query.backbone, data, epochs, lr, seed).test_kappa;
  } else {
    throw std::invalid_argument("unknown protocol: " + protocol);
  }
  std::cout << "protocol " << protocol << " kappa " << kappa << "\n";
  if (!report.empty()) {
    nlohmann::json j{{"checkpoint", ckpt},
                     {"protocol", protocol},
                     {"data", data_dir},
                     {"kappa", kappa}};
    std::ofstream os(report);
    if (!os) throw DataError("cannot write report " + report);
    os << j.dump(2) << "\n";
  }
  return 0;
}

int cmd_visualize(const std::string& ckpt, const std::string& input,
                  const std::string& what, const std::string& out_path) {
  TrainState state = load_checkpoint(ckpt);
  const ViTConfig& vc = state.query.backbone.cfg;
  Image img = load_or_throw(input);
  if (img.height != vc.image_size || img.width != vc.image_size)
    img = resize_bilinear(img, vc.image_size, vc.image_size);
  if (img.channels != vc.channels) {
    if (vc.channels == 1)
      img = to_gray(img);
    else
      throw DataError("visualize: channel mismatch");
  }
  Tensor tokens = patchify(img, vc.patch);
  if (what == "attention") {
    EncoderOutput out =
        vit_forward(state.query.backbone, tokens, nullptr, true);
    std::vector<float> att = attention_map(out);
    Image grid = map_to_image(att, vc.grid(), vc.grid());
    save_image(out_path, resize_bilinear(grid, vc.image_size, vc.image_size));
  } else if (what == "segmentation") {
    EncoderOutput out = vit_forward(state.query.backbone, tokens);
    Tensor seg =
        decode_segmentation(out.patch_reprs, state.query.seg_weight,
                            state.query.seg_bias, vc.patch, vc.grid(),
                            vc.grid());
    Image seg_img(vc.image_size, vc.image_size, 1);
    seg_img.pixels = seg.data();
    save_image(out_path, seg_img);
  } else {
    throw std::invalid_argument("unknown visualization: " + what);
  }
  std::cout << "wrote " << out_path << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"saliency-guided self-supervised transformer toolkit"};
  app.require_subcommand(0, 1);
  bool print_config = false;
  app.add_flag("--print-config", print_config,
               "print the default run config as JSON and exit");

  auto* synth = app.add_subcommand("synth", "generate the synthetic dataset");
  std::string synth_out;
  int grades = 3;
  size_t n_train = 600, n_val = 150, n_test = 150, size = 64;
  uint64_t synth_seed = 0;
  synth->add_option("--out", synth_out, "output directory")->required();
  synth->add_option("--grades", grades);
  synth->add_option("--train", n_train);
  synth->add_option("--val", n_val);
  synth->add_option("--test", n_test);
  synth->add_option("--size", size);
  synth->add_option("--seed", synth_seed);

  auto* sal = app.add_subcommand("saliency", "compute saliency maps");
  std::vector<std::string> sal_inputs;
  std::string sal_backend = "fine", sal_out;
  sal->add_option("--input", sal_inputs, "input images")->required();
  sal->add_option("--backend", sal_backend, "fine | spectral")
      ->check(CLI::IsMember({"fine", "spectral"}));
  sal->add_option("--out", sal_out, "cache directory")->required();

  auto* pre = app.add_subcommand("pretrain", "run self-supervised pretraining");
  std::string pre_config, pre_resume;
  pre->add_option("--config", pre_config, "run config JSON")->required();
  pre->add_option("--resume", pre_resume, "checkpoint to resume from");

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string ev_ckpt, ev_protocol = "knn", ev_data, ev_report;
  size_t ev_epochs = 20, ev_k = 10;
  double ev_lr = 1e-2;
  uint64_t ev_seed = 0;
  ev->add_option("--ckpt", ev_ckpt, "checkpoint path")->required();
  ev->add_option("--protocol", ev_protocol, "knn | linear | finetune")
      ->check(CLI::IsMember({"knn", "linear", "finetune"}));
  ev->add_option("--data", ev_data, "dataset directory")->required();
  ev->add_option("--epochs", ev_epochs);
  ev->add_option("--lr", ev_lr);
  ev->add_option("--k", ev_k);
  ev->add_option("--seed", ev_seed);
  ev->add_option("--report", ev_report, "write a JSON report here");

  auto* vis = app.add_subcommand("visualize", "render attention/segmentation");
  std::string vis_ckpt, vis_input, vis_what = "attention", vis_out;
  vis->add_option("--ckpt", vis_ckpt)->required();
  vis->add_option("--input", vis_input)->required();
  vis->add_option("--what", vis_what, "attention | segmentation")
      ->check(CLI::IsMember({"attention", "segmentation"}));
  vis->add_option("--out", vis_out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (print_config) {
      std::cout << RunConfig::desk_default().to_json_text();
      return 0;
    }
    if (*synth)
      return cmd_synth(synth_out, grades, n_train, n_val, n_test, size,
                       synth_seed);
    if (*sal) return cmd_saliency(sal_inputs, sal_backend, sal_out);
    if (*pre) return cmd_pretrain(pre_config, pre_resume);
    if (*ev)
      return cmd_eval(ev_ckpt, ev_protocol, ev_data, ev_epochs, ev_lr, ev_k,
                      ev_seed, ev_report);
    if (*vis) return cmd_visualize(vis_ckpt, vis_input, vis_what, vis_out);
    std::cout << app.help();
    return 1;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 3;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
