#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <string>
#include <vector>

#include <quadnet/data.hpp>
#include <quadnet/eval.hpp>
#include <quadnet/gradcheck.hpp>
#include <quadnet/nn.hpp>
#include <quadnet/svm.hpp>
#include <quadnet/train.hpp>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace quadnet;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

// Flat run configuration; a JSON config file mirrors these fields and
// command-line flags override the file.
struct RunConfig {
  std::string data;
  std::string out = "run";
  std::string loss = "hingem5";
  int dim = kDefaultEmbedDim;
  double margin_push = 1.0;
  double margin_pull = 0.2;
  double lr = 1e-3;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  int batch = 100;
  int max_iters = 20000;
  int window = 1000;
  uint64_t seed = 1;
  int threads = 1;
  std::string train_pool = "train+val";  // or "train"
  std::string tower_init = "shared";     // or "independent"

  json to_json() const {
    return json{{"data", data},
                {"out", out},
                {"loss", loss},
                {"dim", dim},
                {"margin_push", margin_push},
                {"margin_pull", margin_pull},
                {"lr", lr},
                {"momentum", momentum},
                {"weight_decay", weight_decay},
                {"batch", batch},
                {"max_iters", max_iters},
                {"window", window},
                {"seed", seed},
                {"threads", threads},
                {"train_pool", train_pool},
                {"tower_init", tower_init}};
  }

  TrainOptions to_train_options() const {
    TrainOptions opt;
    opt.variant = parse_loss_variant(loss);
    opt.embed_dim = dim;
    opt.push_margin = margin_push;
    opt.pull_margin = margin_pull;
    opt.lr = lr;
    opt.momentum = momentum;
    opt.weight_decay = weight_decay;
    opt.batch_size = batch;
    opt.max_iters = max_iters;
    opt.window = window;
    opt.seed = seed;
    opt.threads = threads;
    if (train_pool == "train")
      opt.include_val = false;
    else if (train_pool == "train+val")
      opt.include_val = true;
    else
      throw std::invalid_argument("train_pool must be 'train' or 'train+val'");
    if (tower_init == "shared")
      opt.shared_tower_init = true;
    else if (tower_init == "independent")
      opt.shared_tower_init = false;
    else
      throw std::invalid_argument("tower_init must be 'shared' or 'independent'");
    return opt;
  }
};

void add_config_flags(CLI::App* cmd, RunConfig& cfg, std::string& config_path) {
  cmd->add_option("--config", config_path, "JSON config file; flags override it");
  cmd->add_option("--data", cfg.data, "dataset directory");
  cmd->add_option("--out", cfg.out, "output directory");
  cmd->add_option("--loss", cfg.loss,
                  "hingem3|hingem5|hingem6|contrastive5|triplet|triplet-da");
  cmd->add_option("--dim", cfg.dim, "embedding dimension D");
  cmd->add_option("--margin-push", cfg.margin_push, "push margin m");
  cmd->add_option("--margin-pull", cfg.margin_pull, "pull margin m'");
  cmd->add_option("--lr", cfg.lr, "learning rate");
  cmd->add_option("--momentum", cfg.momentum, "SGD momentum");
  cmd->add_option("--weight-decay", cfg.weight_decay, "coupled weight decay");
  cmd->add_option("--batch", cfg.batch, "mini-batch size");
  cmd->add_option("--max-iters", cfg.max_iters, "iteration cap");
  cmd->add_option("--window", cfg.window, "iterations per convergence window");
  cmd->add_option("--seed", cfg.seed, "master seed");
  cmd->add_option("--threads", cfg.threads, "data-parallel worker threads");
  cmd->add_option("--train-pool", cfg.train_pool, "train | train+val");
  cmd->add_option("--tower-init", cfg.tower_init, "shared | independent");
}

// file values apply only where no flag was passed
void merge_config_file(CLI::App* cmd, RunConfig& cfg, const std::string& config_path) {
  if (config_path.empty()) return;
  std::ifstream in(config_path);
  if (!in) throw std::runtime_error("cannot open config file " + config_path);
  json j = json::parse(in);
  auto take = [&](const char* flag, const char* key, auto& slot) {
    if (cmd->count(flag) == 0 && j.contains(key)) slot = j.at(key).get<std::decay_t<decltype(slot)>>();
  };
  take("--data", "data", cfg.data);
  take("--out", "out", cfg.out);
  take("--loss", "loss", cfg.loss);
  take("--dim", "dim", cfg.dim);
  take("--margin-push", "margin_push", cfg.margin_push);
  take("--margin-pull", "margin_pull", cfg.margin_pull);
  take("--lr", "lr", cfg.lr);
  take("--momentum", "momentum", cfg.momentum);
  take("--weight-decay", "weight_decay", cfg.weight_decay);
  take("--batch", "batch", cfg.batch);
  take("--max-iters", "max_iters", cfg.max_iters);
  take("--window", "window", cfg.window);
  take("--seed", "seed", cfg.seed);
  take("--threads", "threads", cfg.threads);
  take("--train-pool", "train_pool", cfg.train_pool);
  take("--tower-init", "tower_init", cfg.tower_init);
}

DatasetBundle load_or_die(const std::string& dir) {
  if (dir.empty()) throw std::invalid_argument("--data is required");
  return load_dataset(dir);
}

Split parse_split(const std::string& s) {
  if (s == "val") return Split::Val;
  if (s == "test") return Split::Test;
  throw std::invalid_argument("--split must be 'val' or 'test'");
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream os(path, std::ios::binary);
  os << j.dump(2) << '\n';
  if (!os) throw std::runtime_error("cannot write " + path.string());
}

int cmd_train(CLI::App* cmd, RunConfig& cfg, const std::string& config_path) {
  merge_config_file(cmd, cfg, config_path);
  const TrainOptions opt = cfg.to_train_options();
  const DatasetBundle bundle = load_or_die(cfg.data);
  fs::create_directories(cfg.out);

  const TrainResult result = train_run(bundle, opt);

  const fs::path out(cfg.out);
  save_checkpoint(result.tower_t, result.tower_r, (out / "checkpoint.qnet").string());
  write_loss_csv((out / "loss.csv").string(), result);

  json manifest;
  manifest["config"] = cfg.to_json();
  manifest["dataset_hash"] = dataset_hash(cfg.data);
  manifest["iterations"] = result.iterations;
  manifest["converged"] = result.converged;
  manifest["final_window_mean_loss"] = result.final_window_mean;
  manifest["checkpoint"] = "checkpoint.qnet";
  write_json(out / "manifest.json", manifest);

  std::printf("trained %s for %d iterations (%s), final window mean loss %.6f\n",
              cfg.loss.c_str(), result.iterations,
              result.converged ? "converged" : "iteration cap", result.final_window_mean);
  return kExitOk;
}

int cmd_eval_nn(const std::string& ckpt, const std::string& data, const std::string& split_name,
                const std::string& out_dir, int expect_dim, uint64_t seed) {
  const DatasetBundle bundle = load_or_die(data);
  const auto ck = load_checkpoint<float>(ckpt, expect_dim);
  EvalReport report = one_shot_nn(ck.tower_t, ck.tower_r, bundle, parse_split(split_name));
  report.checkpoint_id = ckpt;
  report.dataset_id = dataset_hash(data);
  report.seed = seed;
  fs::create_directories(out_dir);
  write_json(fs::path(out_dir) / "report.json", report.to_json());
  std::printf("one-shot 1-NN (%s): overall %.4f, seen %.4f, unseen %.4f over %d queries\n",
              split_name.c_str(), report.overall_avg, report.seen_avg, report.unseen_avg,
              report.n_queries);
  return kExitOk;
}

int cmd_eval_transfer(const std::string& ckpt, const std::string& data,
                      const std::string& out_dir, int expect_dim) {
  const DatasetBundle target = load_or_die(data);
  const auto ck = load_checkpoint<float>(ckpt, expect_dim);
  EvalReport report = transfer_eval(ck.tower_t, ck.tower_r, target);
  report.checkpoint_id = ckpt;
  report.dataset_id = dataset_hash(data);
  fs::create_directories(out_dir);
  write_json(fs::path(out_dir) / "transfer.json", report.to_json());
  std::printf("transfer 1-NN: sample average %.4f, class average %.4f over %d queries\n",
              report.sample_avg, report.overall_avg, report.n_queries);
  return kExitOk;
}

int cmd_eval_repr(const std::string& ckpt, const std::string& data,
                  const std::vector<int>& instances, const std::vector<int>& repeats,
                  uint64_t seed, const std::string& network, const std::string& out_dir) {
  const DatasetBundle bundle = load_or_die(data);
  const auto ck = load_checkpoint<float>(ckpt);
  const ReprResult result = representation_eval(ck.tower_r, bundle, instances, repeats, seed,
                                                network.empty() ? "model" : network);
  fs::create_directories(out_dir);
  write_repr_csv((fs::path(out_dir) / "repr.csv").string(), result);
  for (const auto& cell : result.cells)
    std::printf("repr %s n=%d %s: error %.3f%% (+-%.3f)\n", cell.network.c_str(),
                cell.instances_per_class, cell.partition.c_str(), cell.mean_error_pct,
                cell.ci95_halfwidth);
  return kExitOk;
}

int cmd_ablation(CLI::App* cmd, RunConfig& cfg, const std::string& config_path,
                 const std::vector<int>& dims, const std::vector<std::string>& variant_names) {
  merge_config_file(cmd, cfg, config_path);
  const DatasetBundle bundle = load_or_die(cfg.data);
  std::vector<LossVariant> variants;
  for (const auto& v : variant_names) variants.push_back(parse_loss_variant(v));
  const auto cells = ablation_sweep(bundle, dims, variants, cfg.to_train_options());
  fs::create_directories(cfg.out);
  write_ablation_csv((fs::path(cfg.out) / "ablation.csv").string(), cells);
  for (const auto& c : cells)
    std::printf("ablation D=%d %s: avg %.4f seen %.4f unseen %.4f\n", c.dim,
                to_string(c.variant), c.report.overall_avg, c.report.seen_avg,
                c.report.unseen_avg);
  return kExitOk;
}

int cmd_gradcheck() {
  const auto cases = gradcheck_suite();
  bool all_ok = true;
  for (const auto& c : cases) {
    std::printf("%-22s max rel err %.3e (threshold %.0e) %s\n", c.name.c_str(), c.max_rel_error,
                c.threshold, c.passed ? "PASS" : "FAIL");
    all_ok = all_ok && c.passed;
  }
  if (!all_ok) {
    std::fprintf(stderr, "gradcheck: failures detected\n");
    return kExitNumeric;
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"co-domain quadruplet embedding: data generation, training, evaluation"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic sign dataset");
  GenerateConfig gen_cfg;
  std::string gen_out = "dataset";
  gen->add_option("--classes", gen_cfg.num_classes, "total classes");
  gen->add_option("--seen", gen_cfg.num_seen, "seen (training) classes");
  gen->add_option("--samples", gen_cfg.samples_per_class, "real samples per class");
  gen->add_option("--val-frac", gen_cfg.val_fraction, "validation fraction");
  gen->add_option("--test-frac", gen_cfg.test_fraction, "test fraction");
  gen->add_option("--severity", gen_cfg.severity, "corruption severity in [0,1]");
  gen->add_option("--seed", gen_cfg.seed, "generator seed");
  gen->add_option("--out", gen_out, "output directory");

  // train
  auto* train = app.add_subcommand("train", "train towers until convergence");
  RunConfig train_cfg;
  std::string train_config_path;
  add_config_flags(train, train_cfg, train_config_path);

  // eval-nn
  auto* enn = app.add_subcommand("eval-nn", "one-shot 1-NN classification against templates");
  std::string enn_ckpt, enn_data, enn_split = "test", enn_out = "eval";
  int enn_dim = 0;
  uint64_t enn_seed = 1;
  enn->add_option("--checkpoint", enn_ckpt)->required();
  enn->add_option("--data", enn_data)->required();
  enn->add_option("--split", enn_split, "val | test");
  enn->add_option("--dim", enn_dim, "expected embedding dimension (0 = accept file)");
  enn->add_option("--seed", enn_seed);
  enn->add_option("--out", enn_out);

  // eval-transfer
  auto* etr = app.add_subcommand("eval-transfer", "evaluate a trained model on another dataset");
  std::string etr_ckpt, etr_data, etr_out = "eval";
  int etr_dim = 0;
  etr->add_option("--checkpoint", etr_ckpt)->required();
  etr->add_option("--data", etr_data, "target dataset directory")->required();
  etr->add_option("--dim", etr_dim, "expected embedding dimension (0 = accept file)");
  etr->add_option("--out", etr_out);

  // eval-repr
  auto* erp = app.add_subcommand("eval-repr", "frozen-feature SVM probe of FC1");
  std::string erp_ckpt, erp_data, erp_out = "eval", erp_network = "model";
  std::vector<int> erp_instances{10};
  std::vector<int> erp_repeats{10};
  uint64_t erp_seed = 1;
  erp->add_option("--checkpoint", erp_ckpt)->required();
  erp->add_option("--data", erp_data)->required();
  erp->add_option("--instances", erp_instances, "SVM training instances per class")
      ->delimiter(',');
  erp->add_option("--repeats", erp_repeats, "trials per instance count (scalar or list)")
      ->delimiter(',');
  erp->add_option("--seed", erp_seed);
  erp->add_option("--network-name", erp_network, "label used in the results CSV");
  erp->add_option("--out", erp_out);

  // ablation
  auto* abl = app.add_subcommand("ablation", "dimension/loss sweep on the validation split");
  RunConfig abl_cfg;
  std::string abl_config_path;
  std::vector<int> abl_dims{50, 100, 150};
  std::vector<std::string> abl_variants{"hingem5"};
  add_config_flags(abl, abl_cfg, abl_config_path);
  abl->add_option("--dims", abl_dims, "embedding dimensions")->delimiter(',');
  abl->add_option("--variants", abl_variants, "loss variants")->delimiter(',');

  // gradcheck
  app.add_subcommand("gradcheck", "finite-difference verification of all gradients");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (gen->parsed()) {
      gen_cfg.validate();
      generate_dataset(gen_cfg, gen_out);
      std::printf("wrote dataset to %s (hash %s)\n", gen_out.c_str(),
                  dataset_hash(gen_out).c_str());
      return kExitOk;
    }
    if (train->parsed()) return cmd_train(train, train_cfg, train_config_path);
    if (enn->parsed())
      return cmd_eval_nn(enn_ckpt, enn_data, enn_split, enn_out, enn_dim, enn_seed);
    if (etr->parsed()) return cmd_eval_transfer(etr_ckpt, etr_data, etr_out, etr_dim);
    if (erp->parsed())
      return cmd_eval_repr(erp_ckpt, erp_data, erp_instances, erp_repeats, erp_seed, erp_network,
                           erp_out);
    if (abl->parsed()) return cmd_ablation(abl, abl_cfg, abl_config_path, abl_dims, abl_variants);
    return cmd_gradcheck();
  } catch (const numeric_error& e) {
    std::fprintf(stderr, "numeric failure: %s\n", e.what());
    return kExitNumeric;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return kExitUsage;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitData;
  }
}
