// Command-line front end: train / eval / gradcheck / inspect / synth.
#include <cstdint>
#include <fstream>
#include <iostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "spikeformer/data.hpp"
#include "spikeformer/gradcheck.hpp"
#include "spikeformer/model.hpp"
#include "spikeformer/training.hpp"

namespace sf = spikeformer;

namespace {

struct TrainCli {
  std::string variant = "Spikeformer-2/3x1x2";
  std::string dataset = "synthetic";
  std::string profile = "gesture";
  sf::Index timesteps = 8;
  sf::Index epochs = 10;
  std::uint64_t seed = 0;
  std::string out = "spikeformer.ckpt";
  std::string config;  // optional key=value defaults file
  // optimizer / schedule
  std::string optimizer = "adam";
  double lr = 1e-3;
  double weight_decay = 0.0;
  double momentum = 0.9;
  sf::Index batch_size = 16;
  sf::Index warmup_epochs = 0;
  std::string schedule = "constant";
  sf::Index step_period = 192;
  double step_factor = 0.1;
  std::vector<sf::Index> milestones;
  double lr_min = 0.0;
  double droppath = 0.1;
  double label_smoothing = -1.0;  // <0: take the profile's value
  std::string neuron = "plif";
  // synthetic-dataset shape (when --dataset synthetic)
  sf::Index classes = 4;
  sf::Index samples = 50;
  sf::Index eval_samples = -1;  // <0: 2/5 of --samples
  sf::Index width = 32, height = 32;
};

// Builds the train/eval splits either from a directory or synthetically.
void load_splits(const TrainCli& cli, std::vector<sf::EventStream>& train,
                 std::vector<sf::EventStream>& eval) {
  if (cli.dataset == "synthetic") {
    sf::SynthConfig sc;
    sc.classes = cli.classes;
    sc.samples_per_class = cli.samples;
    sc.width = cli.width;
    sc.height = cli.height;
    train = sf::synth_gesture_dataset(cli.seed, sc);
    sc.samples_per_class = cli.eval_samples >= 0 ? cli.eval_samples
                                                 : std::max<sf::Index>(1, cli.samples * 2 / 5);
    eval = sf::synth_gesture_dataset(cli.seed ^ 0x9E3779B97F4A7C15ull, sc);
  } else {
    train = sf::load_dataset_dir(cli.dataset, "train");
    eval = sf::load_dataset_dir(cli.dataset, "test");
  }
}

sf::ModelSpec spec_for(const TrainCli& cli, const std::vector<sf::EventStream>& train) {
  sf::ModelSpec spec = sf::parse_variant(cli.variant);
  spec.time_steps = cli.timesteps;
  spec.neuron_mode = sf::neuron_mode_from_name(cli.neuron);
  spec.droppath = cli.droppath;
  spec.in_channels = 2;
  spec.input_h = train.front().height;
  spec.input_w = train.front().width;
  sf::Index classes = 0;
  for (const sf::EventStream& s : train) classes = std::max<sf::Index>(classes, s.label + 1);
  spec.classes = std::max<sf::Index>(2, classes);
  return spec;
}

int run_train(const TrainCli& cli) {
  std::vector<sf::EventStream> train, eval;
  load_splits(cli, train, eval);
  sf::ModelSpec spec = spec_for(cli, train);
  sf::SpikeformerModel<float> model(spec, cli.seed);

  sf::AugmentConfig aug = sf::augment_profile(cli.profile);
  sf::TrainConfig tc;
  if (cli.optimizer == "adam") tc.optimizer = sf::OptimizerKind::adam;
  else if (cli.optimizer == "sgd") tc.optimizer = sf::OptimizerKind::sgd;
  else throw CLI::ValidationError("--optimizer", "expected adam or sgd, got " + cli.optimizer);
  tc.sgd.momentum = cli.momentum;
  tc.base_lr = cli.lr;
  tc.weight_decay = cli.weight_decay;
  tc.batch_size = cli.batch_size;
  tc.epochs = cli.epochs;
  tc.warmup_epochs = cli.warmup_epochs;
  if (cli.schedule == "constant") tc.schedule = sf::ScheduleKind::constant;
  else if (cli.schedule == "step") tc.schedule = sf::ScheduleKind::step;
  else if (cli.schedule == "cosine") tc.schedule = sf::ScheduleKind::cosine;
  else throw CLI::ValidationError("--schedule", "expected constant, step or cosine");
  tc.step_period = cli.step_period;
  tc.step_factor = cli.step_factor;
  tc.milestones = cli.milestones;
  tc.lr_min = cli.lr_min;
  tc.label_smoothing = cli.label_smoothing >= 0 ? cli.label_smoothing : aug.label_smoothing;
  tc.droppath_rate = cli.droppath;
  tc.seed = cli.seed;

  std::cout << "variant=" << spec.name << " timesteps=" << spec.time_steps
            << " classes=" << spec.classes << " input=" << spec.input_h << "x" << spec.input_w
            << " params=" << model.parameter_count() << " train=" << train.size()
            << " eval=" << eval.size() << std::endl;

  sf::Trainer trainer(model, tc, aug);
  const double final_acc = trainer.run(train, eval, &std::cout);
  sf::save_checkpoint(trainer.checkpoint(tc.epochs), cli.out);
  std::cout << "final eval_acc=" << final_acc << " checkpoint=" << cli.out << std::endl;
  return 0;
}

int run_eval(const std::string& ckpt_path, const std::string& dataset, sf::Index batch_size) {
  sf::Checkpoint<float> ckpt = sf::load_checkpoint<float>(ckpt_path);
  sf::ModelSpec spec = sf::parse_variant(ckpt.meta("variant"));
  spec.time_steps = std::stoll(ckpt.meta("timesteps"));
  spec.classes = std::stoll(ckpt.meta("classes"));
  spec.in_channels = std::stoll(ckpt.meta("in_channels"));
  spec.input_h = std::stoll(ckpt.meta("input_h"));
  spec.input_w = std::stoll(ckpt.meta("input_w"));
  spec.neuron_mode = sf::neuron_mode_from_name(ckpt.meta("neuron_mode"));
  sf::SpikeformerModel<float> model(spec, 0);
  model.load_state(ckpt);
  const auto data = sf::load_dataset_dir(dataset, "test");
  const double acc = sf::evaluate_split(model, data, batch_size);
  std::cout << "eval_acc=" << acc << " over " << data.size() << " samples" << std::endl;
  return 0;
}

int run_gradcheck(const std::string& module);

int run_inspect(const std::string& variant, sf::Index timesteps, sf::Index classes,
                sf::Index in_channels, sf::Index input_size) {
  sf::ModelSpec spec = sf::parse_variant(variant);
  spec.time_steps = timesteps;
  spec.classes = classes;
  spec.in_channels = in_channels;
  spec.input_h = spec.input_w = input_size;
  std::cout << "variant:        " << spec.name << "\n"
            << "blocks:         " << spec.blocks << "\n"
            << "heads:          " << spec.heads << "\n"
            << "mlp_ratio:      " << spec.mlp_ratio << "\n"
            << "dim:            " << spec.dim << "\n"
            << "stem:           kernel " << spec.stem_kernel << ", " << spec.stem_modules
            << " module(s) x " << spec.stem_stages << " stage(s)\n"
            << "input:          " << spec.input_h << "x" << spec.input_w << ", "
            << spec.in_channels << " channel(s), T=" << spec.time_steps << "\n"
            << "classes:        " << spec.classes << "\n"
            << "tokens:         " << sf::tokens_per_frame(spec) << "\n";
  sf::SpikeformerModel<float> model(spec, 0);
  std::cout << "parameters:     " << model.parameter_count() << std::endl;
  return 0;
}

int run_synth(sf::Index classes, sf::Index samples, std::uint64_t seed, const std::string& out,
              sf::Index width, sf::Index height, sf::Index eval_samples) {
  sf::SynthConfig sc;
  sc.classes = classes;
  sc.samples_per_class = samples;
  sc.width = width;
  sc.height = height;
  sf::write_dataset_dir(out, "train", sf::synth_gesture_dataset(seed, sc));
  sc.samples_per_class = eval_samples >= 0 ? eval_samples : std::max<sf::Index>(1, samples * 2 / 5);
  sf::write_dataset_dir(out, "test",
                        sf::synth_gesture_dataset(seed ^ 0x9E3779B97F4A7C15ull, sc));
  std::cout << "wrote " << classes << " classes x " << samples << " train / "
            << sc.samples_per_class << " test streams to " << out << std::endl;
  return 0;
}

// Overlays key=value lines from a plain-text file onto a subcommand's options.
// Values given on the command line keep precedence: keys whose options already
// hold a parsed result are skipped. Blank lines and '#' comments are ignored.
void apply_config_file(CLI::App* cmd, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file '" + path + "'");
  auto trim = [](const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  };
  auto fail = [&](int lineno, const std::string& what) {
    throw std::runtime_error(path + ":" + std::to_string(lineno) + ": " + what);
  };
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string entry = trim(line);
    if (entry.empty() || entry[0] == '#') continue;
    const auto eq = entry.find('=');
    if (eq == std::string::npos) fail(lineno, "expected key=value, got '" + entry + "'");
    std::string key = trim(entry.substr(0, eq));
    const std::string value = trim(entry.substr(eq + 1));
    while (!key.empty() && key.front() == '-') key.erase(key.begin());
    if (key.empty()) fail(lineno, "expected key=value, got '" + entry + "'");
    if (key == "config") fail(lineno, "a config file cannot set --config");
    CLI::Option* opt = cmd->get_option_no_throw("--" + key);
    if (opt == nullptr && key.size() == 1) opt = cmd->get_option_no_throw("-" + key);
    if (opt == nullptr) fail(lineno, "unknown key '" + key + "'");
    if (opt->count() > 0) continue;  // the command line wins
    if (opt->get_expected_max() > 1) {
      // List-valued option: accept comma- or space-separated items.
      std::string token;
      for (const char c : value + ",") {
        if (c == ',' || c == ' ' || c == '\t') {
          if (!token.empty()) opt->add_result(token);
          token.clear();
        } else {
          token.push_back(c);
        }
      }
    } else {
      opt->add_result(value);
    }
    opt->run_callback();
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spiking transformer: training, evaluation and diagnostics"};
  app.require_subcommand(1);

  TrainCli tcli;
  CLI::App* train = app.add_subcommand("train", "Train a model and write a checkpoint");
  train->add_option("--variant", tcli.variant, "Architecture, e.g. Spikeformer-7/3x2x3");
  train->add_option("--dataset", tcli.dataset, "Dataset directory, or 'synthetic'");
  train->add_option("--profile", tcli.profile, "Augmentation profile: gesture|cifar-dvs|static");
  train->add_option("--timesteps", tcli.timesteps, "Simulation steps T");
  train->add_option("--epochs", tcli.epochs, "Training epochs");
  train->add_option("--seed", tcli.seed, "Run seed (full determinism)");
  train->add_option("--out", tcli.out, "Checkpoint output path");
  train->add_option("--optimizer", tcli.optimizer, "adam|sgd");
  train->add_option("--lr", tcli.lr, "Base learning rate");
  train->add_option("--weight-decay", tcli.weight_decay, "Coupled L2 weight decay");
  train->add_option("--momentum", tcli.momentum, "SGD momentum");
  train->add_option("--batch-size", tcli.batch_size, "Batch size");
  train->add_option("--warmup-epochs", tcli.warmup_epochs, "Linear warmup epochs");
  train->add_option("--schedule", tcli.schedule, "constant|step|cosine");
  train->add_option("--step-period", tcli.step_period, "Step schedule: decay period in epochs");
  train->add_option("--step-factor", tcli.step_factor, "Step schedule: decay factor");
  train->add_option("--lr-milestones", tcli.milestones,
                    "Explicit decay epochs (overrides --step-period)");
  train->add_option("--lr-min", tcli.lr_min, "Cosine schedule floor");
  train->add_option("--droppath", tcli.droppath, "Stochastic-depth rate");
  train->add_option("--label-smoothing", tcli.label_smoothing,
                    "Label smoothing (default: the profile's value)");
  train->add_option("--neuron", tcli.neuron, "lif|plif|liaf|pliaf");
  train->add_option("--classes", tcli.classes, "Synthetic data: class count");
  train->add_option("--samples", tcli.samples, "Synthetic data: train streams per class");
  train->add_option("--eval-samples", tcli.eval_samples,
                    "Synthetic data: eval streams per class (default 2/5 of --samples)");
  train->add_option("--width", tcli.width, "Synthetic data: sensor width");
  train->add_option("--height", tcli.height, "Synthetic data: sensor height");
  train->add_option("--config", tcli.config,
                    "Plain-text key=value file; command-line flags override it");

  std::string eval_ckpt, eval_dataset, eval_config;
  sf::Index eval_batch = 16;
  CLI::App* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  eval->add_option("--ckpt", eval_ckpt, "Checkpoint file");
  eval->add_option("--dataset", eval_dataset, "Dataset directory (test split)");
  eval->add_option("--batch-size", eval_batch, "Batch size");
  eval->add_option("--config", eval_config,
                   "Plain-text key=value file; command-line flags override it");

  std::string gc_module = "all";
  CLI::App* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
  gradcheck->add_option("--module", gc_module,
                        "ops|neuron|attention|tokenizer|block|model|all");

  std::string ins_variant;
  sf::Index ins_timesteps = 16, ins_classes = 10, ins_channels = 2, ins_input = 128;
  CLI::App* inspect = app.add_subcommand("inspect", "Print a parsed architecture and its size");
  inspect->add_option("--variant", ins_variant, "Architecture to parse")->required();
  inspect->add_option("--timesteps", ins_timesteps, "Simulation steps T");
  inspect->add_option("--classes", ins_classes, "Classifier classes");
  inspect->add_option("--in-channels", ins_channels, "Input channels");
  inspect->add_option("--input-size", ins_input, "Square input edge length");

  sf::Index sy_classes = 4, sy_samples = 50, sy_eval = -1, sy_w = 32, sy_h = 32;
  std::uint64_t sy_seed = 0;
  std::string sy_out;
  CLI::App* synth = app.add_subcommand("synth", "Write a synthetic gesture dataset");
  synth->add_option("--classes", sy_classes, "Class count");
  synth->add_option("--samples", sy_samples, "Train streams per class");
  synth->add_option("--eval-samples", sy_eval, "Test streams per class (default 2/5 of train)");
  synth->add_option("--seed", sy_seed, "Generator seed");
  synth->add_option("--out", sy_out, "Output dataset directory")->required();
  synth->add_option("--width", sy_w, "Sensor width");
  synth->add_option("--height", sy_h, "Sensor height");

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) {
      if (!tcli.config.empty()) apply_config_file(train, tcli.config);
      return run_train(tcli);
    }
    if (eval->parsed()) {
      if (!eval_config.empty()) apply_config_file(eval, eval_config);
      if (eval_ckpt.empty())
        throw CLI::ValidationError("--ckpt", "required (on the command line or in --config)");
      if (eval_dataset.empty())
        throw CLI::ValidationError("--dataset", "required (on the command line or in --config)");
      return run_eval(eval_ckpt, eval_dataset, eval_batch);
    }
    if (gradcheck->parsed()) return run_gradcheck(gc_module);
    if (inspect->parsed())
      return run_inspect(ins_variant, ins_timesteps, ins_classes, ins_channels, ins_input);
    if (synth->parsed()) return run_synth(sy_classes, sy_samples, sy_seed, sy_out, sy_w, sy_h, sy_eval);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 1;
  }
  return 0;
}

namespace {

// Gradient checks in float64 with the spike forward swapped to its smooth
// surrogate so central differences are a valid oracle.
int run_gradcheck(const std::string& module) {
  using D = double;
  constexpr double kTol = 1e-3;
  int failures = 0;
  sf::RngStream rng(1234);

  auto report = [&](const std::string& name, double err) {
    const bool ok = err <= kTol;
    std::cout << (ok ? "[PASS] " : "[FAIL] ") << name << ": max relative gradient error "
              << err << " (tolerance " << kTol << ")" << std::endl;
    if (!ok) ++failures;
  };
  auto rand_tensor = [&](sf::Shape shape, double scale) {
    sf::Tensor<D> t = sf::Tensor<D>::zeros(std::move(shape));
    for (sf::Index i = 0; i < t.numel(); ++i) t.data()[i] = scale * rng.normal();
    return t;
  };

  const bool all = module == "all";
  if (all || module == "ops") {
    report("linear+softmax+layer_norm chain", [&] {
      sf::Tensor<D> w = rand_tensor({4, 4}, 0.5);
      sf::Tensor<D> g = sf::Tensor<D>::filled({4}, 1.0);
      sf::Tensor<D> b = sf::Tensor<D>::zeros({4});
      return sf::grad_check<D>(
          [&](const sf::Tensor<D>& x) {
            return sf::sum_all(sf::mul(sf::softmax(sf::layer_norm(sf::linear(x, w), g, b), 1),
                                       sf::linear(x, w)));
          },
          rand_tensor({3, 4}, 1.0));
    }());
    report("conv2d+avg_pool", [&] {
      sf::Tensor<D> k = rand_tensor({2, 2, 3, 3}, 0.4);
      return sf::grad_check<D>(
          [&](const sf::Tensor<D>& x) {
            return sf::sum_all(sf::avg_pool_2x2(sf::conv2d(x, k, 1, 1)));
          },
          rand_tensor({1, 2, 4, 4}, 1.0));
    }());
  }
  if (all || module == "neuron") {
    for (const char* mode : {"lif", "plif", "liaf", "pliaf"}) {
      sf::NeuronConfig cfg;
      cfg.mode = sf::neuron_mode_from_name(mode);
      sf::NeuronCell<D> cell(cfg);
      report(std::string("neuron_sequence[") + mode + "] 3 steps",
             sf::grad_check<D>(
                 [&](const sf::Tensor<D>& x) { return sf::sum_all(sf::neuron_sequence(x, cell)); },
                 rand_tensor({3, 4}, 1.5)));
    }
  }
  if (all || module == "attention") {
    report("divided attention (temporal+spatial)", [&] {
      return sf::grad_check<D>(
          [&](const sf::Tensor<D>& q) {
            sf::Tensor<D> k = q, v = q;
            return sf::sum_all(
                sf::spatial_attention(sf::temporal_attention(q, k, v, 2), k, v, 2));
          },
          rand_tensor({2, 1, 3, 4}, 1.0));
    }());
  }
  if (all || module == "tokenizer") {
    sf::NeuronConfig ncfg;
    ncfg.mode = sf::NeuronMode::lif;
    sf::RngStream init(5);
    sf::TokenizerModule<D> mod(2, 2, 3, ncfg, init);  // downsample 2 -> 2 channels
    report("tokenizer downsample module", sf::grad_check<D>([&](const sf::Tensor<D>& x) {
             return sf::sum_all(mod.forward(x, true));
           },
           rand_tensor({2, 1, 2, 4, 4}, 1.0)));
  }
  if (all || module == "block") {
    sf::NeuronConfig ncfg;
    sf::RngStream init(6);
    sf::TransformerBlock<D> blk(8, 2, 8, ncfg, 0.0, init);
    sf::RngStream drop(0);
    report("transformer block", sf::grad_check<D>([&](const sf::Tensor<D>& z) {
             return sf::sum_all(sf::transformer_block(z, blk, true, drop));
           },
           rand_tensor({2, 1, 3, 8}, 1.0)));
  }
  if (all || module == "model") {
    sf::ModelSpec spec = sf::parse_variant("Spikeformer-2/3x1x1");
    spec.blocks = 1;
    spec.heads = 2;
    spec.mlp_ratio = 1;
    spec.dim = 16;
    spec.input_h = 8;
    spec.input_w = 8;
    spec.time_steps = 2;
    spec.classes = 3;
    spec.droppath = 0.0;
    sf::SpikeformerModel<D> model(spec, 7);
    sf::Tensor<D> x = sf::Tensor<D>::zeros({2, 1, 2, 8, 8});
    for (sf::Index i = 0; i < x.numel(); ++i) x.data()[i] = rng.bernoulli(0.3) ? 1.0 : 0.0;
    sf::RngStream drop(0);
    report("micro model end-to-end",
           sf::grad_check_params<D>(
               [&]() {
                 return sf::smoothed_cross_entropy(model.forward(x, true, drop),
                                                   std::vector<sf::Index>{1}, 0.1);
               },
               model.trainable_parameters()));
  }

  std::cout << (failures == 0 ? "all gradient checks passed" : "gradient checks FAILED")
            << std::endl;
  return failures;
}

}  // namespace
