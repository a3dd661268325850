// Copyright (c) 2026 the margin-metric authors.
// Released under the Apache License, Version 2.0; see LICENSE.
//
// margin-metric: synthetic two-domain metric-learning experiments from the
// command line. Subcommands: gen-data, train, eval, hash, verify-geometry,
// losscheck. Machine-readable output is JSON or CSV; progress and notes go
// to stderr. All randomness sits behind --seed (or MARGIN_METRIC_SEED).

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <iostream>
#include <optional>
#include <set>

#include "ems/dataset.hpp"
#include "ems/gradcheck.hpp"
#include "ems/geometry.hpp"
#include "ems/hashing.hpp"
#include "ems/model_io.hpp"
#include "ems/retrieval.hpp"
#include "ems/training.hpp"

namespace {

using ems::Json;

// Config-file merge: command-line flags win, then JSON keys, then defaults.
class ConfigMerger {
 public:
  ConfigMerger(CLI::App* cmd, const Json& cfg) : cmd_(cmd), cfg_(cfg) {}

  template <typename T>
  void apply(const std::string& key, T& value) {
    known_.insert(key);
    const CLI::Option* opt = cmd_->get_option_no_throw("--" + key);
    if (opt != nullptr && opt->count() > 0) return;  // flag wins
    if (cfg_.contains(key)) value = cfg_.at(key).get<T>();
  }

  const std::set<std::string>& known() const { return known_; }

 private:
  CLI::App* cmd_;
  const Json& cfg_;
  std::set<std::string> known_;
};

Json load_config(const std::string& path) {
  if (path.empty()) return Json::object();
  std::ifstream in(path);
  ems::require(in.good(), "cannot open config file " + path);
  Json j;
  try {
    in >> j;
  } catch (const Json::parse_error& e) {
    throw std::invalid_argument(std::string("config file: ") + e.what());
  }
  ems::require(j.is_object(), "config file must hold a JSON object");
  return j;
}

// Keys accepted across all subcommands; a config file can drive a whole
// experiment, each command picking what it needs.
const std::set<std::string>& all_config_keys() {
  static const std::set<std::string> keys = {
      "classes", "per-class", "dim", "sigma", "gap", "anchor-radius", "seed",
      "out", "data", "model", "log", "loss", "m", "s", "steps", "batch", "lr",
      "beta1", "beta2", "weight-decay", "hidden", "embed-dim", "squeeze-ratio",
      "proto-mode", "mode", "holdout", "gallery", "p-at", "truncate",
      "histogram", "bits", "loss-terms", "codes", "samples", "fd-step", "n", "d",
      "k"};
  return keys;
}

void reject_unknown_keys(const Json& cfg) {
  for (const auto& [key, value] : cfg.items())
    ems::require(all_config_keys().count(key) > 0,
                 "config file: unknown key \"" + key + "\"");
}

std::uint64_t resolve_seed(const CLI::App* cmd, std::uint64_t flag_value,
                           const Json& cfg) {
  const CLI::Option* opt = cmd->get_option_no_throw("--seed");
  if (opt != nullptr && opt->count() > 0) return flag_value;
  if (cfg.contains("seed")) return cfg.at("seed").get<std::uint64_t>();
  if (const char* env = std::getenv("MARGIN_METRIC_SEED"))
    return std::strtoull(env, nullptr, 10);
  return flag_value;
}

void write_json_output(const Json& j, const std::string& out_path) {
  if (out_path.empty()) {
    std::cout << j.dump(2) << std::endl;
  } else {
    std::ofstream out(out_path);
    ems::require(out.good(), "cannot open output file " + out_path);
    out << j.dump(2) << '\n';
    ems::require(out.good(), "write failed for " + out_path);
  }
}

ems::EmbeddingBatch subset_by_domain(const ems::EmbeddingBatch& batch,
                                     ems::Domain domain) {
  std::vector<ems::Index> rows;
  for (ems::Index i = 0; i < batch.size(); ++i)
    if (batch.domains[static_cast<std::size_t>(i)] == domain) rows.push_back(i);
  ems::EmbeddingBatch out;
  out.vectors.resize(static_cast<ems::Index>(rows.size()), batch.dim());
  out.labels.resize(rows.size());
  out.domains.resize(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.vectors.row(static_cast<ems::Index>(i)) = batch.vectors.row(rows[i]);
    out.labels[i] = batch.labels[static_cast<std::size_t>(rows[i])];
    out.domains[i] = batch.domains[static_cast<std::size_t>(rows[i])];
  }
  return out;
}

ems::EmbeddingBatch embed_all(const ems::Model& model,
                              const ems::EmbeddingBatch& data) {
  auto [embeddings, trace] =
      ems::forward(model.encoder, data.vectors, data.domains);
  return ems::EmbeddingBatch{std::move(embeddings), data.labels, data.domains};
}

// ---------------------------------------------------------------------------

int run_gen_data(CLI::App* cmd, const Json& cfg) {
  static int classes = 10, per_class = 200, dim = 16;
  static double sigma = 0.1, gap = 0.2, anchor_radius = -1.0;
  static std::uint64_t seed = 0;
  static std::string out_path;

  cmd->add_option("--classes", classes, "number of classes K");
  cmd->add_option("--per-class", per_class, "samples per class per domain");
  cmd->add_option("--dim", dim, "raw input dimension");
  cmd->add_option("--sigma", sigma, "class cluster spread");
  cmd->add_option("--gap", gap, "domain transform strength");
  cmd->add_option("--anchor-radius", anchor_radius,
                  "anchor sphere radius (<=0: 10*sigma*sqrt(D))");
  cmd->add_option("--seed", seed, "random seed");
  cmd->add_option("--out", out_path, "output dataset file (EMB1)")->required();

  cmd->callback([cmd, &cfg]() {
    ConfigMerger merge(cmd, cfg);
    merge.apply("classes", classes);
    merge.apply("per-class", per_class);
    merge.apply("dim", dim);
    merge.apply("sigma", sigma);
    merge.apply("gap", gap);
    merge.apply("anchor-radius", anchor_radius);
    merge.apply("out", out_path);
    seed = resolve_seed(cmd, seed, cfg);

    ems::SyntheticConfig gen_cfg;
    gen_cfg.classes = classes;
    gen_cfg.per_class_per_domain = per_class;
    gen_cfg.input_dim = dim;
    gen_cfg.sigma = sigma;
    gen_cfg.domain_gap = gap;
    gen_cfg.anchor_radius = anchor_radius;
    gen_cfg.seed = seed;

    const ems::EmbeddingBatch batch = ems::generate(gen_cfg);
    ems::write_embeddings(out_path, batch);
    std::cerr << "gen-data: wrote " << batch.size() << " samples ("
              << batch.size() / 2 << " per domain, " << classes
              << " classes) to " << out_path << "\n";
  });
  return 0;
}

int run_train(CLI::App* cmd, const Json& cfg) {
  static std::string data_path, model_path, log_path;
  static std::string loss_name = "ems", proto_mode = "parameter";
  static double margin = 4.0, scale = 30.0, lr = 1e-3, beta1 = 0.9,
                beta2 = 0.999, weight_decay = 0.0005;
  static long steps = 5000;
  static int batch = 16, embed_dim = 16, squeeze_ratio = 4;
  static std::vector<int> hidden = {32, 32};
  static std::uint64_t seed = 0;

  cmd->add_option("--data", data_path, "dataset file (EMB1)")->required();
  cmd->add_option("--out", model_path, "output model file (JSON)")->required();
  cmd->add_option("--log", log_path, "training log CSV");
  cmd->add_option("--loss", loss_name,
                  "softmax|ems|squared-ems|prototypical|a-softmax|lmcl");
  cmd->add_option("--m", margin, "margin");
  cmd->add_option("--s", scale, "LMCL scale");
  cmd->add_option("--steps", steps, "training steps");
  cmd->add_option("--batch", batch, "batch size");
  cmd->add_option("--lr", lr, "base learning rate (linearly decayed to 0)");
  cmd->add_option("--beta1", beta1, "Adam beta1");
  cmd->add_option("--beta2", beta2, "Adam beta2");
  cmd->add_option("--weight-decay", weight_decay, "L2 coefficient lambda");
  cmd->add_option("--hidden", hidden, "hidden layer widths")->delimiter(',');
  cmd->add_option("--embed-dim", embed_dim, "embedding dimension");
  cmd->add_option("--squeeze-ratio", squeeze_ratio, "CSE squeeze ratio");
  cmd->add_option("--proto-mode", proto_mode, "parameter|batch-mean");
  cmd->add_option("--seed", seed, "random seed");

  cmd->callback([cmd, &cfg]() {
    ConfigMerger merge(cmd, cfg);
    merge.apply("data", data_path);
    merge.apply("out", model_path);
    merge.apply("log", log_path);
    merge.apply("loss", loss_name);
    merge.apply("m", margin);
    merge.apply("s", scale);
    merge.apply("steps", steps);
    merge.apply("batch", batch);
    merge.apply("lr", lr);
    merge.apply("beta1", beta1);
    merge.apply("beta2", beta2);
    merge.apply("weight-decay", weight_decay);
    merge.apply("hidden", hidden);
    merge.apply("embed-dim", embed_dim);
    merge.apply("squeeze-ratio", squeeze_ratio);
    merge.apply("proto-mode", proto_mode);
    seed = resolve_seed(cmd, seed, cfg);

    ems::TrainConfig train_cfg;
    train_cfg.loss = ems::parse_loss(loss_name);
    train_cfg.margin = margin;
    train_cfg.scale = scale;
    train_cfg.beta1 = beta1;
    train_cfg.beta2 = beta2;
    train_cfg.weight_decay = weight_decay;
    train_cfg.base_lr = lr;
    train_cfg.steps = steps;
    train_cfg.batch_size = batch;
    train_cfg.seed = seed;
    train_cfg.hidden_dims = hidden;
    train_cfg.embed_dim = embed_dim;
    train_cfg.squeeze_ratio = squeeze_ratio;
    if (proto_mode == "parameter")
      train_cfg.proto_mode = ems::ProtoMode::parameter;
    else if (proto_mode == "batch-mean")
      train_cfg.proto_mode = ems::ProtoMode::batch_mean;
    else
      throw std::invalid_argument("--proto-mode must be parameter|batch-mean");
    train_cfg.check();

    const ems::EmbeddingBatch data = ems::read_embeddings(data_path);
    std::cerr << "train: " << data.size() << " samples, loss " << loss_name
              << ", " << steps << " steps\n";
    const ems::TrainResult result = ems::train(data, train_cfg);

    ems::Model model;
    model.encoder = result.encoder;
    model.prototypes = result.prototypes;
    model.biases = result.biases;
    model.loss = train_cfg.loss;
    model.margin = margin;
    model.scale = scale;
    model.squeeze_ratio = squeeze_ratio;
    model.seed = seed;
    ems::save_model(model_path, model);
    if (!log_path.empty()) ems::write_train_log_csv(log_path, result.log);
    if (!result.log.entries.empty())
      std::cerr << "train: final loss " << result.log.entries.back().loss
                << "\n";
    std::cerr << "train: model written to " << model_path << "\n";
  });
  return 0;
}

int run_eval(CLI::App* cmd, const Json& cfg) {
  static std::string model_path, data_path, mode = "standard",
                     gallery_scope = "all", out_path, histogram_path;
  static std::vector<int> holdout;
  static std::vector<long> p_at;
  static long truncate = 0;

  cmd->add_option("--model", model_path, "model file")->required();
  cmd->add_option("--data", data_path, "dataset file (EMB1)")->required();
  cmd->add_option("--mode", mode, "standard|zero-shot");
  cmd->add_option("--holdout", holdout, "held-out classes (zero-shot)")
      ->delimiter(',');
  cmd->add_option("--gallery", gallery_scope,
                  "zero-shot photo gallery: all|holdout");
  cmd->add_option("--p-at", p_at, "precision@K values to report")
      ->delimiter(',');
  cmd->add_option("--truncate", truncate, "MAP@K truncation (0 = full)");
  cmd->add_option("--out", out_path, "metrics JSON (stdout when omitted)");
  cmd->add_option("--histogram", histogram_path,
                  "min-inter-distance histogram CSV");

  cmd->callback([cmd, &cfg]() {
    ConfigMerger merge(cmd, cfg);
    merge.apply("model", model_path);
    merge.apply("data", data_path);
    merge.apply("mode", mode);
    merge.apply("holdout", holdout);
    merge.apply("gallery", gallery_scope);
    merge.apply("p-at", p_at);
    merge.apply("truncate", truncate);
    merge.apply("out", out_path);
    merge.apply("histogram", histogram_path);
    ems::require(mode == "standard" || mode == "zero-shot",
                 "--mode must be standard|zero-shot");
    ems::require(gallery_scope == "all" || gallery_scope == "holdout",
                 "--gallery must be all|holdout");

    const ems::Model model = ems::load_model(model_path);
    const ems::EmbeddingBatch data = ems::read_embeddings(data_path);
    const ems::EmbeddingBatch embedded = embed_all(model, data);

    ems::EmbeddingBatch queries, gallery;
    if (mode == "zero-shot") {
      ems::require(!holdout.empty(), "zero-shot mode needs --holdout");
      ems::SplitSpec spec;
      spec.mode = ems::SplitSpec::Mode::zero_shot;
      spec.holdout = holdout;
      auto [source, target] = ems::split_zero_shot(embedded, spec);
      queries = subset_by_domain(target, ems::Domain::sketch);
      gallery = subset_by_domain(
          gallery_scope == "holdout" ? target : embedded, ems::Domain::photo);
    } else {
      queries = subset_by_domain(embedded, ems::Domain::sketch);
      gallery = subset_by_domain(embedded, ems::Domain::photo);
    }
    ems::require(queries.size() >= 1, "eval: no sketch queries selected");

    ems::MetricsReport report;
    std::optional<long> trunc;
    if (truncate > 0) trunc = truncate;
    report.map = ems::mean_average_precision(queries, gallery, trunc);
    for (long k : p_at) {
      // Mean precision@k over queries.
      double total = 0.0;
      for (ems::Index q = 0; q < queries.size(); ++q) {
        const int label = queries.labels[static_cast<std::size_t>(q)];
        const ems::RankedList ranked =
            ems::rank_euclidean(queries.vectors.row(q), gallery, label);
        std::vector<char> rel(ranked.order.size());
        for (std::size_t i = 0; i < ranked.order.size(); ++i)
          rel[i] =
              gallery.labels[static_cast<std::size_t>(ranked.order[i])] == label;
        total += ems::precision_at_k(rel, k);
      }
      report.precision_at.emplace_back(k, total / static_cast<double>(queries.size()));
    }

    // Distance diagnostics over the evaluated instances, both domains.
    ems::EmbeddingBatch diag;
    diag.vectors.resize(queries.size() + gallery.size(), queries.dim());
    diag.vectors << queries.vectors, gallery.vectors;
    diag.labels = queries.labels;
    diag.labels.insert(diag.labels.end(), gallery.labels.begin(),
                       gallery.labels.end());
    diag.domains = queries.domains;
    diag.domains.insert(diag.domains.end(), gallery.domains.begin(),
                        gallery.domains.end());
    report.distances = ems::distance_report(diag);

    if (!histogram_path.empty())
      ems::write_histogram_csv(histogram_path, report.distances.histogram);
    write_json_output(ems::to_json(report), out_path);
    std::cerr << "eval: MAP " << report.map << " over " << queries.size()
              << " queries, " << gallery.size() << " gallery photos\n";
  });
  return 0;
}

int run_hash(CLI::App* cmd, const Json& cfg) {
  static std::string model_path, data_path, codes_path, out_path,
      loss_terms = "r+s";
  static int bits = 32;
  static long steps = 10000;
  static std::uint64_t seed = 0;

  cmd->add_option("--model", model_path, "model file")->required();
  cmd->add_option("--data", data_path, "dataset file (EMB1)")->required();
  cmd->add_option("--bits", bits, "code length: 32|64|128");
  cmd->add_option("--steps", steps, "hasher training steps");
  cmd->add_option("--loss-terms", loss_terms, "subset of r, s, q (e.g. r+s)");
  cmd->add_option("--codes", codes_path, "output codes file (HSH1)");
  cmd->add_option("--out", out_path, "metrics JSON (stdout when omitted)");
  cmd->add_option("--seed", seed, "random seed");

  cmd->callback([cmd, &cfg]() {
    ConfigMerger merge(cmd, cfg);
    merge.apply("model", model_path);
    merge.apply("data", data_path);
    merge.apply("bits", bits);
    merge.apply("steps", steps);
    merge.apply("loss-terms", loss_terms);
    merge.apply("codes", codes_path);
    merge.apply("out", out_path);
    seed = resolve_seed(cmd, seed, cfg);
    ems::require(bits == 32 || bits == 64 || bits == 128,
                 "--bits must be one of 32, 64, 128");
    ems::require(steps >= 1, "--steps must be >= 1");

    const ems::Model model = ems::load_model(model_path);
    const ems::EmbeddingBatch data = ems::read_embeddings(data_path);
    const ems::EmbeddingBatch embedded = embed_all(model, data);

    ems::HashTrainConfig hash_cfg;
    hash_cfg.bits = bits;
    hash_cfg.steps = steps;
    hash_cfg.seed = seed;
    hash_cfg.flags = ems::parse_loss_terms(loss_terms);

    std::cerr << "hash: training " << bits << "-bit hasher (" << loss_terms
              << ", " << steps << " steps)\n";
    const ems::HashAutoencoder ae = ems::train_hasher(
        model.prototypes, hash_cfg.flags.quant ? &embedded : nullptr, hash_cfg);

    const ems::HashCodes all_codes = ems::encode_batch(ae, embedded);
    if (!codes_path.empty()) ems::write_codes(codes_path, all_codes);

    // Cross-domain Hamming retrieval.
    const ems::EmbeddingBatch sketches =
        subset_by_domain(embedded, ems::Domain::sketch);
    const ems::EmbeddingBatch photos =
        subset_by_domain(embedded, ems::Domain::photo);
    const ems::HashCodes query_codes = ems::encode_batch(ae, sketches);
    const ems::HashCodes gallery_codes = ems::encode_batch(ae, photos);
    const double map_hamming =
        ems::mean_average_precision(query_codes, gallery_codes);

    bool distinct = true;
    std::vector<ems::HashCode> proto_codes;
    for (ems::Index j = 0; j < model.prototypes.num_classes(); ++j)
      proto_codes.push_back(
          ems::encode_binary(ae, model.prototypes.centers.row(j)));
    for (std::size_t a = 0; a < proto_codes.size() && distinct; ++a)
      for (std::size_t b = a + 1; b < proto_codes.size() && distinct; ++b)
        if (ems::hamming_distance(proto_codes[a], proto_codes[b]) == 0)
          distinct = false;

    const ems::HashLossTerms final_terms = ems::hash_losses(
        model.prototypes, hash_cfg.flags.quant ? &embedded : nullptr, ae,
        hash_cfg.flags.quant);

    Json j;
    j["bits"] = bits;
    j["loss_terms"] = loss_terms;
    j["map_hamming"] = map_hamming;
    j["prototype_codes_distinct"] = distinct;
    j["final_losses"] = Json{{"rec", final_terms.rec},
                             {"scat", final_terms.scat},
                             {"quant", final_terms.quant}};
    write_json_output(j, out_path);
    std::cerr << "hash: Hamming MAP " << map_hamming << "\n";
  });
  return 0;
}

int run_verify_geometry(CLI::App* cmd, const Json& cfg) {
  static double margin = ems::minimum_margin();
  static int classes = 2, dim = 2;
  static long samples = 100000;
  static std::uint64_t seed = 0;
  static std::string out_path;

  cmd->add_option("--m", margin, "margin (> 1)");
  cmd->add_option("--classes", classes, "number of prototypes");
  cmd->add_option("--dim", dim, "space dimension");
  cmd->add_option("--samples", samples, "Monte-Carlo samples per class");
  cmd->add_option("--seed", seed, "random seed");
  cmd->add_option("--out", out_path, "report JSON (stdout when omitted)");

  cmd->callback([cmd, &cfg]() {
    ConfigMerger merge(cmd, cfg);
    merge.apply("m", margin);
    merge.apply("classes", classes);
    merge.apply("dim", dim);
    merge.apply("samples", samples);
    merge.apply("out", out_path);
    seed = resolve_seed(cmd, seed, cfg);
    ems::require(classes >= 2, "--classes must be >= 2");
    ems::require(dim >= 1, "--dim must be >= 1");

    ems::Rng rng(seed);
    ems::PrototypeSet protos;
    protos.centers = rng.normal_matrix(classes, dim);
    const ems::RegionReport report =
        ems::verify_region_separation(protos, margin, samples, seed + 1);
    write_json_output(ems::to_json(report), out_path);
    std::cerr << "verify-geometry: m " << margin << ", " << report.violations
              << " violation(s) over " << report.samples_used
              << " accepted samples\n";
  });
  return 0;
}

int run_losscheck(CLI::App* cmd, const Json& cfg) {
  static std::string loss_name = "all";
  static double h = 1e-6;
  static int n = 4, d = 3, k = 3;
  static std::uint64_t seed = 7;
  static std::string out_path;

  cmd->add_option("--loss", loss_name, "loss name or 'all'");
  cmd->add_option("--fd-step", h, "central-difference step");
  cmd->add_option("--n", n, "batch size of the random instance");
  cmd->add_option("--d", d, "feature dimension");
  cmd->add_option("--k", k, "class count");
  cmd->add_option("--seed", seed, "random seed");
  cmd->add_option("--out", out_path, "report JSON (stdout when omitted)");

  cmd->callback([cmd, &cfg]() {
    ConfigMerger merge(cmd, cfg);
    merge.apply("loss", loss_name);
    merge.apply("fd-step", h);
    merge.apply("n", n);
    merge.apply("d", d);
    merge.apply("k", k);
    merge.apply("out", out_path);
    seed = resolve_seed(cmd, seed, cfg);

    std::vector<ems::LossId> ids;
    if (loss_name == "all") {
      ids = {ems::LossId::softmax,      ems::LossId::ems,
             ems::LossId::squared_ems,  ems::LossId::prototypical,
             ems::LossId::a_softmax,    ems::LossId::lmcl};
    } else {
      ids = {ems::parse_loss(loss_name)};
    }

    Json j = Json::object();
    bool all_pass = true;
    for (ems::LossId id : ids) {
      const double margin = id == ems::LossId::lmcl ? 0.35
                            : id == ems::LossId::a_softmax ? 2.0
                                                           : 4.0;
      const ems::LossInstance inst =
          ems::make_random_instance(id, n, d, k, seed, margin);
      const double err = ems::grad_check(inst, h);
      const double tol = id == ems::LossId::a_softmax ? 1e-4 : 1e-5;
      const bool pass = err <= tol;
      all_pass = all_pass && pass;
      j[ems::loss_name(id)] =
          Json{{"max_rel_err", err}, {"tolerance", tol}, {"pass", pass}};
      std::cerr << "losscheck: " << ems::loss_name(id) << " max rel err "
                << err << (pass ? " (ok)" : " (FAIL)") << "\n";
    }
    write_json_output(j, out_path);
    ems::require(all_pass, "losscheck: gradient check failed");
  });
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"margin-metric: Euclidean-margin metric learning on synthetic "
               "two-domain data"};
  app.require_subcommand(1);

  std::string config_path;
  app.add_option("--config", config_path,
                 "JSON config file; command-line flags override it");

  // Pre-scan for --config so subcommand callbacks can merge it.
  Json cfg = Json::object();
  try {
    for (int i = 1; i + 1 < argc; ++i)
      if (std::string(argv[i]) == "--config") {
        cfg = load_config(argv[i + 1]);
        reject_unknown_keys(cfg);
      }

    run_gen_data(app.add_subcommand("gen-data", "generate a synthetic dataset"),
                 cfg);
    run_train(app.add_subcommand("train", "train encoder and prototypes"), cfg);
    run_eval(app.add_subcommand("eval", "cross-domain retrieval metrics"), cfg);
    run_hash(app.add_subcommand("hash", "train the hasher and emit codes"),
             cfg);
    run_verify_geometry(
        app.add_subcommand("verify-geometry",
                           "Monte-Carlo check of the decision-region bounds"),
        cfg);
    run_losscheck(
        app.add_subcommand("losscheck", "finite-difference gradient checks"),
        cfg);

    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
