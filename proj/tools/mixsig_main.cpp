// Command-line front end: generate synthetic datasets, fit any of the five
// methods, and score prediction files. Every run directory gets the fully
// resolved config so the artifacts are reproducible from the directory alone.
//
// Exit codes: 0 success, 2 user/config/data error, 3 numerical failure.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "mixsig/cls.hpp"
#include "mixsig/config.hpp"
#include "mixsig/elbo.hpp"
#include "mixsig/metrics.hpp"
#include "mixsig/pls.hpp"
#include "mixsig/training.hpp"

namespace {

namespace fs = std::filesystem;
using mixsig::ClsConfig;
using mixsig::ClsVariant;
using mixsig::Matrix;
using mixsig::Method;
using mixsig::MixtureDataset;
using mixsig::RunConfig;
using mixsig::Vector;
using mixsig::WeightMode;

struct CliOptions {
  std::string config_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<int> jobs;
  std::optional<std::string> method;
};

RunConfig resolve_config(const CliOptions& opt) {
  RunConfig cfg = opt.config_path.empty() ? RunConfig{} : mixsig::load_run_config(opt.config_path);
  if (opt.seed) cfg.seed = *opt.seed;
  if (opt.jobs) cfg.jobs = *opt.jobs;
  if (opt.method) cfg.method = mixsig::parse_method(*opt.method);
  mixsig::validate_run_config(cfg);
  return cfg;
}

void write_resolved_config(const RunConfig& cfg, const std::string& out_dir) {
  std::ofstream out(out_dir + "/resolved.cfg");
  if (!out) throw mixsig::Error("cannot open for writing: " + out_dir + "/resolved.cfg");
  out << mixsig::resolved_config_text(cfg);
}

std::vector<std::string> indexed_header(const std::string& prefix, Eigen::Index n,
                                        std::vector<std::string> tail = {}) {
  std::vector<std::string> h;
  for (Eigen::Index i = 0; i < n; ++i) h.push_back(prefix + std::to_string(i));
  for (auto& t : tail) h.push_back(std::move(t));
  return h;
}

void write_metrics_csv(const std::string& path,
                       const std::vector<std::pair<std::string, double>>& rows) {
  std::ofstream out(path);
  if (!out) throw mixsig::Error("cannot open for writing: " + path);
  out << "metric,value\n";
  for (const auto& [name, value] : rows) out << name << "," << mixsig::format_double(value) << "\n";
  for (const auto& [name, value] : rows)
    std::cout << name << " = " << mixsig::format_double(value) << "\n";
}

int cmd_generate(const RunConfig& cfg, const std::string& out_dir) {
  mixsig::ToyConfig tc = cfg.toy;
  tc.seed = cfg.seed;
  const MixtureDataset d = mixsig::generate_toy(tc);
  fs::create_directories(out_dir);
  mixsig::save_matrix_csv(out_dir + "/Y_train.csv", d.Y_train);
  mixsig::save_matrix_csv(out_dir + "/R_train.csv", d.R_train);
  mixsig::save_matrix_csv(out_dir + "/Y_test.csv", d.Y_test);
  mixsig::save_matrix_csv(out_dir + "/R_test_truth.csv", *d.R_test_truth);
  mixsig::save_matrix_csv(out_dir + "/lambda.csv", Matrix(d.lambda));
  mixsig::save_matrix_csv(out_dir + "/truth_latents.csv", Matrix(d.truth->h));
  write_resolved_config(cfg, out_dir);
  std::cout << "wrote 7 files to " << out_dir << "\n";
  return 0;
}

MixtureDataset load_fit_dataset(const RunConfig& cfg) {
  MixtureDataset d;
  if (cfg.data.source == "toy") {
    if (cfg.mode != WeightMode::regression)
      throw mixsig::ConfigError("run.mode must be regression when data.source = toy");
    mixsig::ToyConfig tc = cfg.toy;
    tc.seed = cfg.seed;
    d = mixsig::generate_toy(tc);
  } else {
    if (cfg.data.y_train.empty())
      throw mixsig::ConfigError("data.y_train is required for fitting");
    if (cfg.data.r_train.empty())
      throw mixsig::ConfigError("data.r_train is required for fitting");
    d = mixsig::load_csv(cfg.data.y_train, cfg.data.r_train, cfg.data.lambda, cfg.mode);
    if (!cfg.data.y_test.empty()) {
      Matrix yt = mixsig::load_matrix_csv(cfg.data.y_test);
      if (yt.cols() != d.n_locations())
        throw mixsig::DimensionMismatch("data.y_test columns do not match training data");
      d.Y_test = std::move(yt);
      if (!cfg.data.r_test_truth.empty())
        d.R_test_truth = mixsig::load_matrix_csv(cfg.data.r_test_truth);
    }
  }
  if (cfg.data.snv) {
    d.Y_train = mixsig::snv(d.Y_train);
    if (d.n_test() > 0) d.Y_test = mixsig::snv(d.Y_test);
  }
  mixsig::validate_dataset(d);
  return d;
}

void write_trace_csv(const std::string& path, const std::vector<mixsig::TracePoint>& trace) {
  std::ofstream out(path);
  if (!out) throw mixsig::Error("cannot open for writing: " + path);
  out << "iteration,stage,sigma2,elbo\n";
  for (const auto& p : trace)
    out << p.iteration << "," << p.stage << "," << mixsig::format_double(p.sigma2) << ","
        << mixsig::format_double(p.elbo) << "\n";
}

// posterior mean weights followed by the raw posterior parameters
void write_predictions_csv(const std::string& path, const Matrix& means, const Matrix& params,
                           WeightMode mode) {
  auto header = indexed_header("mean_", means.cols());
  const std::string ppre = mode == WeightMode::regression ? "alpha_" : "logit_";
  for (Eigen::Index c = 0; c < params.cols(); ++c) header.push_back(ppre + std::to_string(c));
  Matrix joined(means.rows(), means.cols() + params.cols());
  joined << means, params;
  mixsig::save_matrix_csv(path, joined, header);
}

std::vector<std::pair<std::string, double>> weight_metric_rows(const Matrix& alpha_or_prob,
                                                               const Matrix& truth,
                                                               WeightMode mode) {
  if (mode == WeightMode::regression) {
    const auto m = mixsig::regression_metrics(alpha_or_prob, truth);
    return {{"mse", m.mse}, {"rmse", m.rmse}, {"nlpd", m.nlpd}};
  }
  const auto m = mixsig::classification_metrics(alpha_or_prob, mixsig::one_hot_labels(truth));
  return {{"accuracy", m.accuracy}, {"lpp", m.lpp}, {"auc", m.roc_auc}};
}

int fit_gplvm(const RunConfig& cfg, const MixtureDataset& d, const std::string& out_dir) {
  mixsig::FitConfig fc = cfg.fit;
  fc.variant = cfg.method == Method::ws_gplvm ? mixsig::Variant::correlated
                                              : mixsig::Variant::independent;
  fc.mode = cfg.mode;
  fc.seed = cfg.seed;
  fc.jobs = cfg.jobs;
  const auto res = mixsig::fit_with_restarts(d, fc);
  const auto& st = res.state;
  const Eigen::Index nt = d.n_test(), c = d.n_components(), a = st.latent_dim();

  const auto preds = mixsig::predict_weights(st);
  Matrix means(nt, c), params(nt, c);
  for (Eigen::Index t = 0; t < nt; ++t) {
    means.row(t) = preds[static_cast<std::size_t>(t)].mean.transpose();
    if (cfg.mode == WeightMode::regression)
      params.row(t) = st.weights_test_dir[static_cast<std::size_t>(t)].alpha().transpose();
    else
      params.row(t) = st.weights_test_cat[static_cast<std::size_t>(t)].logits.transpose();
  }
  write_predictions_csv(out_dir + "/predictions.csv", means, params, cfg.mode);

  Matrix lat(nt, 2 * a);
  for (Eigen::Index t = 0; t < nt; ++t) {
    const auto& q = st.latents_test[static_cast<std::size_t>(t)];
    lat.row(t).head(a) = q.mean.transpose();
    lat.row(t).tail(a) = q.log_var.array().exp().transpose();
  }
  auto lat_header = indexed_header("mean_", a);
  for (Eigen::Index i = 0; i < a; ++i) lat_header.push_back("var_" + std::to_string(i));
  mixsig::save_matrix_csv(out_dir + "/latents.csv", lat, lat_header);

  // pure signals on the data wavelength grid at each test row's latent mean
  const auto pieces = mixsig::elbo_pieces(d, st, true);
  const auto qu = mixsig::collapsed_qu_from_pieces(pieces, st);
  const auto qu_j = st.variant == mixsig::Variant::independent
                        ? mixsig::qu_means_per_location(pieces, st)
                        : std::vector<Vector>{};
  std::ofstream pure(out_dir + "/pure_signals.csv");
  if (!pure) throw mixsig::Error("cannot open for writing: " + out_dir + "/pure_signals.csv");
  pure << "test_row,component,lambda,mean,variance\n";
  for (Eigen::Index t = 0; t < nt; ++t) {
    const Vector h = st.latents_test[static_cast<std::size_t>(t)].mean;
    for (Eigen::Index comp = 0; comp < c; ++comp) {
      if (st.variant == mixsig::Variant::correlated) {
        std::vector<mixsig::PureQuery> queries;
        for (Eigen::Index j = 0; j < d.n_locations(); ++j) queries.push_back({h, d.lambda[j]});
        const auto post = mixsig::predict_pure(st, qu, queries, comp);
        for (Eigen::Index j = 0; j < d.n_locations(); ++j)
          pure << t << "," << comp << "," << mixsig::format_double(d.lambda[j]) << ","
               << mixsig::format_double(post.mean[j]) << ","
               << mixsig::format_double(post.variance[j]) << "\n";
      } else {
        for (Eigen::Index j = 0; j < d.n_locations(); ++j) {
          mixsig::CollapsedQU qj{qu_j[static_cast<std::size_t>(j)], qu.cov};
          const auto post = mixsig::predict_pure(st, qj, {{h, d.lambda[j]}}, comp);
          pure << t << "," << comp << "," << mixsig::format_double(d.lambda[j]) << ","
               << mixsig::format_double(post.mean[0]) << ","
               << mixsig::format_double(post.variance[0]) << "\n";
        }
      }
    }
  }
  pure.close();

  write_trace_csv(out_dir + "/elbo_trace.csv", res.trace);
  std::cout << mixsig::method_name(cfg.method) << ": elbo = " << mixsig::format_double(res.final_elbo)
            << ", restart " << res.restart_index << "\n";
  if (d.R_test_truth && nt > 0) {
    const Matrix scored = cfg.mode == WeightMode::regression
                              ? mixsig::dirichlet_alpha_rows(st.weights_test_dir)
                              : mixsig::categorical_probability_rows(st.weights_test_cat);
    write_metrics_csv(out_dir + "/metrics.csv",
                      weight_metric_rows(scored, *d.R_test_truth, cfg.mode));
  }
  return 0;
}

int fit_cls(const RunConfig& cfg, const MixtureDataset& d, const std::string& out_dir) {
  ClsConfig cc = cfg.cls;
  cc.variant = cfg.method == Method::cls ? ClsVariant::cls : ClsVariant::cls_gp;
  cc.mode = cfg.mode;
  cc.seed = cfg.seed;
  cc.jobs = cfg.jobs;
  const auto res = mixsig::cls_fit_with_restarts(d, cc);
  const auto& st = res.state;
  const Eigen::Index nt = d.n_test(), c = d.n_components();

  Matrix means(nt, c), params(nt, c);
  for (Eigen::Index t = 0; t < nt; ++t) {
    if (cfg.mode == WeightMode::regression) {
      const Vector al = st.weights_test_dir[static_cast<std::size_t>(t)].alpha();
      means.row(t) = (al / al.sum()).transpose();
      params.row(t) = al.transpose();
    } else {
      means.row(t) = st.weights_test_cat[static_cast<std::size_t>(t)].probabilities().transpose();
      params.row(t) = st.weights_test_cat[static_cast<std::size_t>(t)].logits.transpose();
    }
  }
  write_predictions_csv(out_dir + "/predictions.csv", means, params, cfg.mode);

  std::ofstream pure(out_dir + "/pure_signals.csv");
  if (!pure) throw mixsig::Error("cannot open for writing: " + out_dir + "/pure_signals.csv");
  pure << "component,lambda,mean,variance\n";
  for (Eigen::Index comp = 0; comp < c; ++comp)
    for (Eigen::Index j = 0; j < d.n_locations(); ++j)
      pure << comp << "," << mixsig::format_double(d.lambda[j]) << ","
           << mixsig::format_double(st.mu(j, comp)) << ","
           << mixsig::format_double(st.covariance(j)(comp, comp)) << "\n";
  pure.close();

  write_trace_csv(out_dir + "/elbo_trace.csv", res.trace);
  std::cout << mixsig::method_name(cfg.method) << ": elbo = " << mixsig::format_double(res.final_elbo)
            << ", restart " << res.restart_index << ", " << res.iters << " iterations\n";
  if (d.R_test_truth && nt > 0) {
    const Matrix scored = cfg.mode == WeightMode::regression
                              ? mixsig::dirichlet_alpha_rows(st.weights_test_dir)
                              : mixsig::categorical_probability_rows(st.weights_test_cat);
    write_metrics_csv(out_dir + "/metrics.csv",
                      weight_metric_rows(scored, *d.R_test_truth, cfg.mode));
  }
  return 0;
}

int fit_pls(const RunConfig& cfg, const MixtureDataset& d, const std::string& out_dir) {
  if (d.n_train() == 0) throw mixsig::ConfigError("pls needs training rows");
  int k = cfg.pls.components;
  if (k == 0) {
    mixsig::RngStream rng(cfg.seed);
    k = mixsig::pls_select_components(d.Y_train, d.R_train, cfg.pls.folds,
                                      cfg.pls.max_components, rng);
  }
  const auto model = mixsig::pls_fit(d.Y_train, d.R_train, k);
  const Matrix yhat = mixsig::pls_predict(model, d.Y_test);
  mixsig::save_matrix_csv(out_dir + "/predictions.csv", yhat,
                          indexed_header("mean_", yhat.cols()));
  std::cout << "pls: " << k << " components\n";
  if (d.R_test_truth && d.n_test() > 0) {
    std::vector<std::pair<std::string, double>> rows;
    if (cfg.mode == WeightMode::regression) {
      const double mse = (yhat - *d.R_test_truth).squaredNorm() /
                         static_cast<double>(yhat.size());
      rows = {{"mse", mse}, {"rmse", std::sqrt(mse)}};
    } else {
      const auto truth = mixsig::one_hot_labels(*d.R_test_truth);
      const auto pred = mixsig::pls_argmax(yhat);
      double acc = 0.0;
      for (Eigen::Index i = 0; i < pred.size(); ++i) acc += pred[i] == truth[i] ? 1.0 : 0.0;
      rows.push_back({"accuracy", acc / static_cast<double>(pred.size())});
      // rank-based AUC works on raw scores, so it survives the missing
      // probability calibration; lpp would not
      double auc_sum = 0.0;
      int scorable = 0;
      for (Eigen::Index comp = 0; comp < yhat.cols(); ++comp) {
        std::vector<char> pos(static_cast<std::size_t>(truth.size()));
        Eigen::Index n_pos = 0;
        for (Eigen::Index i = 0; i < truth.size(); ++i) {
          pos[static_cast<std::size_t>(i)] = truth[i] == comp;
          n_pos += truth[i] == comp ? 1 : 0;
        }
        if (n_pos == 0 || n_pos == truth.size()) continue;
        auc_sum += mixsig::rank_auc(yhat.col(comp), pos);
        ++scorable;
      }
      if (scorable > 0) rows.push_back({"auc", auc_sum / scorable});
    }
    write_metrics_csv(out_dir + "/metrics.csv", rows);
  }
  return 0;
}

int cmd_fit(const RunConfig& cfg, const std::string& out_dir) {
  const MixtureDataset d = load_fit_dataset(cfg);
  fs::create_directories(out_dir);
  write_resolved_config(cfg, out_dir);
  switch (cfg.method) {
    case Method::ws_gplvm:
    case Method::ws_gplvm_ind: return fit_gplvm(cfg, d, out_dir);
    case Method::cls:
    case Method::cls_gp: return fit_cls(cfg, d, out_dir);
    case Method::pls: return fit_pls(cfg, d, out_dir);
  }
  throw mixsig::Error("cmd_fit: bad method enum");
}

int cmd_evaluate(const RunConfig& cfg, const std::string& out_dir) {
  if (cfg.evaluate.predictions.empty() || cfg.evaluate.truth.empty())
    throw mixsig::ConfigError("evaluate.predictions and evaluate.truth are required");
  const Matrix pred = mixsig::load_matrix_csv(cfg.evaluate.predictions);
  const Matrix truth = mixsig::load_matrix_csv(cfg.evaluate.truth);
  const Eigen::Index c = truth.cols();
  if (pred.rows() != truth.rows())
    throw mixsig::DimensionMismatch("evaluate: prediction and truth row counts differ");
  if (pred.cols() != c && pred.cols() != 2 * c)
    throw mixsig::DimensionMismatch(
        "evaluate: predictions need the truth's column count, optionally doubled by the "
        "posterior parameter block");
  // fit output carries [means | alpha or logits]; bare files carry the scores
  Matrix scored;
  if (cfg.mode == WeightMode::regression)
    scored = pred.cols() == 2 * c ? pred.rightCols(c) : pred;  // concentration rows
  else
    scored = pred.leftCols(c);  // probability rows
  fs::create_directories(out_dir);
  write_resolved_config(cfg, out_dir);
  write_metrics_csv(out_dir + "/metrics.csv", weight_metric_rows(scored, truth, cfg.mode));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"weighted-sum GP latent variable mixtures: generate / fit / evaluate"};
  app.require_subcommand(1);

  CliOptions opt;
  auto add_common = [&opt](CLI::App* cmd) {
    cmd->add_option("--config", opt.config_path, "config file (key = value with [sections])");
    cmd->add_option("--out", opt.out_dir, "output directory")->required();
    cmd->add_option("--seed", opt.seed, "override run.seed");
    cmd->add_option("--jobs", opt.jobs, "override run.jobs");
    cmd->add_option("--method", opt.method,
                    "override run.method (ws-gplvm, ws-gplvm-ind, cls, cls-gp, pls)");
  };
  CLI::App* generate = app.add_subcommand("generate", "write a synthetic toy dataset");
  CLI::App* fit = app.add_subcommand("fit", "fit a method and write prediction artifacts");
  CLI::App* evaluate = app.add_subcommand("evaluate", "score a predictions file against truth");
  add_common(generate);
  add_common(fit);
  add_common(evaluate);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    const RunConfig cfg = resolve_config(opt);
    if (generate->parsed()) return cmd_generate(cfg, opt.out_dir);
    if (fit->parsed()) return cmd_fit(cfg, opt.out_dir);
    return cmd_evaluate(cfg, opt.out_dir);
  } catch (const mixsig::NoSuccessfulRestart& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const mixsig::NonFiniteElbo& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const mixsig::NonFiniteStatistic& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const mixsig::NotPositiveDefinite& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const mixsig::ConvergenceFailure& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const mixsig::DegenerateDeflation& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
