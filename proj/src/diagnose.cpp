#include "laver/diagnose.hpp"

#include <algorithm>
#include <fstream>
#include <stdexcept>

#include "json.hpp"
#include "laver/checkpoint.hpp"
#include "laver/config.hpp"
#include "laver/diagnostics.hpp"
#include "laver/objectives.hpp"
#include "laver/tensor_io.hpp"
#include "laver/train.hpp"

namespace laver {
namespace {

using json = nlohmann::json;

json alignment(const Tensor& a, const Tensor& b, std::size_t knn) {
  const std::size_t k = std::min(knn, a.rows() - 1);
  json j;
  try {
    j["cka"] = cka(linear_kernel(a), linear_kernel(b));
    j["cknna"] = cknna(a, b, k);
    j["k"] = k;
  } catch (const std::invalid_argument& e) {
    j["error"] = e.what();
  }
  return j;
}

// PCA map on disk, or the rejection reason in the report.
json pca_to(const Tensor& features, std::size_t rows, std::size_t cols, const std::filesystem::path& path) {
  try {
    const PcaResult pca = pca_rgb(features, rows, cols);
    write_ppm(path, pca.image);
    return {{"file", path.filename().string()}, {"eigenvalues", pca.eigenvalues}};
  } catch (const std::invalid_argument& e) {
    return {{"error", e.what()}};
  }
}

json gram_to(const Tensor& features, const std::filesystem::path& path) {
  const Tensor g = gram(features);
  write_pgm(path, g.rows(), g.cols(), to_grey(g, -1.0, 1.0));
  return {{"file", path.filename().string()}};
}

std::string finish(const json& report, const std::filesystem::path& out_dir) {
  const std::string text = report.dump(2);
  std::ofstream out(out_dir / "report.json");
  if (!out) throw std::runtime_error("cannot write " + (out_dir / "report.json").string());
  out << text << '\n';
  return text;
}

}  // namespace

std::string diagnose_checkpoint(const std::filesystem::path& ckpt_path, const DiagnoseOptions& options,
                                const std::filesystem::path& out_dir) {
  if (options.probe_count < 1) throw std::invalid_argument("diagnose: probe_count must be >= 1");
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  const TrainConfig config = parse_config(ckpt.config_text);
  const ModelParams params = restore_params(ckpt, config.model, "");
  std::optional<ModelParams> teacher;
  if (ckpt.tensors.contains("teacher/embed.tokens")) teacher = restore_params(ckpt, config.model, "teacher/");
  std::filesystem::create_directories(out_dir);

  Rng rng(options.probe_seed);
  const std::vector<Sample> probe = generate(rng, config.synth(), options.probe_count);
  const AttentionLayout mixed = build_mixed_layout(sample_segments(config.model, probe.front().prompt_len));
  const ProbeReport pr = evaluate_probe(params, probe, mixed);

  json report;
  report["checkpoint"] = ckpt_path.string();
  report["mode"] = to_string(config.mode);
  report["probe_seed"] = options.probe_seed;
  report["probe_count"] = options.probe_count;
  report["cosine"] = pr.cosine;
  report["attention"] = pr.attention;
  report["probe_accuracy"] = pr.accuracy;
  report["deep_cosine"] = pr.deep_cosine();
  report["mean_attention"] = pr.mean_attention();

  const std::vector<std::size_t> vis = mixed.positions_of(SegmentKind::vision);
  const ForwardTrace trace = forward(params, sample_tokens(params, probe.front()), mixed, true);
  std::vector<Tensor> states;
  for (const Tensor& h : trace.hidden) states.push_back(gather_rows(h, vis));
  json to_final = json::array();
  for (const Tensor& s : states) to_final.push_back(alignment(s, states.back(), options.knn));
  report["layer_vs_final"] = to_final;

  if (teacher) {
    const ForwardTrace tt = forward(*teacher, sample_tokens(*teacher, probe.front()), mixed, true);
    json st = json::array();
    for (std::size_t l = 0; l < states.size(); ++l) {
      st.push_back(alignment(states[l], gather_rows(tt.hidden[l], vis), options.knn));
    }
    report["student_vs_teacher"] = st;
  }

  const std::size_t rows = config.model.grid_rows, cols = config.model.grid_cols;
  report["pca_input"] = pca_to(states.front(), rows, cols, out_dir / "pca_input.ppm");
  report["pca_final"] = pca_to(states.back(), rows, cols, out_dir / "pca_final.ppm");
  report["gram_final"] = gram_to(states.back(), out_dir / "gram_final.pgm");
  return finish(report, out_dir);
}

std::string diagnose_features(const std::filesystem::path& features_a,
                              const std::optional<std::filesystem::path>& features_b, std::size_t rows,
                              std::size_t cols, const DiagnoseOptions& options,
                              const std::filesystem::path& out_dir) {
  const Tensor a = load_lvtd(features_a);
  if (a.rank() != 2 || a.rows() < 2) throw std::invalid_argument("diagnose: features must be [N, D] with N >= 2");
  std::filesystem::create_directories(out_dir);
  json report;
  report["features"] = features_a.string();
  report["n"] = a.rows();
  report["dim"] = a.cols();
  try {
    report["mean_cosine"] = mean_pairwise_cosine(a);
  } catch (const std::invalid_argument& e) {
    report["mean_cosine"] = {{"error", e.what()}};
  }
  if (rows * cols == a.rows() && rows > 0) report["pca"] = pca_to(a, rows, cols, out_dir / "pca.ppm");
  report["gram"] = gram_to(a, out_dir / "gram.pgm");
  if (features_b) {
    const Tensor b = load_lvtd(*features_b);
    if (b.rank() != 2 || b.rows() != a.rows()) {
      throw std::invalid_argument("diagnose: second dump must be [" + std::to_string(a.rows()) + ", D]");
    }
    report["against"] = features_b->string();
    report["alignment"] = alignment(a, b, options.knn);
  }
  return finish(report, out_dir);
}

}  // namespace laver
