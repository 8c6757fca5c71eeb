#include "mf/dit/train.hpp"

#include <fmt/format.h>

#include <cmath>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "mf/common/error.hpp"
#include "mf/dit/flow.hpp"
#include "mf/numeric/ops.hpp"
#include "mf/numeric/optimizer.hpp"

MF_NUMERIC_BEGIN
namespace dit {

namespace fs = std::filesystem;
using nlohmann::json;

int TrainConfig::stage_at(int step) const {
  int end = 0;
  for (int s = 0; s < 3; ++s) {
    end += stage_steps[std::size_t(s)];
    if (step < end) return s;
  }
  return 2;
}

int TrainConfig::stage_start(int stage) const {
  int start = 0;
  for (int s = 0; s < stage; ++s) start += stage_steps[std::size_t(s)];
  return start;
}

void select_stage(Model& model, int stage) {
  switch (stage) {
    case 0: model.parameters().set_trainable(is_stage0_parameter); break;
    case 1: model.parameters().set_trainable(is_stage1_parameter); break;
    case 2: model.parameters().set_trainable(is_stage2_parameter); break;
    default: throw ContractError(fmt::format("unknown training stage {}", stage));
  }
}

ForwardOptions stage_forward_options(int stage) {
  ForwardOptions o;
  o.vcm = stage >= 1;
  o.omm = stage >= 2;
  return o;
}

StepResult training_step(const Model& model, const Batch& batch, int stage, std::mt19937_64& rng) {
  if (!batch.z0.defined() || batch.z0.dim(0) == 0) throw ContractError("training step needs a batch with video");
  const auto b = batch.z0.dim(0), per = batch.z0.numel() / b;
  std::vector<double> t(b);
  for (auto& ti : t) ti = sample_timestep(rng);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<Scalar> zt(batch.z0.numel()), vt(batch.z0.numel()), noise(per);
  const auto z0 = batch.z0.values();
  for (std::size_t i = 0; i < b; ++i) {
    for (auto& n : noise) n = static_cast<Scalar>(normal(rng));
    const auto fs = flow_interpolate<Scalar>(z0.subspan(i * per, per), noise, t[i]);
    std::copy(fs.z_t.begin(), fs.z_t.end(), zt.begin() + std::ptrdiff_t(i * per));
    std::copy(fs.v_t.begin(), fs.v_t.end(), vt.begin() + std::ptrdiff_t(i * per));
  }
  const Tensor z_t(batch.z0.shape(), std::move(zt)), v_t(batch.z0.shape(), std::move(vt));
  StepResult r;
  r.loss = ops::mse(model.velocity(z_t, t, batch.conditioning, stage_forward_options(stage)), v_t);
  if (!std::isfinite(double(r.loss.item()))) {
    std::string ts;
    for (double ti : t) ts += fmt::format(" {:.4f}", ti);
    throw NumericError(fmt::format("non-finite loss in stage {} (t:{})", stage, ts));
  }
  if (stage == 0 && batch.pooled.defined()) {
    auto lat = ops::permute(batch.z0, {1, 0, 2, 3, 4});
    r.decoder_loss = ops::mse(model.decode_pooled(lat), batch.pooled);
  }
  return r;
}

namespace {

json model_config_json(const ModelConfig& c) {
  return {{"frames", c.frames},       {"width", c.width},
          {"height", c.height},       {"patch", c.patch},
          {"stride", c.stride},       {"dim", c.dim},
          {"heads", c.heads},         {"blocks", c.blocks},
          {"vcm_blocks", c.vcm_blocks}, {"label_vocab", c.label_vocab},
          {"text_vocab", c.text_vocab}, {"points_per_object", c.points_per_object},
          {"seed", c.seed}};
}

ModelConfig model_config_from_json(const json& j) {
  ModelConfig c;
  try {
    c.frames = j.at("frames");
    c.width = j.at("width");
    c.height = j.at("height");
    c.patch = j.at("patch");
    c.stride = j.at("stride");
    c.dim = j.at("dim");
    c.heads = j.at("heads");
    c.blocks = j.at("blocks");
    c.vcm_blocks = j.at("vcm_blocks");
    c.label_vocab = j.at("label_vocab");
    c.text_vocab = j.at("text_vocab");
    c.points_per_object = j.at("points_per_object");
    c.seed = j.at("seed");
  } catch (const json::exception& e) {
    throw SchemaError("/model", e.what());
  }
  return c;
}

void write_atomic(const fs::path& path, const std::string& text) {
  const auto tmp = fs::path(path.string() + ".tmp");
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f || !(f << text)) throw IoError("cannot write " + tmp.string());
  }
  fs::rename(tmp, path);
}

json read_json(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot read " + path.string());
  try {
    return json::parse(f);
  } catch (const json::exception& e) {
    throw SchemaError("", path.string() + ": " + e.what());
  }
}

constexpr const char* kLogHeader = "step,stage,loss,lr";

// Keeps the header and rows for steps before `step`.
void truncate_log(const fs::path& path, int step) {
  std::string kept = std::string(kLogHeader) + "\n";
  std::ifstream in(path);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line.starts_with("step")) continue;
    if (std::stoi(line.substr(0, line.find(','))) < step) kept += line + "\n";
  }
  in.close();
  write_atomic(path, kept);
}

std::mt19937_64 step_rng(std::uint64_t seed, int step) {
  std::seed_seq seq{std::uint32_t(seed), std::uint32_t(seed >> 32), std::uint32_t(step)};
  return std::mt19937_64(seq);
}

}  // namespace

void save_model(const Model& model, const fs::path& dir) {
  fs::create_directories(dir);
  write_atomic(dir / "model.json", model_config_json(model.config()).dump(2) + "\n");
  model.parameters().save(dir / "model.ckpt");
}

Model load_model(const fs::path& dir) {
  const auto cfg_path = dir / "model.json", ckpt = dir / "model.ckpt";
  if (!fs::exists(cfg_path) || !fs::exists(ckpt)) throw IoError("no checkpoint in " + dir.string());
  Model model(model_config_from_json(read_json(cfg_path)));
  model.parameters().load(ckpt);
  return model;
}

void train(Model& model, const std::vector<ClipTensors>& data, const TrainConfig& config, const fs::path& out_dir,
           const std::function<void(const TrainProgress&)>& progress) {
  if (data.empty()) throw ContractError("training dataset is empty");
  if (config.batch < 1) throw ContractError("batch size must be positive");
  fs::create_directories(out_dir);
  AdamWConfig opt_cfg;
  opt_cfg.weight_decay = config.weight_decay;
  AdamW optimizer(model.parameters(), opt_cfg);

  const auto state_path = out_dir / "train_state.json", log_path = out_dir / "train_log.csv";
  int step = 0;
  if (fs::exists(state_path)) {
    step = read_json(state_path).at("step").get<int>();
    model.parameters().load(out_dir / "model.ckpt");
    optimizer.load(out_dir / "optimizer.ckpt");
  }
  truncate_log(log_path, step);

  auto checkpoint = [&](int next_step) {
    save_model(model, out_dir);
    optimizer.save(out_dir / "optimizer.ckpt");
    json state{{"step", next_step},
               {"seed", config.seed},
               {"stage_steps", config.stage_steps},
               {"batch", config.batch},
               {"lr", config.lr}};
    write_atomic(state_path, state.dump(2) + "\n");
  };

  std::ofstream log(log_path, std::ios::app);
  const int total = config.total_steps();
  for (; step < total; ++step) {
    const int stage = config.stage_at(step);
    const int in_stage = step - config.stage_start(stage);
    if (stage == 1 && in_stage == 0) model.init_vcm_from_base();
    select_stage(model, stage);

    auto rng = step_rng(config.seed, step);
    std::uniform_int_distribution<std::size_t> pick(0, data.size() - 1);
    std::bernoulli_distribution drop(config.guidance_dropout[std::size_t(stage)]);
    std::vector<const ClipTensors*> clips;
    std::vector<bool> dropped;
    for (int i = 0; i < config.batch; ++i) {
      clips.push_back(&data[pick(rng)]);
      dropped.push_back(drop(rng));
    }
    const auto batch = make_batch(model.config(), clips, dropped);

    model.parameters().zero_grad();
    const auto r = training_step(model, batch, stage, rng);
    backward(r.loss);
    if (r.decoder_loss.defined()) backward(r.decoder_loss);
    const double lr = warmup_constant_lr(config.lr, in_stage, config.warmup);
    optimizer.step(lr);

    const double loss = r.loss.item();
    log << fmt::format("{},{},{:.6g},{:.6g}\n", step, stage, loss, lr);
    if (progress) progress({step, stage, loss, lr});
    if ((step + 1) % config.checkpoint_every == 0 && step + 1 < total) {
      log.flush();
      checkpoint(step + 1);
    }
  }
  log.flush();
  checkpoint(total);
}

}  // namespace dit
MF_NUMERIC_END
