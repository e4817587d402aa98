#include <functional>

#include "sinformer/grad_check.hpp"
#include "sinformer/training.hpp"

namespace sinformer::train {

std::vector<LossCheck> run_gradient_suite(const ModelConfig& cfg, const GradSuiteOptions& opt) {
  cfg.validate();
  auto params = ModelParams<double>::init(cfg, opt.seed);
  // Perturb biases and gains away from their zero/one init so every term is exercised.
  Rng jitter{opt.seed, 17};
  for (auto& nt : params.named())
    if (nt.trainable && nt.tensor.rank() == 1)
      for (auto& v : nt.tensor.data()) v += 0.1 * jitter.normal();

  const std::size_t batch = opt.batch;
  Rng data_rng{opt.seed, 29};
  auto records = Tensor<double>::zeros({batch, cfg.m});
  for (auto& v : records.data()) v = data_rng.normal();
  std::vector<std::uint16_t> labels(batch);
  for (std::size_t i = 0; i < batch; ++i) labels[i] = static_cast<std::uint16_t>(i % cfg.K);
  const std::uint64_t mask_seed = Rng{opt.seed, 31}.next_u64();

  auto masked_pass = [&](Tape<double>& tape, bool aux) {
    Rng mask_rng{mask_seed};
    const auto emb = model::embed_patches(tape, params, records);
    const auto m = model::mask_tokens(tape, emb.tokens, 0.5, params.mask_token, batch, mask_rng);
    const auto p_hat = model::reconstruct(tape, params, m.tokens, batch);
    return aux ? loss_aux(tape, params, p_hat, emb.patches, m.mask.bits)
               : loss_mae(tape, p_hat, emb.patches, m.mask.bits);
  };
  auto classify_pass = [&](Tape<double>& tape, bool ssat) {
    const auto out = model::forward_classify(tape, params, records);
    return ssat ? loss_ssat(tape, out.final_tokens(), out.patches, params.w_r) : loss_cls(tape, out.probs, labels);
  };

  const std::vector<std::pair<std::string, std::function<Tensor<double>(Tape<double>&)>>> losses = {
      {"mae", [&](Tape<double>& t) { return masked_pass(t, false); }},
      {"aux", [&](Tape<double>& t) { return masked_pass(t, true); }},
      {"cls", [&](Tape<double>& t) { return classify_pass(t, false); }},
      {"ssat", [&](Tape<double>& t) { return classify_pass(t, true); }},
  };

  auto tensors = params.trainable();
  const auto names = params.trainable_names();
  nn::GradCheckOptions gopt;
  gopt.max_coords_per_tensor = opt.max_coords_per_tensor;
  gopt.seed = opt.seed;
  gopt.step = opt.step;
  gopt.fourth_order = true;
  if (opt.corrupt) {
    gopt.corrupt_tensor = 0;
    gopt.corrupt_coord = 0;
    gopt.corrupt_factor = 1.5;
  }
  std::vector<LossCheck> out;
  for (const auto& [name, fn] : losses) {
    const auto r = nn::grad_check<double>(fn, std::span(tensors), gopt);
    LossCheck c;
    c.loss = name;
    c.max_rel_error = r.max_rel_error;
    c.worst_param = names.at(r.worst_tensor);
    c.worst_coord = r.worst_coord;
    c.worst_fd = r.worst_fd;
    c.worst_autodiff = r.worst_autodiff;
    c.coords_checked = r.coords_checked;
    c.passed = r.max_rel_error < opt.tolerance;
    out.push_back(std::move(c));
  }
  return out;
}

}  // namespace sinformer::train
