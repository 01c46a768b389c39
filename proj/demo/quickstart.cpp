// Generates a small task, trains the twin decoder briefly and captions a
// few held-out scenes.
#include <iostream>

#include "ntt/decoding.hpp"
#include "ntt/taskgen.hpp"
#include "ntt/training.hpp"

int main() {
  ntt::TaskConfig task_cfg;
  task_cfg.n_examples = 200;
  const ntt::GeneratedTask task = ntt::generate(11, task_cfg);

  ntt::ModelConfig model_cfg;
  model_cfg.vocab = task.vocab.size();
  model_cfg.subcats = task.bank.subcategory_count();
  ntt::CaptionModel model(model_cfg, 11);

  ntt::TrainConfig train_cfg;
  train_cfg.base_lr = 5e-3;
  train_cfg.batch_size = 8;
  train_cfg.epochs = 8;
  ntt::Trainer trainer(model, train_cfg);
  ntt::train(trainer, task.dataset.select(ntt::Split::Train), task.dataset.select(ntt::Split::Val),
             [](const ntt::EpochRecord& r) {
               std::cout << "epoch " << r.epoch << "  loss " << r.mean_loss << "  val acc " << r.accuracy << '\n';
             });

  for (const ntt::Example* ex : task.dataset.select(ntt::Split::Test)) {
    const auto tokens = ntt::beam_decode(model, ex->regions, 3, 20).best.tokens;
    std::cout << ntt::join_words(ntt::caption_words(tokens, ex->regions, task.vocab, task.bank, true)) << "   | ref: "
              << ntt::join_words(ntt::caption_words(ex->tokens, ex->regions, task.vocab, task.bank, false)) << '\n';
  }
}
