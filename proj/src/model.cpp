#include "promptot/model.hpp"

#include <string>
#include <utility>

#include "promptot/checkpoint.hpp"
#include "promptot/config.hpp"
#include "promptot/errors.hpp"

namespace promptot {

ModelState ModelState::init(const TrainConfig& cfg, std::size_t classes, std::size_t d_v,
                            std::uint64_t seed, std::optional<AdaptorParams> adaptors) {
  cfg.validate();
  if (classes < 2) throw InvalidInputError("ModelState: need at least 2 classes");
  ModelState model;
  model.cfg = cfg;
  model.classes = classes;
  model.d_v = d_v;
  if (adaptors.has_value()) {
    if (adaptors->image.in_dim() != d_v) {
      throw DataError("adaptor input width " + std::to_string(adaptors->image.in_dim()) +
                      " does not match dataset feature width " + std::to_string(d_v));
    }
    model.d = adaptors->image.out_dim();
    model.token_dim = adaptors->text.in_dim();
    model.adaptors = std::move(adaptors);
  } else {
    model.d = d_v;
    model.token_dim = d_v;
  }
  Rng rng(seed);
  Rng visual_rng = rng.fork(1);
  Rng text_rng = rng.fork(2);
  Rng gat_rng = rng.fork(3);
  model.visual = VisualPromptSet::init(classes, cfg.n_p, model.d, visual_rng);
  model.text = TextPromptSet::init(classes, cfg.m, cfg.k, cfg.context_len, model.token_dim,
                                   text_rng);
  model.gat = GatParams::init(model.d, gat_rng);
  return model;
}

std::vector<Tensor*> ModelState::trainable() {
  std::vector<Tensor*> out;
  for (std::size_t c = 0; c < classes; ++c) {
    for (std::size_t g = 0; g < kNumMags; ++g) {
      out.push_back(&visual.at(c, static_cast<Mag>(g)));
    }
  }
  for (std::size_t c = 0; c < classes; ++c) {
    for (std::size_t g = 0; g < kNumMags; ++g) {
      for (std::size_t m = 0; m < text.num_sequences; ++m) {
        out.push_back(&text.token_seq(c, static_cast<Mag>(g), m));
      }
    }
  }
  out.push_back(&gat.self_weight);
  out.push_back(&gat.neigh_weight);
  out.push_back(&gat.self_score);
  out.push_back(&gat.neigh_score);
  return out;
}

std::vector<const Tensor*> ModelState::trainable() const {
  auto mut = const_cast<ModelState*>(this)->trainable();
  return std::vector<const Tensor*>(mut.begin(), mut.end());
}

std::vector<Tensor> ModelState::snapshot_trainable() const {
  std::vector<Tensor> snap;
  for (const Tensor* t : trainable()) snap.push_back(*t);
  return snap;
}

void ModelState::restore_trainable(const std::vector<Tensor>& snap) {
  auto params = trainable();
  if (snap.size() != params.size()) {
    throw InvalidInputError("restore_trainable: snapshot size mismatch");
  }
  for (std::size_t i = 0; i < params.size(); ++i) *params[i] = snap[i];
}

namespace {

struct RegisteredParams {
  std::vector<std::array<Var, kNumMags>> visual;               // [class][mag]
  std::vector<std::array<std::vector<Var>, kNumMags>> tokens;  // [class][mag][m]
  GatParams::OnTape gat;
};

/// Registration order mirrors ModelState::trainable().
RegisteredParams register_params(GradTape& tape, const ModelState& model, bool trainable) {
  auto put = [&](const Tensor& t) {
    return trainable ? tape.parameter(t) : tape.constant(t);
  };
  RegisteredParams reg;
  reg.visual.resize(model.classes);
  reg.tokens.resize(model.classes);
  for (std::size_t c = 0; c < model.classes; ++c) {
    for (std::size_t g = 0; g < kNumMags; ++g) {
      reg.visual[c][g] = put(model.visual.at(c, static_cast<Mag>(g)));
    }
  }
  for (std::size_t c = 0; c < model.classes; ++c) {
    for (std::size_t g = 0; g < kNumMags; ++g) {
      for (std::size_t m = 0; m < model.text.num_sequences; ++m) {
        reg.tokens[c][g].push_back(put(model.text.token_seq(c, static_cast<Mag>(g), m)));
      }
    }
  }
  reg.gat = GatParams::OnTape{put(model.gat.self_weight), put(model.gat.neigh_weight),
                              put(model.gat.self_score), put(model.gat.neigh_score)};
  return reg;
}

SpatialGraph build_graph(const ModelState& model, const MagLevel& level) {
  if (model.cfg.graph == GraphMode::kKnn) {
    return build_knn_graph(level.coords, model.cfg.knn_k);
  }
  return build_grid_graph(level.coords);
}

}  // namespace

SlideForwardResult forward_slide(GradTape& tape, const PatchBag& bag, const ModelState& model,
                                 const ForwardOptions& opts) {
  const MagLevel* levels[kNumMags] = {&bag.low, &bag.high};
  for (const MagLevel* level : levels) {
    if (level->features.rank() != 2 || level->features.cols() != model.d_v) {
      throw DataError("slide " + bag.slide_id + ": feature shape " +
                      level->features.shape_str() + " does not match model d_v=" +
                      std::to_string(model.d_v));
    }
  }

  RegisteredParams reg = register_params(tape, model, opts.trainable);

  const bool use_group = !opts.patch_only && model.cfg.alpha > 0.0;
  std::array<Var, kNumMags> features{};
  std::array<Var, kNumMags> group_features{};
  for (std::size_t g = 0; g < kNumMags; ++g) {
    const Tensor adapted = model.adaptors.has_value()
                               ? model.adaptors->image.apply(levels[g]->features)
                               : levels[g]->features;
    features[g] = tape.constant(adapted);
    if (use_group) {
      const SpatialGraph graph = build_graph(model, *levels[g]);
      group_features[g] = gat_forward(graph, features[g], reg.gat, model.gat.slope);
    }
  }

  TextEncoder encoder;
  if (model.adaptors.has_value()) {
    encoder.adaptor_w1 = model.adaptors->text.w1;
    encoder.adaptor_w2 = model.adaptors->text.w2;
  }
  encoder.output_dim = model.d;

  const DiscreteMeasure mu = DiscreteMeasure::uniform(model.cfg.m);
  const DiscreteMeasure nu = DiscreteMeasure::uniform(model.cfg.n_p);
  SinkhornConfig sk;
  sk.lambda = model.cfg.lambda;
  sk.iterations = model.cfg.iterations;
  sk.uot = model.cfg.uot;

  SlideForwardResult result;
  result.dist_vars.resize(model.classes);
  result.distances.d.resize(model.classes);
  for (std::size_t c = 0; c < model.classes; ++c) {
    for (std::size_t g = 0; g < kNumMags; ++g) {
      Var p_patch = patch_prompting(reg.visual[c][g], features[g]);
      Var fused = p_patch;
      if (use_group) {
        Var p_group = group_prompting(reg.visual[c][g], group_features[g]);
        fused = fuse(p_patch, p_group, FusionConfig{model.cfg.alpha});
      }
      Var text_emb = encode_text_prompts(tape, model.text, c, static_cast<Mag>(g),
                                         reg.tokens[c][g], encoder);
      Var cost = cost_matrix_var(text_emb, fused);
      Var dist;
      if (model.cfg.distance == DistanceMode::kOt) {
        TransportPlan plan;
        if (opts.plan_cache != nullptr && opts.plan_cache->cursor < opts.plan_cache->plans.size()) {
          plan = opts.plan_cache->plans[opts.plan_cache->cursor++];
        } else {
          CostMatrix cm{tape.value(cost)};
          plan = sk.uot.has_value() ? unbalanced_sinkhorn(cm, mu, nu, sk)
                                    : sinkhorn(cm, mu, nu, sk);
          if (opts.plan_cache != nullptr) {
            opts.plan_cache->plans.push_back(plan);
            ++opts.plan_cache->cursor;
          }
        }
        dist = ot_distance_var(cost, plan);
      } else {
        dist = mean_all(cost);
      }
      result.dist_vars[c][g] = dist;
      result.distances.d[c][g] = tape.value(dist).item();
    }
  }
  return result;
}

std::vector<double> predict_slide(const ModelState& model, const PatchBag& bag) {
  GradTape tape;
  auto fw = forward_slide(tape, bag, model, {});
  return class_probabilities(fw.distances,
                             MagWeights{model.cfg.lambda_low, model.cfg.lambda_high});
}

MetricsReport evaluate_slides(const ModelState& model, const std::vector<PatchBag>& slides) {
  if (slides.empty()) throw DataError("evaluate: empty slide set");
  std::vector<std::vector<double>> scores;
  std::vector<std::size_t> labels;
  scores.reserve(slides.size());
  labels.reserve(slides.size());
  for (const PatchBag& bag : slides) {
    scores.push_back(predict_slide(model, bag));
    labels.push_back(bag.label);
  }
  return compute_metrics(scores, labels);
}

// ---------------------------------------------------------------------------
// checkpoint bindings
// ---------------------------------------------------------------------------

namespace {

std::string visual_name(std::size_t c, std::size_t g) {
  return "visual/c" + std::to_string(c) + "/" + mag_name(static_cast<Mag>(g));
}

std::string token_name(std::size_t c, std::size_t g, std::size_t m) {
  return "tokens/c" + std::to_string(c) + "/" + mag_name(static_cast<Mag>(g)) + "/m" +
         std::to_string(m);
}

void append_adaptors(NamedTensors& records, const AdaptorParams& adaptors) {
  records.emplace_back("adaptor/image/w1", adaptors.image.w1);
  records.emplace_back("adaptor/image/w2", adaptors.image.w2);
  records.emplace_back("adaptor/text/w1", adaptors.text.w1);
  records.emplace_back("adaptor/text/w2", adaptors.text.w2);
}

AdaptorParams adaptors_from_records(const NamedTensors& records) {
  AdaptorParams a;
  a.image.w1 = find_record(records, "adaptor/image/w1");
  a.image.w2 = find_record(records, "adaptor/image/w2");
  a.text.w1 = find_record(records, "adaptor/text/w1");
  a.text.w2 = find_record(records, "adaptor/text/w2");
  return a;
}

}  // namespace

void save_model(const ModelState& model, const std::filesystem::path& file) {
  NamedTensors records;
  records.emplace_back("__config", text_to_tensor(serialize_train_config(model.cfg)));
  Tensor dims({4});
  dims[0] = static_cast<double>(model.classes);
  dims[1] = static_cast<double>(model.d_v);
  dims[2] = static_cast<double>(model.token_dim);
  dims[3] = static_cast<double>(model.best_epoch);
  records.emplace_back("__dims", dims);
  for (std::size_t c = 0; c < model.classes; ++c) {
    for (std::size_t g = 0; g < kNumMags; ++g) {
      records.emplace_back(visual_name(c, g), model.visual.at(c, static_cast<Mag>(g)));
    }
  }
  for (std::size_t c = 0; c < model.classes; ++c) {
    for (std::size_t g = 0; g < kNumMags; ++g) {
      for (std::size_t m = 0; m < model.text.num_sequences; ++m) {
        records.emplace_back(token_name(c, g, m),
                             model.text.token_seq(c, static_cast<Mag>(g), m));
      }
    }
  }
  for (std::size_t c = 0; c < model.classes; ++c) {
    records.emplace_back("context/c" + std::to_string(c), model.text.context[c]);
  }
  records.emplace_back("gat/self_weight", model.gat.self_weight);
  records.emplace_back("gat/neigh_weight", model.gat.neigh_weight);
  records.emplace_back("gat/self_score", model.gat.self_score);
  records.emplace_back("gat/neigh_score", model.gat.neigh_score);
  if (model.adaptors.has_value()) append_adaptors(records, *model.adaptors);
  write_checkpoint_file(file, records);
}

ModelState load_model(const std::filesystem::path& file) {
  const NamedTensors records = read_checkpoint_file(file);
  ModelState model;
  model.cfg = parse_train_config_text(tensor_to_text(find_record(records, "__config")),
                                      file.string() + ":__config");
  const Tensor& dims = find_record(records, "__dims");
  if (dims.size() != 4) throw DataError("checkpoint __dims record malformed");
  model.classes = static_cast<std::size_t>(dims[0]);
  model.d_v = static_cast<std::size_t>(dims[1]);
  model.token_dim = static_cast<std::size_t>(dims[2]);
  model.best_epoch = static_cast<std::size_t>(dims[3]);
  if (has_record(records, "adaptor/image/w1")) {
    model.adaptors = adaptors_from_records(records);
    model.d = model.adaptors->image.out_dim();
  } else {
    model.d = model.d_v;
  }
  model.visual.num_classes = model.classes;
  model.visual.num_prompts = model.cfg.n_p;
  model.visual.dim = model.d;
  for (std::size_t c = 0; c < model.classes; ++c) {
    for (std::size_t g = 0; g < kNumMags; ++g) {
      model.visual.prompts.push_back(find_record(records, visual_name(c, g)));
    }
  }
  model.text.num_classes = model.classes;
  model.text.num_sequences = model.cfg.m;
  model.text.tokens_per_seq = model.cfg.k;
  model.text.token_dim = model.token_dim;
  for (std::size_t c = 0; c < model.classes; ++c) {
    for (std::size_t g = 0; g < kNumMags; ++g) {
      for (std::size_t m = 0; m < model.cfg.m; ++m) {
        model.text.tokens.push_back(find_record(records, token_name(c, g, m)));
      }
    }
  }
  for (std::size_t c = 0; c < model.classes; ++c) {
    model.text.context.push_back(find_record(records, "context/c" + std::to_string(c)));
  }
  model.gat.self_weight = find_record(records, "gat/self_weight");
  model.gat.neigh_weight = find_record(records, "gat/neigh_weight");
  model.gat.self_score = find_record(records, "gat/self_score");
  model.gat.neigh_score = find_record(records, "gat/neigh_score");
  return model;
}

void save_adaptors(const AdaptorParams& adaptors, const std::filesystem::path& file) {
  NamedTensors records;
  records.emplace_back("__adaptor_only", Tensor::scalar(1.0));
  append_adaptors(records, adaptors);
  write_checkpoint_file(file, records);
}

AdaptorParams load_adaptors(const std::filesystem::path& file) {
  const NamedTensors records = read_checkpoint_file(file);
  return adaptors_from_records(records);
}

}  // namespace promptot
