#include "davr/attnet.hpp"

#include <stdexcept>

namespace davr::attnet {

AttNetArch AttNetArch::resnet50(int num_identities) {
  AttNetArch a;
  a.input_size = 224;
  a.stem_channels = 64;
  a.bottleneck = true;
  a.stages = {{256, 3, 1}, {512, 4, 2}, {1024, 6, 2}, {2048, 3, 2}};
  a.num_identities = num_identities;
  return a;
}

AttNetArch AttNetArch::tiny(int num_identities, int input_size) {
  AttNetArch a;
  a.input_size = input_size;
  a.stem_channels = 8;
  a.bottleneck = false;
  a.stages = {{8, 1, 1}, {8, 1, 2}};
  a.num_identities = num_identities;
  a.dropout = 0.0;
  return a;
}

AttNetArch AttNetArch::smoke(int num_identities, int input_size) {
  AttNetArch a;
  a.input_size = input_size;
  a.stem_channels = 16;
  a.stem_stride = 1;  // keep spatial detail at small smoke resolutions
  a.bottleneck = false;
  a.stages = {{32, 1, 1}, {64, 1, 2}, {128, 1, 2}};
  a.num_identities = num_identities;
  a.dropout = 0.5;
  return a;
}

Var ResidualBlock::forward(const Var& x, bool training) const {
  Var shortcut = has_downsample ? down_bn.forward(down.forward(x), training) : x;
  Var h;
  if (bottleneck) {
    h = relu(n1.forward(c1.forward(x), training));
    h = relu(n2.forward(c2.forward(h), training));
    h = n3.forward(c3.forward(h), training);
  } else {
    h = relu(n1.forward(c1.forward(x), training));
    h = n2.forward(c2.forward(h), training);
  }
  return relu(add(h, shortcut));
}

void ResidualBlock::collect(const std::string& prefix, std::vector<NamedParam>& out) const {
  c1.collect(prefix + ".conv1", out);
  n1.collect(prefix + ".bn1", out);
  c2.collect(prefix + ".conv2", out);
  n2.collect(prefix + ".bn2", out);
  if (bottleneck) {
    c3.collect(prefix + ".conv3", out);
    n3.collect(prefix + ".bn3", out);
  }
  if (has_downsample) {
    down.collect(prefix + ".down", out);
    down_bn.collect(prefix + ".down_bn", out);
  }
}

void ResidualBlock::collect_buffers(const std::string& prefix,
                                    std::vector<NamedBuffer>& out) const {
  n1.collect_buffers(prefix + ".bn1", out);
  n2.collect_buffers(prefix + ".bn2", out);
  if (bottleneck) n3.collect_buffers(prefix + ".bn3", out);
  if (has_downsample) down_bn.collect_buffers(prefix + ".down_bn", out);
}

AttNetParams AttNetParams::create(const AttNetArch& arch, uint64_t seed) {
  if (arch.num_identities <= 0)
    throw std::invalid_argument("attnet arch needs num_identities > 0");
  Rng rng(seed);
  AttNetParams p;
  p.arch = arch;
  p.stem_conv = Conv2dLayer::create_kaiming(3, arch.stem_channels, 7, arch.stem_stride, 3, rng);
  p.stem_bn = BatchNormLayer::create(arch.stem_channels);

  int cin = arch.stem_channels;
  for (const StageSpec& spec : arch.stages) {
    std::vector<ResidualBlock> blocks;
    for (int i = 0; i < spec.blocks; ++i) {
      int stride = i == 0 ? spec.stride : 1;
      ResidualBlock b;
      b.bottleneck = arch.bottleneck;
      if (arch.bottleneck) {
        int mid = spec.channels / 4;
        b.c1 = Conv2dLayer::create_kaiming(cin, mid, 1, 1, 0, rng);
        b.n1 = BatchNormLayer::create(mid);
        b.c2 = Conv2dLayer::create_kaiming(mid, mid, 3, stride, 1, rng);
        b.n2 = BatchNormLayer::create(mid);
        b.c3 = Conv2dLayer::create_kaiming(mid, spec.channels, 1, 1, 0, rng);
        b.n3 = BatchNormLayer::create(spec.channels);
      } else {
        b.c1 = Conv2dLayer::create_kaiming(cin, spec.channels, 3, stride, 1, rng);
        b.n1 = BatchNormLayer::create(spec.channels);
        b.c2 = Conv2dLayer::create_kaiming(spec.channels, spec.channels, 3, 1, 1, rng);
        b.n2 = BatchNormLayer::create(spec.channels);
      }
      if (stride != 1 || cin != spec.channels) {
        b.has_downsample = true;
        b.down = Conv2dLayer::create_kaiming(cin, spec.channels, 1, stride, 0, rng);
        b.down_bn = BatchNormLayer::create(spec.channels);
      }
      cin = spec.channels;
      blocks.push_back(std::move(b));
    }
    p.stages.push_back(std::move(blocks));
  }

  int c = arch.backbone_channels();
  p.attention_fc = LinearLayer::create(c, c, rng, 0.01);
  p.fc1 = LinearLayer::create_kaiming(c, arch.fc1_dim(), rng);
  p.fc2 = LinearLayer::create_kaiming(arch.fc1_dim(), arch.fc2_dim(), rng);
  p.id_classifier = LinearLayer::create(arch.embedding_dim(), arch.num_identities, rng, 0.01);
  p.verif_classifier = LinearLayer::create(arch.embedding_dim(), 2, rng, 0.01);
  return p;
}

Var AttNetParams::backbone_forward(const Var& img, bool training) const {
  const auto& s = img.shape();
  if (s.size() != 4 || s[1] != 3 || s[2] != arch.input_size || s[3] != arch.input_size)
    throw std::invalid_argument("attnet: expected [N,3," + std::to_string(arch.input_size) + "," +
                                std::to_string(arch.input_size) + "] input, got " +
                                img.value().shape_str());
  Var h = relu(stem_bn.forward(stem_conv.forward(img), training));
  h = maxpool2d(h, 3, 2, 1);
  for (const auto& stage : stages)
    for (const ResidualBlock& block : stage) h = block.forward(h, training);
  return h;
}

std::vector<NamedParam> AttNetParams::params() const {
  std::vector<NamedParam> out;
  stem_conv.collect("backbone.stem.conv", out);
  stem_bn.collect("backbone.stem.bn", out);
  for (size_t s = 0; s < stages.size(); ++s)
    for (size_t b = 0; b < stages[s].size(); ++b)
      stages[s][b].collect("backbone.stage" + std::to_string(s) + ".block" + std::to_string(b),
                           out);
  attention_fc.collect("attention_fc", out);
  fc1.collect("fc1", out);
  fc2.collect("fc2", out);
  id_classifier.collect("id_classifier", out);
  verif_classifier.collect("verif_classifier", out);
  return out;
}

std::vector<NamedBuffer> AttNetParams::buffers() const {
  std::vector<NamedBuffer> out;
  stem_bn.collect_buffers("backbone.stem.bn", out);
  for (size_t s = 0; s < stages.size(); ++s)
    for (size_t b = 0; b < stages[s].size(); ++b)
      stages[s][b].collect_buffers(
          "backbone.stage" + std::to_string(s) + ".block" + std::to_string(b), out);
  return out;
}

AttendedEmbedding extract_embedding(const AttNetParams& params, const Var& img, bool training,
                                    Rng* dropout_rng) {
  AttendedEmbedding e;
  Var feat = params.backbone_forward(img, training);
  e.f_g = global_avg_pool(feat);
  e.mask = softmax_rows(params.attention_fc.forward(e.f_g));
  e.f_m = mul(e.f_g, e.mask);
  e.f_sum = add(e.f_g, e.f_m);
  Var h = relu(params.fc1.forward(e.f_sum));
  if (training && params.arch.dropout > 0.0) {
    if (!dropout_rng)
      throw std::invalid_argument("extract_embedding: training with dropout needs an rng");
    h = dropout(h, params.arch.dropout, *dropout_rng, true);
  }
  e.f_d = params.fc2.forward(h);
  e.f_a = concat({e.f_d, e.f_g}, 1);
  return e;
}

Var identification_loss(const Var& logits, const std::vector<int>& labels) {
  return cross_entropy(logits, labels);
}

Var verification_loss(const AttNetParams& params, const AttendedEmbedding& e1,
                      const AttendedEmbedding& e2, const std::vector<int>& same_flags) {
  Var diff_sq = square(sub(e1.f_a, e2.f_a));
  Var logits = params.verif_classifier.forward(diff_sq);
  return cross_entropy(logits, same_flags);  // class 1 = same identity
}

AttNetLoss attnet_total_loss(const AttNetParams& params, const PairBatch& pair, bool training,
                             Rng* dropout_rng) {
  if (pair.images_a.empty() || pair.images_b.empty())
    throw std::invalid_argument("attnet_total_loss: pair images not loaded");
  Var xa = Var::leaf(pair.images_a);
  Var xb = Var::leaf(pair.images_b);
  AttendedEmbedding ea = extract_embedding(params, xa, training, dropout_rng);
  AttendedEmbedding eb = extract_embedding(params, xb, training, dropout_rng);

  Var id_a = identification_loss(params.id_classifier.forward(ea.f_a), pair.ids_a);
  Var id_b = identification_loss(params.id_classifier.forward(eb.f_a), pair.ids_b);
  Var id = mul_scalar(add(id_a, id_b), 0.5);
  Var verif = verification_loss(params, ea, eb, pair.same_flags);

  AttNetLoss out;
  out.identification = id.item();
  out.verification = verif.item();
  out.total = add(id, verif);
  return out;
}

Tensor extract_embeddings_eval(const AttNetParams& params, const DatasetIndex& index,
                               int batch_size) {
  NoGradGuard guard;
  int64_t n = static_cast<int64_t>(index.records.size());
  Tensor out({n, params.arch.embedding_dim()});
  for (int64_t start = 0; start < n; start += batch_size) {
    int64_t end = std::min(n, start + batch_size);
    std::vector<DatasetRecord> recs(index.records.begin() + start, index.records.begin() + end);
    Var imgs = Var::leaf(load_image_batch(recs, params.arch.input_size));
    AttendedEmbedding e = extract_embedding(params, imgs, false);
    const Tensor& fa = e.f_a.value();
    for (int64_t i = 0; i < end - start; ++i)
      for (int64_t j = 0; j < fa.shape()[1]; ++j) out.at2(start + i, j) = fa.at2(i, j);
  }
  return out;
}

}  // namespace davr::attnet
