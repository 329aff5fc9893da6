#pragma once

#include <optional>
#include <string>
#include <vector>

#include "davr/data.hpp"
#include "davr/nn.hpp"

namespace davr::attnet {

// Attention-based identification + verification feature learner. A shared
// residual backbone feeds a channel-attention head: f_g (pooled feature),
// mask M = softmax over channels, f_m = f_g (x) M, shortcut f_sum = f_g + f_m,
// two FC layers to f_d, retrieval embedding f_a = [f_d, f_g].

struct StageSpec {
  int channels = 0;  // stage output channels
  int blocks = 1;
  int stride = 1;
};

struct AttNetArch {
  int input_size = 224;
  int stem_channels = 64;
  int stem_stride = 2;
  bool bottleneck = true;
  std::vector<StageSpec> stages;
  int num_identities = 0;
  double dropout = 0.5;

  int backbone_channels() const { return stages.back().channels; }
  int fc1_dim() const { return backbone_channels() / 2; }
  int fc2_dim() const { return backbone_channels() / 4; }
  int embedding_dim() const { return fc2_dim() + backbone_channels(); }

  // 224 -> 7x7x2048 backbone, f_a = 512 + 2048 = 2560.
  static AttNetArch resnet50(int num_identities);
  // Gradient-check stand-in: 2 residual stages at 8 channels.
  static AttNetArch tiny(int num_identities, int input_size = 16);
  // Reduced geometry for the synthetic smoke runs.
  static AttNetArch smoke(int num_identities, int input_size = 32);
};

struct ResidualBlock {
  bool bottleneck = false;
  Conv2dLayer c1, c2, c3;
  BatchNormLayer n1, n2, n3;
  bool has_downsample = false;
  Conv2dLayer down;
  BatchNormLayer down_bn;

  Var forward(const Var& x, bool training) const;
  void collect(const std::string& prefix, std::vector<NamedParam>& out) const;
  void collect_buffers(const std::string& prefix, std::vector<NamedBuffer>& out) const;
};

struct AttNetParams {
  AttNetArch arch;
  Conv2dLayer stem_conv;
  BatchNormLayer stem_bn;
  std::vector<std::vector<ResidualBlock>> stages;
  LinearLayer attention_fc;  // 1x1 conv on the pooled 1x1 map
  LinearLayer fc1, fc2;
  LinearLayer id_classifier;
  LinearLayer verif_classifier;

  static AttNetParams create(const AttNetArch& arch, uint64_t seed);
  Var backbone_forward(const Var& img, bool training) const;
  std::vector<NamedParam> params() const;
  std::vector<NamedBuffer> buffers() const;
};

struct AttendedEmbedding {
  Var f_g;    // pooled backbone feature [N, C]
  Var mask;   // channel attention, rows sum to 1
  Var f_m;    // attended feature
  Var f_sum;  // shortcut fusion f_g + f_m
  Var f_d;    // FC-reduced feature
  Var f_a;    // retrieval embedding [f_d, f_g]
};

// Deterministic when !training (dropout off, batch-norm running stats).
AttendedEmbedding extract_embedding(const AttNetParams& params, const Var& img, bool training,
                                    Rng* dropout_rng = nullptr);

// Mean softmax cross-entropy over the identity classes.
Var identification_loss(const Var& logits, const std::vector<int>& labels);

// Two-way cross-entropy on the classifier applied to (f_a1 - f_a2)^2.
Var verification_loss(const AttNetParams& params, const AttendedEmbedding& e1,
                      const AttendedEmbedding& e2, const std::vector<int>& same_flags);

struct AttNetLoss {
  Var total;
  double identification = 0;
  double verification = 0;
};

// Identification loss averaged over both siamese branches plus verification
// loss, equally weighted. Pair images must be loaded.
AttNetLoss attnet_total_loss(const AttNetParams& params, const PairBatch& pair, bool training,
                             Rng* dropout_rng = nullptr);

// Evaluation-mode embeddings for a whole index, rows aligned with records.
Tensor extract_embeddings_eval(const AttNetParams& params, const DatasetIndex& index,
                               int batch_size = 16);

}  // namespace davr::attnet
