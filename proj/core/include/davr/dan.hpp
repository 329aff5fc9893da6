#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "davr/nn.hpp"

namespace davr::dan {

// Dual-branch adversarial translation network: two generators (G: X->Y,
// F: Y->X) built from a content encoder with per-location attention, a style
// encoder trained by gram-matrix matching, and a decoder with a global skip
// from the second stem block; plus two PatchGAN discriminators.

struct DanArch {
  int base_channels = 64;  // stem widths: base, 2*base, 4*base
  int num_resblocks = 9;
  int disc_base_channels = 64;
  int disc_downsamples = 4;

  int content_channels() const { return 4 * base_channels; }
  int fused_channels() const { return num_resblocks * content_channels(); }
};

struct StemBlock {
  Conv2dLayer conv;
  InstanceNormLayer norm;
  Var forward(const Var& x) const { return relu(norm.forward(conv.forward(x))); }
  void collect(const std::string& prefix, std::vector<NamedParam>& out) const;
};

// The three stride-1/2/2 stem blocks. Both generators and both encoder
// branches reference one instance: the domains are assumed to share a latent
// space, so these weights are a single parameter set.
struct StemParams {
  StemBlock b1, b2, b3;

  struct Out {
    Var f_share;  // [N, 4B, H/4, W/4]
    Var f_e2;     // [N, 2B, H/2, W/2], decoder skip source
  };
  Out forward(const Var& img) const;
  void collect(const std::string& prefix, std::vector<NamedParam>& out) const;
};

// Content branch residual block; batch/instance normalization removed to keep
// identity detail.
struct PlainResBlock {
  Conv2dLayer conv1, conv2;
  Var forward(const Var& x) const;
  void collect(const std::string& prefix, std::vector<NamedParam>& out) const;
};

struct NormResBlock {
  Conv2dLayer conv1, conv2;
  InstanceNormLayer norm1, norm2;
  Var forward(const Var& x) const;
  void collect(const std::string& prefix, std::vector<NamedParam>& out) const;
};

struct GeneratorParams {
  DanArch arch;
  std::shared_ptr<StemParams> stem;
  std::vector<PlainResBlock> content_blocks;
  Conv2dLayer attention_fc;        // 1x1, fused -> 1, per-location scorer
  Conv2dLayer content_projection;  // 1x1, fused -> 4B
  std::vector<NormResBlock> style_blocks;
  ConvTranspose2dLayer deconv1;
  InstanceNormLayer dnorm1;
  ConvTranspose2dLayer deconv2;
  InstanceNormLayer dnorm2;
  Conv2dLayer out_conv;  // 7x7 -> 3, tanh

  static GeneratorParams create(const DanArch& arch, std::shared_ptr<StemParams> stem, Rng& rng);
  // Collects everything except the shared stem (owned by the model).
  void collect(const std::string& prefix, std::vector<NamedParam>& out) const;
};

struct DiscriminatorParams {
  std::vector<Conv2dLayer> convs;
  std::vector<InstanceNormLayer> norms;  // convs[1..] carry instance norm
  Conv2dLayer score;

  static DiscriminatorParams create(const DanArch& arch, Rng& rng);
  void collect(const std::string& prefix, std::vector<NamedParam>& out) const;
};

struct ContentOutput {
  Var f_c;      // attended + projected content feature [N, 4B, H/4, W/4]
  Var mask;     // attention map [N, 1, H/4, W/4], values in (0,1)
  Var f_e2;     // stem block-2 skip feature
  Var f_fused;  // concatenated residual outputs [N, 9*4B, H/4, W/4]
};

ContentOutput content_encode(const GeneratorParams& gen, const Var& img);
Var style_encode(const GeneratorParams& gen, const Var& img);
Var decode(const GeneratorParams& gen, const ContentOutput& content, const Var& style);
Var translate(const GeneratorParams& gen, const Var& img);

// Single-stem-pass translation capturing the intermediates the losses need.
struct TranslateTrace {
  ContentOutput content;
  Var style;
  Var output;
};
TranslateTrace translate_traced(const GeneratorParams& gen, const Var& img);

Var discriminator_score(const DiscriminatorParams& disc, const Var& img);

// ---------------------------------------------------------------------------
// losses
// ---------------------------------------------------------------------------

using ImageMap = std::function<Var(const Var&)>;

// Unnormalized per-image gram matrices, [N,C,H,W] -> [N,C,C].
Var gram(const Var& feature);

// (1/NM) ||gram(sx)-gram(sy)||_F^2 + (1/NM) ||gram(ty)-gram(tx)||_F^2,
// averaged over the batch; N = channels, M = H*W.
Var style_loss(const Var& sx, const Var& sy, const Var& tx, const Var& ty);

struct AdversarialLosses {
  Var generator;      // mean (D(fake)-1)^2
  Var discriminator;  // mean (D(real)-1)^2 + mean D(fake)^2, fake detached
};
AdversarialLosses adversarial_losses(const ImageMap& discriminator, const Var& real,
                                     const Var& fake);

Var l1_mean(const Var& a, const Var& b);
Var cycle_loss(const Var& x, const Var& x_rec, const Var& y, const Var& y_rec);
Var identity_loss(const ImageMap& to_target, const ImageMap& to_source, const Var& x,
                  const Var& y);

struct DanLossWeights {
  double lambda_cycle = 10.0;
  double lambda_identity = 5.0;
  double lambda_style = 1.0;
};

struct DanLossReport {
  double l_adv_G = 0, l_adv_F = 0, l_disc_S = 0, l_disc_T = 0;
  double l_cyc = 0, l_id = 0, l_style = 0, total = 0;
  DanLossWeights weights;
};

// total = l_adv_G + l_adv_F + l1*l_cyc + l2*l_id + l3*l_style. Throws on any
// non-finite component, naming the term. Discriminator losses are reported
// but not part of the generator objective.
Var dan_total_loss(const Var& l_adv_G, const Var& l_adv_F, const Var& l_cyc, const Var& l_id,
                   const Var& l_style, const Var& l_disc_S, const Var& l_disc_T,
                   const DanLossWeights& weights, DanLossReport* report = nullptr);

// ---------------------------------------------------------------------------
// model bundle
// ---------------------------------------------------------------------------

struct DanModel {
  DanArch arch;
  std::shared_ptr<StemParams> stem;
  GeneratorParams G;  // source -> target
  GeneratorParams F;  // target -> source
  DiscriminatorParams D_S, D_T;

  static DanModel create(const DanArch& arch, uint64_t seed);
  std::vector<NamedParam> generator_params() const;  // stem + G + F
  std::vector<NamedParam> discriminator_params() const;
  std::vector<NamedParam> all_params() const;
};

}  // namespace davr::dan
