#include "davr/dan.hpp"

#include <cmath>
#include <stdexcept>

namespace davr::dan {

void StemBlock::collect(const std::string& prefix, std::vector<NamedParam>& out) const {
  conv.collect(prefix + ".conv", out);
  norm.collect(prefix + ".norm", out);
}

StemParams::Out StemParams::forward(const Var& img) const {
  const auto& s = img.shape();
  if (s.size() != 4 || s[1] != 3 || s[2] % 4 != 0 || s[3] % 4 != 0)
    throw std::invalid_argument("stem: input must be [N,3,H,W] with H,W divisible by 4");
  Var h1 = b1.forward(img);
  Var h2 = b2.forward(h1);
  Var h3 = b3.forward(h2);
  return {h3, h2};
}

void StemParams::collect(const std::string& prefix, std::vector<NamedParam>& out) const {
  b1.collect(prefix + ".b1", out);
  b2.collect(prefix + ".b2", out);
  b3.collect(prefix + ".b3", out);
}

Var PlainResBlock::forward(const Var& x) const {
  return add(x, conv2.forward(relu(conv1.forward(x))));
}

void PlainResBlock::collect(const std::string& prefix, std::vector<NamedParam>& out) const {
  conv1.collect(prefix + ".conv1", out);
  conv2.collect(prefix + ".conv2", out);
}

Var NormResBlock::forward(const Var& x) const {
  Var h = relu(norm1.forward(conv1.forward(x)));
  return add(x, norm2.forward(conv2.forward(h)));
}

void NormResBlock::collect(const std::string& prefix, std::vector<NamedParam>& out) const {
  conv1.collect(prefix + ".conv1", out);
  norm1.collect(prefix + ".norm1", out);
  conv2.collect(prefix + ".conv2", out);
  norm2.collect(prefix + ".norm2", out);
}

GeneratorParams GeneratorParams::create(const DanArch& arch, std::shared_ptr<StemParams> stem,
                                        Rng& rng) {
  GeneratorParams g;
  g.arch = arch;
  g.stem = std::move(stem);
  int c = arch.content_channels();
  int fused = arch.fused_channels();
  for (int i = 0; i < arch.num_resblocks; ++i) {
    PlainResBlock b;
    b.conv1 = Conv2dLayer::create(c, c, 3, 1, 1, rng);
    b.conv2 = Conv2dLayer::create(c, c, 3, 1, 1, rng);
    g.content_blocks.push_back(std::move(b));
  }
  g.attention_fc = Conv2dLayer::create(fused, 1, 1, 1, 0, rng);
  g.content_projection = Conv2dLayer::create(fused, c, 1, 1, 0, rng);
  for (int i = 0; i < arch.num_resblocks; ++i) {
    NormResBlock b;
    b.conv1 = Conv2dLayer::create(c, c, 3, 1, 1, rng);
    b.norm1 = InstanceNormLayer::create(c);
    b.conv2 = Conv2dLayer::create(c, c, 3, 1, 1, rng);
    b.norm2 = InstanceNormLayer::create(c);
    g.style_blocks.push_back(std::move(b));
  }
  g.deconv1 = ConvTranspose2dLayer::create(2 * c, 2 * arch.base_channels, 3, 2, 1, 1, rng);
  g.dnorm1 = InstanceNormLayer::create(2 * arch.base_channels);
  g.deconv2 = ConvTranspose2dLayer::create(2 * arch.base_channels, arch.base_channels, 3, 2, 1, 1,
                                           rng);
  g.dnorm2 = InstanceNormLayer::create(arch.base_channels);
  g.out_conv = Conv2dLayer::create(arch.base_channels, 3, 7, 1, 3, rng);
  return g;
}

void GeneratorParams::collect(const std::string& prefix, std::vector<NamedParam>& out) const {
  for (size_t i = 0; i < content_blocks.size(); ++i)
    content_blocks[i].collect(prefix + ".content.res" + std::to_string(i), out);
  attention_fc.collect(prefix + ".attention_fc", out);
  content_projection.collect(prefix + ".projection", out);
  for (size_t i = 0; i < style_blocks.size(); ++i)
    style_blocks[i].collect(prefix + ".style.res" + std::to_string(i), out);
  deconv1.collect(prefix + ".decoder.deconv1", out);
  dnorm1.collect(prefix + ".decoder.norm1", out);
  deconv2.collect(prefix + ".decoder.deconv2", out);
  dnorm2.collect(prefix + ".decoder.norm2", out);
  out_conv.collect(prefix + ".decoder.out", out);
}

DiscriminatorParams DiscriminatorParams::create(const DanArch& arch, Rng& rng) {
  DiscriminatorParams d;
  int cin = 3;
  int c = arch.disc_base_channels;
  for (int i = 0; i < arch.disc_downsamples; ++i) {
    d.convs.push_back(Conv2dLayer::create(cin, c, 4, 2, 1, rng));
    if (i > 0) d.norms.push_back(InstanceNormLayer::create(c));
    cin = c;
    c = std::min(c * 2, 8 * arch.disc_base_channels);
  }
  d.score = Conv2dLayer::create(cin, 1, 4, 1, 1, rng);
  return d;
}

void DiscriminatorParams::collect(const std::string& prefix, std::vector<NamedParam>& out) const {
  for (size_t i = 0; i < convs.size(); ++i)
    convs[i].collect(prefix + ".conv" + std::to_string(i), out);
  for (size_t i = 0; i < norms.size(); ++i)
    norms[i].collect(prefix + ".norm" + std::to_string(i + 1), out);
  score.collect(prefix + ".score", out);
}

namespace {

ContentOutput content_encode_from_stem(const GeneratorParams& gen, const StemParams::Out& stem) {
  std::vector<Var> block_outputs;
  block_outputs.reserve(gen.content_blocks.size());
  Var h = stem.f_share;
  for (const PlainResBlock& block : gen.content_blocks) {
    h = block.forward(h);
    block_outputs.push_back(h);
  }
  ContentOutput out;
  out.f_fused = concat(block_outputs, 1);
  out.mask = sigmoid(gen.attention_fc.forward(out.f_fused));
  Var attended = mul(out.mask, out.f_fused);  // mask broadcast across channels
  out.f_c = gen.content_projection.forward(attended);
  out.f_e2 = stem.f_e2;
  return out;
}

Var style_encode_from_stem(const GeneratorParams& gen, const Var& f_share) {
  Var h = f_share;
  for (const NormResBlock& block : gen.style_blocks) h = block.forward(h);
  return h;
}

}  // namespace

ContentOutput content_encode(const GeneratorParams& gen, const Var& img) {
  return content_encode_from_stem(gen, gen.stem->forward(img));
}

Var style_encode(const GeneratorParams& gen, const Var& img) {
  return style_encode_from_stem(gen, gen.stem->forward(img).f_share);
}

Var decode(const GeneratorParams& gen, const ContentOutput& content, const Var& style) {
  if (content.f_c.shape()[2] != style.shape()[2] || content.f_c.shape()[3] != style.shape()[3])
    throw std::invalid_argument("decode: content/style spatial dimensions differ");
  Var u = concat({content.f_c, style}, 1);
  Var d1 = relu(gen.dnorm1.forward(gen.deconv1.forward(u)));
  const auto& ds = d1.shape();
  const auto& es = content.f_e2.shape();
  if (ds[1] != es[1] || ds[2] != es[2] || ds[3] != es[3])
    throw std::runtime_error("decode: deconv1 output " + d1.value().shape_str() +
                             " does not match skip feature " + content.f_e2.value().shape_str());
  Var d2 = relu(gen.dnorm2.forward(gen.deconv2.forward(add(d1, content.f_e2))));
  return tanh_act(gen.out_conv.forward(d2));
}

TranslateTrace translate_traced(const GeneratorParams& gen, const Var& img) {
  StemParams::Out stem = gen.stem->forward(img);
  TranslateTrace trace;
  trace.content = content_encode_from_stem(gen, stem);
  trace.style = style_encode_from_stem(gen, stem.f_share);
  trace.output = decode(gen, trace.content, trace.style);
  return trace;
}

Var translate(const GeneratorParams& gen, const Var& img) {
  return translate_traced(gen, img).output;
}

Var discriminator_score(const DiscriminatorParams& disc, const Var& img) {
  Var h = leaky_relu(disc.convs[0].forward(img), 0.2);
  for (size_t i = 1; i < disc.convs.size(); ++i)
    h = leaky_relu(disc.norms[i - 1].forward(disc.convs[i].forward(h)), 0.2);
  return disc.score.forward(h);
}

Var gram(const Var& feature) { return gram_batch(feature); }

namespace {

Var gram_gap(const Var& a, const Var& b) {
  if (a.shape() != b.shape())
    throw std::invalid_argument("style_loss: feature shapes differ");
  int64_t batch = a.shape()[0];
  int64_t n = a.shape()[1];
  int64_t m = a.shape()[2] * a.shape()[3];
  Var diff = sub(gram_batch(a), gram_batch(b));
  double scale = 1.0 / (static_cast<double>(n) * static_cast<double>(m) *
                        static_cast<double>(batch));
  return mul_scalar(sum_all(square(diff)), scale);
}

}  // namespace

Var style_loss(const Var& sx, const Var& sy, const Var& tx, const Var& ty) {
  return add(gram_gap(sx, sy), gram_gap(ty, tx));
}

AdversarialLosses adversarial_losses(const ImageMap& discriminator, const Var& real,
                                     const Var& fake) {
  AdversarialLosses out;
  out.generator = mean_all(square(add_scalar(discriminator(fake), -1.0)));
  out.discriminator = add(mean_all(square(add_scalar(discriminator(real), -1.0))),
                          mean_all(square(discriminator(detach(fake)))));
  return out;
}

Var l1_mean(const Var& a, const Var& b) {
  if (a.shape() != b.shape()) throw std::invalid_argument("l1_mean: shape mismatch");
  return mean_all(abs_act(sub(a, b)));
}

Var cycle_loss(const Var& x, const Var& x_rec, const Var& y, const Var& y_rec) {
  return add(l1_mean(x_rec, x), l1_mean(y_rec, y));
}

Var identity_loss(const ImageMap& to_target, const ImageMap& to_source, const Var& x,
                  const Var& y) {
  return add(l1_mean(to_target(y), y), l1_mean(to_source(x), x));
}

Var dan_total_loss(const Var& l_adv_G, const Var& l_adv_F, const Var& l_cyc, const Var& l_id,
                   const Var& l_style, const Var& l_disc_S, const Var& l_disc_T,
                   const DanLossWeights& weights, DanLossReport* report) {
  auto check = [](const Var& v, const char* name) {
    if (!std::isfinite(v.item()))
      throw std::runtime_error(std::string("non-finite loss component: ") + name);
  };
  check(l_adv_G, "l_adv_G");
  check(l_adv_F, "l_adv_F");
  check(l_cyc, "l_cyc");
  check(l_id, "l_id");
  check(l_style, "l_style");
  check(l_disc_S, "l_disc_S");
  check(l_disc_T, "l_disc_T");

  Var total = add(add(l_adv_G, l_adv_F),
                  add(add(mul_scalar(l_cyc, weights.lambda_cycle),
                          mul_scalar(l_id, weights.lambda_identity)),
                      mul_scalar(l_style, weights.lambda_style)));
  if (report) {
    report->l_adv_G = l_adv_G.item();
    report->l_adv_F = l_adv_F.item();
    report->l_cyc = l_cyc.item();
    report->l_id = l_id.item();
    report->l_style = l_style.item();
    report->l_disc_S = l_disc_S.item();
    report->l_disc_T = l_disc_T.item();
    report->total = total.item();
    report->weights = weights;
  }
  return total;
}

DanModel DanModel::create(const DanArch& arch, uint64_t seed) {
  Rng rng(seed);
  DanModel m;
  m.arch = arch;
  auto stem = std::make_shared<StemParams>();
  stem->b1.conv = Conv2dLayer::create(3, arch.base_channels, 7, 1, 3, rng);
  stem->b1.norm = InstanceNormLayer::create(arch.base_channels);
  stem->b2.conv = Conv2dLayer::create(arch.base_channels, 2 * arch.base_channels, 3, 2, 1, rng);
  stem->b2.norm = InstanceNormLayer::create(2 * arch.base_channels);
  stem->b3.conv = Conv2dLayer::create(2 * arch.base_channels, 4 * arch.base_channels, 3, 2, 1,
                                      rng);
  stem->b3.norm = InstanceNormLayer::create(4 * arch.base_channels);
  m.stem = stem;
  m.G = GeneratorParams::create(arch, stem, rng);
  m.F = GeneratorParams::create(arch, stem, rng);
  m.D_S = DiscriminatorParams::create(arch, rng);
  m.D_T = DiscriminatorParams::create(arch, rng);
  return m;
}

std::vector<NamedParam> DanModel::generator_params() const {
  std::vector<NamedParam> out;
  stem->collect("stem", out);
  G.collect("G", out);
  F.collect("F", out);
  return out;
}

std::vector<NamedParam> DanModel::discriminator_params() const {
  std::vector<NamedParam> out;
  D_S.collect("D_S", out);
  D_T.collect("D_T", out);
  return out;
}

std::vector<NamedParam> DanModel::all_params() const {
  std::vector<NamedParam> out = generator_params();
  std::vector<NamedParam> d = discriminator_params();
  out.insert(out.end(), d.begin(), d.end());
  return out;
}

}  // namespace davr::dan
