#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "netfd.hpp"
#include "optiq/gradcheck.hpp"
#include "optiq/network.hpp"

namespace optiq {
namespace {

PriorChannels test_channels() {
    PriorChannels pc;
    pc.sfr = 6;
    pc.fov = 2;
    pc.noise = 1;
    pc.spectral = 2;
    return pc;
}

NetConfig tiny_two_scale() {
    NetConfig cfg;
    cfg.scales = 2;
    cfg.base_channels = 4;
    cfg.prior_hidden = 3;
    cfg.d_z = 8;
    cfg.K = 6;
    cfg.mff_channels = 4;
    return cfg;
}

NetConfig tiny_three_scale() {
    NetConfig cfg;
    cfg.scales = 3;
    cfg.base_channels = 4;
    cfg.prior_hidden = 3;
    cfg.d_z = 8;
    cfg.K = 8;
    cfg.mff_channels = 16;
    return cfg;
}

template <typename T>
PriorStack<T> random_stack(const PriorChannels& pc, int H, int W, unsigned seed) {
    Rng rng(seed);
    PriorStack<T> s;
    s.sfr = random_uniform<T>({pc.sfr, H, W}, rng, T(0), T(1));
    s.fov = random_uniform<T>({pc.fov, H, W}, rng, T(-1), T(1));
    s.noise = random_uniform<T>({pc.noise, H, W}, rng, T(0.01), T(0.3));
    s.spectral = random_uniform<T>({pc.spectral, H, W}, rng, T(0), T(1));
    return s;
}

template <typename T>
PriorStack<T> zero_stack(const PriorChannels& pc, int H, int W) {
    PriorStack<T> s;
    s.sfr = Tensor<T>({pc.sfr, H, W});
    s.fov = Tensor<T>({pc.fov, H, W});
    s.noise = Tensor<T>({pc.noise, H, W});
    s.spectral = Tensor<T>({pc.spectral, H, W});
    return s;
}

template <typename T>
void zero_params(RestoreNet<T>& net) {
    for (auto& [name, var] : net.params().items) var.value() = Tensor<T>(var.value().shape());
}

template <typename T>
double grad_l1(const Var<T>& v) {
    double s = 0.0;
    for (std::size_t i = 0; i < v.grad().numel(); ++i) s += std::abs(double(v.grad()[i]));
    return s;
}

// Independent re-implementation of the multi-scale content loss in 64-bit
// arithmetic with a naive O(N^2) DFT, used as the oracle below.
double content_oracle(const std::vector<Tensor<double>>& preds, const std::vector<Tensor<double>>& gts,
                      double lambda) {
    constexpr double kPi = 3.14159265358979323846;
    double total = 0.0;
    for (std::size_t k = 0; k < preds.size(); ++k) {
        const int C = gts[k].dim(0), H = gts[k].dim(1), W = gts[k].dim(2);
        double term = 0.0;
        for (int c = 0; c < C; ++c)
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x) term += std::abs(preds[k](c, y, x) - gts[k](c, y, x));
        for (int c = 0; c < C; ++c) {
            double ft = 0.0;
            for (int u = 0; u < H; ++u)
                for (int v = 0; v < W; ++v) {
                    double re = 0.0, im = 0.0;
                    for (int y = 0; y < H; ++y)
                        for (int x = 0; x < W; ++x) {
                            const double d = preds[k](c, y, x) - gts[k](c, y, x);
                            const double ang = -2.0 * kPi * (double(u) * y / H + double(v) * x / W);
                            re += d * std::cos(ang);
                            im += d * std::sin(ang);
                        }
                    ft += std::abs(re) + std::abs(im);
                }
            term += lambda * ft;
        }
        total += term / (double(C) * H * W);
    }
    return total;
}

TEST(Forward, OutputPyramidCoversAllScales) {
    Rng rng(11);
    const PriorChannels pc = test_channels();
    RestoreNet<float> net(tiny_three_scale(), pc, rng);
    Codebook<float> book = make_codebook<float>(net.config().K, net.config().d_z, rng);

    const int H = 64, W = 64;
    Rng srng(5);
    Tensor<float> degraded = random_uniform<float>({3, H, W}, srng, 0.0f, 1.0f);
    PriorStack<float> stack = random_stack<float>(pc, H, W, 6);

    ForwardResult<float> fwd = net.forward(degraded, stack, book);
    ASSERT_EQ(fwd.outputs.size(), 3u);
    EXPECT_EQ(fwd.outputs[0].value().shape(), (Shape{3, 64, 64}));
    EXPECT_EQ(fwd.outputs[1].value().shape(), (Shape{3, 32, 32}));
    EXPECT_EQ(fwd.outputs[2].value().shape(), (Shape{3, 16, 16}));
    EXPECT_EQ(fwd.z_hat.value().shape(), (Shape{8, 8, 8}));
    EXPECT_EQ(fwd.indices.shape(), (Shape{8, 8}));
    for (const auto& o : fwd.outputs)
        for (std::size_t i = 0; i < o.value().numel(); ++i) ASSERT_TRUE(std::isfinite(o.value()[i]));
}

TEST(EncodePriors, CodeFieldAtOneEighthResolution) {
    Rng rng(12);
    const PriorChannels pc = test_channels();
    RestoreNet<float> net(tiny_two_scale(), pc, rng);

    Var<float> z1 = net.encode_priors(random_stack<float>(pc, 32, 32, 1));
    EXPECT_EQ(z1.value().shape(), (Shape{8, 4, 4}));

    Var<float> z2 = net.encode_priors(random_stack<float>(pc, 48, 24, 2));
    EXPECT_EQ(z2.value().shape(), (Shape{8, 6, 3}));

    PriorStack<float> bad = random_stack<float>(pc, 16, 16, 3);
    bad.noise = Tensor<float>({5, 16, 16});
    EXPECT_THROW(net.encode_priors(bad), ShapeError);
}

TEST(EncodePriors, ZeroStackIsDeterminedByBiases) {
    Rng rng(13);
    const PriorChannels pc = test_channels();
    RestoreNet<float> net(tiny_two_scale(), pc, rng);

    // biases start at zero, so a zero stack encodes to exactly zero
    Var<float> z = net.encode_priors(zero_stack<float>(pc, 16, 16));
    for (std::size_t i = 0; i < z.value().numel(); ++i) ASSERT_EQ(z.value()[i], 0.0f);

    // a bias on the last sfr stage surfaces in the sfr quarter of the field
    Var<float> b = net.params().get("pe.sfr.2.b");
    for (std::size_t i = 0; i < b.value().numel(); ++i) b.value()[i] = 0.5f;
    Var<float> z2 = net.encode_priors(zero_stack<float>(pc, 16, 16));
    const int q = net.config().d_z / 4;  // channels per prior encoder
    for (int c = 0; c < z2.value().dim(0); ++c)
        for (int y = 0; y < 2; ++y)
            for (int x = 0; x < 2; ++x) ASSERT_EQ(z2.value()(c, y, x), c < q ? 0.5f : 0.0f);
}

TEST(Forward, ZeroWeightsReproduceDownsampledInput) {
    Rng rng(14);
    const PriorChannels pc = test_channels();
    RestoreNet<float> net(tiny_three_scale(), pc, rng);
    Codebook<float> book = make_codebook<float>(net.config().K, net.config().d_z, rng);
    zero_params(net);

    const int H = 32, W = 32;
    Rng srng(7);
    Tensor<float> degraded = random_uniform<float>({3, H, W}, srng, 0.0f, 1.0f);
    ForwardResult<float> fwd = net.forward(degraded, random_stack<float>(pc, H, W, 8), book);

    const ScalePyramid<float> base = build_pyramid(degraded, 3);
    ASSERT_EQ(fwd.outputs.size(), base.images.size());
    for (std::size_t s = 0; s < base.images.size(); ++s)
        EXPECT_EQ(max_abs_diff(fwd.outputs[s].value(), base.images[s]), 0.0) << "scale " << s;
}

TEST(Forward, RejectsBadInputs) {
    Rng rng(15);
    const PriorChannels pc = test_channels();
    RestoreNet<float> net(tiny_two_scale(), pc, rng);
    Codebook<float> book = make_codebook<float>(net.config().K, net.config().d_z, rng);

    Rng srng(9);
    Tensor<float> ok = random_uniform<float>({3, 16, 16}, srng, 0.0f, 1.0f);

    // dims not divisible by the alignment unit (16 at two scales)
    EXPECT_THROW(net.forward(random_uniform<float>({3, 20, 20}, srng, 0.0f, 1.0f),
                             random_stack<float>(pc, 20, 20, 1), book),
                 ShapeError);
    // wrong channel count
    EXPECT_THROW(net.forward(random_uniform<float>({1, 16, 16}, srng, 0.0f, 1.0f),
                             random_stack<float>(pc, 16, 16, 2), book),
                 ShapeError);
    // prior stack spatial size mismatch
    EXPECT_THROW(net.forward(ok, random_stack<float>(pc, 32, 32, 3), book), ShapeError);
    // codebook dimensionality mismatch
    Codebook<float> bad_book = make_codebook<float>(6, 4, srng);
    EXPECT_THROW(net.forward(ok, random_stack<float>(pc, 16, 16, 4), bad_book), ShapeError);
}

TEST(Mff, AblationChangesValuesButNotShapes) {
    const PriorChannels pc = test_channels();
    NetConfig with = tiny_two_scale();
    NetConfig without = tiny_two_scale();
    without.use_mff = false;

    Rng ra(21), rb(21);
    RestoreNet<float> net_mff(with, pc, ra);
    RestoreNet<float> net_id(without, pc, rb);
    // share every common weight so the fusion path is the only difference
    for (auto& [name, var] : net_id.params().items) var.value() = net_mff.params().get(name).value();

    Rng ca(22), cb(22);
    Codebook<float> book_a = make_codebook<float>(with.K, with.d_z, ca);
    Codebook<float> book_b = make_codebook<float>(with.K, with.d_z, cb);

    Rng srng(23);
    Tensor<float> degraded = random_uniform<float>({3, 32, 32}, srng, 0.0f, 1.0f);
    PriorStack<float> stack = random_stack<float>(pc, 32, 32, 24);

    ForwardResult<float> fa = net_mff.forward(degraded, stack, book_a);
    ForwardResult<float> fb = net_id.forward(degraded, stack, book_b);

    ASSERT_EQ(fa.outputs.size(), 2u);
    ASSERT_EQ(fb.outputs.size(), 2u);
    EXPECT_EQ(fa.outputs[0].value().shape(), (Shape{3, 32, 32}));
    EXPECT_EQ(fa.outputs[1].value().shape(), (Shape{3, 16, 16}));
    EXPECT_EQ(fb.outputs[0].value().shape(), (Shape{3, 32, 32}));
    EXPECT_EQ(fb.outputs[1].value().shape(), (Shape{3, 16, 16}));
    // same prior path, hence identical code assignments...
    EXPECT_EQ(fa.indices.vec(), fb.indices.vec());
    // ...but different skip fusion, hence different images
    EXPECT_GT(max_abs_diff(fa.outputs[0].value(), fb.outputs[0].value()), 0.0);
}

TEST(ContentLoss, IdenticalPyramidsGiveZero) {
    Rng rng(31);
    Tensor<float> img = random_uniform<float>({3, 8, 8}, rng, 0.0f, 1.0f);
    ScalePyramid<float> gt = build_pyramid(img, 3);
    std::vector<Var<float>> preds;
    for (const auto& t : gt.images) preds.push_back(constant(t));
    EXPECT_EQ(content_loss(preds, gt).value()[0], 0.0f);
}

TEST(ContentLoss, UniformDifferenceWithoutSpectralTerm) {
    Tensor<float> base({3, 4, 4}, 0.3f);
    ScalePyramid<float> gt;
    gt.images.push_back(base);
    Tensor<float> shifted = map(base, [](float v) { return v + 0.2f; });
    std::vector<Var<float>> preds{constant(shifted)};
    EXPECT_NEAR(content_loss(preds, gt, 0.0f).value()[0], 0.2f, 1e-6f);
}

TEST(ContentLoss, MatchesIndependentReimplementation) {
    Rng rng(32);
    {
        Tensor<double> img = random_uniform<double>({3, 8, 8}, rng, 0.0, 1.0);
        ScalePyramid<double> gt = build_pyramid(img, 3);
        std::vector<Var<double>> preds;
        std::vector<Tensor<double>> pvals;
        for (const auto& t : gt.images) {
            Tensor<double> p = t;
            for (std::size_t i = 0; i < p.numel(); ++i) p[i] += rng.uniform(-0.2, 0.2);
            pvals.push_back(p);
            preds.push_back(constant(p));
        }
        const double got = content_loss(preds, gt, 0.1).value()[0];
        const double want = content_oracle(pvals, gt.images, 0.1);
        EXPECT_LE(std::abs(got - want) / std::max(std::abs(want), 1e-12), 1e-6);
    }
    {
        // non-power-of-two size exercises the chirp-z transform path
        Tensor<double> img = random_uniform<double>({3, 6, 10}, rng, 0.0, 1.0);
        ScalePyramid<double> gt;
        gt.images.push_back(img);
        Tensor<double> p = img;
        for (std::size_t i = 0; i < p.numel(); ++i) p[i] += rng.uniform(-0.3, 0.3);
        const double got = content_loss<double>({constant(p)}, gt, 0.1).value()[0];
        const double want = content_oracle({p}, {img}, 0.1);
        EXPECT_LE(std::abs(got - want) / std::max(std::abs(want), 1e-12), 1e-6);
    }
}

TEST(ContentLoss, RejectsPyramidLengthMismatch) {
    Rng rng(33);
    Tensor<float> img = random_uniform<float>({3, 8, 8}, rng, 0.0f, 1.0f);
    ScalePyramid<float> gt = build_pyramid(img, 3);
    std::vector<Var<float>> preds{constant(gt.images[0]), constant(gt.images[1])};
    EXPECT_THROW(content_loss(preds, gt), ShapeError);
    EXPECT_THROW(content_loss(std::vector<Var<float>>{}, gt), ShapeError);
}

TEST(TotalLoss, AddsContentAndAlignment) {
    auto scalar = [](float v) { return constant(Tensor<float>({1}, v)); };
    EXPECT_FLOAT_EQ(total_loss(scalar(0.25f), scalar(0.0f)).value()[0], 0.25f);
    EXPECT_FLOAT_EQ(total_loss(scalar(0.0f), scalar(0.75f)).value()[0], 0.75f);
    EXPECT_FLOAT_EQ(total_loss(scalar(0.3f), scalar(0.45f)).value()[0], 0.75f);
}

TEST(Losses, AreNonNegativeOnRandomForward) {
    Rng rng(41);
    const PriorChannels pc = test_channels();
    RestoreNet<float> net(tiny_two_scale(), pc, rng);
    Codebook<float> book = make_codebook<float>(net.config().K, net.config().d_z, rng);

    Rng srng(42);
    Tensor<float> degraded = random_uniform<float>({3, 16, 16}, srng, 0.0f, 1.0f);
    Tensor<float> sharp = random_uniform<float>({3, 16, 16}, srng, 0.0f, 1.0f);
    ForwardResult<float> fwd = net.forward(degraded, random_stack<float>(pc, 16, 16, 43), book);

    Var<float> content = content_loss(fwd.outputs, build_pyramid(sharp, 2));
    Var<float> align = alignment_loss(fwd.z_hat, fwd.indices, book);
    Var<float> total = total_loss(content, align);
    EXPECT_GE(content.value()[0], 0.0f);
    EXPECT_GE(align.value()[0], 0.0f);
    EXPECT_TRUE(std::isfinite(total.value()[0]));
    EXPECT_FLOAT_EQ(total.value()[0], content.value()[0] + align.value()[0]);
}

TEST(Gradients, AlignmentReachesEveryPriorEncoder) {
    Rng rng(51);
    const PriorChannels pc = test_channels();
    RestoreNet<double> net(tiny_two_scale(), pc, rng);
    Codebook<double> book = make_codebook<double>(net.config().K, net.config().d_z, rng);

    Var<double> z_hat = net.encode_priors(random_stack<double>(pc, 16, 16, 52));
    QuantizeResult<double> q = quantize(chw_to_hwc(z_hat.value()), book);
    Var<double> align = alignment_loss(z_hat, q.indices, book);
    backward(align);

    for (const char* prior : {"sfr", "fov", "noise", "spectral"}) {
        double total = 0.0;
        for (int s = 0; s < 3; ++s) {
            total += grad_l1(net.params().get("pe." + std::string(prior) + "." + std::to_string(s) + ".w"));
            total += grad_l1(net.params().get("pe." + std::string(prior) + "." + std::to_string(s) + ".b"));
        }
        EXPECT_GT(total, 0.0) << "no alignment gradient reached the " << prior << " encoder";
    }
    EXPECT_GT(grad_l1(book.entries), 0.0);
}

TEST(Gradients, BackwardPopulatesEveryParameter) {
    Rng rng(53);
    const PriorChannels pc = test_channels();
    RestoreNet<double> net(tiny_two_scale(), pc, rng);
    Codebook<double> book = make_codebook<double>(net.config().K, net.config().d_z, rng);

    Rng srng(54);
    Tensor<double> degraded = random_uniform<double>({3, 16, 16}, srng, 0.0, 1.0);
    Tensor<double> sharp = random_uniform<double>({3, 16, 16}, srng, 0.0, 1.0);
    ForwardResult<double> fwd = net.forward(degraded, random_stack<double>(pc, 16, 16, 55), book);
    Var<double> loss = total_loss(content_loss(fwd.outputs, build_pyramid(sharp, 2)),
                                  alignment_loss(fwd.z_hat, fwd.indices, book));
    backward(loss);

    for (const auto& [name, var] : net.params().items)
        EXPECT_EQ(var.grad().numel(), var.value().numel()) << "parameter " << name << " has no gradient";
    EXPECT_EQ(book.entries.grad().numel(), book.entries.value().numel());

    for (const char* name : {"enc0.w", "enc1.w", "bneck0.w", "fuse.w", "bup0.w", "mff0.red.w", "dec0.red.w",
                             "head0.w", "head1.w", "up1.w"})
        EXPECT_GT(grad_l1(net.params().get(name)), 0.0) << "zero gradient at " << name;
    for (const char* prior : {"sfr", "fov", "noise", "spectral"}) {
        double total = 0.0;
        for (int s = 0; s < 3; ++s)
            total += grad_l1(net.params().get("pe." + std::string(prior) + "." + std::to_string(s) + ".w"));
        EXPECT_GT(total, 0.0) << "no gradient reached the " << prior << " encoder";
    }
}

// Finite-difference check through the full forward pass and both losses, over
// restoration-branch weights (the quantizer's code choice does not depend on
// them, so the loss is smooth in these parameters).
template <typename T>
void end_to_end_fd(unsigned seed, T eps, double tol, double floor) {
    Rng rng(seed);
    const PriorChannels pc = test_channels();
    RestoreNet<T> net(tiny_two_scale(), pc, rng);
    Codebook<T> book = make_codebook<T>(net.config().K, net.config().d_z, rng);

    Rng srng(seed + 1);
    Tensor<T> degraded = random_uniform<T>({3, 16, 16}, srng, T(0), T(1));
    Tensor<T> sharp = random_uniform<T>({3, 16, 16}, srng, T(0), T(1));
    PriorStack<T> stack = random_stack<T>(pc, 16, 16, seed + 2);
    const ScalePyramid<T> gt = build_pyramid(sharp, 2);

    auto build = [&]() {
        ForwardResult<T> fwd = net.forward(degraded, stack, book);
        return total_loss(content_loss(fwd.outputs, gt), alignment_loss(fwd.z_hat, fwd.indices, book));
    };
    std::vector<Var<T>> leaves;
    for (const char* name : {"enc0.w", "enc1.rb.c1.w", "bneck0.w", "fuse.w", "bup1.w", "mff0.red.w", "dec1.red.w",
                             "up1.w", "head0.w", "head1.w"})
        leaves.push_back(net.params().get(name));

    Rng picks(seed + 3);
    GradCheckReport rep = grad_check<T>(build, leaves, eps, floor, /*max_per_leaf=*/4, &picks);
    EXPECT_GT(rep.checked, 0u);
    EXPECT_LE(rep.max_rel_error, tol) << "worst " << rep.worst;
}

// The loss is piecewise linear in any single restoration weight, so central
// differences carry no curvature error; the step is chosen large enough that
// accumulated rounding in the loss clears the tolerance, and the floor keeps
// near-zero gradient entries from amplifying that noise.
TEST(Gradients, EndToEndFiniteDifferenceDouble) { end_to_end_fd<double>(161, 1e-5, 1e-6, 1e-3); }

// 32-bit gradients are verified against finite differences of a 64-bit
// mirror of the same graph (see netfd.hpp): differencing the 32-bit loss
// itself would measure its storage rounding (~1e-2 relative) rather than the
// gradients, while the float autodiff values are accurate to ~1e-6.
TEST(Gradients, EndToEndFloatMatchesDoubleFiniteDifferences) {
    const std::vector<std::string> leaves = {"enc0.w", "enc1.rb.c1.w", "bneck0.w", "fuse.w",  "bup1.w",
                                             "mff0.red.w", "dec1.red.w", "up1.w", "head0.w", "head1.w"};
    netfd::CrossFdResult res =
        netfd::cross_precision_fd(tiny_two_scale(), test_channels(), 16, 16, 62, 1e-5, 0.2, 4, leaves);
    ASSERT_TRUE(res.indices_match) << "pick a different seed: code assignments differ across precisions";
    EXPECT_EQ(res.checked, 40u);
    EXPECT_LE(res.max_rel, 1e-3) << "worst " << res.worst;
}

TEST(Checkpoint, RoundTripPreservesEverything) {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "optiq_net_ckpt_test";
    fs::remove_all(dir);

    Rng rng(71);
    const PriorChannels pc = test_channels();
    RestoreNet<float> net(tiny_two_scale(), pc, rng);
    Codebook<float> book = make_codebook<float>(net.config().K, net.config().d_z, rng);
    book.usage[2] = 9;
    save_checkpoint(net, book, dir.string());

    Checkpoint<float> ck = load_checkpoint<float>(dir.string());
    EXPECT_EQ(ck.net.config().scales, net.config().scales);
    EXPECT_EQ(ck.net.config().base_channels, net.config().base_channels);
    EXPECT_EQ(ck.net.config().prior_hidden, net.config().prior_hidden);
    EXPECT_EQ(ck.net.config().d_z, net.config().d_z);
    EXPECT_EQ(ck.net.config().K, net.config().K);
    EXPECT_EQ(ck.net.config().mff_channels, net.config().mff_channels);
    EXPECT_EQ(ck.net.config().use_mff, net.config().use_mff);
    EXPECT_EQ(ck.net.prior_channels().sfr, pc.sfr);
    EXPECT_EQ(ck.net.prior_channels().spectral, pc.spectral);

    ASSERT_EQ(ck.net.params().count(), net.params().count());
    for (const auto& [name, var] : net.params().items) {
        const Tensor<float>& loaded = ck.net.params().get(name).value();
        ASSERT_EQ(loaded.shape(), var.value().shape()) << name;
        for (std::size_t i = 0; i < loaded.numel(); ++i) ASSERT_EQ(loaded[i], var.value()[i]) << name;
    }
    for (std::size_t i = 0; i < book.entries.value().numel(); ++i)
        ASSERT_EQ(ck.book.entries.value()[i], book.entries.value()[i]);
    EXPECT_EQ(ck.book.usage, book.usage);

    // identical weights must produce identical inferences
    Rng srng(72);
    Tensor<float> degraded = random_uniform<float>({3, 16, 16}, srng, 0.0f, 1.0f);
    PriorStack<float> stack = random_stack<float>(pc, 16, 16, 73);
    ForwardResult<float> fa = net.forward(degraded, stack, book);
    ForwardResult<float> fb = ck.net.forward(degraded, stack, ck.book);
    EXPECT_EQ(fa.indices.vec(), fb.indices.vec());
    for (std::size_t s = 0; s < fa.outputs.size(); ++s)
        EXPECT_EQ(max_abs_diff(fa.outputs[s].value(), fb.outputs[s].value()), 0.0);

    fs::remove_all(dir);
}

TEST(Pyramid, UsesAreaDownsampling) {
    Rng rng(81);
    Tensor<float> img = random_uniform<float>({3, 8, 8}, rng, 0.0f, 1.0f);
    ScalePyramid<float> pyr = build_pyramid(img, 3);
    ASSERT_EQ(pyr.images.size(), 3u);
    EXPECT_EQ(pyr.images[0].shape(), (Shape{3, 8, 8}));
    EXPECT_EQ(pyr.images[1].shape(), (Shape{3, 4, 4}));
    EXPECT_EQ(pyr.images[2].shape(), (Shape{3, 2, 2}));

    // every coarse pixel is the mean of its 2x2 block
    for (std::size_t s = 1; s < pyr.images.size(); ++s) {
        const Tensor<float>& fine = pyr.images[s - 1];
        const Tensor<float>& coarse = pyr.images[s];
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < coarse.dim(1); ++y)
                for (int x = 0; x < coarse.dim(2); ++x) {
                    const double mean = (double(fine(c, 2 * y, 2 * x)) + double(fine(c, 2 * y, 2 * x + 1)) +
                                         double(fine(c, 2 * y + 1, 2 * x)) + double(fine(c, 2 * y + 1, 2 * x + 1))) /
                                        4.0;
                    ASSERT_NEAR(coarse(c, y, x), mean, 1e-6);
                }
    }

    // constant images stay constant at every scale
    ScalePyramid<float> flat = build_pyramid(Tensor<float>({3, 4, 4}, 0.6f), 2);
    for (std::size_t i = 0; i < flat.images[1].numel(); ++i) EXPECT_FLOAT_EQ(flat.images[1][i], 0.6f);

    EXPECT_THROW(downsample_area2_t(Tensor<float>({3, 5, 6})), ShapeError);
}

}  // namespace
}  // namespace optiq
