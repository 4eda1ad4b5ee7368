#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "optiq/codebook.hpp"

namespace optiq {
namespace {

Codebook<float> book_from_rows(const std::vector<std::vector<float>>& rows) {
    const int K = static_cast<int>(rows.size()), d = static_cast<int>(rows[0].size());
    Tensor<float> e({K, d});
    for (int k = 0; k < K; ++k)
        for (int c = 0; c < d; ++c) e(k, c) = rows[k][c];
    Codebook<float> book;
    book.entries = Var<float>::leaf(std::move(e), true, "codebook");
    book.usage.assign(K, 0);
    return book;
}

// independent exhaustive argmin, strict-less scan from index 0
std::vector<int> bruteforce_assign(const Tensor<float>& z, const Tensor<float>& E) {
    const int h = z.dim(0), w = z.dim(1), d = z.dim(2), K = E.dim(0);
    std::vector<int> out;
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) {
            int best = 0;
            double bd = 1e300;
            for (int k = 0; k < K; ++k) {
                double d2 = 0;
                for (int c = 0; c < d; ++c) {
                    const double diff = double(z(i, j, c)) - double(E(k, c));
                    d2 += diff * diff;
                }
                if (d2 < bd) {
                    bd = d2;
                    best = k;
                }
            }
            out.push_back(best);
        }
    return out;
}

TEST(Quantize, NearestByInspection) {
    Codebook<float> book = book_from_rows({{0, 0}, {1, 1}});
    Tensor<float> z({1, 1, 2});
    z(0, 0, 0) = 0.1f;
    z(0, 0, 1) = 0.2f;
    QuantizeResult<float> res = quantize(z, book);
    EXPECT_EQ(res.indices(0, 0), 0);
    EXPECT_EQ(res.z_q(0, 0, 0), 0.0f);
    EXPECT_EQ(res.z_q(0, 0, 1), 0.0f);
    EXPECT_EQ(book.usage[0], 1);
    EXPECT_EQ(book.usage[1], 0);
}

TEST(Quantize, TieBreaksToLowestIndex) {
    Codebook<float> book = book_from_rows({{0, 0}, {1, 1}});
    Tensor<float> z({1, 1, 2}, 0.5f);
    EXPECT_EQ(quantize(z, book).indices(0, 0), 0);
}

TEST(Quantize, MatchesBruteForceOracle) {
    Rng rng(101);
    Codebook<float> book = make_codebook<float>(16, 2, rng);
    Tensor<float> z = random_uniform<float>({4, 4, 2}, rng, -0.2f, 0.2f);
    QuantizeResult<float> res = quantize(z, book);
    std::vector<int> expect = bruteforce_assign(z, book.entries.value());
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) EXPECT_EQ(res.indices(i, j), expect[i * 4 + j]);

    // larger sweep: 1000 vectors against K=32 in 8 dimensions
    Codebook<float> big = make_codebook<float>(32, 8, rng);
    Tensor<float> zbig = random_uniform<float>({50, 20, 8}, rng, -0.1f, 0.1f);
    QuantizeResult<float> rbig = quantize(zbig, big);
    std::vector<int> ebig = bruteforce_assign(zbig, big.entries.value());
    for (int i = 0; i < 50; ++i)
        for (int j = 0; j < 20; ++j) ASSERT_EQ(rbig.indices(i, j), ebig[i * 20 + j]);
}

TEST(Quantize, MinimizesDistanceExhaustively) {
    Rng rng(7);
    Codebook<float> book = make_codebook<float>(9, 3, rng);
    Tensor<float> z = random_uniform<float>({5, 6, 3}, rng, -0.3f, 0.3f);
    QuantizeResult<float> res = quantize(z, book);
    const Tensor<float>& E = book.entries.value();
    for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 6; ++j) {
            double chosen = 0;
            for (int c = 0; c < 3; ++c) {
                const double d = double(z(i, j, c)) - double(res.z_q(i, j, c));
                chosen += d * d;
            }
            for (int k = 0; k < 9; ++k) {
                double dk = 0;
                for (int c = 0; c < 3; ++c) {
                    const double d = double(z(i, j, c)) - double(E(k, c));
                    dk += d * d;
                }
                ASSERT_LE(chosen, dk);
            }
        }
}

TEST(Quantize, IdempotentOnQuantizedField) {
    Rng rng(23);
    Codebook<float> book = make_codebook<float>(8, 4, rng);
    Tensor<float> z = random_uniform<float>({3, 3, 4}, rng, -0.2f, 0.2f);
    QuantizeResult<float> first = quantize(z, book);
    QuantizeResult<float> second = quantize(first.z_q, book);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) ASSERT_EQ(second.indices(i, j), first.indices(i, j));
    EXPECT_EQ(max_abs_diff(second.z_q, first.z_q), 0.0);
}

TEST(Quantize, UsageCountsEveryAssignment) {
    Rng rng(5);
    Codebook<float> book = make_codebook<float>(6, 2, rng);
    Tensor<float> z = random_uniform<float>({4, 5, 2}, rng, -0.3f, 0.3f);
    quantize(z, book);
    std::int64_t total = 0;
    for (auto u : book.usage) total += u;
    EXPECT_EQ(total, 4 * 5);
    quantize(z, book);
    total = 0;
    for (auto u : book.usage) total += u;
    EXPECT_EQ(total, 2 * 4 * 5);
}

TEST(Quantize, RejectsBadInputs) {
    Rng rng(1);
    EXPECT_THROW(make_codebook<float>(0, 4, rng), ShapeError);
    Codebook<float> book = make_codebook<float>(4, 4, rng);
    Tensor<float> wrong = random_uniform<float>({2, 2, 3}, rng, 0.0f, 1.0f);
    EXPECT_THROW(quantize(wrong, book), ShapeError);
}

TEST(AlignmentLoss, ZeroOnExactCodes) {
    Rng rng(13);
    Codebook<float> book = make_codebook<float>(5, 3, rng);
    // z_hat == its own assignment: copy entry 2 everywhere, channel-first
    Tensor<float> z({3, 2, 2});
    for (int c = 0; c < 3; ++c)
        for (int i = 0; i < 2; ++i)
            for (int j = 0; j < 2; ++j) z(c, i, j) = book.entries.value()(2, c);
    Var<float> z_hat = Var<float>::leaf(z, true, "z_hat");
    Tensor<int32_t> idx({2, 2}, 2);
    Var<float> loss = alignment_loss(z_hat, idx, book);
    EXPECT_EQ(loss.value()[0], 0.0f);
    backward(loss);
    for (std::size_t i = 0; i < z_hat.grad().numel(); ++i) ASSERT_EQ(z_hat.grad()[i], 0.0f);
    for (std::size_t i = 0; i < book.entries.grad().numel(); ++i) ASSERT_EQ(book.entries.grad()[i], 0.0f);
}

TEST(AlignmentLoss, SingleCodeClosedForm) {
    Codebook<float> book = book_from_rows({{0.5f, -0.25f}});
    Tensor<float> z({2, 1, 1});
    z(0, 0, 0) = 0.9f;   // d = (0.4, 0.05)
    z(1, 0, 0) = -0.2f;
    Var<float> z_hat = Var<float>::leaf(z, true);
    Tensor<int32_t> idx({1, 1}, 0);
    Var<float> loss = alignment_loss(z_hat, idx, book);
    const double d2 = 0.4 * 0.4 + 0.05 * 0.05;
    EXPECT_NEAR(loss.value()[0], 2.0 * d2, 1e-6);
}

TEST(AlignmentLoss, ExactZeroGradientRouting) {
    Rng rng(37);
    Codebook<float> book = make_codebook<float>(6, 4, rng);
    Tensor<float> zval = random_uniform<float>({4, 3, 2}, rng, -0.3f, 0.3f);
    Tensor<int32_t> idx({3, 2});
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 2; ++j) idx(i, j) = rng.uniform_int(0, 5);
    std::vector<int> flat(idx.vec().begin(), idx.vec().end());

    Var<float> z_hat = Var<float>::leaf(zval, true, "z_hat");
    Var<float> full = alignment_loss(z_hat, idx, book);
    backward(full);
    Tensor<float> g_z = z_hat.grad();
    Tensor<float> g_e = book.entries.grad();

    // term 1 alone reproduces the full loss's entry gradient exactly, so term 2
    // contributes nothing to the entries
    const float norm = 1.0f / 6.0f;
    auto z_q1 = gather_codes(book.entries, flat, 3, 2);
    auto d1 = constant(zval) - z_q1;
    Var<float> term1 = sum(d1 * d1) * norm;
    backward(term1);
    ASSERT_EQ(book.entries.grad().numel(), g_e.numel());
    for (std::size_t i = 0; i < g_e.numel(); ++i) ASSERT_EQ(book.entries.grad()[i], g_e[i]);

    // term 2 alone reproduces the full loss's encoder gradient, and its backward
    // never touches the entries (their gradient stays exactly term 1's)
    Var<float> z_hat2 = Var<float>::leaf(zval, true, "z_hat");
    auto d2 = z_hat2 - constant(z_q1.value());
    Var<float> term2 = sum(d2 * d2) * norm;
    backward(term2);
    ASSERT_EQ(z_hat2.grad().numel(), g_z.numel());
    for (std::size_t i = 0; i < g_z.numel(); ++i) ASSERT_EQ(z_hat2.grad()[i], g_z[i]);
    for (std::size_t i = 0; i < g_e.numel(); ++i) ASSERT_EQ(book.entries.grad()[i], g_e[i]);
}

TEST(StraightThrough, SumLossGivesUnitGradient) {
    Rng rng(3);
    Tensor<float> zval = random_uniform<float>({2, 3, 3}, rng, -1.0f, 1.0f);
    Tensor<float> zq = random_uniform<float>({2, 3, 3}, rng, -1.0f, 1.0f);
    Var<float> z_hat = Var<float>::leaf(zval, true);
    Var<float> st = straight_through(z_hat, zq);
    EXPECT_EQ(max_abs_diff(st.value(), zq), 0.0);
    backward(sum(st));
    for (std::size_t i = 0; i < z_hat.grad().numel(); ++i) ASSERT_EQ(z_hat.grad()[i], 1.0f);
}

TEST(CountActivated, SetCardinality) {
    Rng rng(2);
    Codebook<float> book = make_codebook<float>(8, 2, rng);
    Tensor<int32_t> a({2, 3});
    const int vals[] = {0, 0, 2, 5, 5, 2};
    for (int i = 0; i < 6; ++i) a[i] = vals[i];
    EXPECT_EQ(count_activated(a, book), 3);

    Tensor<int32_t> all3({2, 2}, 3);
    EXPECT_EQ(count_activated(all3, book), 1);

    Tensor<int32_t> each({1, 8});
    for (int i = 0; i < 8; ++i) each[i] = i;
    EXPECT_EQ(count_activated(each, book), 8);

    // union across a stream of fields
    EXPECT_EQ(count_activated(std::vector<Tensor<int32_t>>{a, all3}, book), 4);

    Tensor<int32_t> bad({1, 1}, 8);
    EXPECT_THROW(count_activated(bad, book), ShapeError);
    bad[0] = -1;
    EXPECT_THROW(count_activated(bad, book), ShapeError);
}

TEST(ResetDeadCodes, LiveEntriesUntouched) {
    Rng rng(4);
    Codebook<float> book = make_codebook<float>(4, 2, rng);
    Tensor<float> before = book.entries.value();
    for (auto& u : book.usage) u = 5;
    Tensor<float> batch = random_uniform<float>({10, 2}, rng, -1.0f, 1.0f);
    EXPECT_EQ(reset_dead_codes(book, batch, 1, rng), 0);
    EXPECT_EQ(max_abs_diff(book.entries.value(), before), 0.0);
    for (auto u : book.usage) EXPECT_EQ(u, 0);
}

TEST(ResetDeadCodes, DeadEntryReseededFromBatch) {
    Rng rng(6);
    Codebook<float> book = make_codebook<float>(3, 2, rng);
    book.usage = {4, 0, 7};  // entry 1 is dead
    Tensor<float> batch = random_uniform<float>({5, 2}, rng, 2.0f, 3.0f);  // far from all entries
    EXPECT_EQ(reset_dead_codes(book, batch, 1, rng), 1);

    // the new entry must be one of the batch rows
    bool found = false;
    for (int r = 0; r < 5 && !found; ++r)
        found = book.entries.value()(1, 0) == batch(r, 0) && book.entries.value()(1, 1) == batch(r, 1);
    EXPECT_TRUE(found);

    // quantizing the reseeded vector selects it at distance zero
    Tensor<float> probe({1, 1, 2});
    probe(0, 0, 0) = book.entries.value()(1, 0);
    probe(0, 0, 1) = book.entries.value()(1, 1);
    QuantizeResult<float> res = quantize(probe, book);
    EXPECT_EQ(res.indices(0, 0), 1);
    EXPECT_EQ(max_abs_diff(res.z_q, probe), 0.0);
}

TEST(CodebookIo, RoundTripIsBitwise) {
    namespace fs = std::filesystem;
    Rng rng(8);
    Codebook<float> book = make_codebook<float>(12, 6, rng);
    Tensor<float> z = random_uniform<float>({4, 4, 6}, rng, -0.1f, 0.1f);
    quantize(z, book);
    const fs::path dir = fs::temp_directory_path() / "optiq_codebook_io";
    fs::create_directories(dir);
    save_codebook(book, (dir / "cb.atsr").string(), (dir / "cb.json").string());
    Codebook<float> back = load_codebook<float>((dir / "cb.atsr").string(), (dir / "cb.json").string());
    EXPECT_EQ(back.K(), 12);
    EXPECT_EQ(back.dim(), 6);
    for (std::size_t i = 0; i < book.entries.value().numel(); ++i)
        ASSERT_EQ(back.entries.value()[i], book.entries.value()[i]);
    EXPECT_EQ(back.usage, book.usage);
    fs::remove_all(dir);
}

TEST(CodebookIo, UsageCsvSchema) {
    namespace fs = std::filesystem;
    Rng rng(9);
    Codebook<float> book = make_codebook<float>(3, 2, rng);
    book.usage = {7, 0, 2};
    const fs::path path = fs::temp_directory_path() / "optiq_usage.csv";
    write_usage_csv(book, path.string());
    std::ifstream in(path);
    std::string line;
    std::getline(in, line);
    EXPECT_EQ(line, "entry_index,count");
    std::getline(in, line);
    EXPECT_EQ(line, "0,7");
    std::getline(in, line);
    EXPECT_EQ(line, "1,0");
    std::getline(in, line);
    EXPECT_EQ(line, "2,2");
    fs::remove(path);
}

}  // namespace
}  // namespace optiq
