#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "imap/checkpoint.hpp"
#include "imap/nn.hpp"
#include "imap/oracle.hpp"

using namespace imap;

namespace {

std::vector<double> read_golden(const std::string& name)
{
    std::ifstream in(std::string(IMAP_FIXTURE_DIR) + "/" + name);
    std::vector<double> out;
    std::string line;
    while(std::getline(in, line)) {
        if(!line.empty() && line[0] != '#') {
            out.push_back(std::stod(line));
        }
    }
    return out;
}

double sum_outputs(const Mlp& net, const Matrix& x, const Matrix& weights)
{
    return (net.forward_batch(x).array() * weights.array()).sum();
}

}  // namespace

TEST(Mlp, ZeroWeightsGiveZeroOutput)
{
    Mlp net({3, 4, 2});
    const auto y = net.forward(std::vector<double>{1.0, -2.0, 3.5});
    EXPECT_EQ(y.size(), 2);
    EXPECT_EQ(y.norm(), 0.0);
}

TEST(Mlp, IdentityLayerPassesInputThrough)
{
    Mlp net({3, 3});
    net.parameters().segment(0) = Matrix::Identity(3, 3);
    const std::vector<double> x{0.25, -4.0, 7.5};
    const auto y = net.forward(x);
    for(int k = 0; k < 3; ++k) {
        EXPECT_EQ(y(k), x[static_cast<std::size_t>(k)]);
    }
}

TEST(Mlp, Seed42MatchesGoldenFixture)
{
    Rng rng(42);
    const Mlp net = Mlp::random({4, 6, 5, 3}, rng);
    const auto golden = read_golden("mlp_seed42_golden.txt");
    ASSERT_EQ(golden.size(), 3u);
    const auto y = net.forward(std::vector<double>{0.5, -1.25, 2.0, 0.1});
    for(int k = 0; k < 3; ++k) {
        EXPECT_NEAR(y(k), golden[static_cast<std::size_t>(k)], 1e-14);
    }
}

TEST(Mlp, ForwardIsPure)
{
    Rng rng(5);
    const Mlp net = Mlp::random({5, 8, 8, 2}, rng);
    Matrix x = Matrix::Random(5, 7);
    const Matrix a = net.forward_batch(x);
    const Matrix b = net.forward_batch(x);
    EXPECT_TRUE((a.array() == b.array()).all());
}

TEST(Mlp, DimensionMismatchThrows)
{
    Mlp net({3, 2});
    EXPECT_THROW((void)net.forward(std::vector<double>{1.0, 2.0}), DimensionError);
}

TEST(Mlp, BackwardWithoutForwardThrows)
{
    Mlp net({3, 2});
    Tape tape;
    auto grad = ParameterBlock::zeros_like(net.parameters());
    EXPECT_THROW((void)net.backward(tape, Matrix::Ones(2, 1), grad), PreconditionError);
}

TEST(Mlp, ZeroUpstreamGivesZeroGradient)
{
    Rng rng(1);
    const Mlp net = Mlp::random({3, 4, 1}, rng);
    Tape tape;
    (void)net.forward_batch(Matrix::Random(3, 5), tape);
    auto grad = ParameterBlock::zeros_like(net.parameters());
    (void)net.backward(tape, Matrix::Zero(1, 5), grad);
    EXPECT_EQ(grad.squared_norm(), 0.0);
}

TEST(Mlp, LinearGradientIsInput)
{
    Mlp net({3, 1});
    const std::vector<double> x{0.3, -1.7, 2.2};
    Tape tape;
    (void)net.forward_batch(Eigen::Map<const Matrix>(x.data(), 3, 1), tape);
    auto grad = ParameterBlock::zeros_like(net.parameters());
    (void)net.backward(tape, Matrix::Ones(1, 1), grad);
    for(std::size_t k = 0; k < 3; ++k) {
        EXPECT_DOUBLE_EQ(grad.values[k], x[k]);
    }
    EXPECT_DOUBLE_EQ(grad.values[3], 1.0);
}

TEST(Mlp, BackwardMatchesFiniteDifferences)
{
    for(std::uint64_t seed = 0; seed < 10; ++seed) {
        Rng rng(seed);
        Mlp net = Mlp::random({4, 7, 5, 3}, rng);
        const Matrix x = Matrix::Random(4, 6);
        const Matrix w = Matrix::Random(3, 6);
        Tape tape;
        (void)net.forward_batch(x, tape);
        auto grad = ParameterBlock::zeros_like(net.parameters());
        (void)net.backward(tape, w, grad);
        const auto r = gradient_check([&] { return sum_outputs(net, x, w); }, net.parameters(), grad);
        EXPECT_LT(r.max_relative_error, 1e-4) << "seed " << seed;
    }
}

TEST(Mlp, BackwardReturnsInputGradient)
{
    Rng rng(9);
    const Mlp net = Mlp::random({3, 5, 2}, rng);
    Matrix x = Matrix::Random(3, 1);
    const Matrix w = Matrix::Random(2, 1);
    Tape tape;
    (void)net.forward_batch(x, tape);
    auto grad = ParameterBlock::zeros_like(net.parameters());
    const Matrix dx = net.backward(tape, w, grad);
    const double h = 1e-6;
    for(int k = 0; k < 3; ++k) {
        Matrix up = x, down = x;
        up(k, 0) += h;
        down(k, 0) -= h;
        const double numeric = (sum_outputs(net, up, w) - sum_outputs(net, down, w)) / (2 * h);
        EXPECT_NEAR(dx(k, 0), numeric, 1e-8);
    }
}

TEST(Adam, ZeroGradientLeavesParameters)
{
    ParameterBlock p({{3, 1}});
    p.values = {1.0, -2.0, 0.5};
    const auto before = p.values;
    AdamState st;
    for(int k = 0; k < 5; ++k) {
        adam_step(p, ParameterBlock::zeros_like(p), st, 0.1);
    }
    EXPECT_EQ(p.values, before);
}

TEST(Adam, FirstStepMovesByLearningRate)
{
    ParameterBlock p({{4, 1}});
    ParameterBlock g({{4, 1}});
    g.values = {3.0, -0.01, 250.0, -7.0};
    AdamState st;
    adam_step(p, g, st, 0.01);
    for(std::size_t k = 0; k < 4; ++k) {
        EXPECT_NEAR(std::abs(p.values[k]), 0.01, 1e-8);
        EXPECT_LT(p.values[k] * g.values[k], 0.0);
    }
}

TEST(Adam, QuadraticMatchesScalarRecursion)
{
    ParameterBlock p({{1, 1}});
    p.values = {1.0};
    AdamState st;
    double w = 1.0, m = 0.0, v = 0.0;
    for(int t = 1; t <= 100; ++t) {
        ParameterBlock g({{1, 1}});
        g.values = {2.0 * p.values[0]};
        adam_step(p, g, st, 0.1);
        const double gs = 2.0 * w;
        m = 0.9 * m + 0.1 * gs;
        v = 0.999 * v + 0.001 * gs * gs;
        w -= 0.1 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
    }
    EXPECT_NEAR(p.values[0], w, 1e-12);
    EXPECT_LT(std::abs(p.values[0]), 0.05);
}

TEST(Adam, ZeroLearningRateIsIdentity)
{
    Rng rng(3);
    Mlp net = Mlp::random({3, 4, 2}, rng);
    const auto before = net.parameters().values;
    auto g = ParameterBlock::zeros_like(net.parameters());
    for(auto& x : g.values) {
        x = 1.5;
    }
    AdamState st;
    adam_step(net.parameters(), g, st, 0.0);
    EXPECT_EQ(net.parameters().values, before);
}

TEST(Adam, NonFiniteGradientAbortsStep)
{
    ParameterBlock p({{2, 1}});
    p.values = {1.0, 2.0};
    ParameterBlock g({{2, 1}});
    g.values = {0.5, std::nan("")};
    AdamState st;
    EXPECT_THROW(adam_step(p, g, st, 0.1), NumericError);
    EXPECT_EQ(p.values, (std::vector<double>{1.0, 2.0}));
    EXPECT_EQ(st.step, 0);
}

TEST(Adam, ClipGradNormRescales)
{
    ParameterBlock a({{2, 1}}), b({{1, 1}});
    a.values = {3.0, 0.0};
    b.values = {4.0};
    ParameterBlock* gs[] = {&a, &b};
    EXPECT_DOUBLE_EQ(clip_grad_norm(gs, 1.0), 5.0);
    EXPECT_NEAR(std::sqrt(a.squared_norm() + b.squared_norm()), 1.0, 1e-9);
}

TEST(Checkpoint, RoundTripIsByteIdentical)
{
    Rng rng(11);
    const Mlp net = Mlp::random({3, 5, 2}, rng);
    const std::vector<NamedBlock> blocks{{"net", net.parameters()}};
    const std::string bytes = encode_checkpoint(blocks);
    EXPECT_EQ(bytes.substr(0, 8), "IMAPCKPT");
    const auto back = decode_checkpoint(bytes);
    ASSERT_EQ(back.size(), 1u);
    EXPECT_EQ(back[0].name, "net");
    EXPECT_EQ(back[0].block.values, net.parameters().values);
    EXPECT_EQ(encode_checkpoint(back), bytes);
}

TEST(Checkpoint, RejectsCorruptInput)
{
    Rng rng(12);
    const Mlp net = Mlp::random({2, 2}, rng);
    const std::string bytes = encode_checkpoint({{"net", net.parameters()}});
    EXPECT_THROW((void)decode_checkpoint(bytes.substr(0, bytes.size() - 3)), CheckpointError);
    std::string bad_magic = bytes;
    bad_magic[0] = 'X';
    EXPECT_THROW((void)decode_checkpoint(bad_magic), CheckpointError);
    std::string bad_version = bytes;
    bad_version[8] = 9;
    EXPECT_THROW((void)decode_checkpoint(bad_version), CheckpointError);
}
