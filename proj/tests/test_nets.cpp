#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "defront/checkpoint.hpp"
#include "defront/errors.hpp"
#include "defront/nets.hpp"
#include "defront/rng.hpp"

using namespace defront;
using ad::Var;

namespace {

Tensor rand_batch(Rng& rng, long n = 1) { return Tensor::uniform({n, 3, 112, 112}, rng, -1, 1); }

bool tensors_equal(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) return false;
    for (long i = 0; i < a.size(); ++i)
        if (a[i] != b[i]) return false;
    return true;
}

}  // namespace

TEST_CASE("flow network emits the three scales with flow channels") {
    Rng rng(301);
    FlowNetwork net(NetConfig::desk(), "flow", rng);
    ad::NoGradGuard ng;
    Rng drng(302);
    auto flows = net.forward(ad::constant(rand_batch(drng, 2)));
    REQUIRE(flows.size() == 3);
    for (int s : {28, 56, 112}) {
        REQUIRE(flows.count(s) == 1);
        CHECK(flows.at(s).value().shape() == std::vector<long>{2, 2, s, s});
        CHECK(flows.at(s).value().all_finite());
    }
}

TEST_CASE("flow heads start near the identity warp") {
    Rng rng(303);
    FlowNetwork net(NetConfig::desk(), "flow", rng);
    ad::NoGradGuard ng;
    Rng drng(304);
    auto flows = net.forward(ad::constant(rand_batch(drng)));
    for (int s : {28, 56, 112})
        for (long i = 0; i < flows.at(s).value().size(); ++i)
            CHECK(std::fabs(flows.at(s).value()[i]) < 0.05);  // sub-pixel displacements at init
}

TEST_CASE("flow parameter count fits the full-scale budget within 20 percent") {
    Rng rng(305);
    NetConfig full = NetConfig::full_scale();
    FlowNetwork net(full, "flow", rng);
    double count = static_cast<double>(net.parameter_count());
    double budget = static_cast<double>(full.flow_param_budget);
    MESSAGE("full-scale flow parameters: ", net.parameter_count());
    CHECK(count >= 0.8 * budget);
    CHECK(count <= 1.2 * budget);
}

TEST_CASE("removing one encode/decode level strictly reduces parameters") {
    Rng rng(307);
    NetConfig base = NetConfig::desk();
    NetConfig restored = base;
    restored.flow_levels = base.flow_levels + 1;
    FlowNetwork ours(base, "flow", rng);
    FlowNetwork theirs(restored, "flow", rng);
    CHECK(ours.parameter_count() < theirs.parameter_count());

    NetConfig full = NetConfig::full_scale();
    NetConfig full_restored = full;
    full_restored.flow_levels = full.flow_levels + 1;
    FlowNetwork full_ours(full, "flow", rng);
    FlowNetwork full_theirs(full_restored, "flow", rng);
    CHECK(full_ours.parameter_count() < full_theirs.parameter_count());
}

TEST_CASE("eval-mode forward passes are bit-deterministic") {
    Rng rng(311);
    DefrontModel model(NetConfig::desk(), 311);
    Rng drng(312);
    Tensor input = rand_batch(drng);
    ad::NoGradGuard ng;
    auto a = model.synth(ad::constant(input));
    auto b = model.synth(ad::constant(input));
    for (int s : {28, 56, 112}) {
        CHECK(tensors_equal(a.output.images.at(s).value(), b.output.images.at(s).value()));
        CHECK(tensors_equal(a.forward_flows.at(s).value(), b.forward_flows.at(s).value()));
    }
    Var d1 = model.discriminator().forward(a.output.images.at(112));
    Var d2 = model.discriminator().forward(b.output.images.at(112));
    CHECK(tensors_equal(d1.value(), d2.value()));
}

TEST_CASE("generator output ranges and shapes") {
    Rng rng(313);
    DefrontModel model(NetConfig::desk(), 313);
    Rng drng(314);
    ad::NoGradGuard ng;
    auto synth = model.synth(ad::constant(rand_batch(drng, 2)));
    synth.output.validate();
    for (int s : {28, 56, 112}) {
        const Tensor& img = synth.output.images.at(s).value();
        CHECK(img.shape() == std::vector<long>{2, 3, s, s});
        for (long i = 0; i < img.size(); ++i) {
            CHECK(img[i] >= -1.0);
            CHECK(img[i] <= 1.0);
        }
        const Tensor& mask = synth.output.masks.at(s).value();
        CHECK(mask.shape() == std::vector<long>{2, 1, s, s});
        for (long i = 0; i < mask.size(); ++i) {
            CHECK(mask[i] >= 0.0);
            CHECK(mask[i] <= 1.0);
        }
    }
}

TEST_CASE("gradient reaches every generator and flow parameter") {
    Rng rng(317);
    DefrontModel model(NetConfig::desk(), 317);
    Rng drng(318);
    auto synth = model.synth(ad::constant(rand_batch(drng)));
    Var total;
    for (int s : {28, 56, 112}) {
        Var term = ad::add(ad::sum_all(synth.output.images.at(s)), ad::sum_all(synth.output.masks.at(s)));
        total = total.defined() ? ad::add(total, term) : term;
    }
    ad::backward(total);
    for (auto* ps : {&model.generator().params(), &model.flow_forward_net().params()})
        for (const auto& p : ps->items()) {
            INFO("parameter ", p.name);
            REQUIRE(p.var.has_grad());
            double linf = 0;
            for (long i = 0; i < p.var.grad().size(); ++i)
                linf = std::max(linf, std::fabs(p.var.grad()[i]));
            CHECK(linf > 0.0);
        }
}

TEST_CASE("discriminator output lies strictly inside (0,1) and has live gradients") {
    Rng rng(319);
    DefrontModel model(NetConfig::desk(), 319);
    Rng drng(320);
    Var d = model.discriminator().forward(ad::constant(rand_batch(drng, 2)));
    CHECK(d.value().shape() == std::vector<long>{2, 1, 14, 14});
    for (long i = 0; i < d.value().size(); ++i) {
        CHECK(d.value()[i] > 0.0);
        CHECK(d.value()[i] < 1.0);
    }
    ad::backward(ad::sum_all(d));
    for (const auto& p : model.discriminator().params().items()) {
        INFO("parameter ", p.name);
        REQUIRE(p.var.has_grad());
        double linf = 0;
        for (long i = 0; i < p.var.grad().size(); ++i)
            linf = std::max(linf, std::fabs(p.var.grad()[i]));
        CHECK(linf > 0.0);
    }
}

TEST_CASE("embedding extraction: unit norm, batch equivalence, self-similarity") {
    Rng rng(323);
    EmbeddingBackbone backbone(NetConfig::desk(), rng);
    Rng drng(324);
    Image a(112, 112, 3), b(112, 112, 3);
    for (auto& v : a.pixels()) v = drng.uniform();
    for (auto& v : b.pixels()) v = drng.uniform();

    EmbeddingVector ea = extract_embedding(backbone, a);
    EmbeddingVector eb = extract_embedding(backbone, b);
    CHECK(ea.is_unit());
    CHECK(eb.is_unit());

    auto batch = extract_embeddings(backbone, {a, b});
    for (size_t d = 0; d < ea.values.size(); ++d) {
        CHECK(batch[0].values[d] == doctest::Approx(ea.values[d]).epsilon(1e-12));
        CHECK(batch[1].values[d] == doctest::Approx(eb.values[d]).epsilon(1e-12));
    }

    EmbeddingVector ea2 = extract_embedding(backbone, a);
    double dot = 0;
    for (size_t d = 0; d < ea.values.size(); ++d) dot += ea.values[d] * ea2.values[d];
    CHECK(dot == doctest::Approx(1.0).epsilon(1e-9));

    Image wrong(64, 64, 3);
    CHECK_THROWS_AS(extract_embedding(backbone, wrong), ShapeMismatch);
}

TEST_CASE("feature tap networks expose the documented taps with stable shapes") {
    SeededPerceptualNet pnet(41);
    SeededIdentityNet idnet(42);
    Rng drng(331);
    Var img = ad::constant(Tensor::uniform({1, 3, 112, 112}, drng, -1, 1));

    auto ptaps = feature_net_taps(pnet, img);
    CHECK(ptaps.size() == 5);
    for (const auto& name : kPerceptualTapNames) CHECK(ptaps.count(name) == 1);

    auto itaps = feature_net_taps(idnet, img);
    CHECK(itaps.size() == 2);
    CHECK(itaps.count("fc2") == 1);
    CHECK(itaps.count("pool") == 1);

    auto ptaps2 = feature_net_taps(pnet, img);
    for (const auto& name : kPerceptualTapNames)
        CHECK(ptaps.at(name).value().shape() == ptaps2.at(name).value().shape());
}

namespace {
class BrokenTapNet : public FeatureTapNetwork {
public:
    std::vector<std::string> tap_names() const override { return {"conv1_1", "missing_tap"}; }
    std::map<std::string, Var> taps(const Var& image) const override {
        return {{"conv1_1", image}};
    }
};
}  // namespace

TEST_CASE("feature_net_taps flags undeclared taps") {
    BrokenTapNet net;
    Var img = ad::constant(Tensor::zeros({1, 3, 8, 8}));
    CHECK_THROWS_AS(feature_net_taps(net, img), UnknownTap);
}

TEST_CASE("checkpoint round trip is byte-identical and restores weights") {
    Rng rng(337);
    DefrontModel model(NetConfig::desk(), 337);
    Checkpoint ckpt;
    ckpt.config = {{"net", net_config_to_json(model.config())}, {"note", "test"}};
    ckpt.step = 1234;
    ckpt.tensors = model.snapshot();

    std::string p1 = "/tmp/defront_test_ckpt1.bin";
    std::string p2 = "/tmp/defront_test_ckpt2.bin";
    save_checkpoint(p1, ckpt);
    Checkpoint loaded = load_checkpoint(p1);
    CHECK(loaded.step == 1234);
    CHECK(loaded.config.at("note") == "test");
    save_checkpoint(p2, loaded);

    std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
    std::string s1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    std::string s2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    CHECK(s1 == s2);

    DefrontModel other(NetConfig::desk(), 9999);
    other.load_snapshot(loaded.tensor_map());
    auto a = model.snapshot();
    auto b = other.snapshot();
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); ++i) CHECK(tensors_equal(a[i].second, b[i].second));
    std::filesystem::remove(p1);
    std::filesystem::remove(p2);
}

TEST_CASE("corrupt checkpoints are rejected") {
    std::string path = "/tmp/defront_test_bad.bin";
    std::ofstream f(path, std::ios::binary);
    f << "not a checkpoint at all";
    f.close();
    CHECK_THROWS_AS(load_checkpoint(path), CheckpointIOFailure);
    std::filesystem::remove(path);
}

TEST_CASE("backbone width and depth follow the config") {
    Rng rng(341);
    NetConfig small = NetConfig::desk();
    NetConfig deeper = NetConfig::desk();
    deeper.backbone_depth = 3;
    EmbeddingBackbone a(small, rng);
    EmbeddingBackbone b(deeper, rng);
    CHECK(b.params().count() > a.params().count());
    CHECK(a.embedding_dim() == small.embedding_dim);
}
