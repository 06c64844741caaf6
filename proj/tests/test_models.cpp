#include "doctest.h"

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "ssce/checkpoint.hpp"
#include "ssce/models.hpp"

using namespace ssce;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() / ("ssce_test_" + std::to_string(::getpid()) + "_" +
                                            std::to_string(counter()++));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    static int& counter() {
        static int c = 0;
        return c;
    }
};

}  // namespace

TEST_CASE("classifier head is the fixed 512/256/K chain") {
    ClassifierModel m = build_classifier("small-4conv", 32, 3);
    auto params = m.net.params();
    // the last three linear layers end with out features 512, 256, 3
    std::vector<std::int64_t> outs;
    for (auto* p : params)
        if (p->name.ends_with(".weight") && p->value.ndim() == 2)
            outs.push_back(p->value.shape()[1]);
    REQUIRE(outs.size() >= 3);
    CHECK(outs[outs.size() - 3] == 512);
    CHECK(outs[outs.size() - 2] == 256);
    CHECK(outs[outs.size() - 1] == 3);
}

TEST_CASE("classifier rejects degenerate class count and bad presets") {
    CHECK_THROWS_AS(build_classifier("small-4conv", 32, 1), ModelError);
    CHECK_THROWS_AS(build_classifier("resnet-152", 32, 3), ModelError);
    CHECK_THROWS_AS(build_classifier("small-4conv", 48, 3), ModelError);
}

TEST_CASE("classifier forward shapes and embedding width") {
    for (const char* preset : {"small-4conv", "small-6conv"}) {
        ClassifierModel m = build_classifier(preset, 32, 3, 1, 5);
        Rng rng(1);
        Tensor x = Tensor::randn({2, 1, 32, 32}, rng);
        Tensor y = m.logits(x, false, rng);
        CHECK(y.shape() == Shape{2, 3});
        Tensor e = m.embed(x);
        CHECK(e.shape() == Shape{2, 256});
    }
}

TEST_CASE("classifier evaluation mode is deterministic") {
    ClassifierModel m = build_classifier("small-4conv", 32, 3, 1, 9);
    Rng r1(1), r2(2);
    Tensor x = Tensor::randn({2, 1, 32, 32}, r1);
    Tensor a = m.logits(x, false, r1);
    Tensor b = m.logits(x, false, r2);
    CHECK(a.data() == b.data());
}

TEST_CASE("generator output stays in [-1,1]") {
    GanPair g = build_gan(GanVariant::dcgan, 100, 32);
    Rng rng(3);
    Tensor z = Tensor::randn({4, 100}, rng);
    Tensor img = g.generate(z);
    CHECK(img.shape() == Shape{4, 1, 32, 32});
    for (double v : img.data()) {
        CHECK(v >= -1.0);
        CHECK(v <= 1.0);
    }
    // extreme latents still bounded (tanh terminal)
    Tensor zbig = Tensor::rand_uniform({2, 100}, -100.0, 100.0, rng);
    for (double v : g.generate(zbig).data()) CHECK(std::abs(v) <= 1.0);
}

TEST_CASE("wgan-gp critic uses layer norm, never batch norm; dcgan ends in sigmoid") {
    GanPair gp = build_gan(GanVariant::wgan_gp, 64, 32);
    int layer_norms = 0, batch_norms = 0;
    for (std::size_t i = 0; i < gp.critic.layer_count(); ++i) {
        if (dynamic_cast<const LayerNormLayer*>(&gp.critic.layer(i))) ++layer_norms;
        if (dynamic_cast<const BatchNormLayer*>(&gp.critic.layer(i))) ++batch_norms;
    }
    CHECK(layer_norms >= 1);
    CHECK(batch_norms == 0);

    GanPair dc = build_gan(GanVariant::dcgan, 64, 32);
    Rng rng(1);
    Tensor x = Tensor::rand_uniform({3, 1, 32, 32}, -1, 1, rng);
    Tensor d = dc.criticize(x);
    for (double v : d.data()) {
        CHECK(v > 0.0);
        CHECK(v < 1.0);
    }
}

TEST_CASE("wgan critic output is unbounded") {
    GanPair w = build_gan(GanVariant::wgan, 64, 32, 1, 16, 7);
    // scale the final linear weights up; a sigmoid-terminated head would stay
    // inside (0,1) regardless
    auto params = w.critic.params();
    for (auto* p : params)
        for (auto& v : p->value.mutable_data()) v *= 20.0;
    Rng rng(2);
    bool exceeded = false;
    for (int trial = 0; trial < 8 && !exceeded; ++trial) {
        Tensor z = Tensor::randn({4, 64}, rng);
        Tensor d = w.criticize(w.generate(z));
        for (double v : d.data())
            if (std::abs(v) > 1.0) exceeded = true;
    }
    CHECK(exceeded);
}

TEST_CASE("gan resolution validation") {
    CHECK_THROWS_AS(build_gan(GanVariant::dcgan, 100, 24), ModelError);
    CHECK_THROWS_AS(build_gan(GanVariant::dcgan, 100, 8), ModelError);
}

TEST_CASE("checkpoint round trip is stable") {
    TempDir tmp;
    ClassifierModel m = build_classifier("small-4conv", 32, 3, 1, 11);
    Checkpoint ck = snapshot_model(m.net, m.arch_id, 17, 42, 0xabcd);
    auto p1 = tmp.path / "a.ssce";
    auto p2 = tmp.path / "b.ssce";
    save_checkpoint(ck, p1);
    Checkpoint loaded = load_checkpoint(p1);
    CHECK(loaded.arch_id == m.arch_id);
    CHECK(loaded.iteration == 17);
    CHECK(loaded.seed == 42);
    CHECK(loaded.records.size() == ck.records.size());
    // after one widen, save->load is a bitwise fixed point
    save_checkpoint(loaded, p2);
    Checkpoint again = load_checkpoint(p2);
    for (std::size_t i = 0; i < loaded.records.size(); ++i) {
        CHECK(again.records[i].name == loaded.records[i].name);
        CHECK(again.records[i].shape == loaded.records[i].shape);
        CHECK(again.records[i].values == loaded.records[i].values);
    }
    std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
    std::string b1((std::istreambuf_iterator<char>(f1)), {});
    std::string b2((std::istreambuf_iterator<char>(f2)), {});
    CHECK(b1 == b2);
}

TEST_CASE("truncated and corrupted checkpoints are rejected") {
    TempDir tmp;
    ClassifierModel m = build_classifier("small-4conv", 32, 3);
    auto p = tmp.path / "m.ssce";
    save_checkpoint(snapshot_model(m.net, m.arch_id, 0, 0, 0), p);

    std::ifstream in(p, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), {});
    in.close();

    auto pt = tmp.path / "trunc.ssce";
    std::ofstream(pt, std::ios::binary) << bytes.substr(0, bytes.size() / 2);
    CHECK_THROWS_AS(load_checkpoint(pt), CheckpointError);

    auto pc = tmp.path / "corrupt.ssce";
    bytes[bytes.size() / 2] ^= 0x5a;
    std::ofstream(pc, std::ios::binary) << bytes;
    CHECK_THROWS_WITH_AS(load_checkpoint(pc), doctest::Contains("checksum"), CheckpointError);
}

TEST_CASE("transfer_init copies by name and shape") {
    ClassifierModel src = build_classifier("small-4conv", 32, 5, 1, 1);
    Checkpoint ck = snapshot_model(src.net, src.arch_id, 0, 1, 0);

    // identical architecture: everything copied
    ClassifierModel same = build_classifier("small-4conv", 32, 5, 1, 2);
    TransferReport r1 = transfer_init(same.net, ck);
    CHECK(r1.skipped_target.empty());
    CHECK(r1.skipped_source.empty());

    // mismatched head (K=5 source, K=3 target): backbone copied, final layer skipped
    ClassifierModel tgt = build_classifier("small-4conv", 32, 3, 1, 3);
    TransferReport r2 = transfer_init(tgt.net, ck);
    CHECK(r2.skipped_target.size() == 2);  // final linear weight + bias
    for (const auto& name : r2.skipped_target) CHECK(name.find("clf.19") != std::string::npos);
    CHECK(!r2.copied.empty());

    // unrelated architecture: zero matches is an error unless allowed
    GanPair g = build_gan(GanVariant::dcgan, 16, 32);
    CHECK_THROWS_AS(transfer_init(g.generator, ck), CheckpointError);
    TransferReport r3 = transfer_init(g.generator, ck, /*allow_empty=*/true);
    CHECK(r3.copied.empty());
}

TEST_CASE("transfer_init leaves copied parameters bitwise equal to the source") {
    ClassifierModel src = build_classifier("small-6conv", 32, 3, 1, 21);
    Checkpoint ck = snapshot_model(src.net, src.arch_id, 0, 0, 0);
    ClassifierModel dst = build_classifier("small-6conv", 32, 3, 1, 22);
    transfer_init(dst.net, ck);
    for (auto* p : dst.net.params()) {
        const auto* rec = ck.find(p->name);
        REQUIRE(rec != nullptr);
        CHECK(p->value.data() == rec->values);
    }
}
