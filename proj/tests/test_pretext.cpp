#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cstdint>
#include <set>
#include <vector>

#include "permssl/pretext.hpp"

using namespace permssl;

namespace {

PretrainConfig tiny_config(LossKind loss) {
    PretrainConfig c;
    c.loss = loss;
    c.slice = {1, 4};
    c.epsilon = 1.0;
    c.mc_samples = 8;
    c.epochs = 2;
    c.batch = 16;
    c.lr = 3e-3;
    c.seed = 5;
    c.encoder_widths = {16, 8};
    c.head_hidden = 8;
    c.fixed_set_size = 8;
    c.fixed_set_pool = 24;
    return c;
}

std::vector<NoteRecord> tiny_records(int count, uint64_t seed) {
    return make_split(count, seed, 0, 24, 24);
}

bool params_equal(const CfnParams<float>& a, const CfnParams<float>& b) {
    if (!(a.dims == b.dims)) return false;
    for (size_t l = 0; l < a.encoder.size(); ++l)
        if (a.encoder[l].weight != b.encoder[l].weight || a.encoder[l].bias != b.encoder[l].bias)
            return false;
    for (size_t l = 0; l < a.head.size(); ++l)
        if (a.head[l].weight != b.head[l].weight || a.head[l].bias != b.head[l].bias)
            return false;
    return true;
}

} // namespace

TEST_CASE("loss kind names round-trip") {
    for (LossKind k : {LossKind::fy, LossKind::softrank_mse, LossKind::mse_raw, LossKind::xe_fixed})
        REQUIRE(parse_loss_kind(loss_kind_name(k)) == k);
    REQUIRE_THROWS_AS(parse_loss_kind("hinge"), std::invalid_argument);
}

TEST_CASE("network dims follow the slice and the loss") {
    PretrainConfig c = tiny_config(LossKind::fy);
    c.slice = {2, 3};
    CfnDims dims = cfn_dims_for(c, 24, 30);
    REQUIRE(dims.n == 6);
    REQUIRE(dims.d == (24 / 3) * (30 / 2));
    REQUIRE(dims.encoder_widths == c.encoder_widths);
    REQUIRE(dims.head_hidden == c.head_hidden);
    REQUIRE(dims.output_width == 0);
    REQUIRE(dims.head_out() == 6);

    c.loss = LossKind::xe_fixed;
    c.fixed_set_size = 50;
    REQUIRE(cfn_dims_for(c, 24, 30).head_out() == 50);
}

TEST_CASE("pretrain config validation") {
    PretrainConfig c = tiny_config(LossKind::fy);
    REQUIRE_NOTHROW(validate_pretrain_config(c, 24, 24));

    auto reject = [](PretrainConfig bad) {
        REQUIRE_THROWS_AS(validate_pretrain_config(bad, 24, 24), std::invalid_argument);
    };
    { auto b = c; b.epochs = -1; reject(b); }
    { auto b = c; b.batch = 0; reject(b); }
    { auto b = c; b.lr = 0.0; reject(b); }
    { auto b = c; b.epsilon = 0.0; reject(b); }
    { auto b = c; b.mc_samples = 0; reject(b); }
    { auto b = c; b.slice = {1, 25}; reject(b); } // more bands than rows
    { auto b = c; b.slice = {1, 1}; reject(b); }  // a single patch cannot be shuffled
    {
        auto b = tiny_config(LossKind::xe_fixed);
        b.fixed_set_size = 1;
        reject(b);
        b.fixed_set_size = 8;
        b.fixed_set_pool = 4;
        reject(b);
    }
    // epsilon and mc_samples are scoped to the losses that use them
    {
        auto b = tiny_config(LossKind::mse_raw);
        b.epsilon = 0.0;
        b.mc_samples = 0;
        REQUIRE_NOTHROW(validate_pretrain_config(b, 24, 24));
    }
}

TEST_CASE("pretext permutations are pure functions of (seed, epoch, index)") {
    Permutation a = sample_pretext_permutation(6, 9, 3, 41);
    Permutation b = sample_pretext_permutation(6, 9, 3, 41);
    REQUIRE(a.entries() == b.entries());
    REQUIRE(a.entries() != sample_pretext_permutation(6, 9, 4, 41).entries());
    REQUIRE(a.entries() != sample_pretext_permutation(6, 9, 3, 42).entries());
    REQUIRE(a.entries() != sample_pretext_permutation(6, 10, 3, 41).entries());
}

TEST_CASE("fixed set is deterministic with distinct members") {
    PretrainConfig c = tiny_config(LossKind::xe_fixed);
    auto set = pretext_fixed_set(c);
    REQUIRE(set.size() == 8);
    std::set<std::vector<int32_t>> seen;
    for (const auto& p : set) {
        REQUIRE(p.size() == 4);
        seen.insert(p.entries());
    }
    REQUIRE(seen.size() == set.size());
    auto again = pretext_fixed_set(c);
    for (size_t i = 0; i < set.size(); ++i) REQUIRE(set[i].entries() == again[i].entries());
}

TEST_CASE("fixed set index sampling is near uniform") {
    const int32_t L = 8;
    std::vector<int> counts(L, 0);
    const int draws = 4000;
    for (int i = 0; i < draws; ++i)
        ++counts[static_cast<size_t>(sample_fixed_set_index(L, 3, 1, i))];
    for (int cnt : counts) {
        REQUIRE(cnt > draws / L - 100);
        REQUIRE(cnt < draws / L + 100);
    }
    REQUIRE(sample_fixed_set_index(L, 3, 1, 7) == sample_fixed_set_index(L, 3, 1, 7));
    REQUIRE_THROWS_AS(sample_fixed_set_index(0, 3, 1, 0), std::invalid_argument);
}

TEST_CASE("zero epochs returns the untouched initialization") {
    auto train = tiny_records(24, 1);
    auto valid = tiny_records(16, 2);
    PretrainConfig c = tiny_config(LossKind::fy);
    c.epochs = 0;
    PretrainResult res = pretrain(train, valid, c);

    CfnParams<float> fresh = init_cfn<float>(cfn_dims_for(c, 24, 24), c.seed);
    REQUIRE(params_equal(res.params, fresh));
    REQUIRE(params_equal(random_embedding_baseline(cfn_dims_for(c, 24, 24), c.seed), fresh));

    REQUIRE(res.metrics.size() == 1);
    REQUIRE(res.metrics[0].split == "valid");
    REQUIRE(res.metrics[0].epoch == 0);
    REQUIRE(res.metrics[0].step == 0);

    PretrainResult no_valid = pretrain(train, {}, c);
    REQUIRE(no_valid.metrics.empty());
}

TEST_CASE("training reduces the pretext loss and logs per-epoch metrics") {
    auto train = tiny_records(48, 1);
    auto valid = tiny_records(16, 2);
    PretrainConfig c = tiny_config(LossKind::softrank_mse);
    c.epochs = 3;

    std::vector<int32_t> epochs_seen;
    PretrainResult res = pretrain(train, valid, c, [&](int32_t e, const CfnParams<float>&) {
        epochs_seen.push_back(e);
    });
    REQUIRE(epochs_seen == std::vector<int32_t>{1, 2, 3});

    REQUIRE(res.metrics.size() == 1 + 2 * 3);
    double first_train = -1.0, last_train = -1.0;
    int64_t prev_step = -1;
    double prev_wall = -1.0;
    for (const auto& m : res.metrics) {
        REQUIRE((m.split == "train" || m.split == "valid"));
        REQUIRE(m.step >= prev_step);
        REQUIRE(m.wall_time >= prev_wall);
        prev_step = m.step;
        prev_wall = m.wall_time;
        if (m.split == "train") {
            if (first_train < 0.0) first_train = m.loss;
            last_train = m.loss;
        }
    }
    REQUIRE(last_train < first_train);
    // 48 records, batch 16 -> 3 steps per epoch
    REQUIRE(res.metrics.back().step == 9);

    PretrainResult res2 = pretrain(train, valid, c);
    REQUIRE(params_equal(res.params, res2.params));
    for (size_t i = 0; i < res.metrics.size(); ++i) {
        REQUIRE(res.metrics[i].loss == res2.metrics[i].loss);
        REQUIRE(res.metrics[i].partial_ranks_accuracy == res2.metrics[i].partial_ranks_accuracy);
    }
}

TEST_CASE("held-out evaluation is deterministic and loss-agnostic on accuracy") {
    auto records = tiny_records(40, 7);
    PretrainConfig base = tiny_config(LossKind::fy);
    auto params = init_cfn<float>(cfn_dims_for(base, 24, 24), 3);

    PretextEval fy = evaluate_pretext_full(params, records, base, 11);
    PretextEval fy2 = evaluate_pretext_full(params, records, base, 11);
    REQUIRE(fy.loss == fy2.loss);
    REQUIRE(fy.accuracy == fy2.accuracy);

    // the shuffles only depend on the eval seed, so every ranking loss sees the
    // same predictions and the same labels
    PretrainConfig mse = base;
    mse.loss = LossKind::softrank_mse;
    PretrainConfig raw = base;
    raw.loss = LossKind::mse_raw;
    REQUIRE(evaluate_pretext_full(params, records, mse, 11).accuracy == fy.accuracy);
    REQUIRE(evaluate_pretext_full(params, records, raw, 11).accuracy == fy.accuracy);
    REQUIRE(evaluate_pretext_full(params, records, mse, 11).loss != fy.loss);

    REQUIRE(evaluate_pretext(params, records, base, 12) != fy.accuracy);
}

TEST_CASE("fixed-set evaluation stays inside the set") {
    auto records = tiny_records(40, 7);
    PretrainConfig c = tiny_config(LossKind::xe_fixed);
    auto params = init_cfn<float>(cfn_dims_for(c, 24, 24), 3);
    PretextEval ev = evaluate_pretext_full(params, records, c, 11);
    REQUIRE(ev.loss > 0.0);
    REQUIRE(ev.accuracy >= 0.0);
    REQUIRE(ev.accuracy <= 1.0);
    REQUIRE(ev.accuracy == evaluate_pretext_full(params, records, c, 11).accuracy);
}

TEST_CASE("untrained encoder scores near chance on the pretext task") {
    auto records = tiny_records(240, 17);
    PretrainConfig c = tiny_config(LossKind::fy);
    auto params = init_cfn<float>(cfn_dims_for(c, 24, 24), 29);
    double acc = evaluate_pretext(params, records, c, 31);
    REQUIRE(acc > 0.25 - 0.08);
    REQUIRE(acc < 0.25 + 0.08);
}
