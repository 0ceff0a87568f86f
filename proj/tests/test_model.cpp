#include "doctest.h"
#include "stamesh/digest.hpp"
#include "stamesh/model.hpp"
#include "stamesh/rng.hpp"

using namespace stamesh;

TEST_CASE("sha256 known vectors") {
    CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    CHECK(sha256_hex("abcdbcdecdefdefgefghfghighijhijkijkljklmklmnlmnomnopnopq") ==
          "248d6a61d20638b8e5c026930c3e6039a33ce45964ff2167f6ecedd419db06c1");
    // spans a block boundary
    std::string s(120, 'a');
    Sha256 h;
    h.update(s.data(), 61);
    h.update(s.data() + 61, 59);
    auto split = h.finish();
    CHECK(split == Sha256::hash(s.data(), s.size()));
}

TEST_CASE("rng determinism and spread") {
    Rng a(42), b(42), c(43);
    bool differs = false;
    for (int i = 0; i < 100; ++i) {
        uint64_t va = a.next_u64();
        CHECK(va == b.next_u64());
        if (va != c.next_u64()) differs = true;
    }
    CHECK(differs);

    Rng r(7);
    for (int i = 0; i < 1000; ++i) {
        double u = r.uniform_real();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
    }
    double sum = 0.0, sq = 0.0;
    Rng g(11);
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
        double x = g.gaussian();
        sum += x;
        sq += x * x;
    }
    CHECK(std::abs(sum / n) < 0.05);
    CHECK(std::abs(sq / n - 1.0) < 0.05);
}

TEST_CASE("rng sample_distinct") {
    Rng r(5);
    auto s = r.sample_distinct(10, 10);
    std::sort(s.begin(), s.end());
    for (int i = 0; i < 10; ++i) CHECK(s[static_cast<size_t>(i)] == i);
    auto t = r.sample_distinct(100, 7);
    CHECK(t.size() == 7);
    std::sort(t.begin(), t.end());
    CHECK(std::adjacent_find(t.begin(), t.end()) == t.end());
}

TEST_CASE("validate_config derives k from f") {
    Config c;
    c.f = 2;
    c.k = 0;
    c = validate_config(c);
    CHECK(c.k == 5);

    Config c0;
    c0.f = 0;
    c0.k = 0;
    c0 = validate_config(c0);
    CHECK(c0.k == 1);
}

TEST_CASE("validate_config rejects bad k and tiny smart population") {
    Config c;
    c.f = 2;
    c.k = 4;
    CHECK_THROWS_AS(validate_config(c), ConfigError);
    c.allow_k_override = true;
    CHECK_NOTHROW(validate_config(c));

    Config tiny;
    tiny.n_devices = 10;
    tiny.smart_fraction = 0.2;  // 2 smart devices
    tiny.f = 0;
    tiny.k = 0;
    CHECK_THROWS_AS(validate_config(tiny), ConfigError);
}

TEST_CASE("config json round-trip") {
    Config c;
    c.n_devices = 123;
    c.smart_fraction = 0.5;
    c.f = 3;
    c.k = 7;
    c.seeds = {9, 8, 7};
    c.selection_policy = SelectionPolicy::Random;
    c.locking = LockingStrategy::Ola;
    c.topology = TopologyKind::Clustered;
    c.lsh_m = 3;
    c.lsh_jitter_sigma = 0.25;
    c.loss_probability = 0.01;
    c = validate_config(c);

    Config back = config_from_json(config_to_json(c));
    CHECK(back.n_devices == c.n_devices);
    CHECK(back.smart_fraction == doctest::Approx(c.smart_fraction));
    CHECK(back.f == c.f);
    CHECK(back.k == c.k);
    CHECK(back.seeds == c.seeds);
    CHECK(back.selection_policy == c.selection_policy);
    CHECK(back.locking == c.locking);
    CHECK(back.topology == c.topology);
    CHECK(back.lsh_m == c.lsh_m);
    CHECK(back.lsh_jitter_sigma == doctest::Approx(c.lsh_jitter_sigma));
    CHECK(back.loss_probability == doctest::Approx(c.loss_probability));
    CHECK(back.trigger_refractory == doctest::Approx(c.trigger_refractory));
    CHECK(config_to_json(back) == config_to_json(c));
}

TEST_CASE("trigger clause device collection and windows") {
    TriggerNode leaf1{TriggerNode::Kind::Leaf, 3, CmpOp::Lt, 45.0, {}};
    TriggerNode leaf2{TriggerNode::Kind::Leaf, 7, CmpOp::Ge, 10.0, {}};
    TriggerNode root;
    root.kind = TriggerNode::Kind::And;
    root.children = {leaf1, leaf2};
    Routine r;
    r.id = 1;
    r.trigger.root = root;
    r.commands = {{5, 0, 1.0}, {3, 0, 2.0}};
    CHECK(r.trigger_set() == std::set<NodeId>{3, 7});
    CHECK(r.command_set() == std::set<NodeId>{3, 5});
    CHECK(r.touched() == std::set<NodeId>{3, 5, 7});

    TimeWindow w{10.0, 20.0, 0.0};
    CHECK(w.contains(15.0));
    CHECK(!w.contains(25.0));
    TimeWindow p{2.0, 4.0, 10.0};
    CHECK(p.contains(13.0));
    CHECK(!p.contains(15.0));
    CHECK(p.contains(23.5));
}
