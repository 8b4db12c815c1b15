#include <catch2/catch_amalgamated.hpp>

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <vector>

#include "vecsketch/concept_tree.hpp"

using namespace vecsketch;

namespace {

// encoder stub whose embedding is an arbitrary function of the image
struct FnEncoder final : ImageEncoder {
    std::function<std::vector<double>(const RasterImage&)> fn;
    explicit FnEncoder(std::function<std::vector<double>(const RasterImage&)> f)
        : fn(std::move(f)) {}
    Embedding embed(const RasterImage& img) const override { return {fn(img)}; }
    ActivationSet activations(const RasterImage&, const std::vector<int>&) const override {
        throw BackendError("unused");
    }
    RasterImage embed_vjp(const RasterImage&, const std::vector<double>&) const override {
        throw BackendError("unused");
    }
    RasterImage activations_vjp(const RasterImage&, int, const std::vector<double>&) const override {
        throw BackendError("unused");
    }
};

RasterImage tagged_image(double tag) {
    RasterImage img(2, 2, 1);
    img.data = {tag, tag * 0.5 + 0.1, 0.3, 0.7};
    return img;
}

// a small coherent concept: images sampled around one latent
std::vector<RasterImage> concept_images(const MockEmbeddingGenerator& gen, std::uint64_t seed,
                                        int count) {
    Embedding target;
    target.values = RandomStream(9).normal_vec(64);
    RandomStream rng(seed);
    return sample_node_images("<seed>", target, count, gen, rng);
}

ConceptTree single_node_tree(const MockEmbeddingGenerator& gen,
                             const std::vector<RasterImage>& images) {
    ConceptTree tree;
    ConceptNode root;
    root.token = tree.fresh_token();
    root.embedding = gen.embed_word("object");
    root.images = images;
    tree.nodes.push_back(std::move(root));
    return tree;
}

TreeGrowConfig small_config() {
    TreeGrowConfig cfg;
    cfg.k_seeds = 3;
    cfg.probe_steps = 25;
    cfg.final_steps = 60;
    cfg.parent_set_size = 5;
    cfg.node_sample_size = 6;
    return cfg;
}

}  // namespace

TEST_CASE("consistency: exclusions, oracle, symmetry, and errors") {
    SECTION("distinct images with identical embeddings score exactly 1") {
        FnEncoder enc([](const RasterImage&) { return std::vector<double>{1.0, 2.0, -0.5}; });
        std::vector<RasterImage> set{tagged_image(0.1), tagged_image(0.2), tagged_image(0.3)};
        REQUIRE(consistency(set, set, enc) == Catch::Approx(1.0).margin(1e-12));
    }

    SECTION("mutually orthogonal embeddings score exactly 0") {
        FnEncoder enc([](const RasterImage& img) {
            // first pixel picks one of two orthogonal directions
            return img.data[0] < 0.5 ? std::vector<double>{1.0, 0.0}
                                     : std::vector<double>{0.0, 1.0};
        });
        std::vector<RasterImage> a{tagged_image(0.1), tagged_image(0.2)};
        std::vector<RasterImage> b{tagged_image(0.8), tagged_image(0.9)};
        REQUIRE(consistency(a, b, enc) == 0.0);
        REQUIRE(consistency(a, a, enc) == Catch::Approx(1.0).margin(1e-12));
    }

    SECTION("3x2 sets against the mock encoder match a brute-force double loop") {
        MockImageEncoder enc(7777);
        RandomStream rng(31);
        std::vector<RasterImage> a, b;
        for (int i = 0; i < 3; ++i) a.push_back(random_image(rng, 16, 16));
        for (int i = 0; i < 2; ++i) b.push_back(random_image(rng, 16, 16));

        double acc = 0.0;
        int count = 0;
        for (const RasterImage& x : a) {
            for (const RasterImage& y : b) {
                const auto ex = enc.embed(x).values, ey = enc.embed(y).values;
                double dot = 0, nx = 0, ny = 0;
                for (std::size_t k = 0; k < ex.size(); ++k) {
                    dot += ex[k] * ey[k];
                    nx += ex[k] * ex[k];
                    ny += ey[k] * ey[k];
                }
                acc += dot / (std::sqrt(nx) * std::sqrt(ny));
                ++count;
            }
        }
        const double oracle = acc / count;
        REQUIRE(consistency(a, b, enc) == Catch::Approx(oracle).margin(1e-12));
        REQUIRE(consistency(a, b, enc) == Catch::Approx(consistency(b, a, enc)).margin(1e-12));
        REQUIRE(std::abs(consistency(a, b, enc)) <= 1.0);
    }

    SECTION("identical images are excluded even across different sets") {
        MockImageEncoder enc(7777);
        RandomStream rng(77);
        const RasterImage x = random_image(rng, 8, 8), y = random_image(rng, 8, 8);
        const auto ex = enc.embed(x).values, ey = enc.embed(y).values;
        double dot = 0, nx = 0, ny = 0;
        for (std::size_t k = 0; k < ex.size(); ++k) {
            dot += ex[k] * ey[k];
            nx += ex[k] * ex[k];
            ny += ey[k] * ey[k];
        }
        const double cos_xy = dot / (std::sqrt(nx) * std::sqrt(ny));

        // the (x, x) pair contributes nothing; all that remains is x vs y
        std::vector<RasterImage> a{x};
        std::vector<RasterImage> b{x, y};
        REQUIRE(consistency(a, b, enc) == Catch::Approx(cos_xy).margin(1e-12));

        // self-consistency of a two-image set is the off-diagonal cosine
        std::vector<RasterImage> both{x, y};
        REQUIRE(consistency(both, both, enc) == Catch::Approx(cos_xy).margin(1e-12));
    }

    SECTION("degenerate inputs") {
        MockImageEncoder enc(7777);
        RandomStream rng(5);
        std::vector<RasterImage> one{random_image(rng, 8, 8)};
        std::vector<RasterImage> none;
        REQUIRE_THROWS_AS(consistency(one, one, enc), std::domain_error);   // singleton self
        REQUIRE_THROWS_AS(consistency(none, one, enc), std::domain_error);  // empty set
        std::vector<RasterImage> dup{one[0], one[0]};
        REQUIRE_THROWS_AS(consistency(dup, dup, enc), std::domain_error);  // no distinct pairs

        FnEncoder zero([](const RasterImage&) { return std::vector<double>{0.0, 0.0}; });
        std::vector<RasterImage> two{tagged_image(0.1), tagged_image(0.9)};
        REQUIRE_THROWS_AS(consistency(two, two, zero), NumericError);
    }
}

TEST_CASE("seed selection: coherency score and tie breaking") {
    const auto cand = [](int seed, double cl, double cr, double cx) {
        SeedCandidate c;
        c.seed = seed;
        c.c_left = cl;
        c.c_right = cr;
        c.c_cross = cx;
        return c;
    };

    SECTION("a strong cross-set overlap loses to a cleaner separation") {
        // A scores 0.9 + 0.8 + (0.8 - 0.5) = 2.0; B scores 0.95 + 0.9 + (0.9 - 0.85) = 1.9
        const std::vector<SeedCandidate> cands{cand(0, 0.9, 0.8, 0.5), cand(1, 0.95, 0.9, 0.85)};
        REQUIRE(cands[0].score() == Catch::Approx(2.0));
        REQUIRE(cands[1].score() == Catch::Approx(1.9));
        REQUIRE(select_seed(cands).seed == 0);
    }

    SECTION("single candidate wins by default") {
        const std::vector<SeedCandidate> one{cand(7, 0.1, 0.2, 0.9)};
        REQUIRE(select_seed(one).seed == 7);
    }

    SECTION("score is invariant under swapping the two sides") {
        REQUIRE(cand(0, 0.9, 0.7, 0.4).score() == cand(0, 0.7, 0.9, 0.4).score());
    }

    SECTION("shifting every candidate's self-consistencies preserves the argmax") {
        std::vector<SeedCandidate> cands{cand(0, 0.9, 0.8, 0.5), cand(1, 0.95, 0.9, 0.85),
                                         cand(2, 0.6, 0.85, 0.3)};
        const int before = select_seed(cands).seed;
        for (SeedCandidate& c : cands) {
            c.c_left += 0.03;
            c.c_right += 0.03;
        }
        REQUIRE(select_seed(cands).seed == before);
    }

    SECTION("exact ties go to the lowest seed") {
        const std::vector<SeedCandidate> cands{cand(3, 0.8, 0.7, 0.4), cand(1, 0.8, 0.7, 0.4),
                                               cand(2, 0.8, 0.7, 0.4)};
        REQUIRE(select_seed(cands).seed == 1);
    }

    SECTION("empty candidate list") {
        REQUIRE_THROWS_AS(select_seed({}), std::domain_error);
    }
}

TEST_CASE("pair training: zero steps, determinism, and shape") {
    MockEmbeddingGenerator gen(31337);
    const auto parents = concept_images(gen, 5, 6);
    const SkewedTimestepSampler sampler(1000, 0.5);
    const Embedding init = gen.embed_word("object");

    SECTION("zero steps leave both embeddings at the init word") {
        TokenPair pair{"<v1>", "<v2>", init, init};
        RandomStream rng(3);
        const auto trace = train_pair(parents, pair, 0, gen, sampler, rng);
        REQUIRE(trace.empty());
        REQUIRE(pair.left.values == init.values);
        REQUIRE(pair.right.values == init.values);
    }

    SECTION("identical seeds reproduce traces and embeddings bitwise") {
        TokenPair p1{"<v1>", "<v2>", init, init}, p2{"<v1>", "<v2>", init, init};
        RandomStream r1(17), r2(17);
        const auto t1 = train_pair(parents, p1, 40, gen, sampler, r1);
        const auto t2 = train_pair(parents, p2, 40, gen, sampler, r2);
        REQUIRE(t1 == t2);
        REQUIRE(p1.left.values == p2.left.values);
        REQUIRE(p1.right.values == p2.right.values);
    }

    SECTION("trace has one finite nonnegative loss per step") {
        TokenPair pair{"<v1>", "<v2>", init, init};
        RandomStream rng(23);
        const auto trace = train_pair(parents, pair, 25, gen, sampler, rng);
        REQUIRE(trace.size() == 25);
        for (double l : trace) {
            REQUIRE(std::isfinite(l));
            REQUIRE(l >= 0.0);
        }
    }

    SECTION("empty training set is rejected") {
        TokenPair pair{"<v1>", "<v2>", init, init};
        RandomStream rng(1);
        REQUIRE_THROWS_AS(train_pair({}, pair, 1, gen, sampler, rng), std::invalid_argument);
    }
}

TEST_CASE("pair training converges: block means drop and the pair reconstructs the parent") {
    MockEmbeddingGenerator gen(31337);
    const auto parents = concept_images(gen, 5, 8);
    const Embedding init = gen.embed_word("object");
    const SkewedTimestepSampler sampler(1000, 0.5);

    // relative distance between the latent the pair decodes to and the mean
    // parent image (the mock generator is linear, so this is the pair's actual
    // reconstruction target)
    const auto recon_error = [&](const Embedding& l, const Embedding& r) {
        Embedding a = l, b = r;
        TextCondition cond{"<v1> <v2>", {}, {&a, &b}};
        const auto mu = gen.latent_of(cond);
        std::vector<double> mean(mu.size(), 0.0);
        for (const RasterImage& im : parents)
            for (std::size_t i = 0; i < mean.size(); ++i)
                mean[i] += im.data[i] / double(parents.size());
        double num = 0, den = 0;
        for (std::size_t i = 0; i < mu.size(); ++i) {
            num += sq(mu[i] - mean[i]);
            den += sq(mean[i]);
        }
        return std::sqrt(num / den);
    };

    TokenPair pair{"<v1>", "<v2>", init, init};
    const double before = recon_error(pair.left, pair.right);
    RandomStream rng(11);
    const auto trace = train_pair(parents, pair, 600, gen, sampler, rng);
    REQUIRE(trace.size() == 600);

    // disjoint 100-step block means are strictly decreasing on this fixture
    // (probed: 1752 -> 1386 -> 1136 -> 1002 -> 929 -> 878)
    std::vector<double> blocks;
    for (int b = 0; b < 6; ++b) {
        double s = 0;
        for (int j = 0; j < 100; ++j) s += trace[std::size_t(b * 100 + j)];
        blocks.push_back(s / 100.0);
    }
    for (std::size_t b = 1; b < blocks.size(); ++b) REQUIRE(blocks[b] < blocks[b - 1]);
    REQUIRE(blocks.back() < 0.65 * blocks.front());

    // the pair jointly decodes near the parent mean; init started far away
    // (probed: 2.24 before, 0.54 after)
    REQUIRE(before > 1.5);
    REQUIRE(recon_error(pair.left, pair.right) < 0.7);

    // both tokens actually moved off the init word
    double dl = 0, dr = 0;
    for (std::size_t j = 0; j < init.values.size(); ++j) {
        dl += sq(pair.left.values[j] - init.values[j]);
        dr += sq(pair.right.values[j] - init.values[j]);
    }
    REQUIRE(std::sqrt(dl) > 1.0);
    REQUIRE(std::sqrt(dr) > 1.0);
}

TEST_CASE("split_node wires the selection: the argmax pair becomes the children") {
    MockEmbeddingGenerator gen(31337);
    MockImageEncoder enc(7777);
    const auto roots = concept_images(gen, 5, 4);

    TreeGrowConfig cfg;
    cfg.k_seeds = 4;
    cfg.probe_steps = 30;
    cfg.final_steps = 0;  // children must equal the winning probe pair bitwise
    cfg.parent_set_size = 4;
    cfg.node_sample_size = 6;

    ConceptTree tree = single_node_tree(gen, roots);
    const std::vector<double> root_emb_before = tree.nodes[0].embedding.values;

    // master seed picked so probe index 1 is the unique argmax
    RandomStream rng(11);
    const SplitReport report = split_node(tree, 0, cfg, gen, enc, rng);

    REQUIRE(report.candidates.size() == 4);
    for (const SeedCandidate& c : report.candidates) {
        REQUIRE(std::abs(c.c_left) <= 1.0);
        REQUIRE(std::abs(c.c_right) <= 1.0);
        REQUIRE(std::abs(c.c_cross) <= 1.0);
    }
    REQUIRE(select_seed(report.candidates).seed == report.winner_seed);
    REQUIRE(report.winner_seed == 1);
    for (const SeedCandidate& c : report.candidates)
        if (c.seed != report.winner_seed)
            REQUIRE(c.score() < report.candidates[1].score());

    // with no final phase, the children carry the winning pair exactly
    REQUIRE(report.left_index == 1);
    REQUIRE(report.right_index == 2);
    REQUIRE(tree.nodes[1].embedding.values == report.candidates[1].left.values);
    REQUIRE(tree.nodes[2].embedding.values == report.candidates[1].right.values);
    REQUIRE(report.winner_trace.empty());

    // fresh unique tokens, sampled sets, scored children, intact root
    REQUIRE(tree.nodes[1].token == "<v1>");
    REQUIRE(tree.nodes[2].token == "<v2>");
    REQUIRE(tree.nodes[0].left == 1);
    REQUIRE(tree.nodes[0].right == 2);
    for (int c : {1, 2}) {
        REQUIRE(tree.nodes[std::size_t(c)].images.size() == 6);
        REQUIRE(std::abs(tree.nodes[std::size_t(c)].self_consistency) <= 1.0);
        REQUIRE(tree.nodes[std::size_t(c)].is_leaf());
    }
    REQUIRE(tree.nodes[0].embedding.values == root_emb_before);
    tree.validate();

    SECTION("re-splitting and bad indices are rejected") {
        RandomStream r2(1);
        REQUIRE_THROWS_AS(split_node(tree, 0, cfg, gen, enc, r2), std::invalid_argument);
        REQUIRE_THROWS_AS(split_node(tree, 99, cfg, gen, enc, r2), std::invalid_argument);
        ConceptTree bare = single_node_tree(gen, {});
        REQUIRE_THROWS_AS(split_node(bare, 0, cfg, gen, enc, r2), ConfigError);
    }
}

TEST_CASE("split_node: parallel probe workers change nothing") {
    // forwards to the mock but declares itself safe for concurrent calls
    class ConcurrentGen final : public EmbeddingGenerator {
      public:
        explicit ConcurrentGen(const MockEmbeddingGenerator& g) : g_(g) {}
        RasterImage generate(const TextCondition& c, RandomStream& r) const override {
            return g_.generate(c, r);
        }
        LdmResult ldm_loss_and_grads(const RasterImage& i, int t, const TextCondition& c,
                                     const std::vector<double>& e) const override {
            return g_.ldm_loss_and_grads(i, t, c, e);
        }
        Embedding embed_word(const std::string& w) const override { return g_.embed_word(w); }
        bool concurrent_safe() const override { return true; }

      private:
        const MockEmbeddingGenerator& g_;
    };

    MockEmbeddingGenerator gen(31337);
    ConcurrentGen cgen(gen);
    MockImageEncoder enc(7777);
    const auto roots = concept_images(gen, 5, 4);

    TreeGrowConfig cfg;
    cfg.k_seeds = 4;
    cfg.probe_steps = 20;
    cfg.final_steps = 10;
    cfg.parent_set_size = 4;
    cfg.node_sample_size = 4;

    ConceptTree seq = single_node_tree(gen, roots);
    ConceptTree par = single_node_tree(gen, roots);
    RandomStream r1(8), r2(8);
    cfg.workers = 1;
    const SplitReport rep_seq = split_node(seq, 0, cfg, cgen, enc, r1);
    cfg.workers = 4;
    const SplitReport rep_par = split_node(par, 0, cfg, cgen, enc, r2);

    REQUIRE(rep_seq.winner_seed == rep_par.winner_seed);
    for (int i = 0; i < 4; ++i) {
        REQUIRE(rep_seq.candidates[std::size_t(i)].score() ==
                rep_par.candidates[std::size_t(i)].score());
        REQUIRE(rep_seq.candidates[std::size_t(i)].left.values ==
                rep_par.candidates[std::size_t(i)].left.values);
    }
    for (int n : {1, 2})
        REQUIRE(seq.nodes[std::size_t(n)].embedding.values ==
                par.nodes[std::size_t(n)].embedding.values);
}

TEST_CASE("grow_tree: structure, stop rule, and determinism") {
    MockEmbeddingGenerator gen(31337);
    MockImageEncoder enc(7777);
    const auto roots = concept_images(gen, 5, 5);

    SECTION("max_depth 0 trains the root token and nothing else") {
        TreeGrowConfig cfg = small_config();
        cfg.max_depth = 0;
        RandomStream rng(21);
        const ConceptTree tree = grow_tree(roots, cfg, gen, enc, rng);
        REQUIRE(tree.nodes.size() == 1);
        REQUIRE(tree.nodes[0].is_leaf());
        REQUIRE(tree.nodes[0].token == "<v0>");
        REQUIRE(tree.nodes[0].embedding.values != gen.embed_word("object").values);
        REQUIRE(tree.nodes[0].images.size() == roots.size());
        tree.validate();
    }

    SECTION("max_depth 1 yields exactly three nodes") {
        TreeGrowConfig cfg = small_config();
        cfg.max_depth = 1;
        RandomStream rng(21);
        const ConceptTree tree = grow_tree(roots, cfg, gen, enc, rng);
        REQUIRE(tree.nodes.size() == 3);
        REQUIRE(tree.nodes[0].left == 1);
        REQUIRE(tree.nodes[0].right == 2);
        REQUIRE(tree.nodes[1].is_leaf());
        REQUIRE(tree.nodes[2].is_leaf());
        tree.validate();
    }

    SECTION("a full two-level tree has 2*splits + 1 nodes and binary branching") {
        TreeGrowConfig cfg = small_config();
        cfg.max_depth = 2;
        RandomStream rng(21);
        const ConceptTree tree = grow_tree(roots, cfg, gen, enc, rng);
        REQUIRE(tree.nodes.size() == 7);  // 3 splits
        int splits = 0;
        for (const ConceptNode& n : tree.nodes) {
            if (n.is_leaf()) continue;
            ++splits;
            REQUIRE(n.left > 0);
            REQUIRE(n.right > 0);
        }
        REQUIRE(tree.nodes.size() == std::size_t(2 * splits + 1));
        tree.validate();

        // every node's recorded set is coherent on this fixture
        for (const ConceptNode& n : tree.nodes)
            REQUIRE(n.self_consistency >= cfg.stop_consistency);
    }

    SECTION("an incoherent root set is never split") {
        RasterImage a(64, 64, 1), b(64, 64, 1);
        a.data = RandomStream(100).normal_vec(a.size());
        b.data = RandomStream(101).normal_vec(b.size());
        const std::vector<RasterImage> noise{a, b};

        TreeGrowConfig cfg = small_config();
        cfg.max_depth = 2;
        RandomStream rng(21);
        const ConceptTree tree = grow_tree(noise, cfg, gen, enc, rng);
        REQUIRE(tree.nodes.size() == 1);
        REQUIRE(tree.nodes[0].self_consistency < cfg.stop_consistency);
    }

    SECTION("identical seeds grow bitwise-identical trees") {
        TreeGrowConfig cfg = small_config();
        cfg.max_depth = 1;
        RandomStream r1(33), r2(33);
        const ConceptTree t1 = grow_tree(roots, cfg, gen, enc, r1);
        const ConceptTree t2 = grow_tree(roots, cfg, gen, enc, r2);
        REQUIRE(t1.nodes.size() == t2.nodes.size());
        for (std::size_t i = 0; i < t1.nodes.size(); ++i) {
            REQUIRE(t1.nodes[i].embedding.values == t2.nodes[i].embedding.values);
            REQUIRE(t1.nodes[i].self_consistency == t2.nodes[i].self_consistency);
        }
    }

    SECTION("empty root set is rejected") {
        RandomStream rng(1);
        REQUIRE_THROWS_AS(grow_tree({}, small_config(), gen, enc, rng), ConfigError);
    }
}

TEST_CASE("prompt composition: substitution, inter-tree tokens, and the parser round-trip") {
    MockEmbeddingGenerator gen(31337);
    MockImageEncoder enc(7777);
    const auto roots = concept_images(gen, 5, 4);

    TreeGrowConfig cfg = small_config();
    cfg.max_depth = 1;
    cfg.probe_steps = 5;
    cfg.final_steps = 5;
    cfg.k_seeds = 2;
    RandomStream r1(2), r2(3);
    ConceptTree tv = grow_tree(roots, cfg, gen, enc, r1);
    cfg.token_prefix = "w";
    ConceptTree tw = grow_tree(roots, cfg, gen, enc, r2);

    TokenRegistry reg;
    reg.add_tree(tv);
    reg.add_tree(tw);
    REQUIRE(reg.size() == 6);

    SECTION("placeholders substitute exactly and slots alias the tree nodes") {
        const TextCondition cond = compose_prompt({"<v1>"}, "A photo of {0}", reg);
        REQUIRE(cond.prompt == "A photo of <v1>");
        REQUIRE(cond.token_slots.size() == 1);
        REQUIRE(cond.token_slots[0] == &tv.nodes[1].embedding);
    }

    SECTION("tokens from different trees resolve in one prompt") {
        const TextCondition cond = compose_prompt({"<v2>", "<w1>"}, "{0} next to {1}", reg);
        REQUIRE(cond.prompt == "<v2> next to <w1>");
        REQUIRE(cond.token_slots[0] == &tv.nodes[2].embedding);
        REQUIRE(cond.token_slots[1] == &tw.nodes[1].embedding);
    }

    SECTION("parsing the emitted prompt recovers the token list") {
        const std::vector<std::string> tokens{"<v0>", "<w2>", "<v1>"};
        const TextCondition cond = compose_prompt(tokens, "{0} beside {1}, under {2}.", reg);
        REQUIRE(extract_tokens(cond.prompt) == tokens);
    }

    SECTION("raw prompts resolve their tokens in order of appearance") {
        const TextCondition cond = resolve_prompt("a photo of <w1> riding <v2>", reg);
        REQUIRE(cond.prompt == "a photo of <w1> riding <v2>");
        REQUIRE(cond.token_slots.size() == 2);
        REQUIRE(cond.token_slots[0] == &tw.nodes[1].embedding);
        REQUIRE(cond.token_slots[1] == &tv.nodes[2].embedding);
    }

    SECTION("malformed or unknown tokens fail loudly") {
        REQUIRE_THROWS_AS(compose_prompt({"<zz9>"}, "A photo of {0}", reg), ConfigError);
        REQUIRE_THROWS_AS(compose_prompt({"<v0>"}, "A photo of {0} and {1}", reg), ConfigError);
        REQUIRE_THROWS_AS(compose_prompt({"<v0>"}, "broken {0", reg), ConfigError);
        REQUIRE_THROWS_AS(resolve_prompt("hello <zz9>", reg), ConfigError);
    }

    SECTION("stray angle brackets are not tokens") {
        REQUIRE(extract_tokens("a < b and c > d").empty());
        REQUIRE(extract_tokens("tail <v0").empty());
        REQUIRE(extract_tokens("<<v0> nested").size() == 1);
        REQUIRE(extract_tokens("<<v0> nested")[0] == "<v0>");
    }

    SECTION("token collisions across registries are rejected") {
        TokenRegistry dup;
        dup.add_tree(tv);
        REQUIRE_THROWS_AS(dup.add_tree(tv), ConfigError);
    }
}

TEST_CASE("tree persistence: directory round-trip and the float32 embedding layout") {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "vecsketch_tree_test";
    fs::remove_all(dir);

    // hand-built tree with PNG-exact image values (multiples of 1/255)
    ConceptTree tree;
    tree.token_prefix = "v";
    tree.next_token = 3;
    RandomStream rng(12);
    for (int i = 0; i < 3; ++i) {
        ConceptNode n;
        n.token = "<v" + std::to_string(i) + ">";
        n.embedding.values = rng.normal_vec(64);
        n.self_consistency = 0.5 + 0.1 * i;
        for (int k = 0; k < 2 + i; ++k) {
            RasterImage img(6, 5, 1);
            for (auto& v : img.data) v = double(rng.uniform_index(256)) / 255.0;
            n.images.push_back(std::move(img));
        }
        tree.nodes.push_back(std::move(n));
    }
    tree.nodes[0].left = 1;
    tree.nodes[0].right = 2;
    tree.validate();

    save_tree(tree, dir);
    REQUIRE(fs::exists(dir / "nodes.json"));
    REQUIRE(fs::exists(dir / "embeddings" / "v0.f32"));
    REQUIRE(fs::exists(dir / "images" / "v2" / "003.png"));

    SECTION("the embedding file is a raw little-endian float32 array") {
        std::ifstream f(dir / "embeddings" / "v1.f32", std::ios::binary);
        std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)),
                                         std::istreambuf_iterator<char>());
        REQUIRE(bytes.size() == 64 * 4);
        for (int j = 0; j < 64; ++j) {
            std::uint32_t u = 0;
            for (int b = 3; b >= 0; --b) u = (u << 8) | bytes[std::size_t(4 * j + b)];
            float fv;
            static_assert(sizeof fv == 4);
            std::memcpy(&fv, &u, 4);
            REQUIRE(fv == float(tree.nodes[1].embedding.values[std::size_t(j)]));
        }
    }

    SECTION("loading restores topology, scores, embeddings, and images") {
        const ConceptTree back = load_tree(dir);
        REQUIRE(back.token_prefix == "v");
        REQUIRE(back.next_token == 3);
        REQUIRE(back.nodes.size() == 3);
        for (std::size_t i = 0; i < 3; ++i) {
            REQUIRE(back.nodes[i].token == tree.nodes[i].token);
            REQUIRE(back.nodes[i].self_consistency == tree.nodes[i].self_consistency);
            REQUIRE(back.nodes[i].left == tree.nodes[i].left);
            REQUIRE(back.nodes[i].right == tree.nodes[i].right);
            REQUIRE(back.nodes[i].embedding.values.size() == 64);
            for (std::size_t j = 0; j < 64; ++j)
                REQUIRE(back.nodes[i].embedding.values[j] ==
                        double(float(tree.nodes[i].embedding.values[j])));
            REQUIRE(back.nodes[i].images.size() == tree.nodes[i].images.size());
            for (std::size_t k = 0; k < back.nodes[i].images.size(); ++k)
                REQUIRE(back.nodes[i].images[k].data == tree.nodes[i].images[k].data);
        }
        back.validate();
    }

    SECTION("the manifest is plain JSON with a format tag") {
        std::ifstream f(dir / "nodes.json");
        nlohmann::json doc;
        f >> doc;
        REQUIRE(doc.at("format") == "concept-tree/1");
        REQUIRE(doc.at("nodes").size() == 3);
        REQUIRE(doc.at("nodes")[0].at("image_count") == 2);
    }

    SECTION("corrupt inputs are reported as configuration errors") {
        REQUIRE_THROWS_AS(load_tree(dir / "no_such_dir"), ConfigError);

        const fs::path broken = fs::temp_directory_path() / "vecsketch_tree_broken";
        fs::remove_all(broken);
        fs::create_directories(broken);
        std::ofstream(broken / "nodes.json") << "{ not json";
        REQUIRE_THROWS_AS(load_tree(broken), ConfigError);

        // truncated embedding file
        fs::remove_all(broken);
        fs::copy(dir, broken, fs::copy_options::recursive);
        fs::resize_file(broken / "embeddings" / "v0.f32", 10);
        REQUIRE_THROWS_AS(load_tree(broken), ConfigError);
        fs::remove_all(broken);
    }

    fs::remove_all(dir);
}

TEST_CASE("tree shape validation and token registry naming") {
    MockEmbeddingGenerator gen(31337);

    SECTION("fresh tokens count up under the prefix") {
        ConceptTree tree;
        tree.token_prefix = "q";
        REQUIRE(tree.fresh_token() == "<q0>");
        REQUIRE(tree.fresh_token() == "<q1>");
        REQUIRE(tree.next_token == 2);
    }

    SECTION("find locates nodes by token") {
        ConceptTree tree = single_node_tree(gen, {});
        REQUIRE(tree.find("<v0>") == &tree.nodes[0]);
        REQUIRE(tree.find("<v9>") == nullptr);
    }

    SECTION("malformed trees are rejected") {
        ConceptTree tree = single_node_tree(gen, {});
        tree.nodes[0].left = 1;  // single dangling child
        REQUIRE_THROWS_AS(tree.validate(), ConfigError);

        ConceptTree dup = single_node_tree(gen, {});
        ConceptNode clone = dup.nodes[0];
        dup.nodes.push_back(clone);  // duplicate token, unlinked
        REQUIRE_THROWS_AS(dup.validate(), ConfigError);

        ConceptTree empty;
        REQUIRE_THROWS_AS(empty.validate(), ConfigError);
    }

    SECTION("word embeddings are deterministic and word-specific") {
        const Embedding a = gen.embed_word("object");
        const Embedding b = gen.embed_word("object");
        const Embedding c = gen.embed_word("artifact");
        REQUIRE(a.values == b.values);
        REQUIRE(a.values.size() == 64);
        REQUIRE(a.values != c.values);
    }

    SECTION("configuration bounds") {
        TreeGrowConfig cfg;
        cfg.k_seeds = 0;
        REQUIRE_THROWS_AS(cfg.validate(), ConfigError);
        cfg = TreeGrowConfig{};
        cfg.node_sample_size = 1;
        REQUIRE_THROWS_AS(cfg.validate(), ConfigError);
        cfg = TreeGrowConfig{};
        cfg.timestep_skew = 1.0;
        REQUIRE_THROWS_AS(cfg.validate(), ConfigError);
        cfg = TreeGrowConfig{};
        cfg.stop_consistency = 1.5;
        REQUIRE_THROWS_AS(cfg.validate(), ConfigError);
        cfg = TreeGrowConfig{};
        cfg.lr = 0.0;
        REQUIRE_THROWS_AS(cfg.validate(), ConfigError);
        TreeGrowConfig{}.validate();
    }
}
