#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "vecsketch/common.hpp"
#include "vecsketch/guidance.hpp"
#include "vecsketch/optim.hpp"
#include "vecsketch/png_io.hpp"
#include "vecsketch/raster.hpp"

// Concept decomposition trees: a binary tree of trainable token embeddings grown
// over a generative backend. Each split trains a fresh pair of tokens to jointly
// reconstruct the parent's image set under the denoising loss ("A photograph of
// <l> <r>"), probes several seeds, keeps the pair whose sampled image sets are
// individually coherent yet mutually distinct, and trains the winner out. Nodes
// carry the learned embedding, the image set they were scored on, and that set's
// self-consistency; prompts composed from any subset of tokens -- across trees
// too -- drive the generator directly.

namespace vecsketch {

// ---------------------------------------------------------------------------
// Tree shape

struct ConceptNode {
    std::string token;                // placeholder word, e.g. "<v3>"
    Embedding embedding;
    std::vector<RasterImage> images;  // sampled set the scores were measured on
    double self_consistency = 1.0;
    int left = -1, right = -1;        // indices into ConceptTree::nodes, -1 for leaves

    bool is_leaf() const { return left < 0 && right < 0; }
};

struct ConceptTree {
    std::string token_prefix = "v";  // give trees distinct prefixes to compose across them
    int next_token = 0;
    std::vector<ConceptNode> nodes;  // nodes[0] is the root

    std::string fresh_token() { return "<" + token_prefix + std::to_string(next_token++) + ">"; }

    const ConceptNode* find(const std::string& token) const {
        for (const ConceptNode& n : nodes)
            if (n.token == token) return &n;
        return nullptr;
    }

    void validate() const {
        if (nodes.empty()) throw ConfigError("ConceptTree: no nodes");
        if (token_prefix.empty()) throw ConfigError("ConceptTree: empty token prefix");
        std::vector<int> parents(nodes.size(), 0);
        for (std::size_t i = 0; i < nodes.size(); ++i) {
            const ConceptNode& n = nodes[i];
            if ((n.left < 0) != (n.right < 0))
                throw ConfigError("ConceptTree: node " + n.token + " has a single child");
            if (n.left >= 0) {
                if (n.left == n.right) throw ConfigError("ConceptTree: duplicate child link");
                for (int c : {n.left, n.right}) {
                    if (c <= 0 || std::size_t(c) >= nodes.size())
                        throw ConfigError("ConceptTree: child index out of range");
                    ++parents[std::size_t(c)];
                }
            }
            for (std::size_t j = i + 1; j < nodes.size(); ++j)
                if (nodes[j].token == n.token)
                    throw ConfigError("ConceptTree: duplicate token " + n.token);
        }
        for (std::size_t i = 1; i < nodes.size(); ++i)
            if (parents[i] != 1)
                throw ConfigError("ConceptTree: node " + nodes[i].token + " not linked exactly once");
        if (parents[0] != 0) throw ConfigError("ConceptTree: root has a parent");
        // in-degrees alone admit cycles detached from the root
        std::vector<char> seen(nodes.size(), 0);
        std::vector<int> stack{0};
        seen[0] = 1;
        std::size_t reached = 0;
        while (!stack.empty()) {
            const int i = stack.back();
            stack.pop_back();
            ++reached;
            if (nodes[std::size_t(i)].left >= 0)
                for (int c : {nodes[std::size_t(i)].left, nodes[std::size_t(i)].right})
                    if (!seen[std::size_t(c)]) {
                        seen[std::size_t(c)] = 1;
                        stack.push_back(c);
                    }
        }
        if (reached != nodes.size()) throw ConfigError("ConceptTree: unreachable nodes");
    }
};

struct SeedCandidate {
    int seed = 0;  // probe index the pair came from
    Embedding left, right;
    double c_left = 0.0, c_right = 0.0, c_cross = 0.0;

    // High when both nodes are individually coherent and even the weaker one
    // stays clear of the cross-set similarity.
    double score() const { return c_left + c_right + (std::min(c_left, c_right) - c_cross); }
};

struct TreeGrowConfig {
    int k_seeds = 4;             // probe pairs trained per split
    int probe_steps = 200;       // steps each probe trains before scoring
    int final_steps = 1500;      // continued training of the selected pair
    int parent_set_size = 10;    // training images taken from the parent's set
    int node_sample_size = 40;   // images sampled per candidate node for scoring
    int timesteps = 1000;        // denoising horizon; must not exceed the backend's
    double timestep_skew = 0.5;  // alpha of the skewed timestep density
    double lr = 5e-3;            // Adam rate on token embeddings
    std::string pair_template = "A photograph of {left} {right}";
    std::string root_template = "A photograph of {0}";
    std::string init_word = "object";
    std::string token_prefix = "v";
    int max_depth = 2;
    double stop_consistency = 0.65;  // leaves below this are left unsplit
    unsigned workers = 1;            // probe parallelism; needs concurrent-safe backends

    void validate() const {
        if (k_seeds < 1 || parent_set_size < 1)
            throw ConfigError("TreeGrowConfig: counts must be positive");
        if (node_sample_size < 2)
            throw ConfigError("TreeGrowConfig: scoring a node needs at least two samples");
        if (probe_steps < 0 || final_steps < 0 || max_depth < 0)
            throw ConfigError("TreeGrowConfig: negative step or depth counts");
        if (timesteps < 1) throw ConfigError("TreeGrowConfig: timesteps must be positive");
        if (!(timestep_skew >= 0.0) || timestep_skew >= 1.0)
            throw ConfigError("TreeGrowConfig: timestep_skew outside [0,1)");
        if (!(lr > 0.0)) throw ConfigError("TreeGrowConfig: lr must be positive");
        if (pair_template.empty() || root_template.empty() || init_word.empty() ||
            token_prefix.empty())
            throw ConfigError("TreeGrowConfig: empty prompt or naming fields");
        if (!(stop_consistency >= -1.0 && stop_consistency <= 1.0))
            throw ConfigError("TreeGrowConfig: stop_consistency outside [-1,1]");
        if (workers < 1) throw ConfigError("TreeGrowConfig: workers must be positive");
    }
};

// ---------------------------------------------------------------------------
// Consistency: mean pairwise cosine similarity between the encoder embeddings of
// two image sets, excluding pairs of identical images. A coherent set scores
// near 1 against itself; unrelated sets land near 0. Symmetric, |C| <= 1.

inline double consistency(const std::vector<RasterImage>& a, const std::vector<RasterImage>& b,
                          const ImageEncoder& enc) {
    if (a.empty() || b.empty()) throw std::domain_error("consistency: empty image set");
    const auto embed_all = [&enc](const std::vector<RasterImage>& set) {
        std::vector<std::vector<double>> e;
        e.reserve(set.size());
        for (const RasterImage& img : set) e.push_back(enc.embed(img).values);
        return e;
    };
    const auto hash_all = [](const std::vector<RasterImage>& set) {
        std::vector<std::uint64_t> h;
        h.reserve(set.size());
        for (const RasterImage& img : set) {
            const int dims[3] = {img.height, img.width, img.channels};
            h.push_back(fnv1a64(img.data.data(), img.data.size() * sizeof(double),
                                fnv1a64(dims, sizeof dims)));
        }
        return h;
    };
    const std::vector<std::vector<double>> ea = embed_all(a);
    const std::vector<std::uint64_t> ha = hash_all(a);
    std::vector<std::vector<double>> eb_store;
    std::vector<std::uint64_t> hb_store;
    const bool same_set = (&a == &b);
    const auto& eb = same_set ? ea : (eb_store = embed_all(b));
    const auto& hb = same_set ? ha : (hb_store = hash_all(b));

    std::vector<double> na(ea.size()), nb_store;
    for (std::size_t i = 0; i < ea.size(); ++i) na[i] = std::sqrt(std::inner_product(
        ea[i].begin(), ea[i].end(), ea[i].begin(), 0.0));
    const auto& nb = same_set ? na : (nb_store = [&] {
        std::vector<double> n(eb.size());
        for (std::size_t j = 0; j < eb.size(); ++j)
            n[j] = std::sqrt(std::inner_product(eb[j].begin(), eb[j].end(), eb[j].begin(), 0.0));
        return n;
    }());

    double acc = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        for (std::size_t j = 0; j < b.size(); ++j) {
            const bool identical = ha[i] == hb[j] && a[i].width == b[j].width &&
                                   a[i].height == b[j].height && a[i].channels == b[j].channels &&
                                   a[i].data == b[j].data;
            if (identical) continue;
            if (ea[i].size() != eb[j].size())
                throw BackendError("consistency: encoder returned mixed embedding dims");
            if (!(na[i] > 0.0) || !(nb[j] > 0.0))
                throw NumericError("consistency: zero-norm image embedding");
            acc += std::inner_product(ea[i].begin(), ea[i].end(), eb[j].begin(), 0.0) /
                   (na[i] * nb[j]);
            ++count;
        }
    }
    if (count == 0) throw std::domain_error("consistency: no pairs of distinct images");
    return acc / double(count);
}

// Argmax of the coherency score; exact ties go to the lowest seed.
inline const SeedCandidate& select_seed(const std::vector<SeedCandidate>& candidates) {
    if (candidates.empty()) throw std::domain_error("select_seed: no candidates");
    const SeedCandidate* best = &candidates.front();
    for (const SeedCandidate& c : candidates)
        if (c.score() > best->score() || (c.score() == best->score() && c.seed < best->seed))
            best = &c;
    return *best;
}

// ---------------------------------------------------------------------------
// Pair training: textual inversion of two sibling tokens at once

namespace detail {

inline std::string substitute_placeholders(const std::string& tmpl,
                                           const std::map<std::string, std::string>& subs) {
    std::string out;
    out.reserve(tmpl.size());
    for (std::size_t i = 0; i < tmpl.size();) {
        if (tmpl[i] != '{') {
            out += tmpl[i++];
            continue;
        }
        const std::size_t close = tmpl.find('}', i);
        if (close == std::string::npos)
            throw ConfigError("prompt template: unclosed '{' in \"" + tmpl + "\"");
        const std::string key = tmpl.substr(i + 1, close - i - 1);
        const auto it = subs.find(key);
        if (it == subs.end())
            throw ConfigError("prompt template: unknown placeholder {" + key + "}");
        out += it->second;
        i = close + 1;
    }
    return out;
}

// One Adam run of the denoising objective with gradients confined to the given
// slots. Per step: draw a training image, a skew-sampled timestep and a noise,
// then descend the backend's prediction error.
inline std::vector<double> train_slots(const std::vector<RasterImage>& images,
                                       const std::string& prompt,
                                       const std::vector<Embedding*>& slots, int steps, double lr,
                                       const EmbeddingGenerator& gen,
                                       const SkewedTimestepSampler& sampler, RandomStream& rng) {
    if (images.empty()) throw std::invalid_argument("train_slots: empty training set");
    if (steps < 0) throw std::invalid_argument("train_slots: negative step count");
    TextCondition cond;
    cond.prompt = prompt;
    cond.token_slots = slots;
    std::size_t dim = 0;
    for (const Embedding* s : slots) dim += s->values.size();
    Adam opt(dim, {lr, 0.9, 0.999, 1e-8});
    std::vector<double> params(dim), grads(dim), trace;
    trace.reserve(std::size_t(steps));
    for (int step = 0; step < steps; ++step) {
        const RasterImage& img = images[rng.uniform_index(images.size())];
        const int t = sampler(rng);
        const std::vector<double> eps = rng.normal_vec(img.size());
        const auto res = ldm_objective(gen, img, t, cond, eps);
        if (res.slot_grads.size() != slots.size())
            throw BackendError("train_slots: backend returned wrong slot-gradient count");
        std::size_t off = 0;
        for (std::size_t s = 0; s < slots.size(); ++s) {
            if (res.slot_grads[s].size() != slots[s]->values.size())
                throw BackendError("train_slots: slot gradient dim mismatch");
            std::copy(slots[s]->values.begin(), slots[s]->values.end(),
                      params.begin() + std::ptrdiff_t(off));
            std::copy(res.slot_grads[s].begin(), res.slot_grads[s].end(),
                      grads.begin() + std::ptrdiff_t(off));
            off += slots[s]->values.size();
        }
        opt.step(params, grads);
        off = 0;
        for (Embedding* s : slots) {
            std::copy_n(params.begin() + std::ptrdiff_t(off), s->values.size(), s->values.begin());
            off += s->values.size();
        }
        trace.push_back(res.loss);
    }
    return trace;
}

}  // namespace detail

struct TokenPair {
    std::string left_token, right_token;
    Embedding left, right;
};

// Binary reconstruction: both tokens of the pair train jointly against images of
// the parent concept, so together they come to encapsulate it. Embeddings are
// updated in place; returns the per-step loss trace.
inline std::vector<double> train_pair(
    const std::vector<RasterImage>& parent_images, TokenPair& pair, int steps,
    const EmbeddingGenerator& gen, const SkewedTimestepSampler& sampler, RandomStream& rng,
    const std::string& pair_template = "A photograph of {left} {right}", double lr = 5e-3) {
    const std::string prompt = detail::substitute_placeholders(
        pair_template, {{"left", pair.left_token}, {"right", pair.right_token}});
    return detail::train_slots(parent_images, prompt, {&pair.left, &pair.right}, steps, lr, gen,
                               sampler, rng);
}

// Single-token reconstruction, used for the root.
inline std::vector<double> train_token(const std::vector<RasterImage>& parent_images,
                                       const std::string& prompt, Embedding& embedding, int steps,
                                       double lr, const EmbeddingGenerator& gen,
                                       const SkewedTimestepSampler& sampler, RandomStream& rng) {
    return detail::train_slots(parent_images, prompt, {&embedding}, steps, lr, gen, sampler, rng);
}

// Images generated from a node's bare token, with no surrounding prompt text.
inline std::vector<RasterImage> sample_node_images(const std::string& token,
                                                   const Embedding& embedding, int count,
                                                   const EmbeddingGenerator& gen,
                                                   RandomStream& rng) {
    if (count < 1) throw std::invalid_argument("sample_node_images: count must be positive");
    Embedding local = embedding;
    TextCondition cond;
    cond.prompt = token;
    cond.token_slots = {&local};
    std::vector<RasterImage> out;
    out.reserve(std::size_t(count));
    for (int i = 0; i < count; ++i) out.push_back(gen.generate(cond, rng));
    return out;
}

// ---------------------------------------------------------------------------
// Splitting and growth

struct SplitReport {
    std::vector<SeedCandidate> candidates;  // all probes with their recorded scores
    int winner_seed = -1;
    int left_index = -1, right_index = -1;  // children appended to the tree
    std::vector<double> winner_trace;       // final-phase loss trace
};

// Splits a leaf: trains k probe pairs from the init word against the node's
// image set (each probe on an independent derived stream), samples an image set
// per candidate token, keeps the highest-scoring pair, trains it out, and
// attaches the two children with freshly sampled sets and self-consistencies.
// Probes run in parallel when both backends declare themselves concurrent-safe;
// results are identical either way.
inline SplitReport split_node(ConceptTree& tree, int node_index, const TreeGrowConfig& cfg,
                              const EmbeddingGenerator& gen, const ImageEncoder& enc,
                              RandomStream& rng) {
    cfg.validate();
    if (node_index < 0 || std::size_t(node_index) >= tree.nodes.size())
        throw std::invalid_argument("split_node: node index out of range");
    if (!tree.nodes[std::size_t(node_index)].is_leaf())
        throw std::invalid_argument("split_node: node already split");
    if (tree.nodes[std::size_t(node_index)].images.empty())
        throw ConfigError("split_node: node " + tree.nodes[std::size_t(node_index)].token +
                          " has no image set");

    // training set: leading slice of the node's images (the root holds the
    // original inputs, inner nodes the set sampled when they were attached)
    const auto& node_images = tree.nodes[std::size_t(node_index)].images;
    const std::vector<RasterImage> parent_images(
        node_images.begin(),
        node_images.begin() +
            std::ptrdiff_t(std::min<std::size_t>(std::size_t(cfg.parent_set_size),
                                                 node_images.size())));

    const std::string left_token = tree.fresh_token();
    const std::string right_token = tree.fresh_token();
    const Embedding init = gen.embed_word(cfg.init_word);
    const SkewedTimestepSampler sampler(cfg.timesteps, cfg.timestep_skew);
    const RngHub hub(rng.next_u64());

    SplitReport report;
    report.candidates.resize(std::size_t(cfg.k_seeds));
    const unsigned workers =
        (gen.concurrent_safe() && enc.concurrent_safe()) ? cfg.workers : 1;
    parallel_for(std::size_t(cfg.k_seeds), workers, [&](std::size_t i) {
        TokenPair pair{left_token, right_token, init, init};
        RandomStream train_rng = hub.stream("probe", i);
        train_pair(parent_images, pair, cfg.probe_steps, gen, sampler, train_rng,
                   cfg.pair_template, cfg.lr);
        RandomStream sample_rng = hub.stream("sample", i);
        const auto set_l =
            sample_node_images(left_token, pair.left, cfg.node_sample_size, gen, sample_rng);
        const auto set_r =
            sample_node_images(right_token, pair.right, cfg.node_sample_size, gen, sample_rng);
        SeedCandidate& c = report.candidates[i];
        c.seed = int(i);
        c.c_left = consistency(set_l, set_l, enc);
        c.c_right = consistency(set_r, set_r, enc);
        c.c_cross = consistency(set_l, set_r, enc);
        c.left = std::move(pair.left);
        c.right = std::move(pair.right);
    });

    const SeedCandidate& winner = select_seed(report.candidates);
    report.winner_seed = winner.seed;

    TokenPair final_pair{left_token, right_token, winner.left, winner.right};
    RandomStream final_rng = hub.stream("final");
    report.winner_trace = train_pair(parent_images, final_pair, cfg.final_steps, gen, sampler,
                                     final_rng, cfg.pair_template, cfg.lr);

    const auto attach = [&](const std::string& token, Embedding emb, std::uint64_t side) {
        RandomStream sample_rng = hub.stream("attach", side);
        ConceptNode child;
        child.token = token;
        child.embedding = std::move(emb);
        child.images =
            sample_node_images(token, child.embedding, cfg.node_sample_size, gen, sample_rng);
        child.self_consistency = consistency(child.images, child.images, enc);
        tree.nodes.push_back(std::move(child));
        return int(tree.nodes.size()) - 1;
    };
    report.left_index = attach(left_token, std::move(final_pair.left), 0);
    report.right_index = attach(right_token, std::move(final_pair.right), 1);
    tree.nodes[std::size_t(node_index)].left = report.left_index;
    tree.nodes[std::size_t(node_index)].right = report.right_index;
    return report;
}

// Breadth-first growth. The root token first trains alone to reconstruct the
// input set (so prompts using it generate the whole concept), then coherent
// leaves keep splitting until max_depth; a leaf whose set scores below
// stop_consistency already lacks a common concept and is left unsplit.
inline ConceptTree grow_tree(const std::vector<RasterImage>& root_images,
                             const TreeGrowConfig& cfg, const EmbeddingGenerator& gen,
                             const ImageEncoder& enc, RandomStream& rng) {
    cfg.validate();
    if (root_images.empty()) throw ConfigError("grow_tree: empty root image set");

    ConceptTree tree;
    tree.token_prefix = cfg.token_prefix;
    ConceptNode root;
    root.token = tree.fresh_token();
    root.embedding = gen.embed_word(cfg.init_word);
    root.images = root_images;
    root.self_consistency =
        root_images.size() >= 2 ? consistency(root_images, root_images, enc) : 1.0;
    tree.nodes.push_back(std::move(root));

    {
        const std::vector<RasterImage> train_set(
            root_images.begin(),
            root_images.begin() + std::ptrdiff_t(std::min<std::size_t>(
                                      std::size_t(cfg.parent_set_size), root_images.size())));
        const SkewedTimestepSampler sampler(cfg.timesteps, cfg.timestep_skew);
        RandomStream root_rng(rng.next_u64());
        const std::string prompt =
            detail::substitute_placeholders(cfg.root_template, {{"0", tree.nodes[0].token}});
        train_token(train_set, prompt, tree.nodes[0].embedding, cfg.final_steps, cfg.lr, gen,
                    sampler, root_rng);
    }

    std::vector<std::pair<int, int>> queue{{0, 0}};  // node index, depth
    for (std::size_t q = 0; q < queue.size(); ++q) {
        const auto [idx, depth] = queue[q];
        if (depth >= cfg.max_depth) continue;
        if (tree.nodes[std::size_t(idx)].self_consistency < cfg.stop_consistency) continue;
        const SplitReport rep = split_node(tree, idx, cfg, gen, enc, rng);
        queue.emplace_back(rep.left_index, depth + 1);
        queue.emplace_back(rep.right_index, depth + 1);
    }
    return tree;
}

// ---------------------------------------------------------------------------
// Prompt composition over learned tokens

// Maps placeholder tokens to their trainable embeddings; spans trees so prompts
// can mix aspects of different concepts. Trees must outlive conditions composed
// from them.
class TokenRegistry {
  public:
    void add_tree(ConceptTree& tree) {
        for (const ConceptNode& n : tree.nodes)
            if (slots_.count(n.token))
                throw ConfigError("TokenRegistry: token " + n.token +
                                  " already registered (grow trees with distinct prefixes)");
        for (ConceptNode& n : tree.nodes) slots_[n.token] = &n.embedding;
    }

    Embedding* find(const std::string& token) const {
        const auto it = slots_.find(token);
        return it == slots_.end() ? nullptr : it->second;
    }

    std::size_t size() const { return slots_.size(); }

  private:
    std::map<std::string, Embedding*> slots_;
};

// All well-formed <token> substrings of a prompt, in order of appearance.
// Token bodies are alphanumeric/underscore, as produced by fresh_token().
inline std::vector<std::string> extract_tokens(const std::string& prompt) {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < prompt.size();) {
        if (prompt[i] != '<') {
            ++i;
            continue;
        }
        std::size_t j = i + 1;
        while (j < prompt.size() &&
               (std::isalnum(static_cast<unsigned char>(prompt[j])) || prompt[j] == '_'))
            ++j;
        if (j > i + 1 && j < prompt.size() && prompt[j] == '>') {
            out.push_back(prompt.substr(i, j - i + 1));
            i = j + 1;
        } else {
            ++i;
        }
    }
    return out;
}

// Fills {0}, {1}, ... placeholders with the given tokens; the condition carries
// the tokens' embeddings, in list order, as its trainable slots.
inline TextCondition compose_prompt(const std::vector<std::string>& tokens,
                                    const std::string& tmpl, const TokenRegistry& reg) {
    std::map<std::string, std::string> subs;
    TextCondition cond;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        Embedding* e = reg.find(tokens[i]);
        if (!e) throw ConfigError("compose_prompt: unknown token " + tokens[i]);
        subs[std::to_string(i)] = tokens[i];
        cond.token_slots.push_back(e);
    }
    cond.prompt = detail::substitute_placeholders(tmpl, subs);
    return cond;
}

// Resolves every <token> occurring in a raw prompt string.
inline TextCondition resolve_prompt(const std::string& prompt, const TokenRegistry& reg) {
    TextCondition cond;
    cond.prompt = prompt;
    for (const std::string& tok : extract_tokens(prompt)) {
        Embedding* e = reg.find(tok);
        if (!e) throw ConfigError("resolve_prompt: unknown token " + tok);
        cond.token_slots.push_back(e);
    }
    return cond;
}

// ---------------------------------------------------------------------------
// Persistence. A tree is a directory:
//   nodes.json                 topology, tokens, scores, file references
//   embeddings/<token>.f32     raw little-endian float32 coordinates
//   images/<token>/NNN.png     the node's sampled image set
// Loading restores embeddings at float32 precision and images at 8-bit depth.

namespace detail {

inline std::string token_stem(const std::string& token) {
    if (token.size() < 3 || token.front() != '<' || token.back() != '>')
        throw ConfigError("concept tree io: malformed token \"" + token + "\"");
    const std::string stem = token.substr(1, token.size() - 2);
    for (char c : stem)
        if (!std::isalnum(static_cast<unsigned char>(c)) && c != '_')
            throw ConfigError("concept tree io: token \"" + token + "\" not filesystem-safe");
    return stem;
}

inline std::string image_name(std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%03u.png", unsigned(i));
    return buf;
}

}  // namespace detail

inline void save_tree(const ConceptTree& tree, const std::filesystem::path& dir) {
    tree.validate();
    std::filesystem::create_directories(dir / "embeddings");
    nlohmann::json doc;
    doc["format"] = "concept-tree/1";
    doc["token_prefix"] = tree.token_prefix;
    doc["next_token"] = tree.next_token;
    doc["nodes"] = nlohmann::json::array();
    for (const ConceptNode& n : tree.nodes) {
        const std::string stem = detail::token_stem(n.token);
        nlohmann::json jn;
        jn["token"] = n.token;
        jn["self_consistency"] = n.self_consistency;
        jn["left"] = n.left;
        jn["right"] = n.right;
        jn["embedding"] = "embeddings/" + stem + ".f32";
        jn["images"] = "images/" + stem;
        jn["image_count"] = n.images.size();
        doc["nodes"].push_back(jn);

        std::ofstream ef(dir / "embeddings" / (stem + ".f32"), std::ios::binary);
        if (!ef) throw ConfigError("save_tree: cannot write embedding file for " + n.token);
        for (double v : n.embedding.values) detail::put_f32le(ef, v);

        const std::filesystem::path img_dir = dir / "images" / stem;
        std::filesystem::create_directories(img_dir);
        for (std::size_t i = 0; i < n.images.size(); ++i)
            write_png((img_dir / detail::image_name(i)).string(), n.images[i]);
    }
    std::ofstream jf(dir / "nodes.json");
    if (!jf) throw ConfigError("save_tree: cannot write nodes.json");
    jf << doc.dump(2) << '\n';
}

inline ConceptTree load_tree(const std::filesystem::path& dir) {
    std::ifstream jf(dir / "nodes.json");
    if (!jf) throw ConfigError("load_tree: cannot open " + (dir / "nodes.json").string());
    nlohmann::json doc;
    try {
        jf >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("load_tree: bad nodes.json: " + std::string(e.what()));
    }
    ConceptTree tree;
    try {
        if (doc.at("format").get<std::string>() != "concept-tree/1")
            throw ConfigError("load_tree: unknown format tag");
        tree.token_prefix = doc.at("token_prefix").get<std::string>();
        tree.next_token = doc.at("next_token").get<int>();
        for (const auto& jn : doc.at("nodes")) {
            ConceptNode n;
            n.token = jn.at("token").get<std::string>();
            n.self_consistency = jn.at("self_consistency").get<double>();
            n.left = jn.at("left").get<int>();
            n.right = jn.at("right").get<int>();

            const std::filesystem::path ef_path = dir / jn.at("embedding").get<std::string>();
            std::ifstream ef(ef_path, std::ios::binary);
            if (!ef) throw ConfigError("load_tree: missing embedding file " + ef_path.string());
            const auto bytes = std::filesystem::file_size(ef_path);
            if (bytes % 4 != 0)
                throw ConfigError("load_tree: embedding file " + ef_path.string() +
                                  " is not a float32 array");
            n.embedding.values.resize(bytes / 4);
            for (double& v : n.embedding.values)
                if (!detail::get_f32le(ef, v))
                    throw ConfigError("load_tree: truncated embedding file " + ef_path.string());

            const std::filesystem::path img_dir = dir / jn.at("images").get<std::string>();
            const std::size_t count = jn.at("image_count").get<std::size_t>();
            for (std::size_t i = 0; i < count; ++i)
                n.images.push_back(read_png((img_dir / detail::image_name(i)).string()));
            tree.nodes.push_back(std::move(n));
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("load_tree: bad nodes.json: " + std::string(e.what()));
    }
    tree.validate();
    return tree;
}

}  // namespace vecsketch
