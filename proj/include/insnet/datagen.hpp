#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "insnet/errors.hpp"
#include "insnet/rng.hpp"

// Synthetic tasks: uniform random sequences for throughput benchmarks, a
// templated clause grammar with keyword annotations, and a single-object
// caption task whose condition is a rasterized noisy image.

namespace insnet {

class Vocab {
public:
    Vocab();

    // Adds a content token (or returns its existing id). Reserved tokens
    // cannot be re-added.
    int64_t add(const std::string& token);
    // Unknown tokens map to the <unk> id.
    int64_t id_of(const std::string& token) const;
    bool contains(const std::string& token) const;
    const std::string& token_of(int64_t id) const;
    int64_t size() const { return static_cast<int64_t>(tokens_.size()); }

    // Whitespace tokenization; unknown words become <unk>.
    std::vector<int64_t> encode(const std::string& text) const;
    // Space-joined tokens; ids must be in range.
    std::string decode(const std::vector<int64_t>& ids) const;

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int64_t> index_;
};

enum class ShapeKind { cube, sphere, cylinder };

const std::string& shape_word(ShapeKind s);
ShapeKind shape_from_word(const std::string& w);

inline constexpr std::array<const char*, 8> kColorWords = {
    "gray", "blue", "brown", "yellow", "red", "green", "purple", "cyan"};

struct SceneSpec {
    ShapeKind shape = ShapeKind::cube;
    int color = 0;  // index into kColorWords
    uint64_t jitter_seed = 0;
};

struct Example {
    std::vector<int64_t> ids;  // natural order, BOS first and EOS last
    std::vector<int64_t> keyword_positions;  // strictly increasing, interior
    std::optional<SceneSpec> scene;
};

// 24x24 RGB intensity grid, channel-major within a pixel, values in [0, 1].
struct Grid {
    static constexpr int64_t kSide = 24;
    static constexpr int64_t kChannels = 3;
    std::vector<double> data;  // kSide * kSide * kChannels

    Grid() : data(static_cast<size_t>(kSide * kSide * kChannels), 0.0) {}
    double& at(int64_t y, int64_t x, int64_t c) {
        return data[static_cast<size_t>((y * kSide + x) * kChannels + c)];
    }
    double at(int64_t y, int64_t x, int64_t c) const {
        return data[static_cast<size_t>((y * kSide + x) * kChannels + c)];
    }
    static constexpr int64_t flat_size() { return kSide * kSide * kChannels; }
};

// Shape glyph in the spec color, jittered by up to 3 pixels from the grid
// center, plus clamped additive Gaussian noise on every channel. The noise
// field depends only on the jitter seed, never on shape or color.
Grid render_scene(const SceneSpec& spec, double noise_sigma = 0.05);

// Uniform content-token sequences wrapped in sentinels; `length` counts the
// content tokens. vocab_size is the full model vocabulary including the
// four reserved ids.
std::vector<Example> gen_random_sequences(int64_t vocab_size, int64_t length,
                                          int64_t count, uint64_t seed);

struct ToyStoryData {
    std::vector<Example> examples;
    double true_per_token_nll = 0.0;  // generator entropy over interior tokens
};

// Clause grammar: "the SUBJ VERB the OBJ" clauses joined by connectors,
// closed by a period. One keyword per clause (a sampled content word).
const Vocab& story_vocab();
ToyStoryData gen_toy_stories(int64_t count, uint64_t seed);

// Keyword-prefix form for the causal baseline: the keyword tokens are copied
// between the start sentinel and a separator, so the suffix after the
// separator is the original body. Keyword positions are remapped to the body.
Example keyword_prefix_example(const Example& ex, int64_t sep_id);

enum class CaptionSplit { a_train, a_dev, b_test };

const std::string& caption_split_name(CaptionSplit s);
CaptionSplit caption_split_from_name(const std::string& name);

// Color sets allowed for a shape under a split's constraints. The A splits
// restrict cubes to {gray, blue, brown, yellow} and cylinders to
// {red, green, purple, cyan}; the B split swaps the two sets; spheres are
// always unconstrained.
std::vector<int> allowed_colors(CaptionSplit split, ShapeKind shape);

const Vocab& caption_vocab();
std::vector<Example> gen_cogent_caption(CaptionSplit split, int64_t count,
                                        uint64_t seed);

struct Attributes {
    std::string color;  // empty when absent
    std::string shape;
};

// First color-lexicon and shape-lexicon hits in the caption words.
Attributes extract_attributes(const std::vector<std::string>& words);
Attributes extract_attributes(const std::vector<int64_t>& ids, const Vocab& vocab);

// Line-oriented dataset files (UTF-8, one example per line).
void save_random_dataset(const std::string& path, const std::vector<Example>& data);
std::vector<Example> load_random_dataset(const std::string& path);

void save_story_dataset(const std::string& path, const std::vector<Example>& data,
                        const Vocab& vocab);
std::vector<Example> load_story_dataset(const std::string& path, const Vocab& vocab);

void save_caption_dataset(const std::string& path, const std::vector<Example>& data,
                          const Vocab& vocab);
std::vector<Example> load_caption_dataset(const std::string& path, const Vocab& vocab);

}  // namespace insnet
