#include "insnet/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace insnet {

namespace {

constexpr int64_t kPadId = 0;
constexpr int64_t kBosId = 1;
constexpr int64_t kEosId = 2;
constexpr int64_t kUnkId = 3;

constexpr std::array<std::array<double, 3>, 8> kColorRgb = {{
    {0.50, 0.50, 0.50},  // gray
    {0.20, 0.30, 0.90},  // blue
    {0.55, 0.35, 0.20},  // brown
    {0.90, 0.90, 0.20},  // yellow
    {0.90, 0.15, 0.15},  // red
    {0.20, 0.80, 0.25},  // green
    {0.60, 0.25, 0.75},  // purple
    {0.20, 0.85, 0.85},  // cyan
}};

const std::array<std::string, 3> kShapeWords = {"cube", "sphere", "cylinder"};

// Colors the A splits allow per shape; the B split swaps the cube and
// cylinder sets. Indices follow kColorWords.
constexpr std::array<int, 4> kCubeColorsA = {0, 1, 2, 3};
constexpr std::array<int, 4> kCylinderColorsA = {4, 5, 6, 7};

const std::vector<std::string> kStorySubjects = {
    "cat",    "dog",   "knight", "wizard", "farmer", "queen",
    "robot",  "child", "sailor", "baker",  "fox",    "giant"};
const std::vector<std::string> kStoryVerbs = {
    "finds",  "chases", "paints",  "builds",  "breaks",
    "guards", "steals", "watches", "carries", "hides"};
const std::vector<std::string> kStoryObjects = {
    "lantern", "bridge", "apple",  "sword", "garden", "letter", "wagon",
    "tower",   "river",  "crown",  "basket", "mirror", "door",  "bell"};
const std::vector<std::string> kStoryConnectors = {"and", "then", "while"};

std::vector<std::string> split_words(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream in(text);
    std::string w;
    while (in >> w) out.push_back(w);
    return out;
}

}  // namespace

Vocab::Vocab() {
    for (const char* t : {"<pad>", "<bos>", "<eos>", "<unk>"}) {
        index_.emplace(t, static_cast<int64_t>(tokens_.size()));
        tokens_.emplace_back(t);
    }
}

int64_t Vocab::add(const std::string& token) {
    if (token.empty()) {
        throw ValueError("empty token");
    }
    auto it = index_.find(token);
    if (it != index_.end()) {
        if (it->second < 4) {
            throw ValueError("reserved token: " + token);
        }
        return it->second;
    }
    const int64_t id = static_cast<int64_t>(tokens_.size());
    index_.emplace(token, id);
    tokens_.push_back(token);
    return id;
}

int64_t Vocab::id_of(const std::string& token) const {
    auto it = index_.find(token);
    return it == index_.end() ? kUnkId : it->second;
}

bool Vocab::contains(const std::string& token) const {
    return index_.count(token) > 0;
}

const std::string& Vocab::token_of(int64_t id) const {
    if (id < 0 || id >= size()) {
        throw IndexError("token id " + std::to_string(id) + " outside vocabulary of " +
                         std::to_string(size()));
    }
    return tokens_[static_cast<size_t>(id)];
}

std::vector<int64_t> Vocab::encode(const std::string& text) const {
    std::vector<int64_t> ids;
    for (const auto& w : split_words(text)) ids.push_back(id_of(w));
    return ids;
}

std::string Vocab::decode(const std::vector<int64_t>& ids) const {
    std::string out;
    for (size_t i = 0; i < ids.size(); ++i) {
        if (i) out += ' ';
        out += token_of(ids[i]);
    }
    return out;
}

const std::string& shape_word(ShapeKind s) {
    return kShapeWords[static_cast<size_t>(s)];
}

ShapeKind shape_from_word(const std::string& w) {
    for (size_t i = 0; i < kShapeWords.size(); ++i)
        if (kShapeWords[i] == w) return static_cast<ShapeKind>(i);
    throw ValueError("unknown shape word: " + w);
}

Grid render_scene(const SceneSpec& spec, double noise_sigma) {
    if (spec.color < 0 || spec.color >= static_cast<int>(kColorWords.size())) {
        throw IndexError("color index " + std::to_string(spec.color) + " out of range");
    }
    if (noise_sigma < 0.0) {
        throw ValueError("noise_sigma must be nonnegative");
    }
    Rng rng(spec.jitter_seed);
    const int64_t cx = Grid::kSide / 2 + static_cast<int64_t>(rng.below(7)) - 3;
    const int64_t cy = Grid::kSide / 2 + static_cast<int64_t>(rng.below(7)) - 3;

    Grid g;
    const auto& rgb = kColorRgb[static_cast<size_t>(spec.color)];
    for (int64_t y = 0; y < Grid::kSide; ++y) {
        for (int64_t x = 0; x < Grid::kSide; ++x) {
            const int64_t dx = x - cx;
            const int64_t dy = y - cy;
            bool inside = false;
            switch (spec.shape) {
                case ShapeKind::cube:
                    inside = std::abs(dx) <= 4 && std::abs(dy) <= 4;
                    break;
                case ShapeKind::sphere:
                    inside = dx * dx + dy * dy <= 20;  // radius 4.5 squared, rounded
                    break;
                case ShapeKind::cylinder:
                    inside = std::abs(dx) <= 2 && std::abs(dy) <= 6;
                    break;
            }
            if (inside)
                for (int64_t c = 0; c < Grid::kChannels; ++c) g.at(y, x, c) = rgb[static_cast<size_t>(c)];
        }
    }
    // one draw per channel in a fixed scan order, independent of the glyph
    if (noise_sigma > 0.0) {
        for (auto& v : g.data)
            v = std::clamp(v + noise_sigma * rng.normal(), 0.0, 1.0);
    }
    return g;
}

std::vector<Example> gen_random_sequences(int64_t vocab_size, int64_t length,
                                          int64_t count, uint64_t seed) {
    if (length < 1) {
        throw ValueError("length must be at least 1");
    }
    if (vocab_size <= 4) {
        throw ValueError("vocab_size must exceed the reserved ids");
    }
    Rng rng(seed);
    std::vector<Example> out;
    out.reserve(static_cast<size_t>(count));
    for (int64_t i = 0; i < count; ++i) {
        Example ex;
        ex.ids.reserve(static_cast<size_t>(length) + 2);
        ex.ids.push_back(kBosId);
        for (int64_t k = 0; k < length; ++k)
            ex.ids.push_back(4 + static_cast<int64_t>(
                                     rng.below(static_cast<uint64_t>(vocab_size - 4))));
        ex.ids.push_back(kEosId);
        out.push_back(std::move(ex));
    }
    return out;
}

const Vocab& story_vocab() {
    static const Vocab v = [] {
        Vocab vb;
        vb.add("<sep>");
        vb.add("the");
        vb.add(".");
        for (const auto& w : kStoryConnectors) vb.add(w);
        for (const auto& w : kStorySubjects) vb.add(w);
        for (const auto& w : kStoryVerbs) vb.add(w);
        for (const auto& w : kStoryObjects) vb.add(w);
        return vb;
    }();
    return v;
}

Example keyword_prefix_example(const Example& ex, int64_t sep_id) {
    if (ex.ids.size() < 2) {
        throw ValueError("example must carry both sentinels");
    }
    const int64_t n = static_cast<int64_t>(ex.ids.size());
    const int64_t m = static_cast<int64_t>(ex.keyword_positions.size());
    Example out;
    out.scene = ex.scene;
    out.ids.reserve(ex.ids.size() + static_cast<size_t>(m) + 1);
    out.ids.push_back(ex.ids.front());
    for (int64_t p : ex.keyword_positions) {
        if (p < 1 || p >= n - 1) {
            throw ValueError("keyword position outside the interior");
        }
        out.ids.push_back(ex.ids[static_cast<size_t>(p)]);
    }
    out.ids.push_back(sep_id);
    out.ids.insert(out.ids.end(), ex.ids.begin() + 1, ex.ids.end());
    for (int64_t p : ex.keyword_positions) out.keyword_positions.push_back(p + m + 1);
    return out;
}

ToyStoryData gen_toy_stories(int64_t count, uint64_t seed) {
    if (count < 1) {
        throw ValueError("count must be positive");
    }
    const Vocab& vocab = story_vocab();
    Rng rng(seed);
    ToyStoryData out;
    out.examples.reserve(static_cast<size_t>(count));

    const double ln_clauses = std::log(7.0);  // clause count uniform over 4..10
    const double ln_subj = std::log(static_cast<double>(kStorySubjects.size()));
    const double ln_verb = std::log(static_cast<double>(kStoryVerbs.size()));
    const double ln_obj = std::log(static_cast<double>(kStoryObjects.size()));
    const double ln_conn = std::log(static_cast<double>(kStoryConnectors.size()));

    double total_nll = 0.0;
    int64_t total_tokens = 0;
    for (int64_t i = 0; i < count; ++i) {
        const int64_t clauses = 4 + static_cast<int64_t>(rng.below(7));
        Example ex;
        ex.ids.push_back(kBosId);
        double nll = ln_clauses;
        for (int64_t c = 0; c < clauses; ++c) {
            if (c > 0) {
                ex.ids.push_back(vocab.id_of(
                    kStoryConnectors[rng.below(kStoryConnectors.size())]));
                nll += ln_conn;
            }
            const size_t si = rng.below(kStorySubjects.size());
            const size_t vi = rng.below(kStoryVerbs.size());
            const size_t oi = rng.below(kStoryObjects.size());
            nll += ln_subj + ln_verb + ln_obj;
            ex.ids.push_back(vocab.id_of("the"));
            const int64_t subj_pos = static_cast<int64_t>(ex.ids.size());
            ex.ids.push_back(vocab.id_of(kStorySubjects[si]));
            const int64_t verb_pos = static_cast<int64_t>(ex.ids.size());
            ex.ids.push_back(vocab.id_of(kStoryVerbs[vi]));
            ex.ids.push_back(vocab.id_of("the"));
            const int64_t obj_pos = static_cast<int64_t>(ex.ids.size());
            ex.ids.push_back(vocab.id_of(kStoryObjects[oi]));
            const std::array<int64_t, 3> content = {subj_pos, verb_pos, obj_pos};
            ex.keyword_positions.push_back(content[rng.below(3)]);
        }
        ex.ids.push_back(vocab.id_of("."));
        ex.ids.push_back(kEosId);
        total_nll += nll;
        total_tokens += static_cast<int64_t>(ex.ids.size()) - 2;
        out.examples.push_back(std::move(ex));
    }
    out.true_per_token_nll = total_nll / static_cast<double>(total_tokens);
    return out;
}

const std::string& caption_split_name(CaptionSplit s) {
    static const std::array<std::string, 3> names = {"a_train", "a_dev", "b_test"};
    return names[static_cast<size_t>(s)];
}

CaptionSplit caption_split_from_name(const std::string& name) {
    for (int i = 0; i < 3; ++i)
        if (caption_split_name(static_cast<CaptionSplit>(i)) == name)
            return static_cast<CaptionSplit>(i);
    throw ValueError("unknown caption split: " + name);
}

std::vector<int> allowed_colors(CaptionSplit split, ShapeKind shape) {
    if (shape == ShapeKind::sphere) {
        std::vector<int> all(kColorWords.size());
        for (size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);
        return all;
    }
    const bool swapped = split == CaptionSplit::b_test;
    const bool cube = shape == ShapeKind::cube;
    const auto& set = (cube != swapped) ? kCubeColorsA : kCylinderColorsA;
    return std::vector<int>(set.begin(), set.end());
}

const Vocab& caption_vocab() {
    static const Vocab v = [] {
        Vocab vb;
        for (const char* w :
             {"there", "is", "a", "in", "the", "picture", ".", "we", "have",
              "object", "shape", "of", "placed", "on", "table", "and", "it"})
            vb.add(w);
        for (const char* w : kColorWords) vb.add(w);
        for (const auto& w : kShapeWords) vb.add(w);
        return vb;
    }();
    return v;
}

std::vector<Example> gen_cogent_caption(CaptionSplit split, int64_t count,
                                        uint64_t seed) {
    if (count < 1) {
        throw ValueError("count must be positive");
    }
    const Vocab& vocab = caption_vocab();
    Rng rng(seed);
    std::vector<Example> out;
    out.reserve(static_cast<size_t>(count));
    for (int64_t i = 0; i < count; ++i) {
        SceneSpec spec;
        spec.shape = static_cast<ShapeKind>(rng.below(3));
        const auto colors = allowed_colors(split, spec.shape);
        spec.color = colors[rng.below(colors.size())];
        spec.jitter_seed = rng.next_u64();

        const std::string& color = kColorWords[static_cast<size_t>(spec.color)];
        const std::string& shape = shape_word(spec.shape);
        std::string caption;
        switch (rng.below(3)) {
            case 0:
                caption = "there is a " + color + " " + shape + " in the picture .";
                break;
            case 1:
                caption = "we have a " + color + " object in the shape of a " + shape + " .";
                break;
            default:
                caption = "a " + shape + " is placed on the table and it is " + color + " .";
                break;
        }
        Example ex;
        ex.ids.push_back(kBosId);
        for (int64_t id : vocab.encode(caption)) ex.ids.push_back(id);
        ex.ids.push_back(kEosId);
        ex.scene = spec;
        out.push_back(std::move(ex));
    }
    return out;
}

Attributes extract_attributes(const std::vector<std::string>& words) {
    Attributes out;
    for (const auto& w : words) {
        if (out.color.empty() &&
            std::find(kColorWords.begin(), kColorWords.end(), w) != kColorWords.end())
            out.color = w;
        if (out.shape.empty() &&
            std::find(kShapeWords.begin(), kShapeWords.end(), w) != kShapeWords.end())
            out.shape = w;
    }
    return out;
}

Attributes extract_attributes(const std::vector<int64_t>& ids, const Vocab& vocab) {
    std::vector<std::string> words;
    for (int64_t id : ids)
        if (id >= 4) words.push_back(vocab.token_of(id));
    return extract_attributes(words);
}

namespace {

std::ofstream open_out(const std::string& path) {
    std::ofstream f(path);
    if (!f) {
        throw IoError("cannot open for writing: " + path);
    }
    return f;
}

std::ifstream open_in(const std::string& path) {
    std::ifstream f(path);
    if (!f) {
        throw IoError("cannot open for reading: " + path);
    }
    return f;
}

std::vector<int64_t> interior(const Example& ex) {
    if (ex.ids.size() < 2 || ex.ids.front() != kBosId || ex.ids.back() != kEosId) {
        throw ValueError("example is not sentinel-wrapped");
    }
    return {ex.ids.begin() + 1, ex.ids.end() - 1};
}

}  // namespace

void save_random_dataset(const std::string& path, const std::vector<Example>& data) {
    auto f = open_out(path);
    for (const auto& ex : data) {
        const auto ids = interior(ex);
        for (size_t i = 0; i < ids.size(); ++i)
            f << (i ? " " : "") << ids[i];
        f << '\n';
    }
}

std::vector<Example> load_random_dataset(const std::string& path) {
    auto f = open_in(path);
    std::vector<Example> out;
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        Example ex;
        ex.ids.push_back(kBosId);
        std::istringstream in(line);
        int64_t id;
        while (in >> id) {
            if (id < 4) {
                throw ValueError("reserved id in dataset line: " + line);
            }
            ex.ids.push_back(id);
        }
        ex.ids.push_back(kEosId);
        out.push_back(std::move(ex));
    }
    return out;
}

void save_story_dataset(const std::string& path, const std::vector<Example>& data,
                        const Vocab& vocab) {
    auto f = open_out(path);
    for (const auto& ex : data) {
        for (size_t k = 0; k < ex.keyword_positions.size(); ++k)
            f << (k ? " " : "")
              << vocab.token_of(ex.ids[static_cast<size_t>(ex.keyword_positions[k])]);
        f << '\t' << vocab.decode(interior(ex)) << '\n';
    }
}

std::vector<Example> load_story_dataset(const std::string& path, const Vocab& vocab) {
    auto f = open_in(path);
    std::vector<Example> out;
    std::string line;
    int64_t line_no = 0;
    while (std::getline(f, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos) {
            throw ValueError("missing tab separator at line " + std::to_string(line_no));
        }
        Example ex;
        ex.ids.push_back(kBosId);
        for (int64_t id : vocab.encode(line.substr(tab + 1))) ex.ids.push_back(id);
        ex.ids.push_back(kEosId);
        // keywords are stored as words; recover positions by an in-order scan
        int64_t cursor = 1;
        for (const auto& kw : split_words(line.substr(0, tab))) {
            const int64_t id = vocab.id_of(kw);
            int64_t found = -1;
            for (int64_t p = cursor; p + 1 < static_cast<int64_t>(ex.ids.size()); ++p) {
                if (ex.ids[static_cast<size_t>(p)] == id) {
                    found = p;
                    break;
                }
            }
            if (found < 0) {
                throw ValueError("keyword '" + kw + "' not found in order at line " +
                                 std::to_string(line_no));
            }
            ex.keyword_positions.push_back(found);
            cursor = found + 1;
        }
        out.push_back(std::move(ex));
    }
    return out;
}

void save_caption_dataset(const std::string& path, const std::vector<Example>& data,
                          const Vocab& vocab) {
    auto f = open_out(path);
    for (const auto& ex : data) {
        if (!ex.scene.has_value()) {
            throw ValueError("caption example without a scene");
        }
        f << shape_word(ex.scene->shape) << ' '
          << kColorWords[static_cast<size_t>(ex.scene->color)] << ' '
          << ex.scene->jitter_seed << '\t' << vocab.decode(interior(ex)) << '\n';
    }
}

std::vector<Example> load_caption_dataset(const std::string& path, const Vocab& vocab) {
    auto f = open_in(path);
    std::vector<Example> out;
    std::string line;
    int64_t line_no = 0;
    while (std::getline(f, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos) {
            throw ValueError("missing tab separator at line " + std::to_string(line_no));
        }
        std::istringstream head(line.substr(0, tab));
        std::string shape_w, color_w;
        uint64_t jseed;
        if (!(head >> shape_w >> color_w >> jseed)) {
            throw ValueError("bad scene header at line " + std::to_string(line_no));
        }
        SceneSpec spec;
        spec.shape = shape_from_word(shape_w);
        spec.jitter_seed = jseed;
        const auto hit = std::find(kColorWords.begin(), kColorWords.end(), color_w);
        if (hit == kColorWords.end()) {
            throw ValueError("unknown color at line " + std::to_string(line_no));
        }
        spec.color = static_cast<int>(hit - kColorWords.begin());
        Example ex;
        ex.ids.push_back(kBosId);
        for (int64_t id : vocab.encode(line.substr(tab + 1))) ex.ids.push_back(id);
        ex.ids.push_back(kEosId);
        ex.scene = spec;
        out.push_back(std::move(ex));
    }
    return out;
}

}  // namespace insnet
