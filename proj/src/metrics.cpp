#include "insnet/metrics.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "insnet/errors.hpp"

namespace insnet {

namespace {

using Ngram = std::vector<int64_t>;

std::map<Ngram, int64_t> ngram_counts(const std::vector<int64_t>& seq, int n) {
    std::map<Ngram, int64_t> out;
    for (size_t i = 0; i + static_cast<size_t>(n) <= seq.size(); ++i)
        ++out[Ngram(seq.begin() + static_cast<int64_t>(i),
                    seq.begin() + static_cast<int64_t>(i) + n)];
    return out;
}

}  // namespace

double corpus_bleu(const std::vector<std::vector<int64_t>>& hyps,
                   const std::vector<std::vector<int64_t>>& refs, int max_n) {
    if (refs.empty() || hyps.size() != refs.size()) {
        throw ValueError("corpus_bleu needs one reference per hypothesis");
    }
    if (max_n < 1 || max_n > 4) {
        throw ValueError("max_n must be in [1, 4]");
    }
    double hyp_len = 0.0, ref_len = 0.0;
    std::vector<double> matched(static_cast<size_t>(max_n), 0.0);
    std::vector<double> total(static_cast<size_t>(max_n), 0.0);
    for (size_t i = 0; i < hyps.size(); ++i) {
        hyp_len += static_cast<double>(hyps[i].size());
        ref_len += static_cast<double>(refs[i].size());
        for (int n = 1; n <= max_n; ++n) {
            const auto hc = ngram_counts(hyps[i], n);
            const auto rc = ngram_counts(refs[i], n);
            for (const auto& [gram, count] : hc) {
                total[static_cast<size_t>(n - 1)] += static_cast<double>(count);
                const auto it = rc.find(gram);
                if (it != rc.end())
                    matched[static_cast<size_t>(n - 1)] +=
                        static_cast<double>(std::min(count, it->second));
            }
        }
    }
    double log_precision = 0.0;
    for (int n = 0; n < max_n; ++n) {
        if (total[static_cast<size_t>(n)] == 0.0 || matched[static_cast<size_t>(n)] == 0.0)
            return 0.0;
        log_precision += std::log(matched[static_cast<size_t>(n)] /
                                  total[static_cast<size_t>(n)]) /
                         static_cast<double>(max_n);
    }
    const double bp = hyp_len >= ref_len ? 1.0 : std::exp(1.0 - ref_len / hyp_len);
    return 100.0 * bp * std::exp(log_precision);
}

bool in_order_subsequence(const std::vector<int64_t>& needle,
                          const std::vector<int64_t>& haystack) {
    size_t j = 0;
    for (size_t i = 0; i < haystack.size() && j < needle.size(); ++i)
        if (haystack[i] == needle[j]) ++j;
    return j == needle.size();
}

double incorporation_rate(const std::vector<std::vector<int64_t>>& keywords,
                          const std::vector<std::vector<int64_t>>& outputs) {
    if (keywords.empty() || keywords.size() != outputs.size()) {
        throw ValueError("incorporation_rate needs one keyword set per output");
    }
    double hits = 0.0;
    for (size_t i = 0; i < keywords.size(); ++i)
        if (in_order_subsequence(keywords[i], outputs[i])) hits += 1.0;
    return hits / static_cast<double>(keywords.size());
}

AttrScores attribute_scores(const std::vector<Attributes>& predicted,
                            const std::vector<SceneSpec>& scenes) {
    if (scenes.empty() || predicted.size() != scenes.size()) {
        throw ValueError("attribute_scores needs one prediction per scene");
    }
    AttrScores out;
    for (size_t i = 0; i < scenes.size(); ++i) {
        const bool color_ok =
            predicted[i].color == kColorWords[static_cast<size_t>(scenes[i].color)];
        const bool shape_ok = predicted[i].shape == shape_word(scenes[i].shape);
        out.color_acc += color_ok ? 1.0 : 0.0;
        out.shape_acc += shape_ok ? 1.0 : 0.0;
        out.joint_acc += (color_ok && shape_ok) ? 1.0 : 0.0;
    }
    const double n = static_cast<double>(scenes.size());
    out.color_acc /= n;
    out.shape_acc /= n;
    out.joint_acc /= n;
    return out;
}

void write_metrics_csv(const std::string& path, const std::vector<MetricRow>& rows) {
    std::ofstream f(path);
    if (!f) {
        throw IoError("cannot open for writing: " + path);
    }
    f << "iter,split,metric,value,wallclock_s\n";
    f.precision(17);
    for (const auto& r : rows)
        f << r.iter << ',' << r.split << ',' << r.metric << ',' << r.value << ','
          << r.wallclock_s << '\n';
}

std::vector<MetricRow> read_metrics_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) {
        throw IoError("cannot open for reading: " + path);
    }
    std::string line;
    if (!std::getline(f, line) || line != "iter,split,metric,value,wallclock_s") {
        throw ValueError("bad metrics CSV header in " + path);
    }
    std::vector<MetricRow> out;
    int64_t line_no = 1;
    while (std::getline(f, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::istringstream in(line);
        MetricRow r;
        std::string field;
        try {
            std::getline(in, field, ',');
            r.iter = std::stoll(field);
            std::getline(in, r.split, ',');
            std::getline(in, r.metric, ',');
            std::getline(in, field, ',');
            r.value = std::stod(field);
            std::getline(in, field);
            r.wallclock_s = std::stod(field);
        } catch (const std::exception&) {
            throw ValueError("bad metrics CSV row at line " + std::to_string(line_no));
        }
        out.push_back(std::move(r));
    }
    return out;
}

bool metrics_equal_ignoring_wallclock(const std::vector<MetricRow>& a,
                                      const std::vector<MetricRow>& b) {
    if (a.size() != b.size()) return false;
    for (size_t i = 0; i < a.size(); ++i) {
        if (a[i].iter != b[i].iter || a[i].split != b[i].split ||
            a[i].metric != b[i].metric || a[i].value != b[i].value)
            return false;
    }
    return true;
}

}  // namespace insnet
