#include "dprof/comorbid.hpp"

#include "dprof/error.hpp"
#include "dprof/io.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

namespace dprof {

using nlohmann::json;

void PhecodeMap::add(std::string_view icd_prefix, std::string phecode, std::string label) {
    const std::string key = normalize_icd(icd_prefix);
    if (key.empty()) throw ValidationError("phecode map: empty ICD-10 prefix");
    if (phecode.empty()) throw ValidationError("phecode map: empty phecode for " + std::string(icd_prefix));
    const auto it = prefixes_.find(key);
    if (it != prefixes_.end() && it->second != phecode) {
        throw ValidationError("phecode map: prefix " + std::string(icd_prefix) + " maps to both " + it->second + " and " +
                              phecode);
    }
    prefixes_[key] = phecode;
    if (!label.empty()) {
        const auto lt = labels_.find(phecode);
        if (lt != labels_.end() && lt->second != label) {
            throw ValidationError("phecode map: conflicting labels for phecode " + phecode);
        }
        labels_[phecode] = std::move(label);
    }
    longest_ = std::max(longest_, key.size());
}

std::optional<std::string> PhecodeMap::lookup(std::string_view icd10) const {
    const std::string code = normalize_icd(icd10);
    for (std::size_t len = std::min(longest_, code.size()); len > 0; --len) {
        const auto it = prefixes_.find(code.substr(0, len));
        if (it != prefixes_.end()) return it->second;
    }
    return std::nullopt;
}

std::string PhecodeMap::label(const std::string& phecode) const {
    const auto it = labels_.find(phecode);
    return it == labels_.end() ? std::string() : it->second;
}

namespace {

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

}  // namespace

PhecodeMap parse_phecode_map(std::string_view text) {
    PhecodeMap map;
    std::istringstream in{std::string(text)};
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        const char sep = t.find('\t') != std::string::npos ? '\t' : ',';
        std::vector<std::string> cols;
        std::size_t start = 0;
        while (true) {
            const auto pos = t.find(sep, start);
            cols.push_back(trim(std::string_view(t).substr(start, pos == std::string::npos ? std::string::npos : pos - start)));
            if (pos == std::string::npos) break;
            start = pos + 1;
        }
        if (cols[0].rfind("icd10", 0) == 0) continue;  // header
        if (cols.size() < 2 || cols.size() > 3 || cols[0].empty() || cols[1].empty()) {
            throw ParseError("phecode map line " + std::to_string(lineno) + ": expected icd10_prefix, phecode[, label]");
        }
        map.add(cols[0], cols[1], cols.size() == 3 ? cols[2] : std::string());
    }
    return map;
}

PhecodeMap load_phecode_map(const std::filesystem::path& path) { return parse_phecode_map(io::read_file(path)); }

std::set<std::string> map_patient_phecodes(std::span<const ClaimCode> codes, std::optional<Date> diagnosis_date,
                                           const PhecodeMap& map, PhecodeTally* tally) {
    std::set<std::string> out;
    for (const auto& c : codes) {
        if (c.system != CodeSystem::ICD10) continue;
        if (diagnosis_date && !(c.date < *diagnosis_date)) {
            if (tally) ++tally->censored;
            continue;
        }
        const auto ph = map.lookup(c.code);
        if (ph) {
            out.insert(*ph);
            if (tally) ++tally->mapped;
        } else if (tally) {
            ++tally->unmapped;
        }
    }
    return out;
}

namespace {

double log_choose(long long n, long long k) {
    return std::lgamma(static_cast<double>(n) + 1) - std::lgamma(static_cast<double>(k) + 1) -
           std::lgamma(static_cast<double>(n - k) + 1);
}

}  // namespace

double fisher_exact_log(long long a, long long b, long long c, long long d) {
    if (a < 0 || b < 0 || c < 0 || d < 0) throw ValidationError("fisher_exact: counts must be non-negative");
    const long long r1 = a + b, r2 = c + d, c1 = a + c, n = r1 + r2;
    const long long lo = std::max(0LL, c1 - r2), hi = std::min(r1, c1);
    if (lo == hi) return 0.0;
    std::vector<double> lp;
    lp.reserve(static_cast<std::size_t>(hi - lo + 1));
    const double denom = log_choose(n, c1);
    for (long long x = lo; x <= hi; ++x) lp.push_back(log_choose(r1, x) + log_choose(r2, c1 - x) - denom);
    const double obs = lp[static_cast<std::size_t>(a - lo)];
    const double cutoff = obs + std::log1p(1e-7);
    const double mx = *std::max_element(lp.begin(), lp.end());
    double total = 0.0, sel = 0.0;
    // Sum relative to the mode; normalizing by the total cancels lgamma error.
    double sel_max = -std::numeric_limits<double>::infinity();
    for (double v : lp)
        if (v <= cutoff) sel_max = std::max(sel_max, v);
    for (double v : lp) {
        total += std::exp(v - mx);
        if (v <= cutoff) sel += std::exp(v - sel_max);
    }
    const double log_p = sel_max + std::log(sel) - mx - std::log(total);
    return std::min(0.0, log_p);
}

double fisher_exact(long long a, long long b, long long c, long long d) {
    return std::exp(fisher_exact_log(a, b, c, d));
}

OddsRatio odds_ratio(long long a, long long b, long long c, long long d) {
    if (a < 0 || b < 0 || c < 0 || d < 0) throw ValidationError("odds_ratio: counts must be non-negative");
    OddsRatio r;
    if (a == 0 || b == 0 || c == 0 || d == 0) {
        r.corrected = true;
        r.value = ((a + 0.5) * (d + 0.5)) / ((b + 0.5) * (c + 0.5));
    } else {
        r.value = (static_cast<double>(a) * static_cast<double>(d)) / (static_cast<double>(b) * static_cast<double>(c));
    }
    return r;
}

ComorbidityTable build_comorbidity_table(const std::vector<std::set<std::string>>& cancer,
                                         const std::vector<std::set<std::string>>& control, const PhecodeMap& map) {
    ComorbidityTable t;
    t.n_cancer = cancer.size();
    t.n_control = control.size();
    std::map<std::string, std::pair<long long, long long>> carriers;
    for (const auto& s : cancer)
        for (const auto& p : s) ++carriers[p].first;
    for (const auto& s : control)
        for (const auto& p : s) ++carriers[p].second;
    for (const auto& [ph, cnt] : carriers) {
        ComorbidityRow r;
        r.phecode = ph;
        r.label = map.label(ph);
        r.a = cnt.first;
        r.b = static_cast<long long>(t.n_cancer) - cnt.first;
        r.c = cnt.second;
        r.d = static_cast<long long>(t.n_control) - cnt.second;
        r.odds_ratio = odds_ratio(r.a, r.b, r.c, r.d);
        const double lp = fisher_exact_log(r.a, r.b, r.c, r.d);
        r.p_value = std::exp(lp);
        r.neg_log10_p = -lp / std::log(10.0);
        r.prevalence_cancer = t.n_cancer ? static_cast<double>(r.a) / static_cast<double>(t.n_cancer) : 0.0;
        r.prevalence_control = t.n_control ? static_cast<double>(r.c) / static_cast<double>(t.n_control) : 0.0;
        t.rows.push_back(std::move(r));
    }
    return t;
}

std::vector<ComorbidityRow> rank_comorbidities(const ComorbidityTable& table, long long min_each) {
    std::vector<ComorbidityRow> out;
    for (const auto& r : table.rows)
        if (r.a >= min_each && r.c >= min_each) out.push_back(r);
    std::stable_sort(out.begin(), out.end(),
                     [](const ComorbidityRow& x, const ComorbidityRow& y) { return x.neg_log10_p > y.neg_log10_p; });
    return out;
}

std::string comorbidity_tsv(const std::vector<ComorbidityRow>& rows) {
    std::ostringstream out;
    out << "phecode\tlabel\tcancer_with\tcancer_without\tcontrol_with\tcontrol_without\todds_ratio\tor_corrected\tp_value"
           "\tneg_log10_p\tprevalence_cancer\tprevalence_control\n";
    char buf[160];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%.6g\t%d\t%.6g\t%.4f\t%.6f\t%.6f", r.odds_ratio.value, r.odds_ratio.corrected ? 1 : 0,
                      r.p_value, r.neg_log10_p, r.prevalence_cancer, r.prevalence_control);
        out << r.phecode << '\t' << r.label << '\t' << r.a << '\t' << r.b << '\t' << r.c << '\t' << r.d << '\t' << buf
            << '\n';
    }
    return out.str();
}

json to_json(const std::vector<ComorbidityRow>& rows) {
    json out = json::array();
    for (const auto& r : rows) {
        out.push_back({{"phecode", r.phecode},
                       {"label", r.label},
                       {"counts", {{"cancer_with", r.a}, {"cancer_without", r.b}, {"control_with", r.c}, {"control_without", r.d}}},
                       {"odds_ratio", r.odds_ratio.value},
                       {"odds_ratio_corrected", r.odds_ratio.corrected},
                       {"p_value", r.p_value},
                       {"neg_log10_p", r.neg_log10_p},
                       {"prevalence_cancer", r.prevalence_cancer},
                       {"prevalence_control", r.prevalence_control}});
    }
    return out;
}

}  // namespace dprof
