#include "dprof/catalog.hpp"
#include "dprof/codes.hpp"
#include "dprof/error.hpp"
#include "dprof/preprocess.hpp"
#include "dprof/record.hpp"
#include "dprof/synth.hpp"

#include <doctest.h>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>
#include <vector>

using namespace dprof;

namespace {

const std::filesystem::path kCatalog = std::filesystem::path(DPROF_DATA_DIR) / "marker_catalog.json";

MarkerDef def(std::string id, Panel panel, bool log = false, double mean = 10.0) {
    MarkerDef m;
    m.id = std::move(id);
    m.display_name = m.id;
    m.panel = panel;
    m.log_transform = log;
    for (auto cls : kRequiredClasses) m.class_distributions[std::string(cls)] = {mean, 1.0};
    return m;
}

MarkerCatalog tiny_catalog() {
    return MarkerCatalog("t1", {def("a", Panel::cmp), def("g", Panel::cmp, true), def("age", Panel::demographic, false, 60),
                                def("sex", Panel::demographic, false, 0.5)});
}

EncounterRecord rec(std::map<std::string, double> m, double age = 50.0, Sex sex = Sex::female) {
    EncounterRecord r;
    r.patient_id = "p";
    r.encounter_id = "e";
    r.date = Date::from_ymd(2020, 1, 1);
    r.age_years = age;
    r.sex = sex;
    r.measurements = std::move(m);
    return r;
}

SynthConfig synth(std::size_t controls, std::size_t cases, std::string cls, std::uint64_t seed = 11) {
    SynthConfig c;
    c.n_per_class = {{"no_cancer", controls}};
    if (cases) c.n_per_class[cls] = cases;
    c.seed = seed;
    return c;
}

}  // namespace

TEST_CASE("bundled catalog loads") {
    const auto cat = load_marker_catalog(kCatalog);
    const auto& hb = cat.at("hemoglobin");
    CHECK(hb.unit == "g/dL");
    CHECK(hb.panel == Panel::cbc);
    CHECK(hb.class_distributions.at("no_cancer").mean == 13.5);
    CHECK(cat.at("glucose").log_transform);
    CHECK(cat.lab_count() + 2 == cat.entries().size());
    CHECK(cat.entries()[cat.entries().size() - 2].id == "age");
    CHECK(catalog_to_json(cat).at("markers").size() == cat.entries().size());
}

TEST_CASE("catalog rejects duplicates and missing class distributions") {
    CHECK_THROWS_WITH_AS(MarkerCatalog("x", {def("a", Panel::cmp), def("a", Panel::cbc)}),
                         doctest::Contains("duplicate marker id 'a'"), ValidationError);
    auto bad = def("b", Panel::cmp);
    bad.class_distributions.erase("lung");
    CHECK_THROWS_AS(MarkerCatalog("x", {bad}), ValidationError);
    CHECK_THROWS_AS(parse_marker_catalog("{not json"), ParseError);
}

TEST_CASE("record validation names the offending marker") {
    const auto cat = load_marker_catalog(kCatalog);
    auto r = rec({{"hemoglobin", 13.0}});
    CHECK_NOTHROW(validate_record(r, cat));
    r.measurements["unobtanium"] = 1.0;
    CHECK_THROWS_WITH_AS(validate_record(r, cat), doctest::Contains("unobtanium"), ValidationError);
    auto json_round = record_from_json(to_json(rec({{"hemoglobin", 13.0}})));
    CHECK(json_round == rec({{"hemoglobin", 13.0}}));
    CHECK(normalize_icd("k62.5") == "K625");
    CHECK(icd_has_prefix("C18.7", "C18"));
    CHECK_FALSE(icd_has_prefix("C17.1", "C18"));
}

TEST_CASE("derived markers are completed without overwriting") {
    const DerivedRules rules;
    auto r = complete_derived(rec({{"bun", 20.0}, {"creatinine", 1.0}, {"wbc", 6.5}, {"lymphocytes", 2.0},
                                   {"neutrophils_pct", 46.153846153846}}),
                              rules);
    CHECK(r.measurements.at("bun_creatinine_ratio") == doctest::Approx(20.0));
    CHECK(r.measurements.at("lymphocytes_pct") == doctest::Approx(30.769).epsilon(1e-4));
    CHECK(r.measurements.at("neutrophils") == doctest::Approx(3.0).epsilon(1e-9));
    CHECK_FALSE(r.measurements.contains("monocytes"));

    auto kept = complete_derived(rec({{"bun", 20.0}, {"creatinine", 1.0}, {"bun_creatinine_ratio", 17.0}}), rules);
    CHECK(kept.measurements.at("bun_creatinine_ratio") == 17.0);
    auto zero = complete_derived(rec({{"bun", 20.0}, {"creatinine", 0.0}}), rules);
    CHECK_FALSE(zero.measurements.contains("bun_creatinine_ratio"));
}

TEST_CASE("percentile interpolates between closest ranks") {
    const std::vector<double> v{1, 2, 3, 4};
    CHECK(percentile(v, 0.5) == 2.5);
    CHECK(percentile(v, 0.25) == 1.75);
    CHECK(percentile(v, 0.0) == 1.0);
    CHECK(percentile(v, 1.0) == 4.0);
    const std::vector<double> one{7.0};
    CHECK(percentile(one, 0.3) == 7.0);
}

TEST_CASE("normalization uses median and IQD, log10 for flagged markers") {
    const auto cat = tiny_catalog();
    std::vector<EncounterRecord> dev;
    for (int i = 1; i <= 5; ++i) dev.push_back(rec({{"a", double(i)}, {"g", std::pow(10.0, i)}}, 40.0 + i, i % 2 ? Sex::male : Sex::female));
    const auto p = fit_normalization(dev, cat);
    CHECK(p.feature_order() == std::vector<std::string>{"a", "g", "age", "sex"});
    CHECK(p.features[0].median == 3.0);
    CHECK(p.features[0].iqd == 2.0);
    CHECK(p.features[1].median == doctest::Approx(3.0));
    CHECK(p.features[1].iqd == doctest::Approx(2.0));

    const auto fv = vectorize(rec({{"g", 1000.0}}), p);
    CHECK(fv.values[1] == doctest::Approx(0.0));
    CHECK(fv.mask[1] == 1.0);
    CHECK(fv.values[0] == 0.0);
    CHECK(fv.mask[0] == 0.0);
    CHECK(fv.mask[2] == 1.0);
    CHECK(fv.observed() == 3u);
    CHECK(normalization_from_json(to_json(p)) == p);

    std::vector<EncounterRecord> flat;
    for (double v : {1.0, 1.0, 1.0, 1.0, 5.0}) flat.push_back(rec({{"a", v}, {"g", v + 1}}));
    CHECK_THROWS_WITH_AS(fit_normalization(flat, cat), doctest::Contains("'a'"), NumericError);
}

TEST_CASE("synthesis is seeded and reproducible") {
    const auto cat = load_marker_catalog(kCatalog);
    const auto a = synthesize_cohort(cat, synth(40, 10, "colorectal", 5));
    const auto b = synthesize_cohort(cat, synth(40, 10, "colorectal", 5));
    const auto c = synthesize_cohort(cat, synth(40, 10, "colorectal", 6));
    CHECK(records_to_jsonl(a) == records_to_jsonl(b));
    CHECK(records_to_jsonl(a) != records_to_jsonl(c));
    for (const auto& r : a) CHECK_NOTHROW(validate_record(r, cat));
}

TEST_CASE("synthetic marginals and missingness match their targets") {
    const auto cat = load_marker_catalog(kCatalog);
    auto cfg = synth(10000, 0, "");
    cfg.min_encounters = cfg.max_encounters = 1;
    cfg.missing_cmp = 0.3;
    cfg.panel_dropout = 0.0;
    const auto recs = synthesize_cohort(cat, cfg);
    double sum = 0.0;
    std::size_t n_hb = 0, cmp_slots = 0, cmp_missing = 0;
    for (const auto& r : recs) {
        if (auto it = r.measurements.find("hemoglobin"); it != r.measurements.end()) {
            sum += it->second;
            ++n_hb;
        }
        for (const auto* m : cat.lab_markers()) {
            if (m->panel != Panel::cmp) continue;
            ++cmp_slots;
            cmp_missing += !r.measurements.contains(m->id);
        }
    }
    CHECK(sum / n_hb == doctest::Approx(13.5).epsilon(0.1 / 13.5));
    CHECK(std::abs(double(cmp_missing) / cmp_slots - 0.3) <= 0.02);
}

TEST_CASE("synthetic claim codes follow the cohort class") {
    const auto cat = load_marker_catalog(kCatalog);
    auto has = [](const std::vector<EncounterRecord>& recs, const std::string& pid, auto pred) {
        for (const auto& r : recs)
            if (r.patient_id == pid)
                for (const auto& c : r.codes)
                    if (pred(c)) return true;
        return false;
    };
    const auto crc = synthesize_cohort(cat, synth(200, 200, "colorectal"));
    std::set<std::string> controls, cases;
    for (const auto& r : crc) (r.patient_id <= "P0000200" ? controls : cases).insert(r.patient_id);
    CHECK(controls.size() == 200u);
    for (const auto& pid : cases) {
        CHECK(has(crc, pid, [](const ClaimCode& c) {
            return c.system == CodeSystem::ICD10 &&
                   (icd_has_prefix(c.code, "C18") || icd_has_prefix(c.code, "C19") || icd_has_prefix(c.code, "C20"));
        }));
    }
    for (const auto& pid : controls) {
        CHECK_FALSE(has(crc, pid, [](const ClaimCode& c) { return c.system == CodeSystem::ICD10 && c.code[0] == 'C'; }));
    }

    const auto lung = synthesize_cohort(cat, synth(0, 100, "lung"));
    const auto& table = codes::table_for(CancerType::lung);
    std::set<std::string> lung_cpt(table.screening_procedures.begin(), table.screening_procedures.end());
    lung_cpt.insert(table.diagnostic_procedures.begin(), table.diagnostic_procedures.end());
    std::set<std::string> pids;
    for (const auto& r : lung) pids.insert(r.patient_id);
    auto lung_selection = [&](const ClaimCode& c) {
        return c.system == CodeSystem::CPT ? lung_cpt.contains(c.code)
                                           : icd_has_prefix(c.code, table.screening_encounters.front());
    };
    std::size_t selected = 0;
    for (const auto& pid : pids) selected += has(lung, pid, lung_selection);
    CHECK(selected == pids.size());
    const auto& therapy = codes::therapy_cpt();
    for (const auto& r : lung)
        for (const auto& c : r.codes)
            if (c.system == CodeSystem::CPT)
                CHECK((lung_cpt.contains(c.code) || std::find(therapy.begin(), therapy.end(), c.code) != therapy.end()));
}

TEST_CASE("synthesis config rejects bad fields") {
    auto c = synth(10, 0, "");
    c.missing_cmp = 1.5;
    CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("missing_cmp"), ValidationError);
    auto round = synth_config_from_json(to_json(synth(10, 5, "liver", 3)));
    CHECK(round.n_per_class.at("liver") == 5u);
    CHECK(round.seed == 3u);
}
