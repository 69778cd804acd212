#include "dprof/cohort.hpp"
#include "dprof/error.hpp"

#include <doctest.h>
#include <nlohmann/json.hpp>

#include <map>
#include <set>
#include <string>
#include <vector>

using namespace dprof;

namespace {

// Labs with no derived-marker relationships.
const std::vector<std::string> kPlainLabs{"albumin", "alp",        "alt",      "ast",       "bilirubin",
                                          "calcium", "chloride",   "glucose",  "potassium", "sodium",
                                          "total_co2", "total_protein", "hematocrit", "hemoglobin", "hba1c",
                                          "mch",     "mchc",       "mcv",      "platelets", "rdw"};

std::map<std::string, double> lab_set(std::size_t n) {
    std::map<std::string, double> m;
    for (std::size_t i = 0; i < n; ++i) m[kPlainLabs[i]] = 1.0 + static_cast<double>(i);
    return m;
}

Date day(int y, unsigned m, unsigned d) { return Date::from_ymd(y, m, d); }

struct PatientBuilder {
    std::string id;
    Sex sex = Sex::female;
    std::vector<EncounterRecord> encounters;

    PatientBuilder& visit(Date date, double age, std::size_t n_labs = 18) {
        EncounterRecord r;
        r.patient_id = id;
        r.encounter_id = id + "-E" + std::to_string(encounters.size() + 1);
        r.date = date;
        r.age_years = age;
        r.sex = sex;
        r.measurements = lab_set(n_labs);
        encounters.push_back(std::move(r));
        return *this;
    }
    PatientBuilder& code(std::string c, CodeSystem sys, Date date) {
        encounters.back().codes.push_back({std::move(c), sys, date});
        return *this;
    }
    Patient patient() const { return group_by_patient(encounters).at(0); }
};

const DerivedRules kRules;

CohortSpec crc() { return CohortSpec::defaults(CancerType::colorectal); }

// Screened colorectal case diagnosed 2020-06-01 and confirmed by chemotherapy.
PatientBuilder crc_case(std::string id) {
    PatientBuilder b{std::move(id)};
    b.visit(day(2020, 3, 1), 60).code("G0121", CodeSystem::CPT, day(2020, 3, 1));
    b.code("C18.7", CodeSystem::ICD10, day(2020, 6, 1)).code("96413", CodeSystem::CPT, day(2020, 7, 1));
    return b;
}

// Screened control with one follow-up visit.
PatientBuilder control(std::string id, double age = 55.0, Sex sex = Sex::female) {
    PatientBuilder b{std::move(id), sex};
    b.visit(day(2019, 1, 1), age).code("G0121", CodeSystem::CPT, day(2019, 1, 1));
    b.visit(day(2020, 1, 1), age + 1);
    return b;
}

std::vector<LabeledEncounter> labeled(const PatientBuilder& b, const CohortSpec& spec = crc()) {
    const auto p = b.patient();
    return filter_encounters(p, assign_label(p, spec), spec, kRules);
}

}  // namespace

TEST_CASE("screening selection and diagnostic fallback") {
    const auto spec = crc();
    PatientBuilder screened{"a"};
    screened.visit(day(2020, 1, 1), 50).code("G0121", CodeSystem::CPT, day(2020, 1, 1));
    CHECK(screening_reason(screened.patient(), spec) == SelectionReason::screening);

    PatientBuilder fallback{"b"};
    fallback.visit(day(2020, 1, 1), 50).code("45380", CodeSystem::CPT, day(2020, 1, 1));
    CHECK(screening_reason(fallback.patient(), spec) == SelectionReason::diagnostic_fallback);

    PatientBuilder none{"c"};
    none.visit(day(2020, 1, 1), 50).code("99213", CodeSystem::CPT, day(2020, 1, 1));
    CHECK(screening_reason(none.patient(), spec) == SelectionReason::none);

    // CPT codes match exactly, ICD-10 by prefix with dots ignored.
    CHECK(code_matches({"Z12.11", CodeSystem::ICD10, {}}, {"Z12.1"}));
    CHECK_FALSE(code_matches({"G01210", CodeSystem::CPT, {}}, {"G0121"}));
    CHECK(select_screening_population({screened.patient(), fallback.patient(), none.patient()}, spec) ==
          std::set<std::string>{"a", "b"});
}

TEST_CASE("labels need a confirmed diagnosis") {
    const auto crc_info = assign_label(crc_case("x").patient(), crc());
    CHECK(crc_info.label);
    CHECK(*crc_info.diagnosis_date == day(2020, 6, 1));

    const auto liver = CohortSpec::defaults(CancerType::liver);
    PatientBuilder unconfirmed{"y"};
    unconfirmed.visit(day(2020, 1, 1), 60).code("76700", CodeSystem::CPT, day(2020, 1, 1));
    unconfirmed.code("C22.0", CodeSystem::ICD10, day(2020, 2, 1));
    const auto info = assign_label(unconfirmed.patient(), liver);
    CHECK_FALSE(info.label);
    CHECK(info.has_diagnosis_code);
    CHECK(info.any_malignancy);
    CHECK(labeled(unconfirmed, liver).empty());

    // Confirmation on the diagnosis day itself does not count.
    PatientBuilder same_day{"z"};
    same_day.visit(day(2020, 1, 1), 60).code("C18.0", CodeSystem::ICD10, day(2020, 3, 1));
    same_day.code("96413", CodeSystem::CPT, day(2020, 3, 1));
    CHECK_FALSE(assign_label(same_day.patient(), crc()).label);
    auto relaxed = crc();
    relaxed.confirmation_required = false;
    CHECK(assign_label(same_day.patient(), relaxed).label);
}

TEST_CASE("encounter filters: marker count, age and lookback window") {
    CHECK(labeled(control("a")).size() == 1u);  // last visit has no follow-up

    auto few = control("b");
    few.encounters[0].measurements = lab_set(17);
    CHECK(labeled(few).empty());
    few.encounters[0].measurements = lab_set(18);
    CHECK(labeled(few).size() == 1u);

    // Derived completion counts toward the minimum.
    auto derived = control("c");
    derived.encounters[0].measurements = lab_set(15);
    derived.encounters[0].measurements["bun"] = 14;
    CHECK(labeled(derived).empty());
    derived.encounters[0].measurements["creatinine"] = 1;  // 17 reported, ratio makes 18
    CHECK(labeled(derived).size() == 1u);
    auto literal = crc();
    literal.count_derived_markers = false;
    CHECK(labeled(derived, literal).empty());

    CHECK(labeled(control("d", 39.0)).empty());
    CHECK(labeled(control("e", 40.0)).size() == 1u);
    CHECK(labeled(control("f", 89.0)).size() == 1u);
    CHECK(labeled(control("g", 89.5)).empty());

    auto windowed = crc_case("h");
    windowed.visit(day(2019, 5, 1), 59);   // 13 months before diagnosis
    windowed.visit(day(2019, 7, 1), 59);   // 11 months
    windowed.visit(day(2020, 6, 1), 60);   // diagnosis day
    windowed.visit(day(2020, 6, 2), 60);   // after diagnosis
    std::set<Date> kept;
    for (const auto& e : labeled(windowed)) kept.insert(e.record.date);
    CHECK(kept == std::set<Date>{day(2019, 7, 1), day(2020, 3, 1), day(2020, 6, 1)});
}

TEST_CASE("controls with any malignancy and encounters after a cancer code are excluded") {
    auto other = control("a");
    other.code("C50.9", CodeSystem::ICD10, day(2018, 1, 1));
    CHECK(labeled(other).empty());

    // A case with an unrelated malignancy coded between two visits.
    auto prior = crc_case("b");
    prior.visit(day(2020, 2, 1), 60).code("C61", CodeSystem::ICD10, day(2020, 2, 15));
    const auto kept = labeled(prior);
    REQUIRE(kept.size() == 1u);
    CHECK(kept[0].record.date == day(2020, 2, 1));
    CHECK_FALSE(no_prior_cancer(prior.encounters[0], prior.patient()));
}

TEST_CASE("acute infection exclusion uses a symmetric window") {
    auto same = control("a");
    same.code("A41.9", CodeSystem::ICD10, day(2019, 1, 1));
    auto old = control("b");
    old.code("A41.9", CodeSystem::ICD10, day(2017, 1, 1));
    auto after = control("c");
    after.code("R65.20", CodeSystem::ICD10, day(2019, 1, 25));
    std::vector<LabeledEncounter> all;
    std::vector<Patient> pats;
    for (const auto* b : {&same, &old, &after}) {
        for (auto& e : labeled(*b)) all.push_back(e);
        pats.push_back(b->patient());
    }
    const auto spec = crc();
    const auto kept = exclude_acute_infection(all, code_history(pats), spec.infection_codes, 30);
    REQUIRE(kept.size() == 1u);
    CHECK(kept[0].record.patient_id == "b");
}

TEST_CASE("split is 2:1, stratified, patient-level and seeded") {
    std::vector<LabeledEncounter> all;
    for (int i = 0; i < 300; ++i) {
        auto b = control("n" + std::to_string(1000 + i), 50.0 + (i % 2) * 10, i % 3 ? Sex::male : Sex::female);
        b.visit(day(2021, 1, 1), 52);  // two labeled visits per patient
        for (auto& e : labeled(b)) all.push_back(e);
    }
    for (int i = 0; i < 60; ++i)
        for (auto& e : labeled(crc_case("c" + std::to_string(100 + i)))) all.push_back(e);

    SplitParams params;
    params.seed = 99;
    std::vector<StratumSummary> strata;
    const auto out = split_dev_val(all, params, &strata);
    std::map<std::string, std::set<Split>> per_patient;
    std::set<std::string> dev, val;
    for (const auto& e : out) {
        CHECK(e.split != Split::unassigned);
        per_patient[e.record.patient_id].insert(e.split);
        (e.split == Split::development ? dev : val).insert(e.record.patient_id);
    }
    for (const auto& [id, splits] : per_patient) CHECK(splits.size() == 1u);
    CHECK(dev.size() + val.size() == 360u);
    CHECK(dev.size() == 240u);
    for (const auto& s : strata) {
        CHECK(s.development == static_cast<std::size_t>(std::lround(2.0 * s.patients / 3.0)));
    }

    CHECK(labeled_to_jsonl(split_dev_val(all, params)) == labeled_to_jsonl(out));
    params.seed = 100;
    CHECK(labeled_to_jsonl(split_dev_val(all, params)) != labeled_to_jsonl(out));
    params.ratio_validation = 0;
    CHECK_THROWS_AS(split_dev_val(all, params), ValidationError);
}

TEST_CASE("small strata pool into a fallback group") {
    std::vector<LabeledEncounter> all;
    for (auto& e : labeled(control("a", 41))) all.push_back(e);
    for (auto& e : labeled(control("b", 71))) all.push_back(e);
    for (auto& e : labeled(control("c", 81, Sex::male))) all.push_back(e);
    const auto out = split_dev_val(all, SplitParams{});
    for (const auto& e : out) CHECK(e.split_fallback);
}

TEST_CASE("enrichment adds unscreened controls and development-only cases") {
    PatientBuilder ctl{"u1"};
    ctl.visit(day(2019, 1, 1), 60).visit(day(2020, 1, 1), 61);
    PatientBuilder case_{"u2"};
    case_.visit(day(2020, 3, 1), 60).code("C18.7", CodeSystem::ICD10, day(2020, 6, 1));
    case_.code("96413", CodeSystem::CPT, day(2020, 7, 1));
    PatientBuilder sick{"u3"};
    sick.visit(day(2019, 1, 1), 60).visit(day(2020, 1, 1), 61).code("C50.1", CodeSystem::ICD10, day(2018, 1, 1));

    std::vector<EncounterRecord> records;
    for (const auto* b : {&ctl, &case_, &sick})
        for (const auto& e : b->encounters) records.push_back(e);
    for (int i = 0; i < 6; ++i)
        for (const auto& e : control("s" + std::to_string(i)).encounters) records.push_back(e);

    const auto result = run_cohort_pipeline(records, crc(), SplitParams{}, kRules);
    std::map<std::string, const LabeledEncounter*> by_patient;
    for (const auto& e : result.encounters) by_patient[e.record.patient_id] = &e;
    REQUIRE(by_patient.contains("u1"));
    CHECK(by_patient["u1"]->enrichment);
    CHECK_FALSE(by_patient["u1"]->label);
    REQUIRE(by_patient.contains("u2"));
    CHECK(by_patient["u2"]->enrichment);
    CHECK(by_patient["u2"]->label);
    CHECK(by_patient["u2"]->split == Split::development);
    CHECK_FALSE(by_patient.contains("u3"));
    CHECK_FALSE(by_patient["s0"]->enrichment);

    CHECK(result.consort.front().stage == "screening population");
    CHECK(result.consort.front().negative_patients == 6u);
    CHECK(consort_to_tsv(result.consort).find("after enrichment") != std::string::npos);
}

TEST_CASE("pipeline is deterministic and round-trips through JSONL") {
    std::vector<EncounterRecord> records;
    for (int i = 0; i < 30; ++i)
        for (const auto& e : control("s" + std::to_string(i), 45 + i).encounters) records.push_back(e);
    for (int i = 0; i < 10; ++i)
        for (const auto& e : crc_case("c" + std::to_string(i)).encounters) records.push_back(e);
    const auto a = run_cohort_pipeline(records, crc(), SplitParams{}, kRules);
    const auto b = run_cohort_pipeline(records, crc(), SplitParams{}, kRules);
    CHECK(labeled_to_jsonl(a.encounters) == labeled_to_jsonl(b.encounters));
    for (const auto& e : a.encounters) {
        const auto back = labeled_from_json(to_json(e));
        CHECK(back.record == e.record);
        CHECK(back.split == e.split);
        CHECK(back.diagnosis_date == e.diagnosis_date);
    }
    auto bad = crc();
    bad.min_markers = 0;
    CHECK_THROWS_AS(run_cohort_pipeline(records, bad, SplitParams{}, kRules), ValidationError);
}
