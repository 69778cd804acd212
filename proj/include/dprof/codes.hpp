#pragma once

#include "dprof/catalog.hpp"

#include <string>
#include <vector>

namespace dprof::codes {

// Screening and diagnosis codes for one cancer type (the cohort-selection
// table: CPT procedure codes, ICD-10 encounter codes, ICD-10 diagnosis
// prefixes).
struct CodeTable {
    std::vector<std::string> screening_procedures;
    std::vector<std::string> screening_encounters;
    std::vector<std::string> diagnostic_procedures;
    std::vector<std::string> diagnosis_icd_prefixes;
};

const CodeTable& table_for(CancerType type);

// Therapy codes that confirm a diagnosis when they follow it
// (chemotherapy administration, radiation treatment delivery, ICD-10
// encounters for antineoplastic therapy).
const std::vector<std::string>& therapy_cpt();
const std::vector<std::string>& therapy_icd();

// Default acute-infection (SIRS / sepsis / septic shock) ICD-10 prefixes.
const std::vector<std::string>& default_infection_codes();

// Any malignant neoplasm (ICD-10 chapter C00-C97).
bool is_malignant_icd(const std::string& code);

}  // namespace dprof::codes
