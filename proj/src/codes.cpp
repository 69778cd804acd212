#include "dprof/codes.hpp"

#include "dprof/record.hpp"

namespace dprof::codes {

const CodeTable& table_for(CancerType type) {
    static const CodeTable colorectal{
        {"G0105", "G0120", "G0121", "G2204", "45378", "45388", "45330", "45381"},
        {"Z12.11", "Z12.12", "Z12.13"},
        {"45380", "45382", "45384", "45385", "45390"},
        {"C18", "C19", "C20"}};
    static const CodeTable liver{{"76700", "76705", "78215"},
                                 {"Z12.89"},
                                 {"47000", "74176", "74177", "74148"},
                                 {"C22"}};
    static const CodeTable lung{{"G0296", "71271", "71045", "71046", "71047", "71048"},
                                {"Z12.2"},
                                {"71250"},
                                {"C34"}};
    switch (type) {
        case CancerType::colorectal: return colorectal;
        case CancerType::liver: return liver;
        case CancerType::lung: return lung;
    }
    return colorectal;
}

const std::vector<std::string>& therapy_cpt() {
    static const std::vector<std::string> v{"96401", "96409", "96413", "96415",
                                            "77385", "77386", "77412", "77427"};
    return v;
}

const std::vector<std::string>& therapy_icd() {
    static const std::vector<std::string> v{"Z51.0", "Z51.11"};
    return v;
}

const std::vector<std::string>& default_infection_codes() {
    static const std::vector<std::string> v{"R65.1", "R65.2", "A41"};
    return v;
}

bool is_malignant_icd(const std::string& code) {
    const auto c = normalize_icd(code);
    if (c.size() < 3 || c[0] != 'C') return false;
    const int n = (c[1] - '0') * 10 + (c[2] - '0');
    return c[1] >= '0' && c[1] <= '9' && c[2] >= '0' && c[2] <= '9' && n <= 97;
}

}  // namespace dprof::codes
