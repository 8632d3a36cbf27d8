// Acceptance run: one PASS/FAIL line per criterion, exit status 0 iff all pass.
#include "hadamard/pipeline.hpp"

#include <chrono>
#include <iostream>

using namespace hadamard;
using suites::SuiteResult;
using json = nlohmann::ordered_json;

namespace {

struct Criterion {
    int id;
    std::string name;
    std::function<std::vector<SuiteResult>()> run;
};

SuiteResult pipeline_suite() {
    namespace fs = std::filesystem;
    config::Config c = config::Config::load(std::string(HADAMARD_CONFIG_DIR) + "/flat_m3_scalar.cfg");
    c.set("verify.suites", "cone, closure");
    c.set("output.dir", (fs::temp_directory_path() / "hadamard_acceptance_verify").string());
    auto res = pipeline::cmd_verify(pipeline::parse_run_config(c));
    SuiteResult r{"pipeline", res.exit_code == 0};
    for (const auto& s : res.report["suites"]) r.metrics[s["name"].get<std::string>()] = s["metrics"];
    return r;
}

std::string brief(const json& j, int depth = 0) {
    std::string out;
    for (auto it = j.begin(); it != j.end(); ++it) {
        const auto& v = it.value();
        std::string item;
        if (v.is_number_float()) {
            std::ostringstream os;
            os << std::setprecision(3) << v.get<double>();
            item = it.key() + "=" + os.str();
        } else if (v.is_number() || v.is_boolean()) {
            item = it.key() + "=" + v.dump();
        } else if (v.is_object() && depth < 1) {
            item = it.key() + "{" + brief(v, depth + 1) + "}";
        }
        if (!item.empty()) out += (out.empty() ? "" : " ") + item;
    }
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    std::string json_path;
    for (int i = 1; i + 1 < argc; ++i)
        if (std::string(argv[i]) == "--json") json_path = argv[i + 1];

    std::vector<Criterion> criteria{
        {1, "Clifford and Majorana relations", [] { return std::vector{suites::clifford_suite()}; }},
        {2, "geometry identities", [] { return std::vector{suites::geometry_suite()}; }},
        {3, "transport recursion calibration", [] { return std::vector{suites::recursion_suite()}; }},
        {4, "Riesz descent and time reflection", [] { return std::vector{suites::riesz_suite()}; }},
        {5, "commutator identity", [] { return std::vector{suites::commutator_suite({3, 4}, 5, 20240601)}; }},
        {6, "time-function independence", [] { return std::vector{suites::time_function_suite()}; }},
        {7, "wavefront estimator", [] { return std::vector{suites::estimator_suite()}; }},
        {8, "kernel cone pipeline and closure", [] { return std::vector{pipeline_suite()}; }},
        {9, "scaling limits",
         [] {
             return std::vector{suites::flat_scaling_suite(), suites::curved_scaling_suite(), suites::g2_scaling_suite(),
                                suites::dirac_mass_suite()};
         }},
        {10, "scaling-limit wavefront inclusion", [] { return std::vector{suites::inclusion_suite()}; }},
    };

    json report = json::array();
    int failures = 0;
    for (const auto& c : criteria) {
        const auto t0 = std::chrono::steady_clock::now();
        std::vector<SuiteResult> parts;
        std::string error;
        try {
            parts = c.run();
        } catch (const std::exception& e) {
            error = e.what();
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        bool pass = error.empty();
        for (const auto& p : parts) pass = pass && p.pass;
        failures += !pass;
        std::cout << "criterion " << std::setw(2) << c.id << "  " << (pass ? "PASS" : "FAIL") << "  " << c.name << "  ("
                  << std::fixed << std::setprecision(1) << secs << " s)" << std::defaultfloat << "\n";
        json entry = {{"criterion", c.id}, {"name", c.name}, {"pass", pass}, {"seconds", secs}};
        if (!error.empty()) {
            std::cout << "    error: " << error << "\n";
            entry["error"] = error;
        }
        json sub = json::array();
        for (const auto& p : parts) {
            std::cout << "    " << p.name << ": " << (p.pass ? "pass" : "fail") << "  " << brief(p.metrics) << "\n";
            sub.push_back({{"name", p.name}, {"pass", p.pass}, {"metrics", p.metrics}});
        }
        entry["suites"] = sub;
        report.push_back(entry);
        std::cout.flush();
    }
    std::cout << (failures ? "ACCEPTANCE FAIL" : "ACCEPTANCE PASS") << " (" << criteria.size() - failures << "/"
              << criteria.size() << ")\n";
    if (!json_path.empty()) std::ofstream(json_path) << report.dump(2) << "\n";
    return failures ? 1 : 0;
}
