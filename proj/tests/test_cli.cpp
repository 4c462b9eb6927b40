// End-to-end checks of the command-line workflow against the built binary
// (path provided via ALIVAL_BIN). Exercises the file formats as an external
// consumer would.

#include <catch2/catch_amalgamated.hpp>

#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "alival/csv.hpp"
#include "alival/formats.hpp"
#include "alival/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string binary() {
    const char* env = std::getenv("ALIVAL_BIN");
    return env ? env : "";
}

struct TempDir {
    fs::path dir;
    TempDir() {
        dir = fs::temp_directory_path() /
              ("alival_cli_" + std::to_string(alival::splitmix64(
                                   static_cast<std::uint64_t>(::getpid()))));
        fs::create_directories(dir);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(dir, ec);
    }
    std::string path(const std::string& name) const {
        return (dir / name).string();
    }
};

int run(const std::string& args) {
    const int status = std::system((binary() + " " + args + " >/dev/null 2>&1").c_str());
    return WEXITSTATUS(status);
}

void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path);
    out << content;
}

std::string slurp(const std::string& path) {
    std::ifstream in(path);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Small deterministic phase-one cohort.
void write_phase_one(const std::string& path, int n, std::uint64_t seed) {
    alival::Rng g = alival::make_rng(seed);
    std::ofstream out(path);
    out << "patient_id,Y,X_star,age_years\n";
    for (int i = 0; i < n; ++i) {
        char id[16];
        std::snprintf(id, sizeof(id), "p%04d", i);
        const double x = static_cast<double>(alival::uniform_index(g, 11)) / 10.0;
        const double age = alival::uniform_real(g, 18.0, 65.0);
        const double z = (age - 18.0) / 10.0;
        const int y =
            alival::bernoulli(g, alival::expit(-1.3 + 1.0 * x + 0.1 * z)) ? 1 : 0;
        out << id << ',' << y << ',' << x << ',' << age << '\n';
    }
}

}  // namespace

TEST_CASE("cli binary is wired into the test environment") {
    REQUIRE_FALSE(binary().empty());
    CHECK(run("--version") == 0);
}

TEST_CASE("ali compute handles missingness and roadmap recovery") {
    TempDir tmp;
    write_file(tmp.path("components.csv"),
               "patient_id,encounter_date,sex,systolic_bp,diastolic_bp,bmi,"
               "triglycerides,total_cholesterol,crp,hba1c,serum_albumin,"
               "creatinine_clearance,homocysteine\n"
               "p1,2019-01-02,female,150,95,31,160,210,11,6.9,3.6,90,55\n"
               "p2,2019-02-03,male,120,70,24,100,150,,,,,\n"
               "p3,2019-03-04,female,135,85,28,,180,,,,,\n");
    write_file(tmp.path("diagnoses.csv"),
               "patient_id,diagnosis_text\n"
               "p2,Type 2 Diabetes\n"
               "p2,Essential Hypertension\n"
               "p3,Morbid Obesity\n");

    REQUIRE(run("ali compute --components " + tmp.path("components.csv") +
                " --out " + tmp.path("ali.csv")) == 0);
    auto t = alival::csv::read_file(tmp.path("ali.csv"));
    REQUIRE(t.rows.size() == 3);
    // p1: every component present and flagged.
    CHECK(t.rows[0][1] == "1");
    CHECK(t.rows[0][3] == "10");
    // p2: five present, none flagged.
    CHECK(t.rows[1][1] == "0");
    CHECK(t.rows[1][3] == "5");

    REQUIRE(run("ali compute --components " + tmp.path("components.csv") +
                " --diagnoses " + tmp.path("diagnoses.csv") +
                " --apply-roadmap --out " + tmp.path("ali_roadmap.csv")) == 0);
    auto t2 = alival::csv::read_file(tmp.path("ali_roadmap.csv"));
    // p2 recovers HbA1c (diabetes); denominator grows by one.
    CHECK(t2.rows[1][3] == "6");
    CHECK(t2.rows[1][4] == "1");
}

TEST_CASE("fit naive emits a summary and residuals, and is idempotent") {
    TempDir tmp;
    write_phase_one(tmp.path("phase1.csv"), 400, 7);
    const std::string cmd = "fit naive --phase-one " + tmp.path("phase1.csv") +
                            " --out " + tmp.path("fit.json") + " --residuals " +
                            tmp.path("resid.csv");
    REQUIRE(run(cmd) == 0);
    const std::string first = slurp(tmp.path("fit.json"));
    REQUIRE(run(cmd) == 0);
    CHECK(slurp(tmp.path("fit.json")) == first);

    const json j = json::parse(first);
    CHECK(j["converged"].get<bool>());
    CHECK(j["coefficients"].contains("ali"));
    CHECK(j["coefficients"]["ali"].contains("odds_ratio"));

    const auto residuals =
        alival::formats::read_residuals_csv(tmp.path("resid.csv"));
    CHECK(residuals.size() == 400);
    double sum = 0.0;
    for (const auto& [id, r] : residuals) sum += r;
    CHECK(std::abs(sum) < 1e-5);
}

TEST_CASE("design select produces reproducible selections with strata") {
    TempDir tmp;
    write_phase_one(tmp.path("phase1.csv"), 300, 9);
    REQUIRE(run("fit naive --phase-one " + tmp.path("phase1.csv") + " --out " +
                tmp.path("fit.json") + " --residuals " + tmp.path("resid.csv")) ==
            0);

    const std::string cmd = "--seed 11 design select --design rs --n 24"
                            " --phase-one " + tmp.path("phase1.csv") +
                            " --residuals " + tmp.path("resid.csv") + " --out ";
    REQUIRE(run(cmd + tmp.path("sel_a.csv")) == 0);
    REQUIRE(run(cmd + tmp.path("sel_b.csv")) == 0);
    CHECK(slurp(tmp.path("sel_a.csv")) == slurp(tmp.path("sel_b.csv")));

    auto t = alival::csv::read_file(tmp.path("sel_a.csv"));
    REQUIRE(t.rows.size() == 24);
    CHECK(t.header == std::vector<std::string>{"patient_id", "stratum", "wave"});

    // Excluding the first selection yields a disjoint second wave.
    REQUIRE(run("--seed 11 design select --design srs --n 30 --phase-one " +
                tmp.path("phase1.csv") + " --exclude " + tmp.path("sel_a.csv") +
                " --out " + tmp.path("sel_c.csv")) == 0);
    const auto first = alival::formats::read_selection_ids(tmp.path("sel_a.csv"));
    const auto second = alival::formats::read_selection_ids(tmp.path("sel_c.csv"));
    for (const auto& id : second) CHECK_FALSE(first.count(id));
}

TEST_CASE("audit prepare, ingest, and quality round the workbook trip") {
    TempDir tmp;
    write_file(tmp.path("components.csv"),
               "patient_id,encounter_date,sex,systolic_bp,diastolic_bp,bmi,"
               "triglycerides,total_cholesterol,crp,hba1c,serum_albumin,"
               "creatinine_clearance,homocysteine\n"
               "p1,2019-01-02,female,150,95,31,160,210,11,5.6,3.6,90,55\n"
               "p2,2019-02-03,male,120,70,24,100,150,,,,,\n");
    REQUIRE(run("audit prepare --components " + tmp.path("components.csv") +
                " --out " + tmp.path("workbook.csv")) == 0);

    auto rows = alival::formats::read_workbook_csv(tmp.path("workbook.csv"));
    REQUIRE(rows.size() == 20);
    // Complete the audit: confirm extracted values, correct p1's HbA1c
    // transposition, recover p2's HbA1c via a diabetes diagnosis.
    for (auto& r : rows) {
        if (r.extracted_value.has_value()) {
            r.reviewed_value = alival::csv::format_field(*r.extracted_value);
        } else {
            r.reviewed_value = "Not Found";
        }
        if (r.patient_id == "p1" && r.variable == alival::Component::Hba1c) {
            r.reviewed_value = "6.5";
        }
        if (r.patient_id == "p2" && r.variable == alival::Component::Hba1c) {
            r.reviewed_value = "Diabetes";
        }
    }
    alival::formats::write_workbook_csv(tmp.path("completed.csv"), rows);

    REQUIRE(run("audit ingest --workbook " + tmp.path("completed.csv") +
                " --out " + tmp.path("findings.csv")) == 0);
    auto findings = alival::csv::read_file(tmp.path("findings.csv"));
    CHECK(findings.header.back() == "category");

    REQUIRE(run("audit quality --findings " + tmp.path("findings.csv") +
                " --components " + tmp.path("components.csv") + " --out " +
                tmp.path("report.json") + " --heatmap " + tmp.path("heat.csv")) ==
            0);
    const json rep = json::parse(slurp(tmp.path("report.json")));
    CHECK(rep["finding_counts"]["extracted_incorrect"].get<int>() == 1);
    CHECK(rep["finding_counts"]["auxiliary_found"].get<int>() == 1);
    // p1 HbA1c: EHR said 0 (5.6), validation says 1 (6.5).
    CHECK(rep["per_component"]["hba1c"]["confusion"]["n01"].get<int>() == 1);
    // p2 HbA1c recovered through the roadmap.
    CHECK(rep["per_component"]["hba1c"]["recovery_rate"]["numerator"]
              .get<int>() == 1);
    CHECK(fs::exists(tmp.path("heat.csv")));
}

TEST_CASE("audit kappa reads the ratings format") {
    TempDir tmp;
    std::ostringstream ratings;
    ratings << "item_id,rater_id,category\n";
    for (int i = 0; i < 10; ++i) {
        for (const char* rater : {"r1", "r2", "r3"}) {
            ratings << "item" << i << ',' << rater << ','
                    << (i == 0 && std::string(rater) == "r3" ? "b" : "a") << '\n';
        }
    }
    write_file(tmp.path("ratings.csv"), ratings.str());
    CHECK(run("audit kappa --ratings " + tmp.path("ratings.csv")) == 0);
}

TEST_CASE("fit smle runs on a two-phase extract") {
    TempDir tmp;
    write_phase_one(tmp.path("phase1.csv"), 250, 13);
    // Validate 40 patients; their exposure equals x* here.
    const auto rows = alival::formats::read_phase_one_csv(tmp.path("phase1.csv"));
    std::ofstream val(tmp.path("validation.csv"));
    val << "patient_id,X_validated\n";
    for (int i = 0; i < 40; ++i) {
        val << rows[static_cast<std::size_t>(i * 6)].patient_id << ','
            << *rows[static_cast<std::size_t>(i * 6)].x_star << '\n';
    }
    val.close();

    REQUIRE(run("fit smle --phase-one " + tmp.path("phase1.csv") +
                " --validation " + tmp.path("validation.csv") + " --out " +
                tmp.path("smle.json") + " --no-se") == 0);
    const json j = json::parse(slurp(tmp.path("smle.json")));
    CHECK(j["converged"].get<bool>());
    CHECK(j["coefficients"]["ali"].contains("odds_ratio"));
    CHECK(j["support_grid"].size() >= 11);
    // Column-stochastic p matrix.
    const auto pm = j["p_matrix"];
    const std::size_t K = pm.size();
    REQUIRE(K >= 11);
    const std::size_t S = pm[0].size();
    for (std::size_t s = 0; s < S; ++s) {
        double colsum = 0.0;
        for (std::size_t k = 0; k < K; ++k) colsum += pm[k][s].get<double>();
        CHECK_THAT(colsum, Catch::Matchers::WithinAbs(1.0, 1e-9));
    }
}

TEST_CASE("wave advance and status maintain the cumulative state") {
    TempDir tmp;
    write_file(tmp.path("sel1.csv"), "patient_id,stratum,wave\np1,y1_xlo,0\n"
                                     "p2,y1_xhi,0\np3,y0_xlo,0\np4,y0_xhi,0\n");
    write_file(tmp.path("sel2.csv"), "patient_id,stratum,wave\np5,all,1\n");
    const std::string state = tmp.path("state.json");

    REQUIRE(run("wave advance --state " + state + " --selection " +
                tmp.path("sel1.csv") + " --budget 100 --design-label bcc-pilot") ==
            0);
    REQUIRE(run("wave advance --state " + state + " --selection " +
                tmp.path("sel2.csv") + " --design-label srs-wave1") == 0);
    // Overlapping ids refuse to advance (exit code 1).
    CHECK(run("wave advance --state " + state + " --selection " +
              tmp.path("sel1.csv")) == 1);
    CHECK(run("wave status --state " + state) == 0);

    const json j = json::parse(slurp(state));
    CHECK(j["wave_index"].get<int>() == 1);
    CHECK(j["waves"].size() == 2);
    CHECK(j["waves"][0]["design"].get<std::string>() == "bcc-pilot");
}

TEST_CASE("sim run writes comparison tables from a config") {
    TempDir tmp;
    write_file(tmp.path("sim.json"), R"({
        "cohort_size": 150,
        "budget": 30,
        "replicates": 4,
        "tpr": 1.0,
        "fpr": 0.0,
        "recovery": 1.0,
        "master_seed": 5,
        "designs": ["srs", "rs"]
    })");
    REQUIRE(run("sim run --config " + tmp.path("sim.json") + " --out " +
                tmp.path("table.csv") + " --long " + tmp.path("long.csv")) == 0);
    auto t = alival::csv::read_file(tmp.path("table.csv"));
    CHECK(t.rows.size() == 3);  // srs, rs, naive
    auto l = alival::csv::read_file(tmp.path("long.csv"));
    CHECK(l.header ==
          std::vector<std::string>{"scenario", "design", "metric", "value"});
}

TEST_CASE("exit codes distinguish data errors from config errors") {
    TempDir tmp;
    write_phase_one(tmp.path("phase1.csv"), 50, 3);
    // Unknown design: configuration error -> exit 2.
    CHECK(run("design select --design quota --n 10 --phase-one " +
              tmp.path("phase1.csv") + " --out " + tmp.path("x.csv")) == 2);
    // Budget beyond the cohort: data error -> exit 1.
    CHECK(run("design select --design srs --n 500 --phase-one " +
              tmp.path("phase1.csv") + " --out " + tmp.path("x.csv")) == 1);
    // Missing file -> exit 1.
    CHECK(run("fit naive --phase-one " + tmp.path("nope.csv") + " --out " +
              tmp.path("x.json")) == 1);

    // --json-errors emits a machine-readable body on stdout.
    const std::string out_file = tmp.path("err.json");
    const int status = std::system(
        (binary() + " --json-errors design select --design quota --n 2 "
                    "--phase-one " + tmp.path("phase1.csv") + " --out " +
         tmp.path("x.csv") + " > " + out_file + " 2>/dev/null")
            .c_str());
    CHECK(WEXITSTATUS(status) == 2);
    const json j = json::parse(slurp(out_file));
    CHECK(j["error"]["type"].get<std::string>() == "config_error");
}
