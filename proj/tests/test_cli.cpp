#include <filesystem>
#include <fstream>

#include "ciw/cli.hpp"
#include "ciw/nash.hpp"
#include "doctest.h"

using namespace ciw;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string fresh_dir(const std::string& name) {
    auto d = fs::temp_directory_path() / ("ciw_test_" + name);
    fs::remove_all(d);
    return d.string();
}

}  // namespace

TEST_CASE("resolve_config fills defaults and rejects unknown keys") {
    auto c = resolve_config({{"experiment", "exponents"}});
    CHECK(c["seed"] == 1);
    CHECK(c["exponents"]["recursions"].size() == 3);
    try {
        resolve_config({{"experiment", "isometric"}, {"isometric", {{"presett", "round-circle"}}}});
        FAIL("no error");
    } catch (const ConfigError& e) {
        CHECK(e.path == "/isometric/presett");
    }
    try {
        resolve_config({{"experiment", "isometric"}, {"isometric", {{"M", "many"}}}});
        FAIL("no error");
    } catch (const ConfigError& e) {
        CHECK(e.path == "/isometric/M");
    }
    CHECK_THROWS_AS(resolve_config({{"experiment", "nope"}}), ConfigError);
    CHECK_THROWS_AS(resolve_config({{"experiment", "exponents"}, {"extra", 1}}), ConfigError);
    CHECK_THROWS_AS(resolve_config({{"experiment", "euler-step"}, {"euler-step", {{"mode", "bogus"}}}}), ConfigError);
}

TEST_CASE("malformed config leaves no artifacts") {
    auto d = fresh_dir("malformed");
    auto r = run({{"experiment", "exponents"}, {"exponents", {{"dimensions", "x"}}}}, d);
    CHECK(r.exit_code == exit_config);
    CHECK(r.message.find("/exponents/dimensions") != std::string::npos);
    CHECK_FALSE(fs::exists(d));
}

TEST_CASE("exponents run, manifest, determinism and corruption") {
    auto d = fresh_dir("exponents");
    auto r = run({{"experiment", "exponents"}}, d);
    REQUIRE(r.exit_code == exit_ok);
    auto rows = r.summary["rows"];
    CHECK(rows[0]["theta"] == "1/3");
    CHECK(rows[1]["theta"] == "1/5");
    CHECK(rows[2]["theta"] == "1/7");
    auto m = json::parse(std::ifstream(d + "/manifest.json"));
    CHECK(m["code_version"] == code_version);
    CHECK(m["config"]["exponents"]["dimensions"].size() == 3);
    // every file except the manifest itself is listed
    std::size_t n = 0;
    for (const auto& e : fs::directory_iterator(d))
        if (e.path().filename() != "manifest.json") ++n;
    CHECK(m["files"].size() == n);

    auto rep = verify(d + "/manifest.json");
    CHECK(rep.pass);

    auto d2 = fresh_dir("exponents2");
    run({{"experiment", "exponents"}}, d2);
    for (const char* f : {"exponents.csv", "summary.json", "manifest.json"})
        CHECK(sha256_file(d + "/" + f) == sha256_file(d2 + "/" + f));

    // flip one character on the third line
    std::string csv;
    {
        std::ifstream f(d + "/exponents.csv", std::ios::binary);
        csv.assign(std::istreambuf_iterator<char>(f), {});
    }
    std::size_t l1 = csv.find('\n'), l2 = csv.find('\n', l1 + 1);
    csv[l2 + 3] = csv[l2 + 3] == 'x' ? 'y' : 'x';
    std::ofstream(d + "/exponents.csv", std::ios::binary) << csv;
    rep = verify(d + "/manifest.json");
    CHECK_FALSE(rep.pass);
    bool named = false;
    for (const auto& c : rep.checks)
        if (c.detail.find("byte offset " + std::to_string(l2 + 1)) != std::string::npos) named = true;
    CHECK(named);

    fs::remove(d + "/summary.json");
    rep = verify(d + "/manifest.json");
    CHECK_FALSE(rep.complete);
}

TEST_CASE("isometric circle smoke run writes an OBJ per stage") {
    auto d = fresh_dir("circle");
    auto r = run({{"experiment", "isometric"}, {"isometric", {{"M", 1024}, {"Q", 2}}}}, d);
    REQUIRE(r.exit_code == exit_ok);
    CHECK(fs::exists(d + "/stage_0.obj"));
    CHECK(fs::exists(d + "/stage_2.obj"));
    CHECK(fs::exists(d + "/stages.csv"));
    auto rep = verify(d + "/manifest.json");
    for (const auto& c : rep.checks) INFO(c.name << ": " << c.detail);
    CHECK(rep.pass);
    // polyline with M vertices
    std::ifstream f(d + "/stage_0.obj");
    std::string line;
    int v = 0;
    while (std::getline(f, line))
        if (line.rfind("v ", 0) == 0) ++v;
    CHECK(v == 1024);
}

TEST_CASE("export_mesh") {
    auto P = flat_square_preset(16);
    auto path = (fs::temp_directory_path() / "ciw_square.obj").string();
    auto note = export_mesh(P.u0, path);
    CHECK(note.find("coordinate 4") != std::string::npos);
    std::ifstream f(path);
    std::string line;
    int v = 0, faces = 0;
    while (std::getline(f, line)) {
        if (line.rfind("v ", 0) == 0) ++v;
        if (line.rfind("f ", 0) == 0) ++faces;
    }
    int M = P.u0.u.domain().res[0];
    CHECK(v == M * M);
    CHECK(faces == 2 * (M - 1) * (M - 1));

    auto flat = P.u0.u;
    for (auto& x : flat.values()) x = 1.0;
    CHECK_THROWS_AS(export_mesh(ImmersionState::from(flat), path), MeshError);

    auto d = GridDomain::torus(1, 8);
    auto five = GridField::vector(d, 5, Calculus::spectral);
    fill(five, [](const double* x, double* o) {
        for (int c = 0; c < 5; ++c) o[c] = std::cos(x[0] + c);
    });
    CHECK_THROWS_AS(export_mesh(ImmersionState::from(five), path), MeshError);
}
