#include <string>

#include "doctest.h"
#include "magskin/errors.hpp"
#include "magskin/skin_config.hpp"

using namespace magskin;

TEST_CASE("default config validates") { CHECK_NOTHROW(validate(SkinConfig{})); }

TEST_CASE("default sensor grid is centred with 25 mm margins") {
    SkinConfig c;
    const auto sensors = sensor_positions(c);
    REQUIRE(sensors.size() == 16);
    // 4 sensors at 30 mm pitch span 90 mm inside 140 mm: margin 25 mm.
    CHECK(sensors.front().x == doctest::Approx(25.0).epsilon(1e-12));
    CHECK(sensors.front().y == doctest::Approx(25.0).epsilon(1e-12));
    CHECK(sensors.back().x == doctest::Approx(115.0).epsilon(1e-12));
    CHECK(sensors.back().y == doctest::Approx(115.0).epsilon(1e-12));
    for (const auto& s : sensors) CHECK(s.z == doctest::Approx(-10.0).epsilon(1e-12));
}

TEST_CASE("sensor index is row-major in y then x") {
    SkinConfig c;
    const auto sensors = sensor_positions(c);
    // s = iy * count_x + ix: s=1 advances x, s=4 advances y.
    CHECK(sensors[1].x == doctest::Approx(55.0).epsilon(1e-12));
    CHECK(sensors[1].y == doctest::Approx(25.0).epsilon(1e-12));
    CHECK(sensors[4].x == doctest::Approx(25.0).epsilon(1e-12));
    CHECK(sensors[4].y == doctest::Approx(55.0).epsilon(1e-12));
}

TEST_CASE("default magnet grid is 7x7 at rest height zero") {
    SkinConfig c;
    const auto magnets = magnet_rest_positions(c);
    REQUIRE(magnets.size() == 49);
    // 7 magnets at 20 mm pitch span 120 mm inside 140 mm: margin 10 mm.
    CHECK(magnets.front().x == doctest::Approx(10.0).epsilon(1e-12));
    CHECK(magnets.back().x == doctest::Approx(130.0).epsilon(1e-12));
    for (const auto& m : magnets) CHECK(m.z == 0.0);
}

TEST_CASE("explicit origin offset overrides centring") {
    SkinConfig c;
    c.magnet_grid.origin_offset_mm = 5.0;
    const auto magnets = magnet_rest_positions(c);
    CHECK(magnets.front().x == doctest::Approx(5.0).epsilon(1e-12));
    CHECK(magnets.front().y == doctest::Approx(5.0).epsilon(1e-12));
}

TEST_CASE("validate rejects bad values and lists every problem") {
    SkinConfig c;
    c.kernel_sigma_mm = 0.0;
    c.noise_sigma_uT = -1.0;
    try {
        validate(c);
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        const std::string what = e.what();
        CHECK(what.find("kernel sigma") != std::string::npos);
        CHECK(what.find("noise sigma") != std::string::npos);
    }
}

TEST_CASE("validate rejects grids leaking outside the area") {
    SkinConfig c;
    c.sensor_grid.pitch_mm = 60.0; // 4 sensors span 180 mm > 140 mm
    CHECK_THROWS_AS(validate(c), ConfigError);

    SkinConfig d;
    d.magnet_grid.origin_offset_mm = -1.0;
    CHECK_THROWS_AS(validate(d), ConfigError);
}

TEST_CASE("validate rejects standoff below the dipole validity radius") {
    SkinConfig c;
    c.sensor_standoff_mm = 0.5; // r_min is 1.0
    CHECK_THROWS_AS(validate(c), ConfigError);
}

TEST_CASE("canonical serialization is stable and resolves auto origins") {
    SkinConfig a;
    SkinConfig b;
    b.sensor_grid.origin_offset_mm = 25.0; // same placement as auto-centring
    CHECK(serialize_canonical(a) == serialize_canonical(b));

    SkinConfig c;
    c.noise_sigma_uT = 0.25;
    CHECK(serialize_canonical(a) != serialize_canonical(c));
}

TEST_CASE("fnv1a64 matches published test vectors") {
    // Reference values for the 64-bit FNV-1a parameters.
    CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
    CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
    CHECK(fnv1a64("foobar") == 0x85944171f73967e8ULL);
}

TEST_CASE("to_hex16 zero-pads to 16 digits") {
    CHECK(to_hex16(0) == "0000000000000000");
    CHECK(to_hex16(0x1a2b3c4d5e6f7081ULL) == "1a2b3c4d5e6f7081");
    CHECK(to_hex16(255) == "00000000000000ff");
}
