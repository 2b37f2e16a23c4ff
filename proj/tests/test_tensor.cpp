#include <doctest.h>

#include <filesystem>
#include <sstream>

#include "patchspn/rng.hpp"
#include "patchspn/tensor.hpp"
#include "patchspn/tensor_io.hpp"

using namespace patchspn;

TEST_SUITE_BEGIN("tensor");

TEST_CASE("shape bookkeeping and reshape") {
    Tensor t({2, 3, 4}, 1.5);
    CHECK(t.size() == 24);
    CHECK(t.rank() == 3);
    CHECK(t.all_finite());
    const Tensor r = t.reshaped({6, 4});
    CHECK(r.dim(0) == 6);
    CHECK_THROWS_AS(t.reshaped({5, 5}), ShapeError);
    CHECK_THROWS_AS(Tensor({2, 0, 3}), ShapeError);
    CHECK_THROWS_AS(Tensor::from_data({2, 2}, {1.0, 2.0, 3.0}), ShapeError);
}

TEST_CASE("f32 stream round-trip preserves header and float32 payload") {
    Rng rng(11);
    Tensor t({3, 5});
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-10.0, 10.0);

    std::stringstream ss;
    write_tensor(ss, t, DType::f32);
    const std::string bytes = ss.str();
    // magic, version, dtype, rank, reserved
    CHECK(bytes.substr(0, 4) == "AETN");
    CHECK(bytes[4] == 0x01);
    CHECK(bytes[5] == 0x01);
    CHECK(bytes[6] == 0x02);
    CHECK(bytes[7] == 0x00);
    // dims little-endian
    CHECK(static_cast<unsigned char>(bytes[8]) == 3);
    CHECK(static_cast<unsigned char>(bytes[12]) == 5);
    CHECK(bytes.size() == 8 + 2 * 4 + t.size() * 4);

    std::stringstream in(bytes);
    const Tensor back = read_tensor(in);
    REQUIRE(back.same_shape(t));
    for (std::size_t i = 0; i < t.size(); ++i) {
        CHECK(back[i] == doctest::Approx(static_cast<double>(static_cast<float>(t[i]))).epsilon(0));
    }
}

TEST_CASE("f64 records round-trip losslessly with names") {
    Rng rng(12);
    Tensor t({4, 2, 2});
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.normal();
    std::stringstream ss;
    write_named_tensor(ss, "weights", t, DType::f64);
    auto [name, back] = read_named_tensor(ss);
    CHECK(name == "weights");
    REQUIRE(back.same_shape(t));
    for (std::size_t i = 0; i < t.size(); ++i) CHECK(back[i] == t[i]);
}

TEST_CASE("file round-trip and error paths") {
    const auto dir = std::filesystem::temp_directory_path() / "patchspn_tensor_test";
    std::filesystem::create_directories(dir);
    Tensor t({2, 2});
    t[0] = 1.0;
    t[3] = -2.0;
    save_tensor(dir / "t.aetn", t, DType::f64);
    const Tensor back = load_tensor(dir / "t.aetn");
    CHECK(back[0] == 1.0);
    CHECK(back[3] == -2.0);
    CHECK_THROWS_AS(load_tensor(dir / "missing.aetn"), IoError);

    std::ofstream bad(dir / "bad.aetn", std::ios::binary);
    bad << "NOPE";
    bad.close();
    CHECK_THROWS_AS(load_tensor(dir / "bad.aetn"), IoError);
    std::filesystem::remove_all(dir);
}

TEST_CASE("rng streams are deterministic and portable") {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
    Rng c(43);
    CHECK(a.next_u64() != c.next_u64());
    CHECK(derive_seed(1, 2) != derive_seed(1, 3));
    CHECK(derive_seed(1, 2) == derive_seed(1, 2));
}

TEST_SUITE_END();
