#include <gtest/gtest.h>

#include <fstream>
#include <random>

#include "mmgan/cache.hpp"
#include "mmgan/scenario.hpp"
#include "mmgan/dataset.hpp"
#include "test_util.hpp"

using namespace mmgan;

namespace {

CachedPatient sample_patient(const std::string& id = "case_01") {
  CachedPatient p;
  auto& s = p.slices;
  s.count = 3;
  s.channels = 4;
  s.height = 8;
  s.width = 8;
  s.data.resize(s.count * s.slice_stride());
  std::mt19937 rng(3);
  std::normal_distribution<float> n(0.0f, 2.0f);
  for (auto& v : s.data) v = n(rng);
  s.patient_ids.assign(3, id);
  s.slice_indices = {4, 5, 6};
  p.meta.patient_id = id;
  p.meta.channel_order = default_channel_names();
  p.meta.divisors = {1.5, 2.5, 3.5, 4.5};
  p.meta.preprocessing.box = {{4, 1, 2}, {6, 30, 40}};
  p.meta.preprocessing.height = 8;
  p.meta.preprocessing.width = 8;
  p.meta.source_shape = {10, 32, 48};
  p.meta.spacing = {2.0, 1.0, 1.0};
  return p;
}

std::string read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void write_bytes(const std::filesystem::path& p, const std::string& b) {
  std::ofstream(p, std::ios::binary | std::ios::trunc).write(b.data(), static_cast<std::streamsize>(b.size()));
}

}  // namespace

TEST(Cache, RoundTripIsBitwise) {
  TempDir dir;
  const auto p = sample_patient();
  write_cache(dir.path(), p.slices, p.meta);
  const auto back = read_cache(dir.path(), "case_01", default_channel_names());
  EXPECT_EQ(back.slices.data, p.slices.data);
  EXPECT_EQ(back.slices.count, 3u);
  EXPECT_EQ(back.slices.slice_indices, p.slices.slice_indices);
  EXPECT_EQ(back.slices.patient_ids, p.slices.patient_ids);
  EXPECT_EQ(back.meta.divisors, p.meta.divisors);
  EXPECT_EQ(back.meta.preprocessing, p.meta.preprocessing);
  EXPECT_EQ(back.meta.source_shape, p.meta.source_shape);
  EXPECT_EQ(back.meta.spacing, p.meta.spacing);
  EXPECT_EQ(list_cached_patients(dir.path()), (std::vector<std::string>{"case_01"}));
}

TEST(Cache, ChannelOrderMismatchIsCorrupt) {
  TempDir dir;
  const auto p = sample_patient();
  write_cache(dir.path(), p.slices, p.meta);
  EXPECT_THROW(read_cache(dir.path(), "case_01", {"T1", "T2", "DWI", "T2flair"}), CorruptCache);
  EXPECT_THROW(read_cache(dir.path(), "case_01", {"T2", "T1", "T1c", "T2flair"}), CorruptCache);
}

TEST(Cache, TruncatedPayloadIsCorrupt) {
  TempDir dir;
  const auto p = sample_patient();
  write_cache(dir.path(), p.slices, p.meta);
  const auto bin = cache_array_path(dir.path(), "case_01");
  const auto bytes = read_bytes(bin);
  write_bytes(bin, bytes.substr(0, bytes.size() - 7));
  EXPECT_THROW(read_cache(dir.path(), "case_01", default_channel_names()), CorruptCache);
  write_bytes(bin, bytes.substr(0, 10));
  EXPECT_THROW(read_cache(dir.path(), "case_01", default_channel_names()), CorruptCache);
  write_bytes(bin, bytes + "x");
  EXPECT_THROW(read_cache(dir.path(), "case_01", default_channel_names()), CorruptCache);
}

TEST(Cache, FlippedPayloadByteFailsChecksum) {
  TempDir dir;
  const auto p = sample_patient();
  write_cache(dir.path(), p.slices, p.meta);
  const auto bin = cache_array_path(dir.path(), "case_01");
  auto bytes = read_bytes(bin);
  bytes[bytes.size() - 3] ^= 0x10;
  write_bytes(bin, bytes);
  EXPECT_THROW(read_cache(dir.path(), "case_01", default_channel_names()), CorruptCache);
}

TEST(Cache, BadMagicAndSchemaAreCorrupt) {
  TempDir dir;
  const auto p = sample_patient();
  write_cache(dir.path(), p.slices, p.meta);
  const auto bin = cache_array_path(dir.path(), "case_01");
  auto bytes = read_bytes(bin);
  bytes[0] = 'X';
  write_bytes(bin, bytes);
  EXPECT_THROW(read_cache(dir.path(), "case_01", default_channel_names()), CorruptCache);

  write_cache(dir.path(), p.slices, p.meta);
  const auto side = cache_sidecar_path(dir.path(), "case_01");
  auto j = nlohmann::json::parse(read_bytes(side));
  j["schema_version"] = 99;
  write_bytes(side, j.dump());
  EXPECT_THROW(read_cache(dir.path(), "case_01", default_channel_names()), CorruptCache);
  write_bytes(side, "{ not json");
  EXPECT_THROW(read_cache(dir.path(), "case_01", default_channel_names()), CorruptCache);
}

TEST(Cache, MissingFilesAreReported) {
  TempDir dir;
  EXPECT_THROW(read_cache(dir.path(), "ghost", default_channel_names()), IoError);
}

TEST(Cache, WritesLeaveNoTemporaries) {
  TempDir dir;
  const auto p = sample_patient();
  write_cache(dir.path(), p.slices, p.meta);
  for (const auto& e : std::filesystem::directory_iterator(dir.path())) {
    EXPECT_NE(e.path().extension(), ".tmp") << e.path();
  }
}

TEST(Cache, PreparedDatasetRoundTrip) {
  TempDir dir;
  PreparedDataset d;
  d.channels = default_channel_names();
  for (const char* id : {"a", "b"}) d.patients.push_back(sample_patient(id));
  d.params = d.patients[0].meta.preprocessing;
  write_prepared(dir.path(), d);
  const auto back = read_prepared(dir.path(), d.channels);
  ASSERT_EQ(back.patients.size(), 2u);
  EXPECT_EQ(back.params, d.params);
  EXPECT_EQ(back.patients[1].slices.data, d.patients[1].slices.data);
  const auto both = back.gather({0, 1});
  EXPECT_EQ(both.count, 6u);
  EXPECT_EQ(both.patient_ids.back(), "b");
}
