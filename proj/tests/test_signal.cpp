#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numeric>

#include "citnet/features.hpp"
#include "citnet/synth.hpp"

namespace citnet {
namespace {

namespace fs = std::filesystem;

EegRecording make_sine_recording(double freq_hz, double duration_s,
                                 double rate, int n_channels = 1,
                                 double amp = 1.0) {
  EegRecording rec;
  rec.id = "sine";
  rec.sample_rate = rate;
  for (int c = 0; c < n_channels; ++c) {
    rec.channel_names.push_back("CH" + std::to_string(c));
  }
  const auto n = static_cast<int64_t>(std::llround(duration_s * rate));
  rec.samples.resize(static_cast<size_t>(n) * static_cast<size_t>(n_channels));
  for (int c = 0; c < n_channels; ++c) {
    for (int64_t t = 0; t < n; ++t) {
      rec.samples[static_cast<size_t>(c * n + t)] = static_cast<float>(
          amp * std::sin(2.0 * M_PI * freq_hz * static_cast<double>(t) / rate));
    }
  }
  return rec;
}

// Direct DFT periodogram over the whole window: an implementation-
// independent reference for which band carries the power.
std::vector<double> dft_band_means(std::span<const float> x, double rate,
                                   const std::vector<BandSpec>& bands) {
  const size_t n = x.size();
  std::vector<double> power(n / 2 + 1, 0.0);
  for (size_t k = 0; k <= n / 2; ++k) {
    double re = 0, im = 0;
    for (size_t t = 0; t < n; ++t) {
      const double ang = -2.0 * M_PI * static_cast<double>(k * t) / static_cast<double>(n);
      re += x[t] * std::cos(ang);
      im += x[t] * std::sin(ang);
    }
    power[k] = re * re + im * im;
  }
  const double df = rate / static_cast<double>(n);
  std::vector<double> means(bands.size(), 0.0);
  for (size_t b = 0; b < bands.size(); ++b) {
    double acc = 0;
    size_t count = 0;
    for (size_t k = 0; k < power.size(); ++k) {
      const double f = static_cast<double>(k) * df;
      if (f >= bands[b].lo_hz && f < bands[b].hi_hz) {
        acc += power[k];
        ++count;
      }
    }
    means[b] = count ? acc / static_cast<double>(count) : 0.0;
  }
  return means;
}

TEST(Segmentation, SpecExamples) {
  EegRecording rec = make_sine_recording(5.0, 60.0, 200.0);
  auto segs = segment(rec, 4.0);
  ASSERT_EQ(segs.size(), 15u);
  for (const auto& s : segs) EXPECT_EQ(s.length_samples, 800);

  EegRecording short_rec = make_sine_recording(5.0, 9.9, 200.0);
  EXPECT_EQ(segment(short_rec, 4.0).size(), 2u);

  EegRecording tiny = make_sine_recording(5.0, 3.0, 200.0);
  EXPECT_TRUE(segment(tiny, 4.0).empty());

  EXPECT_THROW(segment(rec, 0.0), std::invalid_argument);
  EXPECT_THROW(segment(rec, -1.0), std::invalid_argument);
}

TEST(Segmentation, PartitionReproducesPrefix) {
  EegRecording rec = make_sine_recording(3.0, 9.9, 200.0, 2);
  auto segs = segment(rec, 4.0);
  ASSERT_EQ(segs.size(), 2u);
  for (int64_t c = 0; c < 2; ++c) {
    int64_t offset = 0;
    for (const auto& s : segs) {
      auto win = s.channel(c);
      for (int64_t i = 0; i < s.length_samples; ++i) {
        EXPECT_EQ(win[static_cast<size_t>(i)],
                  rec.channel(c)[static_cast<size_t>(offset + i)]);
      }
      offset += s.length_samples;
    }
    EXPECT_EQ(offset, 1600);
  }
}

TEST(Segmentation, SegmentsCarryRecordingLabel) {
  EegRecording rec = make_sine_recording(5.0, 8.0, 200.0);
  rec.label = 2;
  for (const auto& s : segment(rec, 4.0)) EXPECT_EQ(s.label, 2);
}

TEST(BandPsd, AlphaSineConcentratesInAlpha) {
  EegRecording rec = make_sine_recording(10.0, 4.0, 200.0);
  auto segs = segment(rec, 4.0);
  ASSERT_EQ(segs.size(), 1u);
  const auto bands = default_bands();
  BandPowerMatrix m = band_psd(segs[0], bands);
  double total = 0;
  for (int64_t b = 0; b < m.n_bands; ++b) {
    EXPECT_GE(m.at(0, b), 0.0);
    total += m.at(0, b);
  }
  ASSERT_GT(total, 0.0);
  EXPECT_GE(m.at(0, 2) / total, 0.9);  // alpha is index 2

  // Independent DFT periodogram agrees on the dominant band and ratio.
  auto oracle = dft_band_means(segs[0].channel(0), 200.0, bands);
  const double oracle_total = std::accumulate(oracle.begin(), oracle.end(), 0.0);
  EXPECT_GE(oracle[2] / oracle_total, 0.9);
}

TEST(BandPsd, DeltaSineMakesDeltaStrictlyLargest) {
  EegRecording rec = make_sine_recording(2.0, 4.0, 200.0);
  auto segs = segment(rec, 4.0);
  const auto bands = default_bands();
  BandPowerMatrix m = band_psd(segs[0], bands);
  for (int64_t b = 1; b < m.n_bands; ++b) EXPECT_GT(m.at(0, 0), m.at(0, b));

  auto oracle = dft_band_means(segs[0].channel(0), 200.0, bands);
  for (size_t b = 1; b < oracle.size(); ++b) EXPECT_GT(oracle[0], oracle[b]);
}

TEST(BandPsd, ZeroAndConstantSignals) {
  EegRecording rec = make_sine_recording(10.0, 4.0, 200.0, 1, 0.0);
  auto segs = segment(rec, 4.0);
  BandPowerMatrix zero = band_psd(segs[0], default_bands());
  for (int64_t b = 0; b < zero.n_bands; ++b) EXPECT_EQ(zero.at(0, b), 0.0);

  EegRecording cst = rec;
  for (auto& v : cst.samples) v = 7.5f;
  auto csegs = segment(cst, 4.0);
  BandPowerMatrix m = band_psd(csegs[0], default_bands());
  for (int64_t b = 0; b < m.n_bands; ++b) EXPECT_NEAR(m.at(0, b), 0.0, 1e-12);
}

TEST(BandPsd, BandAboveNyquistIsConfigError) {
  EegRecording rec = make_sine_recording(10.0, 4.0, 60.0);
  auto segs = segment(rec, 4.0);
  EXPECT_THROW(band_psd(segs[0], default_bands()), std::invalid_argument);
}

TEST(BandPsd, SegmentShorterThanWelchWindowIsError) {
  EegRecording rec = make_sine_recording(10.0, 4.0, 200.0);
  EegSegment seg{&rec, 0, 100, -1};  // half a welch window
  EXPECT_THROW(band_psd(seg, default_bands()), std::invalid_argument);
}

TEST(Welch, ParsevalOnWhiteNoise) {
  Rng rng(1234);
  std::vector<float> noise(6000);
  double mean = 0;
  for (auto& v : noise) {
    v = static_cast<float>(rng.normal());
    mean += v;
  }
  mean /= static_cast<double>(noise.size());
  double var = 0;
  for (auto v : noise) var += (v - mean) * (v - mean);
  var /= static_cast<double>(noise.size());

  PsdEstimate est = welch_psd(std::span<const float>(noise), 200.0);
  EXPECT_NEAR(est.total_power() / var, 1.0, 0.1);
}

TEST(Welch, OverlapAndWindowValidation) {
  std::vector<float> x(400, 0.0f);
  EXPECT_THROW(welch_psd(std::span<const float>(x), 200.0, {1.0, 1.0}),
               std::invalid_argument);
  EXPECT_THROW(welch_psd(std::span<const float>(x), 0.0), std::invalid_argument);
  EXPECT_THROW(welch_psd(std::span<const float>(x), 200.0, {3.0, 0.5}),
               std::invalid_argument);
}

TEST(Layout, DefaultHas62ElectrodesNoCollisions) {
  ElectrodeLayout layout = default_layout();
  EXPECT_EQ(layout.height, 32);
  EXPECT_EQ(layout.width, 32);
  EXPECT_EQ(layout.cells.size(), 62u);
  for (const auto& name : {"FP1", "CZ", "CB2", "POZ", "T7"}) {
    EXPECT_TRUE(layout.contains(name)) << name;
  }
}

TEST(Layout, CollisionAndBoundsAreLoadErrors) {
  {
    std::stringstream ss("grid 8 8\nA 1 1\nB 1 1\n");
    EXPECT_THROW(parse_layout(ss), std::runtime_error);
  }
  {
    std::stringstream ss("grid 8 8\nA 8 0\n");
    EXPECT_THROW(parse_layout(ss), std::runtime_error);
  }
  {
    std::stringstream ss("A 0 0\n");
    EXPECT_THROW(parse_layout(ss), std::runtime_error);
  }
  {
    std::stringstream ss("grid 8 8\nA 1 1\nA 2 2\n");
    EXPECT_THROW(parse_layout(ss), std::runtime_error);
  }
}

TEST(SpatialMap, SinglePlacementAndZeroElsewhere) {
  std::stringstream ss("grid 8 8\nE1 3 7\n");
  ElectrodeLayout layout = parse_layout(ss);
  BandPowerMatrix m;
  m.n_channels = 1;
  m.n_bands = 5;
  m.values = {0, 0, 2.5, 0, 0};  // alpha only
  SpatialFrequencyGrid grid = spatial_map(m, {"E1"}, layout, 1);
  EXPECT_EQ(grid.label, 1);
  for (int64_t b = 0; b < 5; ++b) {
    for (int64_t r = 0; r < 8; ++r) {
      for (int64_t c = 0; c < 8; ++c) {
        const float expect = (b == 2 && r == 3 && c == 7) ? 2.5f : 0.0f;
        EXPECT_EQ(grid.at(b, r, c), expect);
      }
    }
  }
}

TEST(SpatialMap, NonzeroCountMatchesShippedLayout) {
  ElectrodeLayout layout = default_layout();
  std::vector<std::string> names = layout.order;
  Rng rng(5);
  BandPowerMatrix m;
  m.n_channels = static_cast<int64_t>(names.size());
  m.n_bands = 5;
  m.values.resize(static_cast<size_t>(m.n_channels * m.n_bands));
  for (auto& v : m.values) v = 0.1 + rng.uniform();  // strictly positive
  SpatialFrequencyGrid grid = spatial_map(m, names, layout);
  for (int64_t b = 0; b < 5; ++b) {
    int64_t nonzero = 0;
    for (int64_t r = 0; r < grid.height; ++r) {
      for (int64_t c = 0; c < grid.width; ++c) {
        if (grid.at(b, r, c) != 0.0f) ++nonzero;
      }
    }
    EXPECT_EQ(nonzero, 62);
  }
}

TEST(SpatialMap, UnknownElectrodeNamesTheOffender) {
  std::stringstream ss("grid 8 8\nE1 1 1\n");
  ElectrodeLayout layout = parse_layout(ss);
  BandPowerMatrix m;
  m.n_channels = 1;
  m.n_bands = 1;
  m.values = {1.0};
  try {
    spatial_map(m, {"MYSTERY"}, layout);
    FAIL() << "expected an error";
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("MYSTERY"), std::string::npos);
  }
}

TEST(BandOrdering, CanonicalOrderIsStable) {
  const auto bands = default_bands();
  ASSERT_EQ(bands.size(), 5u);
  EXPECT_EQ(bands[0].name, "delta");
  EXPECT_EQ(bands[1].name, "theta");
  EXPECT_EQ(bands[2].name, "alpha");
  EXPECT_EQ(bands[3].name, "beta");
  EXPECT_EQ(bands[4].name, "gamma");
  for (size_t i = 1; i < bands.size(); ++i) {
    EXPECT_GE(bands[i].lo_hz, bands[i - 1].hi_hz);
  }
}

TEST(BuildRepresentation, SixtySecondsGivesFifteenDefaultGrids) {
  ElectrodeLayout layout = default_layout();
  SynthSpec spec = default_synth_spec(3);
  EegRecording rec =
      synth_eeg(spec, 0, layout.order, default_bands(), 7, 60.0, 200.0);
  auto grids = build_representation(rec, layout);
  ASSERT_EQ(grids.size(), 15u);
  for (const auto& g : grids) {
    EXPECT_EQ(g.n_bands, 5);
    EXPECT_EQ(g.height, 32);
    EXPECT_EQ(g.width, 32);
    for (float v : g.data) {
      EXPECT_TRUE(std::isfinite(v));
      EXPECT_GE(v, 0.0f);
    }
  }
}

TEST(BuildRepresentation, EmptyRecordingGivesEmptyList) {
  EegRecording rec;
  rec.id = "empty";
  rec.sample_rate = 200.0;
  rec.channel_names = {"CZ"};
  EXPECT_TRUE(build_representation(rec, default_layout()).empty());
}

TEST(BuildRepresentation, UnmappedChannelNamesChannelAndSegment) {
  EegRecording rec = make_sine_recording(10.0, 4.0, 200.0);  // channel CH0
  try {
    build_representation(rec, default_layout());
    FAIL() << "expected an error";
  } catch (const std::runtime_error& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("CH0"), std::string::npos);
    EXPECT_NE(msg.find("segment 0"), std::string::npos);
  }
}

TEST(Synth, ClassProfileShowsUpInBandPowers) {
  ElectrodeLayout layout = default_layout();
  SynthSpec spec = default_synth_spec(3);
  // class 0: alpha-dominant posterior
  EegRecording rec =
      synth_eeg(spec, 0, layout.order, default_bands(), 11, 4.0, 200.0);
  auto segs = segment(rec, 4.0);
  BandPowerMatrix m = band_psd(segs[0], default_bands());
  // On posterior electrodes, alpha must dominate.
  for (size_t e = 0; e < layout.order.size(); ++e) {
    const std::string& name = layout.order[e];
    if (name.rfind("O", 0) == 0 || name.rfind("PO", 0) == 0) {
      for (int64_t b = 0; b < 5; ++b) {
        if (b == 2) continue;
        EXPECT_GT(m.at(static_cast<int64_t>(e), 2),
                  m.at(static_cast<int64_t>(e), b))
            << name;
      }
    }
  }
}

TEST(Synth, NoiselessSingleBandIsGenuineSinusoid) {
  SynthSpec spec;
  spec.baseline_amp = 0.0;
  spec.noise_level = 0.0;
  spec.classes = {{"pure", {{"alpha", "*", 1.0}}}};
  std::vector<BandSpec> one_band = {{"alpha", 8.0, 12.0}};  // center 10 Hz
  EegRecording rec = synth_eeg(spec, 0, {"CZ"}, one_band, 3, 1.0, 200.0);
  auto x = rec.channel(0);
  // Fit the phase from two samples, then the rest must follow.
  // x0 = sin(p), x1 = sin(w+p) => cos(p) = (x1 - x0 cos w)/sin w.
  const double w = 2.0 * M_PI * 10.0 / 200.0;
  const double phase =
      std::atan2(x[0] * std::sin(w), x[1] - x[0] * std::cos(w));
  for (int64_t t = 0; t < rec.n_samples(); ++t) {
    EXPECT_NEAR(x[static_cast<size_t>(t)],
                std::sin(w * static_cast<double>(t) + phase), 1e-5);
  }
}

TEST(Synth, SameSeedGivesBitIdenticalRecordings) {
  SynthSpec spec = default_synth_spec(3);
  ElectrodeLayout layout = default_layout();
  EegRecording a =
      synth_eeg(spec, 1, layout.order, default_bands(), 99, 8.0, 200.0);
  EegRecording b =
      synth_eeg(spec, 1, layout.order, default_bands(), 99, 8.0, 200.0);
  ASSERT_EQ(a.samples.size(), b.samples.size());
  EXPECT_EQ(std::memcmp(a.samples.data(), b.samples.data(),
                        a.samples.size() * sizeof(float)),
            0);
  EegRecording c =
      synth_eeg(spec, 1, layout.order, default_bands(), 100, 8.0, 200.0);
  EXPECT_NE(std::memcmp(a.samples.data(), c.samples.data(),
                        a.samples.size() * sizeof(float)),
            0);
}

TEST(Synth, EmptyProfileAndBadClassAreErrors) {
  SynthSpec empty;
  empty.classes.clear();
  EXPECT_THROW(synth_eeg(empty, 0, {"CZ"}, default_bands(), 1, 1.0, 200.0),
               std::invalid_argument);
  SynthSpec spec = default_synth_spec(3);
  EXPECT_THROW(synth_eeg(spec, 5, {"CZ"}, default_bands(), 1, 1.0, 200.0),
               std::invalid_argument);
}

TEST(SynthSpecFile, ParseRoundTrip) {
  std::stringstream ss(R"(# test spec
noise 0.1
baseline 0.05
class calm
  alpha P,O 1.5
class tense
  beta F 2.0
  gamma * 0.5
)");
  SynthSpec spec = parse_synth_spec(ss);
  EXPECT_DOUBLE_EQ(spec.noise_level, 0.1);
  EXPECT_DOUBLE_EQ(spec.baseline_amp, 0.05);
  ASSERT_EQ(spec.classes.size(), 2u);
  EXPECT_EQ(spec.classes[0].name, "calm");
  ASSERT_EQ(spec.classes[1].entries.size(), 2u);
  EXPECT_EQ(spec.classes[1].entries[0].band, "beta");

  EXPECT_DOUBLE_EQ(synth_amplitude(spec, spec.classes[0], "PZ", "alpha"), 1.55);
  EXPECT_DOUBLE_EQ(synth_amplitude(spec, spec.classes[0], "FZ", "alpha"), 0.05);

  std::stringstream bad("alpha P 1.0\n");
  EXPECT_THROW(parse_synth_spec(bad), std::runtime_error);
}

TEST(EegbFormat, RoundTripIsBitExact) {
  const fs::path path = fs::temp_directory_path() / "citnet_test.eegb";
  EegRecording rec = make_sine_recording(9.0, 2.5, 256.0, 3);
  write_eegb(rec, path);
  EegRecording back = read_eegb(path);
  EXPECT_EQ(back.channel_names, rec.channel_names);
  EXPECT_EQ(back.sample_rate, rec.sample_rate);
  ASSERT_EQ(back.samples.size(), rec.samples.size());
  EXPECT_EQ(std::memcmp(back.samples.data(), rec.samples.data(),
                        rec.samples.size() * sizeof(float)),
            0);
  fs::remove(path);
}

TEST(EegbFormat, BadMagicIsError) {
  const fs::path path = fs::temp_directory_path() / "citnet_bad.eegb";
  std::ofstream(path) << "NOPEnope";
  EXPECT_THROW(read_eegb(path), std::runtime_error);
  fs::remove(path);
}

TEST(EegCsv, ReadAndRejectRaggedRows) {
  const fs::path path = fs::temp_directory_path() / "citnet_test.csv";
  std::ofstream(path) << "A,B\n1.0,2.0\n3.0,4.0\n";
  EegRecording rec = read_eeg_csv(path, 100.0);
  EXPECT_EQ(rec.n_channels(), 2);
  EXPECT_EQ(rec.n_samples(), 2);
  EXPECT_FLOAT_EQ(rec.channel(0)[1], 3.0f);  // channel-major after transpose
  EXPECT_FLOAT_EQ(rec.channel(1)[0], 2.0f);

  std::ofstream(path) << "A,B\n1.0\n";
  EXPECT_THROW(read_eeg_csv(path, 100.0), std::runtime_error);
  fs::remove(path);
}

TEST(LabelsCsv, RoundTrip) {
  const fs::path path = fs::temp_directory_path() / "citnet_labels.csv";
  std::map<std::string, int32_t> labels = {{"rec_a", 0}, {"rec_b", 2}};
  write_labels_csv(labels, path);
  EXPECT_EQ(read_labels_csv(path), labels);
  fs::remove(path);
}

TEST(GridFiles, RoundTripAndDatasetIndex) {
  const fs::path dir = fs::temp_directory_path() / "citnet_grids";
  fs::remove_all(dir);
  SpatialFrequencyGrid g;
  g.n_bands = 2;
  g.height = 3;
  g.width = 3;
  g.label = 1;
  g.data.assign(18, 0.0f);
  g.at(1, 2, 2) = 4.5f;

  std::vector<SpatialFrequencyGrid> grids = {g, g};
  std::vector<GridIndexEntry> index = {{"g0.sfg", 1, "rec", 0},
                                       {"g1.sfg", 1, "rec", 1}};
  write_dataset(grids, index, dir);
  auto back = read_dataset(dir);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].label, 1);
  EXPECT_EQ(back[1].at(1, 2, 2), 4.5f);
  fs::remove_all(dir);
}

TEST(BandNorm, StatsComeFromGivenIndicesOnly) {
  SpatialFrequencyGrid a;
  a.n_bands = 1;
  a.height = 1;
  a.width = 2;
  a.label = 0;
  a.data = {1.0f, 1.0f};
  SpatialFrequencyGrid b = a;
  b.data = {100.0f, 100.0f};
  BandNormStats stats = compute_band_norm({a, b}, {0});
  EXPECT_NEAR(stats.mean[0], std::log1p(1.0), 1e-6);
  EXPECT_NEAR(stats.stdev[0], 1e-6, 1e-9);  // zero variance floors
}

}  // namespace
}  // namespace citnet
