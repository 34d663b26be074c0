//! Pulse-by-pulse Monte Carlo of the full experiment: twin-beam pair
//! generation, loss thinning, signal splitting, dark counts and click
//! tallying, with an optional synthetic time-tag stream.
//!
//! Pulses are partitioned into fixed 65536-pulse chunks; every chunk draws
//! from its own counter-based random stream derived from `(seed, chunk)`,
//! so results are bit-identical regardless of scheduling or worker count.
//! Timestamp jitter uses a second stream per chunk, which keeps the click
//! tallies independent of whether tags are emitted.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::analytic_oracle::ExperimentModel;
use crate::error::{Error, Result};
use crate::photon_statistics::GeometricSampler;
use crate::tagstream::{channel, TimeTag};

/// Fixed chunk size of the partitioned pulse loop.
pub const CHUNK_PULSES: u64 = 65536;

/// Simulation run parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub model: ExperimentModel,
    pub pulses: u64,
    /// Pulse repetition rate in Hz.
    pub rep_rate_hz: f64,
    /// Detection gate length in seconds.
    pub gate_window_s: f64,
    pub seed: u64,
    pub emit_tags: bool,
}

impl SimConfig {
    pub fn new(model: ExperimentModel, pulses: u64, seed: u64) -> Self {
        Self {
            model,
            pulses,
            rep_rate_hz: 41e6,
            gate_window_s: 0.5e-9,
            seed,
            emit_tags: false,
        }
    }

    /// Integer pulse period on the picosecond clock.
    pub fn rep_period_ps(&self) -> u64 {
        (1e12 / self.rep_rate_hz).round() as u64
    }

    /// Integer gate length on the picosecond clock.
    pub fn gate_window_ps(&self) -> u64 {
        (self.gate_window_s * 1e12).round() as u64
    }

    pub fn validate(&self) -> Result<()> {
        if self.pulses < 1 {
            return Err(Error::InvalidSimConfig("pulses must be at least 1".into()));
        }
        if !(self.rep_rate_hz > 0.0) || !self.rep_rate_hz.is_finite() {
            return Err(Error::InvalidSimConfig(format!(
                "repetition rate {} Hz is not positive",
                self.rep_rate_hz
            )));
        }
        if !(self.gate_window_s > 0.0) || !self.gate_window_s.is_finite() {
            return Err(Error::InvalidSimConfig(format!(
                "gate window {} s is not positive",
                self.gate_window_s
            )));
        }
        if self.gate_window_s * self.rep_rate_hz >= 1.0 {
            return Err(Error::InvalidSimConfig(
                "gates overlap: gate_window × rep_rate must stay below 1".into(),
            ));
        }
        if self.gate_window_ps() < 2 {
            return Err(Error::InvalidSimConfig(
                "gate window must span at least 2 ps".into(),
            ));
        }
        Ok(())
    }
}

/// Integer event tallies of one run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CountRecord {
    pub pulses: u64,
    pub s_i: u64,
    pub s_s1: u64,
    pub s_s2: u64,
    /// Herald with a click on either signal bin.
    pub c_is: u64,
    pub c_is1: u64,
    pub c_is2: u64,
    pub c_s1s2: u64,
    pub c_is1s2: u64,
}

impl CountRecord {
    /// Pulses with a click on either signal bin (logical-OR singles).
    pub fn s_s_or(&self) -> u64 {
        self.s_s1 + self.s_s2 - self.c_s1s2
    }

    /// Merges two records, failing hard on tally overflow.
    pub fn checked_add(&self, other: &Self) -> Result<Self> {
        let add = |a: u64, b: u64| a.checked_add(b).ok_or(Error::TallyOverflow);
        Ok(Self {
            pulses: add(self.pulses, other.pulses)?,
            s_i: add(self.s_i, other.s_i)?,
            s_s1: add(self.s_s1, other.s_s1)?,
            s_s2: add(self.s_s2, other.s_s2)?,
            c_is: add(self.c_is, other.c_is)?,
            c_is1: add(self.c_is1, other.c_is1)?,
            c_is2: add(self.c_is2, other.c_is2)?,
            c_s1s2: add(self.c_s1s2, other.c_s1s2)?,
            c_is1s2: add(self.c_is1s2, other.c_is1s2)?,
        })
    }

    /// Checks the coincidence-subset inequalities.
    pub fn validate(&self) -> Result<()> {
        let checks: [(&str, bool); 7] = [
            ("s_i <= pulses", self.s_i <= self.pulses),
            ("c_is1 <= min(s_i, s_s1)", self.c_is1 <= self.s_i.min(self.s_s1)),
            ("c_is2 <= min(s_i, s_s2)", self.c_is2 <= self.s_i.min(self.s_s2)),
            (
                "c_s1s2 <= min(s_s1, s_s2)",
                self.c_s1s2 <= self.s_s1.min(self.s_s2),
            ),
            (
                "c_is1s2 <= min(c_is1, c_is2, c_s1s2)",
                self.c_is1s2 <= self.c_is1.min(self.c_is2).min(self.c_s1s2),
            ),
            ("c_is <= s_i", self.c_is <= self.s_i),
            ("c_is <= s_s1 + s_s2", self.c_is <= self.s_s1 + self.s_s2),
        ];
        for (what, ok) in checks {
            if !ok {
                return Err(Error::InconsistentRecord(what.into()));
            }
        }
        Ok(())
    }
}

struct ChunkOutput {
    record: CountRecord,
    tags: Vec<TimeTag>,
}

fn chunk_count(pulses: u64) -> u64 {
    pulses.div_ceil(CHUNK_PULSES)
}

/// Simulates one chunk of pulses on its private random streams.
fn simulate_chunk(config: &SimConfig, chunk: u64, emit: bool) -> ChunkOutput {
    let first = chunk * CHUNK_PULSES;
    let count = CHUNK_PULSES.min(config.pulses - first);
    let model = &config.model;

    let mut physics = ChaCha8Rng::seed_from_u64(config.seed);
    physics.set_stream(2 * chunk);
    let mut jitter = ChaCha8Rng::seed_from_u64(config.seed);
    jitter.set_stream(2 * chunk + 1);

    let sampler = GeometricSampler::new(model.source().per_mode_mean());
    let modes = model.source().mode_count();
    let eta_i = model.eta_idler();
    let eta_s = model.eta_signal();
    let eta_s1 = eta_s * model.signal_split();
    let nu_i = model.dark_prob_idler_bin();
    let nu_s = model.dark_prob_signal_bin();

    let period = config.rep_period_ps();
    let half_window = (config.gate_window_ps() / 2) as i64;

    let mut record = CountRecord {
        pulses: count,
        ..CountRecord::default()
    };
    let mut tags = Vec::new();
    if emit {
        tags.reserve(count as usize + 16);
    }
    let mut pulse_tags: Vec<TimeTag> = Vec::with_capacity(4);

    for p in 0..count {
        let mut i_click = false;
        let mut s1_click = false;
        let mut s2_click = false;
        for _ in 0..modes {
            let n = sampler.sample(&mut physics);
            for _ in 0..n {
                if physics.random::<f64>() < eta_i {
                    i_click = true;
                }
            }
            for _ in 0..n {
                let u: f64 = physics.random();
                if u < eta_s1 {
                    s1_click = true;
                } else if u < eta_s {
                    s2_click = true;
                }
            }
        }
        if nu_i > 0.0 {
            if physics.random::<f64>() < nu_i {
                i_click = true;
            }
            if physics.random::<f64>() < nu_s {
                s1_click = true;
            }
            if physics.random::<f64>() < nu_s {
                s2_click = true;
            }
        }

        record.s_i += u64::from(i_click);
        record.s_s1 += u64::from(s1_click);
        record.s_s2 += u64::from(s2_click);
        record.c_is1 += u64::from(i_click && s1_click);
        record.c_is2 += u64::from(i_click && s2_click);
        record.c_s1s2 += u64::from(s1_click && s2_click);
        record.c_is1s2 += u64::from(i_click && s1_click && s2_click);
        record.c_is += u64::from(i_click && (s1_click || s2_click));

        if emit {
            // gates start one period in so jittered clicks never precede t = 0
            let center = (first + p + 1) * period;
            pulse_tags.clear();
            pulse_tags.push(TimeTag {
                channel: channel::TRIGGER,
                timestamp_ps: center,
            });
            for (clicked, ch) in [
                (i_click, channel::IDLER),
                (s1_click, channel::SIGNAL_1),
                (s2_click, channel::SIGNAL_2),
            ] {
                if clicked {
                    let offset = jitter.random_range(-half_window..half_window);
                    pulse_tags.push(TimeTag {
                        channel: ch,
                        timestamp_ps: center.checked_add_signed(offset).expect("gated time"),
                    });
                }
            }
            pulse_tags.sort_by_key(|t| (t.timestamp_ps, t.channel));
            tags.extend_from_slice(&pulse_tags);
        }
    }

    ChunkOutput { record, tags }
}

fn merge_records<I: IntoIterator<Item = CountRecord>>(records: I) -> Result<CountRecord> {
    let mut total = CountRecord::default();
    for r in records {
        total = total.checked_add(&r)?;
    }
    Ok(total)
}

/// Runs the simulation over all pulses. With the `parallel` feature the
/// chunks are evaluated on the rayon pool; the result is identical to
/// [`run_simulation_serial`] either way.
pub fn run_simulation(config: &SimConfig) -> Result<CountRecord> {
    #[cfg(feature = "parallel")]
    {
        config.validate()?;
        let records: Vec<CountRecord> = (0..chunk_count(config.pulses))
            .into_par_iter()
            .map(|c| simulate_chunk(config, c, false).record)
            .collect();
        merge_records(records)
    }
    #[cfg(not(feature = "parallel"))]
    {
        run_simulation_serial(config)
    }
}

/// Single-threaded reference path over the same chunk layout.
pub fn run_simulation_serial(config: &SimConfig) -> Result<CountRecord> {
    config.validate()?;
    merge_records((0..chunk_count(config.pulses)).map(|c| simulate_chunk(config, c, false).record))
}

/// Result of a tag-emitting run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TagEmission {
    /// The same tallies [`run_simulation`] produces for this config.
    pub record: CountRecord,
    /// Number of tag records written, triggers included.
    pub tags_written: u64,
}

/// Runs the simulation and writes the time-tag stream to `sink`: one
/// `channel,timestamp_ps` line per record, sorted by timestamp, with one
/// trigger record per pulse and clicks uniformly jittered within the gate.
pub fn emit_tag_stream<W: Write>(config: &SimConfig, sink: &mut W) -> Result<TagEmission> {
    config.validate()?;
    if !config.emit_tags {
        return Err(Error::InvalidSimConfig(
            "emit_tags is not set on this config".into(),
        ));
    }

    let chunks = chunk_count(config.pulses);
    #[cfg(feature = "parallel")]
    let outputs: Vec<ChunkOutput> = (0..chunks)
        .into_par_iter()
        .map(|c| simulate_chunk(config, c, true))
        .collect();
    #[cfg(not(feature = "parallel"))]
    let outputs: Vec<ChunkOutput> = (0..chunks).map(|c| simulate_chunk(config, c, true)).collect();

    writeln!(sink, "# hpl tag stream")?;
    writeln!(
        sink,
        "# channels: {}=trigger {}=idler {}=s1 {}=s2",
        channel::TRIGGER,
        channel::IDLER,
        channel::SIGNAL_1,
        channel::SIGNAL_2
    )?;

    let mut record = CountRecord::default();
    let mut tags_written = 0u64;
    for out in outputs {
        record = record.checked_add(&out.record)?;
        for tag in &out.tags {
            writeln!(sink, "{},{}", tag.channel, tag.timestamp_ps)?;
            tags_written += 1;
        }
    }
    Ok(TagEmission {
        record,
        tags_written,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic_oracle::{pulse_probabilities, tune_mean_for_car};
    use crate::photon_statistics::TwinBeamState;

    fn paper_model(mean: f64) -> ExperimentModel {
        let source = TwinBeamState::new(mean, 1).unwrap();
        ExperimentModel::new(source, 0.321, 0.378).unwrap()
    }

    #[test]
    fn dark_source_produces_no_counts() {
        let config = SimConfig::new(paper_model(0.0), 200_000, 1);
        let rec = run_simulation(&config).unwrap();
        assert_eq!(rec.pulses, 200_000);
        assert_eq!(
            (rec.s_i, rec.s_s1, rec.s_s2, rec.c_is, rec.c_is1s2),
            (0, 0, 0, 0, 0)
        );
    }

    #[test]
    fn identical_seeds_reproduce_bit_exactly() {
        let config = SimConfig::new(paper_model(0.02), 300_000, 42);
        let a = run_simulation(&config).unwrap();
        let b = run_simulation(&config).unwrap();
        assert_eq!(a, b);
        let c = run_simulation(&SimConfig { seed: 43, ..config }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn parallel_and_serial_paths_agree() {
        let config = SimConfig::new(paper_model(0.05), 250_000, 7);
        assert_eq!(
            run_simulation(&config).unwrap(),
            run_simulation_serial(&config).unwrap()
        );
    }

    #[test]
    fn tally_ordering_invariants_hold() {
        let config = SimConfig::new(paper_model(0.3), 200_000, 11);
        let rec = run_simulation(&config).unwrap();
        rec.validate().unwrap();
        assert!(rec.s_i > 0);
    }

    #[test]
    fn frequencies_match_oracle_probabilities() {
        // binomial 4σ test on every tracked probability
        let model = paper_model(tune_mean_for_car(&paper_model(1.0), 97.14).unwrap());
        let pulses = 2_000_000u64;
        let config = SimConfig::new(model, pulses, 0xC0FFEE);
        let rec = run_simulation(&config).unwrap();
        let p = pulse_probabilities(&model).unwrap();
        let observed = [
            rec.s_i,
            rec.s_s1,
            rec.s_s2,
            rec.c_is1,
            rec.c_is2,
            rec.c_s1s2,
            rec.c_is1s2,
            rec.c_is,
        ];
        for ((name, prob), count) in p.tracked().iter().zip(observed) {
            let freq = count as f64 / pulses as f64;
            let se = (prob * (1.0 - prob) / pulses as f64).sqrt();
            assert!(
                (freq - prob).abs() <= 4.0 * se,
                "{name}: freq {freq} vs oracle {prob} (4σ = {})",
                4.0 * se
            );
        }
    }

    #[test]
    fn dark_counts_register_on_all_bins() {
        let model = paper_model(0.0).with_dark_prob(0.02).unwrap();
        let pulses = 400_000u64;
        let config = SimConfig::new(model, pulses, 5);
        let rec = run_simulation(&config).unwrap();
        let p = pulse_probabilities(&model).unwrap();
        for (count, prob) in [(rec.s_i, p.p_i), (rec.s_s1, p.p_s1), (rec.s_s2, p.p_s2)] {
            let freq = count as f64 / pulses as f64;
            let se = (prob * (1.0 - prob) / pulses as f64).sqrt();
            assert!((freq - prob).abs() <= 4.0 * se, "{freq} vs {prob}");
        }
    }

    #[test]
    fn overlapping_gates_are_rejected() {
        let mut config = SimConfig::new(paper_model(0.01), 10, 1);
        config.gate_window_s = 30e-9; // exceeds the 24.39 ns period
        assert!(matches!(
            run_simulation(&config),
            Err(Error::InvalidSimConfig(_))
        ));
    }

    #[test]
    fn merge_overflow_is_a_hard_error() {
        let big = CountRecord {
            pulses: u64::MAX - 5,
            ..CountRecord::default()
        };
        assert!(matches!(
            big.checked_add(&CountRecord { pulses: 10, ..CountRecord::default() }),
            Err(Error::TallyOverflow)
        ));
    }

    #[test]
    fn tag_stream_for_dark_source_is_triggers_only() {
        let mut config = SimConfig::new(paper_model(0.0), 3, 9);
        config.emit_tags = true;
        let mut buf = Vec::new();
        let emission = emit_tag_stream(&config, &mut buf).unwrap();
        assert_eq!(emission.tags_written, 3);
        let text = String::from_utf8(buf).unwrap();
        let data_lines: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
        let period = config.rep_period_ps();
        assert_eq!(
            data_lines,
            vec![
                format!("0,{period}"),
                format!("0,{}", 2 * period),
                format!("0,{}", 3 * period),
            ]
        );
    }

    #[test]
    fn tag_stream_record_matches_plain_run() {
        let mut config = SimConfig::new(paper_model(0.05), 30_000, 0xFEED);
        config.emit_tags = true;
        let mut buf = Vec::new();
        let emission = emit_tag_stream(&config, &mut buf).unwrap();
        let plain = run_simulation(&SimConfig {
            emit_tags: false,
            ..config
        })
        .unwrap();
        assert_eq!(emission.record, plain);
    }

    #[test]
    fn tags_are_sorted_and_gated() {
        let mut config = SimConfig::new(paper_model(0.2), 20_000, 3);
        config.emit_tags = true;
        let mut buf = Vec::new();
        emit_tag_stream(&config, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let period = config.rep_period_ps() as i64;
        let half = (config.gate_window_ps() / 2) as i64;
        let mut last = 0u64;
        for line in text.lines().filter(|l| !l.starts_with('#')) {
            let (ch, ts) = line.split_once(',').unwrap();
            let ts: u64 = ts.parse().unwrap();
            assert!(ts >= last, "timestamps must be sorted");
            last = ts;
            if ch != "0" {
                // each click lies within ± half a window of its pulse time
                let slot = ((ts as i64) + period / 2) / period;
                let delta = ts as i64 - slot * period;
                assert!((-half..half).contains(&delta), "delta {delta}");
            }
        }
    }

    #[test]
    fn emit_requires_flag() {
        let config = SimConfig::new(paper_model(0.01), 10, 1);
        let mut buf = Vec::new();
        assert!(matches!(
            emit_tag_stream(&config, &mut buf),
            Err(Error::InvalidSimConfig(_))
        ));
    }
}
